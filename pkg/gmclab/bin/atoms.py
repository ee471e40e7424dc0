"""Sample the atoms of the supercritical limit and check their intensity
"""
import time
from functools import partial
from os.path import join

import hydra
import numpy as np
from gmclab.atoms import (
    closed_form_laplace,
    expected_atom_count,
    integrate_P,
    sample_eta,
    truncation_laplace_factor,
    write_atoms,
)
from gmclab.base import ConfigurationError, Direction, GmcPhase
from gmclab.experiment import ExperimentConfig
from gmclab.field import GridSpec, assemble_X, sample_layers
from gmclab.gmc import critical_gamma, gmc_measure, lebesgue_measure
from gmclab.harness import derived_seed, map_replicates
from gmclab.kernel import build_seed_kernel
from gmclab.logger import getLogger
from gmclab.util import McEstimate, RandomStream, write_csv, write_sidecar
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def intensity(cfg):
    """Spatial intensity nu of the atoms"""
    kind = cfg.option("nu", "lebesgue")
    if kind == "lebesgue":
        n = cfg.n or 64
        return lebesgue_measure(GridSpec(cfg.d, 0.5 / n, 1.0, n))
    if kind == "critical":
        t = cfg.option("nu_t", 5.0)
        kernel = build_seed_kernel(cfg.d)
        grid = GridSpec.for_depth(cfg.d, t)
        stream = RandomStream(derived_seed(cfg.base_seed, 1))
        stack = sample_layers(kernel, grid, t, 0.1, Direction.SHRINKING, stream)
        X = assemble_X(stack, 0.0, t)
        return gmc_measure(X, critical_gamma(cfg.d), GmcPhase.CRITICAL_DERIVATIVE)
    raise ConfigurationError(f"unknown intensity {kind!r}, expected lebesgue or critical")


def _atoms(stream, nu, gamma, epsilon):
    a = sample_eta(nu, gamma, epsilon, stream)
    return len(a), a.total_mass, float(np.exp(-integrate_P(a, 1.0)))


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "atoms").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    start_time = time.time()

    nu = intensity(cfg)
    task = partial(_atoms, nu=nu, gamma=cfg.gamma, epsilon=cfg.epsilon)
    rows = np.asarray(
        map_replicates(task, cfg.replicates, cfg.base_seed, cfg.num_workers, desc="atoms"),
        dtype=np.float64,
    )
    wall_time = time.time() - start_time
    config_dict = cfg.to_dict()

    count = McEstimate.from_samples(rows[:, 0], seed=cfg.base_seed)
    expected = expected_atom_count(nu, cfg.gamma, cfg.epsilon)
    factor = truncation_laplace_factor(nu, 1.0, cfg.gamma, cfg.epsilon)
    laplace = McEstimate.from_samples(rows[:, 2], seed=cfg.base_seed)
    summary = {
        "atom_count": count.to_dict(),
        "expected_atom_count": expected,
        "laplace": {
            "estimate": factor * laplace.mean,
            "stderr": factor * laplace.stderr,
            "closed_form": closed_form_laplace(nu, 1.0, cfg.gamma),
        },
    }
    out = write_csv(
        join(out_dir, "counts.csv"),
        np.column_stack([np.arange(len(rows)), rows]),
        ["replicate", "count", "total_mass", "laplace"],
    )
    write_sidecar(out, config_dict, cfg.base_seed, wall_time, **summary)

    stream = RandomStream(cfg.base_seed, 0)
    write_atoms(
        sample_eta(nu, cfg.gamma, cfg.epsilon, stream),
        join(out_dir, "atoms_0000.csv"),
        config_dict,
        stream.provenance(),
        wall_time,
    )
    cfg.write(out_dir)
    return (
        f"atoms gamma={cfg.gamma:g} epsilon={cfg.epsilon:g}: mean atom count "
        f"{count.mean:.3f} +- {count.stderr:.3f} (expected {expected:.3f}) -> {out_dir}"
    )


@hydra.main(config_path="conf/atoms", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
