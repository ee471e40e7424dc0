"""Chaos measures of sampled fields: total masses, maxima and a measure snapshot
"""
import time
from functools import partial
from os.path import join

import hydra
import numpy as np
from gmclab.base import Direction, GmcPhase
from gmclab.bin.sample_field import field_grid
from gmclab.experiment import ExperimentConfig
from gmclab.field import assemble_X, sample_layers
from gmclab.gmc import gmc_measure, max_statistics, write_measure
from gmclab.harness import map_replicates
from gmclab.kernel import build_seed_kernel
from gmclab.logger import getLogger
from gmclab.util import McEstimate, RandomStream, write_csv, write_sidecar
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def _measure(stream, kernel, grid, t, delta, gamma, phase, keep=False):
    stack = sample_layers(kernel, grid, t, delta, Direction.SHRINKING, stream)
    X = assemble_X(stack, 0.0, t)
    mu = gmc_measure(X, gamma, phase)
    sup, recentered = max_statistics(X)
    row = (
        mu.total_mass,
        mu.diagnostics.get("clipped_mass_fraction", np.nan),
        sup,
        recentered,
    )
    return (row, mu) if keep else row


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "gmc").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    phase = GmcPhase(cfg.phase)
    start_time = time.time()

    kernel = build_seed_kernel(cfg.d)
    grid = field_grid(cfg)
    task = partial(
        _measure,
        kernel=kernel,
        grid=grid,
        t=cfg.t,
        delta=cfg.delta,
        gamma=cfg.gamma,
        phase=phase,
    )
    rows = np.asarray(
        map_replicates(task, cfg.replicates, cfg.base_seed, cfg.num_workers, desc="gmc")
    )
    wall_time = time.time() - start_time
    config_dict = cfg.to_dict()

    out = write_csv(
        join(out_dir, "masses.csv"),
        np.column_stack([np.arange(len(rows)), rows]),
        ["replicate", "total_mass", "clipped_mass_fraction", "max", "max_minus_m_t"],
    )
    mass = McEstimate.from_samples(rows[:, 0], seed=cfg.base_seed)
    write_sidecar(
        out,
        config_dict,
        cfg.base_seed,
        wall_time,
        total_mass=mass.to_dict(),
        median_total_mass=float(np.median(rows[:, 0])),
    )

    # replicate 0 again, its stream is fixed by the seed
    _, mu = task(RandomStream(cfg.base_seed, 0), keep=True)
    write_measure(
        mu,
        join(out_dir, "measure_0000.csv"),
        config_dict,
        RandomStream(cfg.base_seed, 0).provenance(),
        wall_time,
    )
    cfg.write(out_dir)
    return (
        f"gmc {phase.value} gamma={cfg.gamma:g} t={cfg.t:g}: mean mass "
        f"{mass.mean:.4f} +- {mass.stderr:.4f} over {mass.n} replicates -> {out_dir}"
    )


@hydra.main(config_path="conf/gmc", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
