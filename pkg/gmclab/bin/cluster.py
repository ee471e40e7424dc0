"""Shape fields around extremal points: cluster probabilities and ensembles
"""
import time
from os.path import join

import hydra
import numpy as np
from gmclab.base import ConfigurationError
from gmclab.experiment import ExperimentConfig
from gmclab.extremes import (
    DEFAULT_DELTA,
    GAMMA_C,
    bridge_cluster_ratio,
    estimate_a_star,
    estimate_c_star,
    estimate_c_star_from_cluster,
    estimate_cluster_probability,
    excursion_fraction,
    psi_integral,
    sample_psi,
    sample_tilde_upsilon,
    save_ensemble,
    supercritical_scale_constant,
    write_ensemble,
)
from gmclab.harness import PoolMapper
from gmclab.kernel import build_seed_kernel
from gmclab.logger import getLogger
from gmclab.util import McEstimate, RandomStream, provenance, write_json
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None

MODES = ("probability", "tilde", "psi", "c_star")


def _probability(cfg, kernel, stream, mapper, delta):
    u = cfg.option("u")
    if u is not None:
        ratio = bridge_cluster_ratio(
            kernel, cfg.lam, cfg.b, u, cfg.replicates, stream, delta, mapper
        )
        return {"bridge_ratio": ratio.to_dict()}, (
            f"(b/u) P(max <= {cfg.lam:g}) = {ratio.mean:.5f} +- {ratio.stderr:.5f}"
        )
    p = estimate_cluster_probability(
        kernel, cfg.lam, cfg.b, cfg.replicates, stream, delta, mapper=mapper
    )
    c_star = estimate_c_star_from_cluster(p, cfg.b)
    scaled = np.sqrt(cfg.b) * p.mean
    summary = {
        "probability": p.to_dict(),
        "scaled_probability": scaled,
        "c_star_from_cluster": c_star.to_dict(),
    }
    return summary, (
        f"P(max <= {cfg.lam:g}) = {p.mean:.5f} +- {p.stderr:.5f}, sqrt(b) P = {scaled:.5f}"
    )


def _tilde(cfg, kernel, stream, mapper, delta, out_dir):
    ensemble = sample_tilde_upsilon(
        kernel, cfg.lam, cfg.b, cfg.replicates, stream, delta, mapper=mapper
    )
    write_ensemble(ensemble, join(out_dir, "tilde_upsilon"), cfg.to_dict())
    fractions = {k: excursion_fraction(ensemble, k) for k in range(1, int(cfg.b))}
    summary = {
        "acceptance_rate": ensemble.acceptance_rate,
        "trials": ensemble.trials,
        "excursion_fraction": fractions,
    }
    return summary, (
        f"{len(ensemble)} conditioned fields, acceptance rate {ensemble.acceptance_rate:.4f}"
    )


def _psi(cfg, kernel, stream, mapper, delta, out_dir):
    ensemble = sample_psi(kernel, cfg.lam, cfg.b, cfg.replicates, stream, delta, mapper)
    write_ensemble(ensemble, join(out_dir, "psi"), cfg.to_dict())
    if cfg.option("save_joblib", True):
        save_ensemble(ensemble, join(out_dir, "psi_ensemble.joblib"))
    integrals = [psi_integral(s, GAMMA_C, cfg.lam) for s in ensemble.members]
    mass = McEstimate.from_samples(integrals, weights=ensemble.weights)
    summary = {"acceptance_rate": ensemble.acceptance_rate, "psi_integral": mass.to_dict()}
    line = f"{len(ensemble)} canonical fields, mean tilted integral {mass.mean:.4f}"

    c_star = cfg.option("c_star")
    gamma = cfg.gamma if cfg.gamma is not None else 2.0 * GAMMA_C
    if c_star is not None:
        a_star = estimate_a_star(cfg.lam, gamma, ensemble, c_star)
        scale = supercritical_scale_constant(gamma, a_star, ensemble)
        summary.update(a_star=a_star.to_dict(), scale_constant=scale.to_dict())
        line += f", a_star = {a_star.mean:.4f} +- {a_star.stderr:.4f}"
    return summary, line


def _c_star(cfg, kernel, stream, mapper, delta):
    est = estimate_c_star(kernel, cfg.lam, cfg.b, cfg.replicates, stream, delta, mapper)
    line = f"c_star(k={cfg.b:g}) = {est.mean:.5f} +- {est.stderr:.5f}"
    return {"c_star": est.to_dict()}, line


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "cluster").validate()
    mode = cfg.option("mode", "probability")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}, expected one of {MODES}")
    out_dir = to_absolute_path(cfg.out_dir)
    delta = DEFAULT_DELTA if cfg.delta is None else cfg.delta
    start_time = time.time()

    kernel = build_seed_kernel(1)
    stream = RandomStream(cfg.base_seed)
    with PoolMapper(cfg.num_workers, desc=f"cluster {mode}") as mapper:
        if mode == "probability":
            summary, line = _probability(cfg, kernel, stream, mapper, delta)
        elif mode == "tilde":
            summary, line = _tilde(cfg, kernel, stream, mapper, delta, out_dir)
        elif mode == "psi":
            summary, line = _psi(cfg, kernel, stream, mapper, delta, out_dir)
        else:
            summary, line = _c_star(cfg, kernel, stream, mapper, delta)

    wall_time = time.time() - start_time
    record = provenance(cfg.to_dict(), stream.provenance(), wall_time)
    record.update(summary)
    write_json(join(out_dir, f"cluster_{mode}.json"), record)
    cfg.write(out_dir)
    return f"cluster {mode} lambda={cfg.lam:g} b={cfg.b:g}: {line} -> {out_dir}"


@hydra.main(config_path="conf/cluster", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
