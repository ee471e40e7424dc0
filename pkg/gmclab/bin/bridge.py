"""Brownian bridges above barriers: closed forms, bounds and Monte Carlo estimates
"""
import time
from os.path import join

import hydra
from gmclab.base import ConfigurationError, CurveKind
from gmclab.bridge import (
    Curve,
    curve_avoidance_lower_bound,
    curve_avoidance_upper_bound,
    entropic_repulsion_check,
    mc_stay_above_curve,
    p_stay_positive,
    stay_positive_bounds,
    write_bridge_table,
)
from gmclab.experiment import ExperimentConfig
from gmclab.logger import getLogger
from gmclab.util import RandomStream
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def make_curve(cfg):
    kind = CurveKind(cfg.option("curve", "constant"))
    if kind == CurveKind.CONSTANT:
        return Curve.constant(cfg.option("level", 0.0))
    if kind == CurveKind.ZETA:
        return Curve.zeta(cfg.option("a", 0.2), cfg.option("k", 4))
    if kind == CurveKind.THETA:
        return Curve.theta(cfg.option("k", 4))
    raise ConfigurationError("table curves are not available from the command line")


def _exact(cfg):
    x, u, b = cfg.option("x"), cfg.option("u"), cfg.b
    p = p_stay_positive(x, u, b)
    lower, upper = stay_positive_bounds(x, u, b)
    row = {"x": x, "u": u, "b": b, "probability": p, "lower": lower, "upper": upper}
    return [row], f"{p:.6f}"


def _entropic(cfg, stream):
    k_list = list(cfg.option("k_list", [4, 16, 64]))
    rows = entropic_repulsion_check(
        cfg.option("a", 0.2), k_list, cfg.b, cfg.option("u"), cfg.replicates, stream
    )
    scaled = ", ".join(f"k={r['k']}: {r['scaled']:.4f}" for r in rows)
    return rows, f"scaled probabilities {scaled}"


def _simulate(cfg, stream):
    x, u, b = cfg.option("x"), cfg.option("u"), cfg.b
    curve = make_curve(cfg)
    sign = int(cfg.option("sign", -1))
    est = mc_stay_above_curve(
        x,
        u,
        b,
        curve,
        sign,
        cfg.replicates,
        stream,
        delta=cfg.delta,
        bridge_correction=bool(cfg.option("bridge_correction", False)),
    )
    row = {"x": x, "u": u, "b": b, "estimate": est.mean, "stderr": est.stderr}
    if curve.kind == CurveKind.CONSTANT:
        # a constant barrier moves both endpoints
        level = -sign * curve.a
        row["exact"] = 0.0
        if min(x, u) + level > 0:
            row["exact"] = p_stay_positive(x + level, u + level, b)
    elif sign == -1:
        row["lower"] = curve_avoidance_lower_bound(curve, x, u, b)
        row["upper"] = curve_avoidance_upper_bound(curve, x, u, b)
    return [row], f"P(stay above barrier) = {est.mean:.6f} +- {est.stderr:.6f}"


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "bridge").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    stream = RandomStream(cfg.base_seed)
    start_time = time.time()

    if cfg.option("exact", False):
        rows, line = _exact(cfg)
        name = "exact"
    elif cfg.option("entropic", False):
        rows, line = _entropic(cfg, stream)
        name = "entropic"
    else:
        rows, line = _simulate(cfg, stream)
        name = "stay_above"

    write_bridge_table(
        rows,
        join(out_dir, f"bridge_{name}.csv"),
        cfg.to_dict(),
        stream.provenance(),
        time.time() - start_time,
    )
    cfg.write(out_dir)
    return line


@hydra.main(config_path="conf/bridge", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
