"""Sample log-correlated fields and export snapshots, origin paths and statistics
"""
import time
from functools import partial
from os.path import join

import hydra
import numpy as np
from gmclab.base import Direction
from gmclab.experiment import ExperimentConfig
from gmclab.field import (
    RHO,
    GridSpec,
    assemble_X,
    origin_path,
    sample_layers,
    sample_Z,
    write_field_snapshot,
)
from gmclab.harness import map_replicates
from gmclab.kernel import build_seed_kernel
from gmclab.logger import getLogger
from gmclab.util import McEstimate, RandomStream, write_csv, write_sidecar
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def field_grid(cfg):
    """Grid of the experiment: explicit ``n`` or the finest one the depth needs"""
    direction = Direction(cfg.option("direction", "shrinking"))
    if direction == Direction.GROWING:
        spacing = 1.0 / RHO if cfg.n is None else 2.0 * np.exp(cfg.t) / cfg.n
        return GridSpec.centered(cfg.d, spacing, np.exp(cfg.t))
    side = cfg.option("side", 1.0)
    origin = cfg.option("origin", 0.0)
    if cfg.n is None:
        return GridSpec.for_depth(cfg.d, cfg.t, side=side, origin=origin)
    return GridSpec(cfg.d, origin, side, cfg.n)


def _sample(stream, kernel, grid, t, delta, direction):
    stack = sample_layers(kernel, grid, t, delta, direction, stream)
    if direction == Direction.GROWING:
        return sample_Z(stack, t), origin_path(stack)
    return assemble_X(stack, 0.0, t), origin_path(stack)


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "sample-field").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    direction = Direction(cfg.option("direction", "shrinking"))
    start_time = time.time()

    kernel = build_seed_kernel(cfg.d)
    grid = field_grid(cfg)
    logger.info("grid: %s", grid)
    task = partial(
        _sample, kernel=kernel, grid=grid, t=cfg.t, delta=cfg.delta, direction=direction
    )
    results = map_replicates(
        task, cfg.replicates, cfg.base_seed, cfg.num_workers, desc="sample-field"
    )
    wall_time = time.time() - start_time

    config_dict = cfg.to_dict()
    for i, (sample, _) in enumerate(results[: cfg.option("snapshots", 1)]):
        write_field_snapshot(
            sample,
            join(out_dir, f"field_{i:04d}.csv"),
            config_dict,
            RandomStream(cfg.base_seed, i).provenance(),
            wall_time,
        )
    scales, path = results[0][1]
    out = write_csv(
        join(out_dir, "origin_path.csv"), np.column_stack([scales, path]), ["s", "value"]
    )
    write_sidecar(out, config_dict, RandomStream(cfg.base_seed, 0).provenance(), wall_time)

    # every origin path ends at X_t(0), of variance t
    at_origin = np.array([path[-1] for _, (_, path) in results])
    var = McEstimate.from_samples(at_origin ** 2, seed=cfg.base_seed)
    summary = {"variance_at_origin": var.to_dict(), "grid": str(grid)}
    write_sidecar(join(out_dir, "summary"), config_dict, cfg.base_seed, wall_time, **summary)
    cfg.write(out_dir)
    return (
        f"sample-field {direction.value} t={cfg.t:g}: {cfg.replicates} replicates on "
        f"{grid.size} nodes, Var X(0) = {var.mean:.4f} +- {var.stderr:.4f} -> {out_dir}"
    )


@hydra.main(config_path="conf/sample_field", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
