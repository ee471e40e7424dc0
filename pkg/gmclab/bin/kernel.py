"""Build the seed covariance, run its validity checks and export its table
"""
import time
from os.path import join

import hydra
from gmclab.experiment import ExperimentConfig
from gmclab.kernel import (
    autoconvolution_residual,
    build_seed_kernel,
    dft_min_eigenvalue,
    write_kernel_table,
)
from gmclab.logger import getLogger
from gmclab.util import write_sidecar
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def main(config: DictConfig) -> str:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "kernel").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    start_time = time.time()

    k = build_seed_kernel(cfg.d, cfg.option("table_resolution", 2048))
    checks = {
        "K0": float(k.K(0.0)),
        "second_derivative_at_zero": k.second_derivative_at_zero,
        "autoconvolution_residual": float(autoconvolution_residual(k)),
        "dft_min_eigenvalue": dft_min_eigenvalue(k),
    }
    for key, value in checks.items():
        logger.info("%s: %.3e", key, value)

    out = write_kernel_table(k, join(out_dir, "kernel.csv"))
    write_sidecar(out, cfg.to_dict(), None, time.time() - start_time, checks=checks)
    cfg.write(out_dir)
    return (
        f"kernel d={cfg.d}: K(0)={checks['K0']:.9f} K''(0)={k.second_derivative_at_zero:.4f} "
        f"residual={checks['autoconvolution_residual']:.2e} -> {out}"
    )


@hydra.main(config_path="conf/kernel", config_name="config")
def my_app(config: DictConfig) -> None:
    print(main(config))


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
