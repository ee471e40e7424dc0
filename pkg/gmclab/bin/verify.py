"""Run the acceptance suite and write its report
"""
import sys
import time
from os.path import join

import hydra
from gmclab.experiment import ExperimentConfig
from gmclab.harness import SuiteSettings, TestReport, acceptance_suite
from gmclab.logger import getLogger
from gmclab.util import write_lines
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf

logger = None


def main(config: DictConfig) -> TestReport:
    global logger
    logger = getLogger(config.verbose)
    logger.info(OmegaConf.to_yaml(config))

    cfg = ExperimentConfig.from_config(config, "verify").validate()
    out_dir = to_absolute_path(cfg.out_dir)
    settings = SuiteSettings.from_config(
        {
            "base_seed": cfg.base_seed,
            "num_workers": cfg.num_workers,
            "scale": cfg.option("scale", 1.0),
            "criteria": cfg.option("criteria"),
            "table_resolution": cfg.option("table_resolution", 2048),
        }
    )
    start_time = time.time()
    report = acceptance_suite(settings)
    logger.info("acceptance suite finished in %.1f s", time.time() - start_time)

    text = report.to_text()
    logger.info("\n%s", text)
    report.write(join(out_dir, "report.json"))
    write_lines(join(out_dir, "report.txt"), text.splitlines())
    cfg.write(out_dir)
    return report


@hydra.main(config_path="conf/verify", config_name="config")
def my_app(config: DictConfig) -> None:
    report = main(config)
    print(report.to_text())
    if not report.passed:
        sys.exit(1)


def entry():
    my_app()  # pylint: disable=no-value-for-parameter


if __name__ == "__main__":
    my_app()  # pylint: disable=no-value-for-parameter
