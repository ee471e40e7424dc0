import pytest
from gmclab.base import ConfigurationError, DomainError
from gmclab.experiment import ExperimentConfig
from omegaconf import OmegaConf


def test_from_config():
    config = OmegaConf.create(
        {"verbose": 100, "gamma": 0.5, "t": 2.0, "curve": "zeta", "k_list": [4, 16]}
    )
    cfg = ExperimentConfig.from_config(config, "bridge")
    assert cfg.command == "bridge"
    assert cfg.gamma == 0.5
    assert cfg.t == 2.0
    assert cfg.options == {"curve": "zeta", "k_list": [4, 16]}
    assert cfg.option("curve") == "zeta"
    assert cfg.option("missing", 3) == 3


def test_lines_round_trip():
    cfg = ExperimentConfig(
        command="atoms",
        gamma=2.8284271247461903,
        epsilon=1e-05,
        replicates=100,
        options={"nu": "lebesgue", "k_list": [4, 16], "exact": True},
    )
    lines = cfg.to_lines()
    assert "epsilon=1.0e-05" in lines
    assert "exact=true" in lines
    assert "phase=null" not in lines
    assert ExperimentConfig.from_lines(lines) == cfg
    assert ExperimentConfig.from_lines("\n".join(["# comment", ""] + lines)) == cfg


def test_lines_round_trip_null_workers():
    cfg = ExperimentConfig(command="verify", num_workers=None, options={"criteria": None})
    lines = cfg.to_lines()
    assert "num_workers=null" in lines
    assert "criteria=null" in lines
    back = ExperimentConfig.from_lines(lines)
    assert back.num_workers is None
    assert back == cfg


def test_from_lines_invalid():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_lines(["gamma 0.5"])


def test_validate():
    cfg = ExperimentConfig(command="gmc", gamma=0.5, phase="subcritical", t=2.0, delta=0.1)
    assert cfg.validate() is cfg
    # bridge grid steps are not layer steps
    ExperimentConfig(command="bridge", delta=0.5).validate()


@pytest.mark.parametrize(
    "kwargs,err",
    [
        ({"d": 3}, ConfigurationError),
        ({"replicates": 0}, ConfigurationError),
        ({"base_seed": -1}, ConfigurationError),
        ({"phase": "tepid"}, ConfigurationError),
        ({"gamma": 2.0, "phase": "subcritical"}, ConfigurationError),
        ({"gamma": -1.0}, DomainError),
        ({"delta": 0.5}, DomainError),
        ({"n": 100}, ConfigurationError),
        ({"t": 0.0}, DomainError),
        ({"epsilon": -0.1}, DomainError),
    ],
)
def test_validate_invalid(kwargs, err):
    with pytest.raises(err):
        ExperimentConfig(command="gmc", **kwargs).validate()


def test_write(tmp_path):
    cfg = ExperimentConfig(command="kernel", options={"table_resolution": 2048})
    path = cfg.write(str(tmp_path))
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "command=kernel"
    assert "table_resolution=2048" in lines
    assert cfg.to_dict()["options"] == {"table_resolution": 2048}
