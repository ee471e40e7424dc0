"""Typed experiment configuration shared by the command line applications"""
from dataclasses import asdict, dataclass, field, fields
from os.path import join
from typing import Optional

from gmclab.base import ConfigurationError, DomainError, GmcPhase
from gmclab.field import MAX_DELTA, MIN_DELTA
from gmclab.gmc import check_phase
from gmclab.util import is_pow2, write_lines
from omegaconf import OmegaConf

# keys of an app config that are not part of the experiment
_RUNTIME_KEYS = ("hydra", "defaults", "verbose")


def _format_value(value):
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        s = repr(value)
        # YAML needs a dot in the mantissa to read an exponent as a float
        if "e" in s and "." not in s:
            s = s.replace("e", ".0e")
        return s
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_format_value(v) for v in value) + "]"
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment

    The named fields are the parameters shared by several subcommands; the
    remaining keys of an app config (curve type, bridge endpoints, ...) are
    kept in ``options``.

    Args:
        command (str): subcommand
        d (int): dimension
        gamma (float): inverse temperature
        phase (str): chaos normalization, see :class:`gmclab.base.GmcPhase`
        t (float): field depth
        b (float): shape field or bridge horizon
        n (int): grid nodes per side, a power of two, None for automatic
        delta (float): layer step
        lam (float): cluster level lambda
        epsilon (float): atom mass cutoff
        replicates (int): number of replicates
        base_seed (int): seed
        num_workers (int): worker processes
        out_dir (str): output directory
        options (dict): subcommand specific keys
    """

    command: str = "verify"
    d: int = 1
    gamma: Optional[float] = None
    phase: Optional[str] = None
    t: Optional[float] = None
    b: Optional[float] = None
    n: Optional[int] = None
    delta: Optional[float] = None
    lam: Optional[float] = None
    epsilon: Optional[float] = None
    replicates: int = 1
    base_seed: int = 0
    num_workers: Optional[int] = 1
    out_dir: str = "out"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config, command=None):
        """Build from an app config (DictConfig or mapping)"""
        if OmegaConf.is_config(config):
            config = OmegaConf.to_container(config, resolve=True)
        config = {k: v for k, v in dict(config).items() if k not in _RUNTIME_KEYS}
        names = {f.name for f in fields(cls)} - {"options"}
        kwargs = {k: config.pop(k) for k in list(config) if k in names}
        options = dict(config.pop("options", None) or {})
        options.update(config)
        if command is not None:
            kwargs["command"] = command
        return cls(**kwargs, options=options)

    @classmethod
    def from_lines(cls, lines):
        """Parse the line based ``key=value`` format written by :meth:`to_lines`"""
        if isinstance(lines, str):
            lines = lines.splitlines()
        dotlist = []
        for line in lines:
            line = line.strip()
            if len(line) == 0 or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"expected key=value, got {line!r}")
            dotlist.append(line)
        return cls.from_config(OmegaConf.from_dotlist(dotlist))

    def to_lines(self):
        """``key=value`` lines

        A parameter that is null by default and null here is left out, every
        other one is written (as ``null`` when unset) so that
        :meth:`from_lines` gives back an equal config.
        """
        lines = []
        for f in fields(self):
            if f.name == "options":
                continue
            value = getattr(self, f.name)
            if value is not None or f.default is not None:
                lines.append(f"{f.name}={_format_value(value)}")
        for key in sorted(self.options):
            lines.append(f"{key}={_format_value(self.options[key])}")
        return lines

    def option(self, key, default=None):
        return self.options.get(key, default)

    def validate(self):
        """Check the parameters against the preconditions of the samplers

        Raises:
            ConfigurationError: on an invalid setting
            DomainError: on a numeric parameter outside its domain
        """
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.d}")
        if int(self.replicates) < 1:
            raise ConfigurationError(f"replicates must be >= 1, got {self.replicates}")
        if int(self.base_seed) < 0:
            raise ConfigurationError(f"base_seed must be nonnegative, got {self.base_seed}")
        if self.phase is not None:
            try:
                GmcPhase(self.phase)
            except ValueError:
                raise ConfigurationError(f"unknown phase {self.phase!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if self.gamma is not None and self.phase is not None:
            check_phase(self.d, self.gamma, self.phase)
        if self.delta is not None and self.command == "bridge":
            if not self.delta > 0:
                raise DomainError(f"delta must be positive, got {self.delta}")
        elif self.delta is not None and not (
            MIN_DELTA - 1e-12 <= self.delta <= MAX_DELTA + 1e-12
        ):
            raise DomainError(f"delta must be in [{MIN_DELTA}, {MAX_DELTA}], got {self.delta}")
        if self.n is not None and not is_pow2(int(self.n)):
            raise ConfigurationError(f"grid n must be a power of two, got {self.n}")
        for name in ("t", "b", "lam", "epsilon"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DomainError(f"{name} must be positive, got {value}")
        return self

    def to_dict(self):
        return asdict(self)

    def write(self, out_dir, name="experiment.cfg"):
        """Write the ``key=value`` form next to the artifacts of a run"""
        return write_lines(join(out_dir, name), self.to_lines())
