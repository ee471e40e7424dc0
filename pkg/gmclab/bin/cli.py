"""Command line front end dispatching to the gmclab applications

Usage::

    gmclab <subcommand> [--config FILE] [--key value | --flag | key=value ...]

The configuration of a subcommand is composed by hydra from its default
``config.yaml``, then the ``key=value`` lines of ``FILE``, then the flags.
"""
import argparse
import importlib
import logging
import sys
from collections import OrderedDict

from gmclab.base import ConfigurationError, DomainError
from gmclab.harness import TestReport
from gmclab.logger import LOG_FORMAT
from hydra import compose, initialize_config_module
from hydra.errors import ConfigCompositionException, OverrideParseException

SUBCOMMANDS = OrderedDict(
    [
        ("kernel", "kernel"),
        ("sample-field", "sample_field"),
        ("gmc", "gmc"),
        ("atoms", "atoms"),
        ("cluster", "cluster"),
        ("bridge", "bridge"),
        ("verify", "verify"),
    ]
)

# flag spellings that differ from the config keys
ALIASES = {"lambda": "lam", "seed": "base_seed", "threads": "num_workers"}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def get_parser():
    parser = argparse.ArgumentParser(
        description="Simulation lab for log-correlated fields and their chaos measures",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=list(SUBCOMMANDS), help="subcommand")
    parser.add_argument(
        "--config", type=str, default=None, help="file of key=value lines"
    )
    return parser


def _key(name):
    key = name.strip().lstrip("-").replace("-", "_")
    return ALIASES.get(key, key)


def read_config_file(path):
    """``key=value`` lines of a config file, comments and blank lines skipped"""
    settings = OrderedDict()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if len(line) == 0 or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            settings[_key(key)] = value.strip()
    return settings


def parse_flags(tokens):
    """Flags as ordered (key, value) pairs

    ``--key value``, ``--key=value`` and ``key=value`` set a value, a bare
    ``--flag`` sets it to true.
    """
    settings = OrderedDict()
    tokens = list(tokens)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if "=" in token:
            key, value = token.split("=", 1)
        elif token.startswith("--"):
            key = token
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is None or nxt.startswith("--") or "=" in nxt:
                value = "true"
            else:
                value = nxt
                i += 1
        else:
            raise ConfigurationError(f"unexpected argument {token!r}")
        settings[_key(key)] = value
        i += 1
    return settings


def compose_config(command, settings):
    """Compose the app config of ``command`` with ``settings`` as overrides"""
    overrides = [f"{key}={value}" for key, value in settings.items()]
    with initialize_config_module(config_module=f"gmclab.bin.conf.{SUBCOMMANDS[command]}"):
        return compose(config_name="config", overrides=overrides)


def cli_main(argv=None):
    """Run a subcommand

    Returns:
        int: 0 on success, 1 on a runtime failure or a failing suite, 2 on an
        invalid configuration
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, rest = get_parser().parse_known_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    settings = OrderedDict()
    try:
        if args.config is not None:
            settings.update(read_config_file(args.config))
    except (OSError, ConfigurationError) as e:
        print(f"gmclab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    # a config file written by a run names its subcommand
    command = settings.pop("command", args.command)
    if command != args.command:
        print(f"gmclab {args.command}: error: config is for {command}", file=sys.stderr)
        return EXIT_USAGE

    try:
        # flags win over the file
        for key, value in parse_flags(rest).items():
            settings.pop(key, None)
            settings[key] = value
        config = compose_config(args.command, settings)
        logging.basicConfig(format=LOG_FORMAT)
        app = importlib.import_module(f"gmclab.bin.{SUBCOMMANDS[args.command]}")
        result = app.main(config)
    except (
        ConfigCompositionException,
        OverrideParseException,
        ConfigurationError,
        DomainError,
    ) as e:
        print(f"gmclab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logging.getLogger("gmclab").exception("%s failed", args.command)
        print(f"gmclab {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_FAILURE

    if isinstance(result, TestReport):
        print(result.to_text().splitlines()[-1])
        return EXIT_OK if result.passed else EXIT_FAILURE
    print(result)
    return EXIT_OK


def entry():
    sys.exit(cli_main())


if __name__ == "__main__":
    entry()
