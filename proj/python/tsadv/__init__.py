"""Python bindings for the tsadv C++ library."""

import sys

from ._tsadv import (
    ConfigError,
    ConsistencyError,
    ConversionError,
    Error,
    IoError,
    LoadError,
    Model,
    UsageError,
    __version__,
    convert_dataset,
    run_cli,
)

__all__ = [
    "ConfigError",
    "ConsistencyError",
    "ConversionError",
    "Error",
    "IoError",
    "LoadError",
    "Model",
    "UsageError",
    "__version__",
    "convert_dataset",
    "main",
    "run_cli",
]


def main() -> int:
    code, out, err = run_cli(sys.argv[1:])
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
