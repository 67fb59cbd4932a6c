"""Experiment configuration files.

A config is an INI-style file read with :mod:`configparser`::

    [experiment]
    kind = Table1
    seed = 7
    runs = 10
    epochs = 100

    [optim]
    learning_rate = 0.01
    pow_l2 = 0.05

    [data]
    n_values = 4, 8

``[experiment]`` holds the common fields, ``[optim]`` maps onto
:class:`~powconv.optim.OptimConfig` and ``[data]`` is free-form, read by
each experiment with typed getters and defaults.  Per-kind defaults apply
wherever a key is missing.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .optim import OptimConfig

KINDS = ("Table1", "Table2", "CnnTrain", "Robustness", "Stats", "GradCheck", "Deform", "GenData")

# experiment-level defaults per kind
KIND_DEFAULTS = {
    "Table1": dict(runs=10, epochs=100, batch_size=128),
    "Table2": dict(runs=10, epochs=20, batch_size=128),
    "CnnTrain": dict(runs=1, epochs=20, batch_size=64),
}
# optimizer overrides per kind (on top of OptimConfig defaults)
OPTIM_DEFAULTS = {
    "Table1": dict(pow_l2=0.01, pow_l2_beta=0.1),
}

# keys whose values are filesystem paths that must exist at startup
PATH_KEYS = ("cifar_dir", "images", "manifest", "checkpoint", "checkpoints",
             "dump_a", "dump_b", "donors")


@dataclass
class ExperimentConfig:
    kind: str
    variant: str | None = None
    data: dict = field(default_factory=dict)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: int = 1
    batch_size: int = 128
    runs: int = 1
    seed: int = 0
    out: Path = Path("out")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.runs < 1:
            raise ConfigurationError(f"runs must be >= 1, got {self.runs}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        self.out = Path(self.out)

    # typed accessors for the free-form [data] section
    def get(self, key, default=None):
        return self.data.get(key, default)

    def get_int(self, key, default):
        return int(self.data.get(key, default))

    def get_float(self, key, default):
        return float(self.data.get(key, default))

    def get_bool(self, key, default):
        value = self.data.get(key, default)
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")

    def get_list(self, key, default, cast=str):
        value = self.data.get(key, default)
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return [cast(v) for v in value]

    def check_paths(self) -> None:
        for key in PATH_KEYS:
            if key not in self.data:
                continue
            for p in str(self.data[key]).split(","):
                if p.strip() and not Path(p.strip()).exists():
                    raise ConfigurationError(f"[data] {key}: path {p.strip()!r} does not exist")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def default_config(kind: str) -> ExperimentConfig:
    optim = OptimConfig(**OPTIM_DEFAULTS.get(kind, {}))
    return ExperimentConfig(kind=kind, optim=optim, **KIND_DEFAULTS.get(kind, {}))


def load_config(path=None, kind=None) -> ExperimentConfig:
    """Read ``path`` (if given) on top of the defaults for ``kind``.

    ``kind`` given by the caller wins over the file's ``[experiment] kind``
    only when the file does not set one; a disagreement is an error.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} not found")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    file_kind = exp.pop("kind", None)
    if kind and file_kind and file_kind != kind:
        raise ConfigurationError(f"config is for {file_kind}, not {kind}")
    kind = kind or file_kind
    if kind is None:
        raise ConfigurationError("experiment kind not given")
    base = default_config(kind)
    optim_values = {**OPTIM_DEFAULTS.get(kind, {}),
                    **(dict(parser["optim"]) if parser.has_section("optim") else {})}
    unknown = set(exp) - {"variant", "epochs", "batch_size", "runs", "seed", "out"}
    if unknown:
        raise ConfigurationError(f"unknown [experiment] keys {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(
            kind=kind,
            variant=exp.get("variant", base.variant),
            data=dict(parser["data"]) if parser.has_section("data") else {},
            optim=OptimConfig.from_mapping(optim_values),
            epochs=int(exp.get("epochs", base.epochs)),
            batch_size=int(exp.get("batch_size", base.batch_size)),
            runs=int(exp.get("runs", base.runs)),
            seed=int(exp.get("seed", base.seed)),
            out=Path(exp.get("out", base.out)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc
    return cfg
