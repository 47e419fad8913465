"""Run configuration: ``key=value`` files with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import DataError
from .metrics import DEFAULT_WATCHLIST
from .training import TrainConfig


class ConfigError(DataError):
    pass


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    dictionary: str | None = None
    annotations: tuple[str, ...] = ()
    names: str | None = None
    protected: str | None = None
    checkpoint: str | None = None
    vectors: str | None = None
    predictions: str | None = None
    out: str = "out"
    k: int = 10
    min_repeats: int = 4
    watchlist: tuple[str, ...] = DEFAULT_WATCHLIST
    svg: bool = False
    threads: int = 1
    verbosity: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"}
        d.update({f.name: getattr(self.train, f.name) for f in fields(TrainConfig)})
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(d.items())}


_RUN_TYPES = {
    "corpus": str, "dictionary": str, "annotations": tuple, "names": str, "protected": str,
    "checkpoint": str, "vectors": str, "predictions": str, "out": str, "k": int,
    "min_repeats": int, "watchlist": tuple, "svg": bool, "threads": int, "verbosity": int,
}
_TRAIN_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}
KNOWN_KEYS = frozenset(_RUN_TYPES) | frozenset(_TRAIN_TYPES)


def _parse_value(key: str, raw: str):
    kind = _RUN_TYPES.get(key) or _TRAIN_TYPES[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def resolve(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply ``values`` on top of ``base`` (defaults when None)."""
    base = base or RunConfig()
    unknown = set(values) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    run = {k: v for k, v in values.items() if k in _RUN_TYPES}
    tr = {k: v for k, v in values.items() if k in _TRAIN_TYPES}
    try:
        return replace(base, train=replace(base.train, **tr), **run)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a ``key=value`` file (None means all defaults), then apply overrides."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), str(path))
    values.update(overrides or {})
    return resolve(values)
