"""Plain ``key = value`` configuration files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .core import CostSchedule, load_schedule, morocco_schedule
from .errors import ConfigError, ParseError


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", line_no)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line_no)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line_no)
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def format_kv(values: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def _float(raw: dict, key: str, default=None) -> float:
    if key not in raw:
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return default
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: not a number: {raw[key]!r}") from None


def _int(raw: dict, key: str, default=None) -> int:
    value = _float(raw, key, default)
    if value != int(value):
        raise ConfigError(f"config key {key!r}: expected an integer")
    return int(value)


@dataclass
class RunConfig:
    """Settings for the ``recommend`` and ``evaluate`` commands.

    Paths are resolved relative to the config file's directory.
    """

    base: Path
    reference: Path | None = None
    target_ex_ante: Path | None = None
    target_ex_post: Path | None = None
    assign_covariates: Path | None = None
    schedule: str = "morocco"
    workers: Path | None = None
    pass_table: Path | None = None
    grants: Path | None = None
    assignments: Path | None = None
    predictions: Path | None = None
    methods: list[str] = field(default_factory=list)
    method_settings: dict[str, dict[str, str]] = field(default_factory=dict)
    kappa: float = 1000.0
    split_threshold: float = 0.5
    holdout_only: bool = False
    seed: int = 0
    out: Path | None = None
    alpha: float = 0.05
    reps: int = 1000

    PATH_KEYS = (
        "reference", "target_ex_ante", "target_ex_post", "assign_covariates", "workers", "pass_table", "grants", "assignments", "predictions", "out",
    )

    @classmethod
    def from_mapping(cls, raw: dict[str, str], base) -> "RunConfig":
        base = Path(base)
        cfg = cls(base=base)
        for key in cls.PATH_KEYS:
            if key in raw:
                setattr(cfg, key, (base / raw[key]).resolve())
        cfg.methods = [m.strip() for m in raw.get("methods", "").split(",") if m.strip()]
        if len(set(cfg.methods)) != len(cfg.methods):
            raise ConfigError("method labels must be unique")
        for key, value in raw.items():
            if "." in key:
                method, setting = key.split(".", 1)
                cfg.method_settings.setdefault(method, {})[setting] = value
        cfg.schedule = raw.get("schedule", "morocco")
        cfg.kappa = _float(raw, "kappa", 1000.0)
        cfg.split_threshold = _float(raw, "split_threshold", 0.5)
        cfg.holdout_only = raw.get("holdout_only", "false").lower() in ("1", "true", "yes")
        cfg.seed = _int(raw, "seed", 0)
        cfg.alpha = _float(raw, "alpha", 0.05)
        cfg.reps = _int(raw, "reps", 1000)
        if not 0 < cfg.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if cfg.kappa <= 0:
            raise ConfigError("kappa must be positive")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_mapping(read_kv(path), path.parent)

    def cost_schedule(self) -> CostSchedule:
        return resolve_schedule(self.schedule, self.kappa, self.base)

    def settings(self, method: str) -> dict[str, str]:
        return self.method_settings.get(method, {})

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"config is missing {', '.join(missing)}")
        for k in keys:
            value = getattr(self, k)
            if isinstance(value, Path) and k != "out" and not value.exists():
                raise FileNotFoundError(f"{k}: {value} does not exist")


def resolve_schedule(value: str, kappa: float, base=".") -> CostSchedule:
    """``morocco`` and ``zero`` name built-in schedules; anything else is a CSV path."""
    if value == "morocco":
        return morocco_schedule(kappa)
    if value == "zero":
        return CostSchedule.zero(0, kappa)
    path = (Path(base) / value).resolve()
    if not path.exists():
        raise FileNotFoundError(f"schedule: {path} does not exist")
    return load_schedule(path, kappa)
