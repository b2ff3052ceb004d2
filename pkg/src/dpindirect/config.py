"""Flat ``key = value`` study configuration with typed keys.

Lines starting with ``#`` and blank lines are ignored.  List values are
comma separated.  Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

STUDIES = ("locscale_ci", "linreg_ht", "logistic_ci", "toy_oracle")

METHODS = {
    "locscale_ci": ("adi", "ind", "naive_percentile", "simplified_t", "ferrando", "efron_bc"),
    "linreg_ht": ("adi_pivot", "adi_const", "naive_f"),
    "logistic_ci": ("adi", "naive"),
    "toy_oracle": ("adi", "ind"),
}

# study-specific defaults layered over the field defaults below
STUDY_DEFAULTS = {
    "locscale_ci": dict(replicates=300, alpha=0.05, n=(100,), eps=1.0,
                        methods=("adi", "naive_percentile", "simplified_t", "ferrando", "efron_bc")),
    "linreg_ht": dict(replicates=200, alpha=0.05, n=(200,), mu=1.0, beta1=(0.0, 0.25, 0.5, 1.0),
                      beta0=0.0, methods=("adi_pivot", "naive_f")),
    "logistic_ci": dict(replicates=200, alpha=0.1, n=(100,), eps=10.0, beta1=(2.0,), beta0=0.5,
                        methods=("adi", "naive")),
    "toy_oracle": dict(replicates=200, alpha=0.1, n=(100,), methods=("adi",)),
}


@dataclass(frozen=True)
class StudyConfig:
    study: str = "locscale_ci"
    master_seed: int = 20240607
    replicates: int = 300
    R: int = 0  # 0: model default
    B: int = 200
    alpha: float = 0.05
    methods: tuple = ()
    workers: int = 0  # 0: environment or 1
    output: str = ""
    timing: bool = True
    n: tuple = (100,)
    # location-scale
    eps: float = 1.0
    L: float = 0.0
    U: float = 3.0
    clamp: str = "hard"
    mu_true: float = 1.0
    sigma_true: float = 1.0
    # linear regression (mu is the GDP parameter)
    mu: float = 1.0
    Delta: float = 2.0
    beta1: tuple = (0.0,)
    beta0: float = 0.0
    mu_x: float = 0.0
    sigma_x: float = 1.0
    sigma_e: float = 1.0
    R_big: int = 200
    delta: float = 1e-6
    # logistic
    a: float = 1.0
    b: float = 1.0
    y_channel: str = "indicator"
    # toy
    sigma: float = 1.0
    theta_true: tuple = (0.5, -0.3)
    # estimator
    solver: str = "gauss-newton"
    fd_step: float | None = None
    zero_tol: float | None = None
    ridge_scale: float = 1e-10

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = set(self.methods) - set(METHODS[self.study])
        if bad:
            raise ValueError(f"methods {sorted(bad)} not available for {self.study}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.B < 1:
            raise ValueError("B must be positive")


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _split(v):
    return [x.strip() for x in v.split(",") if x.strip()]


def _optional_float(v: str):
    return None if v.strip().lower() in ("", "auto", "none") else float(v)


_LIST_INT = {"n"}
_LIST_FLOAT = {"beta1", "theta_true"}
_LIST_STR = {"methods"}
_OPT_FLOAT = {"fd_step", "zero_tol"}


def _field_types():
    return {f.name: f.type for f in fields(StudyConfig)}


def parse_value(key: str, raw: str):
    types = _field_types()
    if key not in types:
        raise KeyError(f"unknown config key {key!r}")
    raw = raw.strip()
    if key in _LIST_INT:
        return tuple(int(x) for x in _split(raw))
    if key in _LIST_FLOAT:
        return tuple(float(x) for x in _split(raw))
    if key in _LIST_STR:
        return tuple(_split(raw))
    if key in _OPT_FLOAT:
        return _optional_float(raw)
    t = types[key]
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        return _parse_bool(raw)
    return raw


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (x.strip() for x in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = parse_value(key, raw)
        except KeyError as exc:
            raise ValueError(f"line {lineno}: {exc.args[0]}") from None
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        out[key.strip()] = parse_value(key.strip(), raw)
    return out


def build_config(values: dict) -> StudyConfig:
    study = values.get("study", StudyConfig.study)
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; expected one of {STUDIES}")
    merged = {**STUDY_DEFAULTS[study], **values, "study": study}
    return StudyConfig(**merged)


def load_config(path=None, overrides=(), **extra) -> StudyConfig:
    values = parse_text(Path(path).read_text()) if path else {}
    values.update(extra)
    values.update(parse_overrides(overrides))
    return build_config(values)


def with_values(cfg: StudyConfig, **kw) -> StudyConfig:
    return replace(cfg, **kw)


def dump_config(cfg: StudyConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
