"""Experiment configuration: flat INI sections, strict validation, and a
typed echo that round-trips losslessly through the JSON report."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict

from ..errors import ConfigError, ParameterError
from ..innovations import FAMILY_NAMES, make_innovation
from ..linear_process import DEFAULT_M_MAX, make_schedule
from ..nonlinear_process import make_map

LINEAR_KINDS = ("iid", "geometric", "polynomial_srd", "lrd")
MAP_KINDS = ("ar1", "arch1", "tar")
MODES = ("rate", "uniform_rate", "oscillation", "dichotomy", "trimmed_clt",
         "gmc", "simulate")

# per-kind allowed process parameters (beyond "kind")
_PROCESS_PARAMS = {
    "iid": set(),
    "geometric": {"rho"},
    "polynomial_srd": {"r"},
    "lrd": {"beta", "slowvary", "c", "gamma_log"},
    "ar1": {"a", "burn_in"},
    "arch1": {"c0", "c1", "burn_in"},
    "tar": {"phi_pos", "phi_neg", "burn_in"},
}

_INNOVATION_PARAMS = {
    "gaussian": {"scale"},
    "uniform": {"scale"},
    "uniform_smoothwrap": {"scale", "mollify_ratio"},
    "student_t": {"scale", "nu"},
    "logistic": {"scale"},
}

# experiment-section keys: name -> (parser, default)
_FLOAT = float
_INT = int


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text):
    # accept 2^k tokens for readability of n grids and seeds
    t = str(text).strip()
    if "^" in t:
        base, exp = t.split("^")
        return int(base) ** int(exp)
    return int(t)


def parse_n_grid(text):
    """Comma list of integers (2^k tokens allowed) or a power range a^i..a^j."""
    t = str(text).strip()
    if ".." in t:
        lo, hi = t.split("..")
        lo_v, hi_v = _parse_int(lo), _parse_int(hi)
        if "^" in lo and "^" in hi:
            base = int(lo.split("^")[0])
            if base == int(hi.split("^")[0]):
                e0, e1 = int(lo.split("^")[1]), int(hi.split("^")[1])
                return [base**e for e in range(e0, e1 + 1)]
        raise ValueError(f"range syntax needs matching bases like 2^10..2^17: {text!r}")
    return [_parse_int(x) for x in t.split(",") if x.strip()]


_EXPERIMENT_KEYS = {
    "id": (str, None),
    "n_grid": (parse_n_grid, None),
    "replicates": (_parse_int, None),
    "p": (_FLOAT, None),
    "p0": (_FLOAT, None),
    "p1": (_FLOAT, None),
    "corrected": (_parse_bool, False),
    "aggregate_tail": (_parse_bool, None),
    "r_oracle": (_parse_int, 200_000),
    "oracle_method": (str, "auto"),
    "truncation_tolerance": (_FLOAT, 1e-4),
    "m_max": (_parse_int, DEFAULT_M_MAX),
    "base_seed": (_parse_int, 20250810),
    "grid_points": (_parse_int, 200),
    "window_c": (_FLOAT, 1.0),
    "window_gamma": (_FLOAT, -0.5),
    "x_prob": (_FLOAT, None),
    "delta_gamma": (_FLOAT, None),
    "branch": (str, "auto"),
    "alpha": (_FLOAT, 2.0),
    "max_lag": (_parse_int, 40),
    "variant": (str, "trimmed"),
    "jobs": (_parse_int, 1),
}

_PROCESS_VALUE_PARSERS = {
    "kind": str,
    "rho": _FLOAT,
    "r": _FLOAT,
    "beta": _FLOAT,
    "slowvary": str,
    "c": _FLOAT,
    "gamma_log": _FLOAT,
    "a": _FLOAT,
    "c0": _FLOAT,
    "c1": _FLOAT,
    "phi_pos": _FLOAT,
    "phi_neg": _FLOAT,
    "burn_in": _parse_int,
}

_INNOVATION_VALUE_PARSERS = {
    "family": str,
    "scale": _FLOAT,
    "nu": _FLOAT,
    "mollify_ratio": _FLOAT,
}

#: modes that need a pointwise level p / a range [p0, p1]
_POINT_MODES = ("rate",)
_RANGE_MODES = ("uniform_rate", "trimmed_clt")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    experiment_id: str
    process: dict
    innovation: dict
    n_grid: tuple
    replicates: int
    p: float | None = None
    p0: float | None = None
    p1: float | None = None
    corrected: bool = False
    # None resolves to True for long-memory schedules, False otherwise
    aggregate_tail: bool | None = None
    r_oracle: int = 200_000
    oracle_method: str = "auto"
    truncation_tolerance: float = 1e-4
    m_max: int = DEFAULT_M_MAX
    base_seed: int = 20250810
    grid_points: int = 200
    window_c: float = 1.0
    window_gamma: float = -0.5
    x_prob: float | None = None
    delta_gamma: float | None = None
    branch: str = "auto"
    alpha: float = 2.0
    max_lag: int = 40
    variant: str = "trimmed"
    jobs: int = 1
    out_dir: str | None = None

    # ---- derived builders -------------------------------------------------

    @property
    def process_kind(self) -> str:
        return self.process["kind"]

    @property
    def is_linear(self) -> bool:
        return self.process_kind in LINEAR_KINDS

    @property
    def aggregate_tail_resolved(self) -> bool:
        if self.aggregate_tail is None:
            return self.process_kind == "lrd"
        return self.aggregate_tail

    def build_innovation(self):
        params = {k: v for k, v in self.innovation.items() if k != "family"}
        return make_innovation(self.innovation["family"], **params)

    def build_schedule(self):
        if not self.is_linear:
            raise ParameterError(f"{self.process_kind} is not a linear schedule")
        params = {k: v for k, v in self.process.items() if k != "kind"}
        return make_schedule(self.process_kind, **params)

    def build_map(self):
        if self.is_linear:
            raise ParameterError(f"{self.process_kind} is not an iterated map")
        params = {k: v for k, v in self.process.items() if k != "kind"}
        return make_map(self.process_kind, self.build_innovation(), **params)

    # ---- echo round-trip ---------------------------------------------------

    def to_echo(self) -> dict:
        d = asdict(self)
        d["n_grid"] = list(self.n_grid)
        return d

    @classmethod
    def from_echo(cls, echo: dict) -> "ExperimentConfig":
        d = dict(echo)
        d["n_grid"] = tuple(d["n_grid"])
        d["process"] = dict(d["process"])
        d["innovation"] = dict(d["innovation"])
        return cls(**d)


def _validated_section(parser, section, allowed_parsers, path):
    if not parser.has_section(section):
        raise ConfigError(f"missing required section in {path}", section=section)
    out = {}
    for key, raw in parser.items(section):
        if key not in allowed_parsers:
            raise ConfigError(f"unknown key {key!r}", section=section, key=key)
        try:
            out[key] = allowed_parsers[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r}: {exc}", section=section, key=key)
    return out


def _validate_process(proc):
    kind = proc.get("kind")
    if kind is None:
        raise ConfigError("process kind is required", section="process", key="kind")
    if kind not in _PROCESS_PARAMS:
        known = ", ".join(sorted(_PROCESS_PARAMS))
        raise ConfigError(f"unknown kind {kind!r} (known: {known})",
                          section="process", key="kind")
    allowed = _PROCESS_PARAMS[kind]
    for key in proc:
        if key != "kind" and key not in allowed:
            raise ConfigError(f"key {key!r} not valid for kind {kind!r}",
                              section="process", key=key)
    if kind == "lrd":
        beta = proc.get("beta")
        if beta is None or not (0.5 < beta < 1.0):
            raise ConfigError(f"beta must be in (1/2, 1), got {beta}",
                              section="process", key="beta")


def _validate_innovation(innov):
    family = innov.get("family")
    if family is None:
        raise ConfigError("innovation family is required",
                          section="innovation", key="family")
    if family not in _INNOVATION_PARAMS:
        raise ConfigError(
            f"unknown family {family!r} (known: {', '.join(FAMILY_NAMES)})",
            section="innovation", key="family")
    for key in innov:
        if key != "family" and key not in _INNOVATION_PARAMS[family]:
            raise ConfigError(f"key {key!r} not valid for family {family!r}",
                              section="innovation", key=key)


def _validate_experiment(cfg: ExperimentConfig):
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    grid = cfg.n_grid
    if len(grid) < 1 or any(g < 1 for g in grid):
        raise ConfigError("n_grid must contain positive integers",
                          section="experiment", key="n_grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("n_grid must be strictly increasing",
                          section="experiment", key="n_grid")
    if cfg.mode != "simulate" and cfg.replicates < 30:
        raise ConfigError(f"replicates must be >= 30, got {cfg.replicates}",
                          section="experiment", key="replicates")
    if cfg.mode in _POINT_MODES:
        if cfg.p is None or not (0.0 < cfg.p < 1.0):
            raise ConfigError(f"mode {cfg.mode} needs p in (0,1), got {cfg.p}",
                              section="experiment", key="p")
    if cfg.mode in _RANGE_MODES:
        if cfg.p0 is None or cfg.p1 is None or not (0.0 < cfg.p0 < cfg.p1 < 1.0):
            raise ConfigError(
                f"mode {cfg.mode} needs 0 < p0 < p1 < 1, got ({cfg.p0}, {cfg.p1})",
                section="experiment", key="p0")
    if cfg.mode == "dichotomy" and cfg.delta_gamma is None:
        raise ConfigError("dichotomy needs delta_gamma (window = n^gamma)",
                          section="experiment", key="delta_gamma")
    if cfg.oracle_method not in ("auto", "mc", "exact"):
        raise ConfigError(f"oracle_method must be auto|mc|exact, got {cfg.oracle_method}",
                          section="experiment", key="oracle_method")
    if cfg.variant not in ("trimmed", "winsorized", "winsorized_next"):
        raise ConfigError(f"variant must be trimmed|winsorized|winsorized_next",
                          section="experiment", key="variant")
    if cfg.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {cfg.jobs}",
                          section="experiment", key="jobs")
    if cfg.truncation_tolerance <= 0:
        raise ConfigError("truncation_tolerance must be > 0",
                          section="experiment", key="truncation_tolerance")
    # construction-level validation (raises ParameterError -> ConfigError)
    try:
        cfg.build_innovation()
        if cfg.is_linear:
            cfg.build_schedule()
        else:
            cfg.build_map()
    except ParameterError as exc:
        raise ConfigError(str(exc), section="process")


def apply_overrides(parser: configparser.ConfigParser, overrides):
    """Apply --set section.key=value pairs onto the parsed file."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section.strip(), key.strip(), value.strip())


def load_config(path, mode: str, overrides=(), out_dir=None,
                base_seed=None, jobs=None) -> ExperimentConfig:
    """Parse, override and validate a config file for the given mode."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}")
    apply_overrides(parser, overrides)

    for section in parser.sections():
        if section not in ("process", "innovation", "experiment", "output"):
            raise ConfigError("unknown section", section=section)

    proc = _validated_section(parser, "process", _PROCESS_VALUE_PARSERS, path)
    innov = _validated_section(parser, "innovation", _INNOVATION_VALUE_PARSERS, path)
    _validate_process(proc)
    _validate_innovation(innov)

    exp_raw = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"unknown key {key!r}", section="experiment", key=key)
            fn, _ = _EXPERIMENT_KEYS[key]
            try:
                exp_raw[key] = fn(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value {raw!r}: {exc}",
                                  section="experiment", key=key)

    out = None
    if parser.has_section("output"):
        for key, raw in parser.items("output"):
            if key != "dir":
                raise ConfigError(f"unknown key {key!r}", section="output", key=key)
            out = raw
    if out_dir is not None:
        out = str(out_dir)

    merged = {k: exp_raw.get(k, default) for k, (_, default) in _EXPERIMENT_KEYS.items()}
    if merged["id"] is None:
        raise ConfigError("experiment id is required", section="experiment", key="id")
    if merged["n_grid"] is None:
        raise ConfigError("n_grid is required", section="experiment", key="n_grid")
    if merged["replicates"] is None and mode != "simulate":
        raise ConfigError("replicates is required", section="experiment",
                          key="replicates")
    if base_seed is not None:
        merged["base_seed"] = int(base_seed)
    if jobs is not None:
        merged["jobs"] = int(jobs)

    cfg = ExperimentConfig(
        mode=mode,
        experiment_id=merged["id"],
        process=proc,
        innovation=innov,
        n_grid=tuple(merged["n_grid"]),
        replicates=merged["replicates"] if merged["replicates"] is not None else 0,
        p=merged["p"],
        p0=merged["p0"],
        p1=merged["p1"],
        corrected=merged["corrected"],
        aggregate_tail=merged["aggregate_tail"],
        r_oracle=merged["r_oracle"],
        oracle_method=merged["oracle_method"],
        truncation_tolerance=merged["truncation_tolerance"],
        m_max=merged["m_max"],
        base_seed=merged["base_seed"],
        grid_points=merged["grid_points"],
        window_c=merged["window_c"],
        window_gamma=merged["window_gamma"],
        x_prob=merged["x_prob"],
        delta_gamma=merged["delta_gamma"],
        branch=merged["branch"],
        alpha=merged["alpha"],
        max_lag=merged["max_lag"],
        variant=merged["variant"],
        jobs=merged["jobs"],
        out_dir=out,
    )
    _validate_experiment(cfg)
    return cfg
