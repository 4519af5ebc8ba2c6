"""Experiment configuration: TOML files validated into an :class:`ExperimentConfig`.

Schema (every table optional unless the command needs it)::

    command = "verify-transfer"     # optional when given on the command line
    seed = 12345                     # required, unsigned 64-bit
    reps = 1000                      # Monte Carlo replicates, >= 1
    r = 2.0                          # exponent, > 0
    mode = "exact"                   # or "monte_carlo"
    variant = "prob"                 # verify-transfer only: "prob" or "moment"
    confidence = 0.99                # in (0, 1)
    tol = 1e-6                       # series tolerance, > 0
    c = 2.0                          # block base, > 1
    fit_a = false                    # moment checks: fit the scale of a
    C = 0.5                          # verify-transfer prob: claimed side (i) constant instead of a fit
    fit_top = 4                      # log-weighted demo: grid for the constant, or -1 to skip
    fit_reps = 2000

    [model]
    kind = "iid"                     # iid | moving_average | finite_support
    margin = "rademacher"            # "normal(0,1)", or a table {family, params} / {family="finite", values, probs}
    window = [2, 2]                  # moving_average only

    [sequences]
    a = "constant:1"                 # family names, see fieldlaws.dsequences.parse_family
    b = "size"
    beta = "size"                    # sup ratio normaliser (optional)

    [grid]
    n = [2, 2]                       # horizon
    all_below = true                 # grid = every m <= n (else just n)
    points = [[1, 1], [2, 2]]        # explicit grid, overrides n
    eps = [0.5, 1.0]                 # tail levels, default is a 7-point dyadic grid

    [schedule]
    kind = "dyadic"                  # dyadic | anisotropic | unit_diagonal | explicit
    d = 2
    top = 10
    exponents = [1, 2]               # anisotropic
    points = [[1, 1], [2, 4]]        # explicit

    [output]
    dir = "out"
    format = "both"                  # csv | json | both
    stem = "run"                     # file name stem, defaults to the command
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dsequences import DSequence, parse_family
from .fieldgen import FieldModel, parse_margin
from .lattice import MultiIndex, RectangleSchedule, as_index, iter_rectangle

COMMANDS = ("simulate", "verify-transfer", "markov-bridge", "blockdecomp-check", "optimal-c",
            "construct-beta", "series-sum", "slln-trajectory", "logweighted-demo")
FORMATS = ("csv", "json", "both")
_TOP_KEYS = {"command", "seed", "reps", "r", "mode", "variant", "confidence", "tol", "c",
             "fit_a", "fit_top", "fit_reps", "C", "model", "sequences", "grid", "schedule", "output"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    raw: dict
    reps: int = 1000
    r: float = 2.0
    mode: str = "exact"
    variant: str = "prob"
    confidence: float = 0.99
    tol: float = 1e-6
    c: float = 2.0
    fit_a: bool = False
    fit_top: int | None = 4
    fit_reps: int = 2000
    C: float | None = None
    out_dir: Path = Path("out")
    fmt: str = "both"
    stem: str = ""
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config."""
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolved(self) -> dict:
        out = dict(self.raw)
        out.update(command=self.command, seed=self.seed, reps=self.reps, r=self.r, mode=self.mode,
                   variant=self.variant, confidence=self.confidence, tol=self.tol, c=self.c,
                   fit_a=self.fit_a, fit_top=self.fit_top, fit_reps=self.fit_reps, C=self.C)
        return out

    # ---- typed views of the tables ------------------------------------------

    def model(self) -> FieldModel:
        t = self._table("model", required=True)
        if "margin" not in t:
            raise ConfigError("config field 'model.margin' is missing")
        window = t.get("window")
        return FieldModel(t.get("kind", "iid"), parse_margin(t["margin"]), self.seed,
                          as_index(window) if window is not None else None)

    def sequence(self, key: str, default: str | None = None) -> DSequence:
        t = self._table("sequences")
        spec = t.get(key, default)
        if spec is None:
            raise ConfigError(f"config field 'sequences.{key}' is missing")
        return parse_family(str(spec))

    def horizon(self) -> MultiIndex:
        t = self._table("grid", required=True)
        if "n" not in t:
            raise ConfigError("config field 'grid.n' is missing")
        return as_index(t["n"])

    def grid(self) -> list[MultiIndex]:
        t = self._table("grid", required=True)
        if "points" in t:
            return [as_index(p) for p in t["points"]]
        n = self.horizon()
        return list(iter_rectangle(n)) if t.get("all_below", True) else [n]

    def eps(self) -> list[float] | None:
        e = self._table("grid").get("eps")
        if e is None:
            return None
        e = [float(x) for x in e]
        if any(not x > 0 for x in e):
            raise ConfigError("config field 'grid.eps' must hold positive numbers")
        return e

    def schedule(self) -> RectangleSchedule:
        t = self._table("schedule", required=True)
        kind = t.get("kind", "dyadic")
        try:
            if kind == "dyadic":
                return RectangleSchedule.dyadic(int(t["d"]), int(t["top"]), int(t.get("start", 0)))
            if kind == "anisotropic":
                return RectangleSchedule.anisotropic([int(e) for e in t["exponents"]], int(t["top"]))
            if kind == "unit_diagonal":
                return RectangleSchedule.unit_diagonal(as_index(t["horizon"]))
            if kind == "explicit":
                return RectangleSchedule(tuple(as_index(p) for p in t["points"]))
        except KeyError as exc:
            raise ConfigError(f"config field 'schedule.{exc.args[0]}' is missing") from None
        raise ConfigError(f"unknown schedule kind {kind!r}")

    def _table(self, name: str, required: bool = False) -> dict:
        t = self.raw.get(name)
        if t is None:
            if required:
                raise ConfigError(f"config table '[{name}]' is missing")
            return {}
        if not isinstance(t, dict):
            raise ConfigError(f"config field '{name}' must be a table")
        return t


def _num(raw: dict, key: str, kind, default, check, what: str):
    if key not in raw:
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config field '{key}' must be a number, got {v!r}")
    v = kind(v)
    if not check(v):
        raise ConfigError(f"config field '{key}' must be {what}, got {v!r}")
    return v


def from_dict(raw: dict, command: str | None = None, seed: int | None = None,
              reps: int | None = None, threads: int | None = None, out: str | None = None,
              fmt: str | None = None, variant: str | None = None) -> ExperimentConfig:
    """Validate a parsed config; command-line values override the file."""
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    cmd = command or raw.get("command")
    if cmd is None:
        raise ConfigError("config field 'command' is missing")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    if raw.get("command") not in (None, cmd):
        raise ConfigError(f"config is for command {raw['command']!r}, not {cmd!r}")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("config field 'seed' is missing (no wall-clock default)")
        seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"config field 'seed' must be an unsigned 64-bit integer, got {seed!r}")
    out_t = raw.get("output", {})
    if not isinstance(out_t, dict):
        raise ConfigError("config field 'output' must be a table")
    fmt = fmt or out_t.get("format", "both")
    if fmt not in FORMATS:
        raise ConfigError(f"config field 'output.format' must be one of {FORMATS}, got {fmt!r}")
    mode = raw.get("mode", "exact")
    if mode not in ("exact", "monte_carlo"):
        raise ConfigError(f"config field 'mode' must be 'exact' or 'monte_carlo', got {mode!r}")
    variant = variant or raw.get("variant", "prob")
    if variant not in ("prob", "moment"):
        raise ConfigError(f"config field 'variant' must be 'prob' or 'moment', got {variant!r}")
    fit_top = _num(raw, "fit_top", int, 4, lambda v: v >= -1, "an integer >= -1")
    cfg = ExperimentConfig(
        command=cmd,
        seed=int(seed),
        raw=raw,
        reps=reps if reps is not None else _num(raw, "reps", int, 1000, lambda v: v >= 1, "at least 1"),
        r=_num(raw, "r", float, 2.0, lambda v: v > 0, "positive"),
        mode=mode,
        variant=variant,
        confidence=_num(raw, "confidence", float, 0.99, lambda v: 0 < v < 1, "in (0, 1)"),
        tol=_num(raw, "tol", float, 1e-6, lambda v: v > 0, "positive"),
        c=_num(raw, "c", float, 2.0, lambda v: v > 1, "greater than 1"),
        fit_a=bool(raw.get("fit_a", False)),
        fit_top=None if fit_top == -1 else fit_top,
        fit_reps=_num(raw, "fit_reps", int, 2000, lambda v: v >= 1, "at least 1"),
        C=_num(raw, "C", float, None, lambda v: v >= 0, "nonnegative"),
        out_dir=Path(out or out_t.get("dir", "out")),
        fmt=fmt,
        stem=str(out_t.get("stem", cmd)),
        threads=threads if threads is not None else 1,
    )
    if cfg.reps < 1:
        raise ConfigError(f"reps must be at least 1, got {cfg.reps}")
    if cfg.threads < 1:
        raise ConfigError(f"threads must be at least 1, got {cfg.threads}")
    return cfg


def load(path: str | Path, **overrides) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from None
    return from_dict(raw, **overrides)
