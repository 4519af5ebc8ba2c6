"""Command-line driver: config in, CSV/JSON plus a provenance sidecar out.

Exit status is 0 when a run completes (or a check passes), 2 when an
inequality check reports a violation, 1 on any usage or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import blockdecomp, dsequences, maximal, slln
from .config import COMMANDS, FORMATS, ConfigError, ExperimentConfig, load
from .fieldgen import generate_batch
from .lattice import iter_rectangle

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


@dataclass
class Outcome:
    line: str
    csv_text: str | None = None
    payload: dict = field(default_factory=dict)
    violation: bool = False


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x) -> str:
    return repr(float(x))


# ---- subcommand adapters ----------------------------------------------------

def _simulate(cfg: ExperimentConfig) -> Outcome:
    model = cfg.model()
    n = cfg.horizon()
    X = generate_batch(model, n, np.arange(cfg.reps))
    cells = list(iter_rectangle(n))
    rows = [(k, str(m), _f(X[(k,) + tuple(c - 1 for c in m.coords)]))
            for k in range(cfg.reps) for m in cells]
    return Outcome(f"simulated {cfg.reps} replicate(s) of {model.margin.label()} on {n}",
                   _csv(("replicate", "n", "value"), rows),
                   {"model": model.describe(), "n": list(n.coords), "reps": cfg.reps,
                    "mean": float(X.mean())})


def _report_outcome(rep: maximal.InequalityReport) -> Outcome:
    v = rep.verdict
    line = (f"{rep.kind}: {v} ({len(rep.violations)} violation(s) in {len(rep.rows)} rows, "
            f"max ratio {rep.max_ratio():.4g})")
    return Outcome(line, rep.to_csv(), rep.to_dict(), v == maximal.FAIL)


def _verify_transfer(cfg: ExperimentConfig) -> Outcome:
    model, a, b = cfg.model(), cfg.sequence("a"), cfg.sequence("b")
    if cfg.variant == "prob":
        rep = maximal.check_transfer_prob(model, a, b, cfg.r, cfg.grid(), cfg.eps(), cfg.mode,
                                          cfg.reps, cfg.seed, cfg.confidence, C=cfg.C)
    else:
        rep = maximal.check_transfer_moment(model, a, b, cfg.r, cfg.grid(), cfg.mode, cfg.reps,
                                            cfg.seed, cfg.confidence, cfg.fit_a)
    return _report_outcome(rep)


def _markov_bridge(cfg: ExperimentConfig) -> Outcome:
    rep = maximal.markov_bridge(cfg.model(), cfg.sequence("a"), cfg.r, cfg.grid(), cfg.eps(),
                                cfg.mode, cfg.reps, cfg.seed, cfg.confidence, cfg.fit_a)
    return _report_outcome(rep)


def _blockdecomp(cfg: ExperimentConfig) -> Outcome:
    a, b, n = cfg.sequence("a"), cfg.sequence("b"), cfg.horizon()
    rep = blockdecomp.verify_chain(a, b, n, cfg.c, cfg.r)
    part = blockdecomp.build_partition(b, n, cfg.c)
    rows = [(str(s), "(" + ",".join(map(str, i)) + ")") for s, i in part.rows()]
    payload = rep.to_dict()
    payload["blocks"] = len(part.blocks)
    payload["k_n"] = list(part.k_n)
    status = "pass" if rep.passed else "fail at " + ", ".join(s.name for s in rep.failing())
    line = (f"blockdecomp-check: {status} ({len(part.blocks)} block(s), "
            f"factor {rep.factor:.6g}, middle/final {rep.final_ratio:.4g})")
    return Outcome(line, _csv(("s", "block"), rows), payload, not rep.passed)


def _optimal_c(cfg: ExperimentConfig) -> Outcome:
    c, m = blockdecomp.optimal_c(cfg.r)
    return Outcome(f"c*={c:.6g} min={m:.6g}", _csv(("r", "c_star", "min_value"),
                                                   [(_f(cfg.r), _f(c), _f(m))]),
                   {"r": cfg.r, "c_star": c, "min_value": m, "closed_form_c_star": 2 ** (1 / cfg.r)})


def _construct_beta(cfg: ExperimentConfig) -> Outcome:
    a, b = cfg.sequence("a"), cfg.sequence("b")
    tol = cfg.tol if "tol" in cfg.raw else 0.05
    rep = dsequences.construct_beta(a, b, cfg.r, cfg.horizon(), series_tol=tol)
    rows = [(k, _f(rep.beta((k,) * cfg.horizon().d)), _f(b((k,) * cfg.horizon().d)), _f(q))
            for k, q in zip(rep.chain, rep.ratio)]
    line = (f"construct-beta: quarter drop {rep.quarter_drop:.4g}, final increment "
            f"{rep.final_increment:.3g}, flags {'ok' if rep.flags_ok else 'not ok'}")
    return Outcome(line, _csv(("k", "beta", "b", "ratio"), rows), rep.to_dict())


def _series_sum(cfg: ExperimentConfig) -> Outcome:
    a, b = cfg.sequence("a"), cfg.sequence("b")
    sched = cfg.schedule() if "schedule" in cfg.raw else dsequences.dyadic_to(cfg.horizon())
    v = dsequences.series_sum(a, b, cfg.r, sched, tol=cfg.tol)
    incs = [""] + [_f(x) for x in v.increments]
    rows = [(str(n), _f(p), i) for n, p, i in zip(sched, v.partial_sums, incs)]
    line = f"series-sum: {v.verdict} (partial sum {v.partial_sum:.6g} at {v.horizon}, " \
           f"relative increment {v.tail_increment:.3g})"
    return Outcome(line, _csv(("n", "partial_sum", "increment"), rows), v.to_dict())


def _slln_trajectory(cfg: ExperimentConfig) -> Outcome:
    tr = slln.trajectory(cfg.model(), cfg.sequence("b"), cfg.schedule(), cfg.reps, cfg.seed,
                         cfg.threads)
    s = tr.summary()
    payload = {"summary": s}
    if "beta" in cfg.raw.get("sequences", {}):
        sup = slln.sup_ratio(cfg.model(), cfg.sequence("beta"), tr.schedule.last, cfg.reps,
                             cfg.seed, cfg.threads)
        payload["sup_ratio"] = sup.to_dict()
    return Outcome(f"slln-trajectory: {s['verdict']}", tr.to_csv(), payload)


def _logweighted(cfg: ExperimentConfig) -> Outcome:
    res = slln.logweighted_demo(cfg.model(), cfg.schedule(), cfg.reps, cfg.seed, cfg.r,
                                cfg.fit_top, cfg.fit_reps, cfg.threads)
    s = res.summary()
    chat = "skipped" if res.C_hat is None else f"{res.C_hat:.4g}"
    return Outcome(f"logweighted-demo: {s['verdict']} (C_hat {chat})", res.trajectory.to_csv(), s)


HANDLERS = {
    "simulate": _simulate,
    "verify-transfer": _verify_transfer,
    "markov-bridge": _markov_bridge,
    "blockdecomp-check": _blockdecomp,
    "optimal-c": _optimal_c,
    "construct-beta": _construct_beta,
    "series-sum": _series_sum,
    "slln-trajectory": _slln_trajectory,
    "logweighted-demo": _logweighted,
}


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_outputs(cfg: ExperimentConfig, out: Outcome) -> list[Path]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if cfg.fmt in ("csv", "both") and out.csv_text is not None:
        p = cfg.out_dir / f"{cfg.stem}.csv"
        p.write_text(out.csv_text)
        written.append(p)
    if cfg.fmt in ("json", "both"):
        p = cfg.out_dir / f"{cfg.stem}.json"
        p.write_text(json.dumps(out.payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
        written.append(p)
    prov = {
        "command": cfg.command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": sorted(p.name for p in written),
        "verdict": out.line,
    }
    p = cfg.out_dir / f"{cfg.stem}.provenance.json"
    p.write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldlaws", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
        p.add_argument("--reps", type=int, help="replicates, overrides the config")
        p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=FORMATS, help="output format")
        if name == "verify-transfer":
            p.add_argument("variant", nargs="?", choices=("prob", "moment"))
        if name == "optimal-c":
            p.add_argument("--r", type=float, help="exponent r > 0")
    return ap


def run(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("fieldlaws: error: a command is required", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "optimal-c" and args.config is None:
            if args.r is None:
                raise ConfigError("optimal-c needs --r or --config")
            c, m = blockdecomp.optimal_c(args.r)
            print(f"c*={c:.6g} min={m:.6g}")
            return EXIT_OK
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = load(args.config, command=args.command, seed=args.seed, reps=args.reps,
                   threads=args.threads, out=args.out, fmt=args.format,
                   variant=getattr(args, "variant", None))
        if args.command == "optimal-c" and args.r is not None:
            cfg.r = args.r
        out = HANDLERS[cfg.command](cfg)
        write_outputs(cfg, out)
    except (ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fieldlaws: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    print(out.line)
    return EXIT_VIOLATION if out.violation else EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
