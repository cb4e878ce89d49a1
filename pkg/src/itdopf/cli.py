"""Command-line front end: merge cases, run solvers, validate derivatives, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import testcases
from .aladin import AladinConfig, run, write_trace
from .cases import (
    Branch,
    ItdCase,
    NetworkCase,
    dump_json_case,
    load_json_case,
    merge_itd,
    parse_matpower,
)
from .centralized import solve_centralized
from .exceptions import ItdError, TraceError
from .models import build_region_models, check_model_derivatives, conic_residual
from .partition import build_consensus, decompose

log = logging.getLogger("itdopf")

_ALGOS = {"aladin-soc": "aladin_soc", "aladin-std": "aladin_std", "centralized": "centralized"}


@dataclass
class RunManifest:
    case_path: str
    algorithm: str                      # aladin_soc | aladin_std | centralized
    overrides: dict = field(default_factory=dict)
    seed: int = 1
    trace_path: str | None = None
    out_path: str | None = None
    use_oracle: bool = False


def _load_case(path: str) -> NetworkCase | ItdCase:
    text = Path(path).read_text()
    if path.endswith(".m"):
        return parse_matpower(text)
    return load_json_case(text)


def _parse_kv(text: str, what: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        if "=" not in part:
            raise ItdError(f"bad {what} item {part!r}: expected key=value")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_merge(args) -> int:
    transmission = _load_case(args.transmission)
    if not isinstance(transmission, NetworkCase):
        raise ItdError("--transmission must name a single-network case")
    ties_raw = [_parse_kv(t, "tie") for t in args.tie or []]
    feeders = [_parse_kv(f, "feeder") for f in args.feeder or []]
    if ties_raw and len(ties_raw) not in (1, len(feeders)):
        raise ItdError(f"{len(ties_raw)} --tie entries for {len(feeders)} feeders")
    attachments = []
    for i, fd in enumerate(feeders):
        if "bus" not in fd or "file" not in fd:
            raise ItdError("--feeder needs bus=<id>,file=<path>")
        case = _load_case(fd["file"])
        if not isinstance(case, NetworkCase):
            raise ItdError(f"feeder file {fd['file']} must hold a single network")
        bus = int(fd["bus"])
        root = next(b.id for b in case.buses if b.kind == "slack")
        tv = ties_raw[i % len(ties_raw)] if ties_raw else {}
        tie = Branch(
            from_bus=bus, to_bus=root,
            r=float(tv.get("r", 0.01)), x=float(tv.get("x", 0.05)),
            b_charge=float(tv.get("b", 0.0)),
            s_max=float(tv.get("smax", 1.2)), i_max=float(tv.get("imax", 0.0)),
        )
        attachments.append((bus, case, tie))
    itd = merge_itd(transmission, attachments)
    Path(args.out).write_text(dump_json_case(itd))
    n_branches = sum(len(c.branches) for c, _ in itd.regions)
    print(
        f"wrote {args.out}: {len(itd.regions)} regions, {itd.n_buses} buses, "
        f"{n_branches} branches, {len(itd.interconnections)} interconnections"
    )
    return 0


def _as_itd(case: NetworkCase | ItdCase) -> ItdCase:
    if isinstance(case, ItdCase):
        return case
    kind = "distribution" if case.model_hint == "radial" else "transmission"
    return ItdCase(regions=((case, kind),), interconnections=())


def _config_from_args(args, soc: bool) -> AladinConfig:
    cfg = AladinConfig(soc_enabled=soc)
    if args.eps is not None:
        cfg.eps = args.eps
    if args.max_iter is not None:
        cfg.max_iter = args.max_iter
    if args.rho is not None:
        cfg.rho = args.rho
    if args.mu is not None:
        cfg.mu = args.mu
    if args.hessian is not None:
        cfg.hessian_mode = args.hessian
    return cfg


def cmd_solve(args) -> int:
    case = _load_case(args.case)
    itd = _as_itd(case)
    algo = _ALGOS[args.algo]
    t0 = time.perf_counter()

    if algo == "centralized":
        sol = solve_centralized(itd)
        elapsed = time.perf_counter() - t0
        print(f"centralized: status={sol.status} objective={sol.objective:.6f} "
              f"iterations={sol.iterations} kkt={sol.kkt_residual:.3e} time={elapsed:.2f}s")
        if args.trace:
            write_trace([], {
                "status": sol.status, "iterations": sol.iterations,
                "objective": sol.objective, "kkt_residual": sol.kkt_residual,
                "t_total_ms": elapsed * 1e3, "corrected_iterations": 0,
            }, args.trace)
        return 0 if sol.status == "optimal" else 1

    oracle = None
    if args.oracle:
        oracle = solve_centralized(itd)
        log.info("oracle objective %.6f (%s)", oracle.objective, oracle.status)
        if oracle.status != "optimal":
            print("oracle solve failed:", oracle.status, file=sys.stderr)
            return 1

    specs = decompose(itd)
    models = build_region_models(specs, relaxed=True)
    consensus = build_consensus(specs, [m.layout for m in models])
    cfg = _config_from_args(args, soc=(algo == "aladin_soc"))
    state, records, status = run(models, consensus, cfg, oracle=oracle)
    elapsed = time.perf_counter() - t0

    last = records[-1]
    fired = sum(r.soc_fired for r in records)
    final = {
        "status": status, "iterations": len(records),
        "objective": last.objective, "primal_res": last.primal_res,
        "dual_res": last.dual_res, "gap": last.gap, "x_err": last.x_err,
        "conic_res": last.conic_res, "corrected_iterations": fired,
        "t_total_ms": elapsed * 1e3,
    }
    if args.trace:
        write_trace(records, final, args.trace)
        log.info("trace written to %s", args.trace)

    x_err = "n/a" if last.x_err is None else f"{last.x_err:.3e}"
    gap = "n/a" if last.gap is None else f"{last.gap:+.3e}"
    print(f"{args.algo}: status={status} iterations={len(records)} time={elapsed:.2f}s "
          f"x_err={x_err} gap={gap} conic={last.conic_res:.3e}")
    return 0 if status == "converged" else 1


def cmd_check_derivatives(args) -> int:
    case = _load_case(args.case)
    itd = _as_itd(case)
    specs = decompose(itd)
    models = build_region_models(specs, relaxed=True)
    worst = ("", "", 0.0)
    ok = True
    for model in models:
        errs = check_model_derivatives(model, seed=args.seed, n_points=args.points)
        line = "  ".join(f"{k} {v:.3e}" for k, v in errs.items())
        print(f"{model.name}: {line}")
        for k, v in errs.items():
            tol = 1e-6 if k == "grad" else 1e-5
            if v > tol:
                ok = False
            if v > worst[2]:
                worst = (model.name, k, v)
    if not ok:
        print(f"derivative check FAILED: worst {worst[0]}/{worst[1]} = {worst[2]:.3e}",
              file=sys.stderr)
        return 1
    print("derivative check passed")
    return 0


def read_trace(path: str):
    """Parse a JSON-lines trace into (records, final summary)."""
    rows = []
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise TraceError(f"{path}: empty trace")
    for ln, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceError(f"{path}:{ln}: malformed trace line: {exc}") from exc
    if not rows:
        raise TraceError(f"{path}: empty trace")
    final = rows[-1] if "status" in rows[-1] else None
    records = [r for r in rows if "iter" in r]
    return records, final


def convergence_order(dual_res: list[float]) -> float | None:
    """Estimated local order from the last three dual residuals."""
    tail = [d for d in dual_res if d is not None and d > 0]
    if len(tail) < 3:
        return None
    e1, e2, e3 = tail[-3:]
    try:
        den = math.log(e2 / e1)
        if den == 0:
            return None
        return math.log(e3 / e2) / den
    except ValueError:
        return None


def cmd_report(args) -> int:
    records, final = read_trace(args.trace)
    if not records:
        raise TraceError(f"{args.trace}: no iteration records")
    keys = list(records[0].keys())
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for r in records:
                writer.writerow([("" if r.get(k) is None else repr(r.get(k))
                                  if isinstance(r.get(k), float) else r.get(k))
                                 for k in keys])
        print(f"wrote {args.out}: {len(records)} rows")
    fired = sum(1 for r in records if r.get("soc_fired"))
    print(f"iterations: {len(records)}")
    print(f"corrected iterations: {fired}")
    order = convergence_order([r.get("dual_res") for r in records])
    print(f"convergence order estimate: {'n/a' if order is None else f'{order:.2f}'}")
    if final:
        print(f"status: {final.get('status')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="itdopf",
                                description="distributed AC optimal power flow toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("merge", help="merge a transmission case with feeders")
    m.add_argument("--transmission", required=True)
    m.add_argument("--feeder", action="append", metavar="bus=N,file=PATH")
    m.add_argument("--tie", action="append", metavar="r=F,x=F[,b=F][,smax=F][,imax=F]")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_merge)

    s = sub.add_parser("solve", help="run a solver on a case file")
    s.add_argument("--case", required=True)
    s.add_argument("--algo", choices=sorted(_ALGOS), default="aladin-soc")
    s.add_argument("--eps", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--hessian", choices=["mirror", "reduced"])
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--trace")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("check-derivatives", help="validate analytic derivatives")
    c.add_argument("--case", required=True)
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--points", type=int, default=10)
    c.set_defaults(func=cmd_check_derivatives)

    r = sub.add_parser("report", help="convert a trace to CSV and summarize")
    r.add_argument("--trace", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("ITD_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ItdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
