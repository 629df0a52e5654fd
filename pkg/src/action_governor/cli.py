"""Command-line front end.

    action-governor compute-sets --scenario acc.json --out acc_sets.json
    action-governor simulate --scenario acc.json --sets acc_sets.json --out acc_run.csv
    action-governor plot --trajectory acc_run.csv --sets acc_sets.json --out acc.svg
    action-governor export-miqp --scenario acc.json --sets acc_sets.json --out step0.lp

``--scenario`` takes a JSON file or the name of a shipped instance (``acc``,
``robot``); ``init-scenario`` writes a shipped instance to disk.

Exit status: 0 ok, 2 invalid input, 3 numerical failure, 4 sets file does
not belong to the scenario.  Failures also print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, GovernorError, HashMismatch, ScenarioError
from .governor import GovernorProblem, Mode, export_miqp
from .plotting import phase_svg, report_figures
from .scenarios import BUILTIN, Scenario, load_scenario, read_trajectory_csv, save_scenario, simulate
from .setcalc import OinfSet, UnrecoverableSeq, compute_unrecoverable

log = logging.getLogger("action_governor")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_HASH = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _scenario(ref: str) -> Scenario:
    if ref in BUILTIN and not Path(ref).exists():
        return BUILTIN[ref]()
    try:
        return load_scenario(ref)
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {ref!r}: {e.strerror}") from None


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ScenarioError(f"cannot read {what} {str(path)!r}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"malformed {what} JSON: {e}") from None


def _load_sets(path) -> tuple[UnrecoverableSeq, OinfSet | None, dict]:
    d = _read_json(path, "sets")
    try:
        seq = UnrecoverableSeq.from_dict(d)
        oinf = OinfSet.from_dict(d["oinf"]) if d.get("oinf") else None
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"invalid sets file: {e}") from None
    return seq, oinf, d


def _check_hash(scn: Scenario, d: dict, path) -> None:
    want = scn.system_hash()
    if d.get("system_hash") != want:
        raise HashMismatch(f"{path} was computed for system {d.get('system_hash', '')[:12]}..., "
                           f"scenario has {want[:12]}...")


def _manifest_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".manifest.json")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_manifest(scenario_ref, scn: Scenario, artifacts: dict, offline_ms: float,
                 online_us: float | None, **extra) -> dict:
    """Bookkeeping record written next to every artifact."""
    m = {
        "scenario": str(scenario_ref),
        "config_hash": scn.config_hash(),
        "system_hash": scn.system_hash(),
        "artifacts": {k: str(v) for k, v in artifacts.items() if v is not None},
        "timing": {"offline_ms": round(offline_ms, 3),
                   "mean_online_us": None if online_us is None else round(online_us, 3)},
    }
    m.update(extra)
    return m


def _axes(text: str, n: int) -> tuple[int, int]:
    try:
        i, j = (int(t) for t in text.split(","))
    except ValueError:
        raise ScenarioError(f"--axes expects two comma-separated indices, got {text!r}") from None
    if not (1 <= i <= n and 1 <= j <= n) or i == j:
        raise ScenarioError(f"--axes must name two distinct coordinates in 1..{n}")
    return i - 1, j - 1


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ScenarioError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_init_scenario(args) -> int:
    scn = BUILTIN[args.name]()
    save_scenario(scn, args.out)
    print(args.out)
    return EXIT_OK


def cmd_compute_sets(args) -> int:
    scn = _scenario(args.scenario)
    k_max = args.kmax if args.kmax is not None else scn.k_max
    t0 = time.perf_counter()
    seq = compute_unrecoverable(scn.X0, scn.sys, scn.U, k_max)
    d = seq.to_dict(scn.system_hash())
    if scn.rg:
        d["oinf"] = scn.oinf().to_dict()
    offline = (time.perf_counter() - t0) * 1e3
    _write_json(args.out, d)
    _write_json(_manifest_path(args.out),
                run_manifest(args.scenario, scn, {"sets": args.out}, offline, None,
                             kind="unrecoverable", K=seq.K, converged=seq.converged,
                             parts=[len(S) for S in seq.sets]))
    log.info("X_0..X_%d computed in %.0f ms (converged=%s)", seq.K, offline, seq.converged)
    print(args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = _scenario(args.scenario)
    if args.mode:
        scn.mode = Mode(args.mode)
    if args.steps is not None:
        scn.steps = args.steps
    t0 = time.perf_counter()
    prob = oinf = unsafe = None
    if args.sets:
        seq, oinf, d = _load_sets(args.sets)
        _check_hash(scn, d, args.sets)
        kprime = args.kprime if args.kprime is not None else scn.kprime
        unsafe = seq.unsafe(kprime)
    if scn.mode in (Mode.MIQP, Mode.BISECT):
        if unsafe is None:
            raise ScenarioError(f"{scn.mode.value} mode needs --sets")
        prob = GovernorProblem(scn.sys, scn.U, scn.S, unsafe, scn.mode)
    elif scn.mode is Mode.PASSTHROUGH and unsafe is not None:
        # only used to flag an unsafe start; passthrough never modifies
        prob = GovernorProblem(scn.sys, scn.U, scn.S, unsafe, scn.mode)
    if scn.mode is Mode.RG and oinf is None:
        oinf = scn.oinf()
    offline = (time.perf_counter() - t0) * 1e3
    traj = simulate(scn, prob, oinf=oinf)
    Path(args.out).write_text(traj.to_csv())
    figures = []
    if not args.no_figures:
        target = (scn.reference_map() @ scn.reference.at(scn.steps))[:2]
        figures = report_figures(traj, str(Path(args.out).with_suffix("")), unsafe,
                                 target=target, title=f"{scn.name} ({scn.mode.value})")
    online = float(np.mean(traj.online_us)) if traj.online_us else None
    arts = {"sets": args.sets, "trajectory": args.out}
    arts.update({f"figure_{i}": p for i, p in enumerate(figures)})
    _write_json(_manifest_path(args.out),
                run_manifest(args.scenario, scn, arts, offline, online, mode=scn.mode.value,
                             steps=len(traj) - 1, halted=traj.halted, seed=args.seed,
                             modified_steps=int(traj.modified.sum()),
                             audit_ok=None if not traj.audit else bool(all(traj.audit))))
    if traj.halted:
        print(json.dumps({"warning": "halted", "message": traj.halted}), file=sys.stderr)
    print(args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        header, data = read_trajectory_csv(Path(args.trajectory).read_text())
    except OSError as e:
        raise ScenarioError(f"cannot read trajectory {args.trajectory!r}: {e.strerror}") from None
    except (ValueError, IndexError) as e:
        raise ScenarioError(f"malformed trajectory CSV: {e}") from None
    xcols = [c for c in header if c.startswith("x_")]
    if not xcols or header[0] != "k":
        raise ScenarioError("trajectory CSV lacks k and x_i columns")
    X = data[:, [header.index(c) for c in xcols]]
    n = X.shape[1]
    axes = _axes(args.axes, n)
    unsafe = oinf_slice = None
    scn = _scenario(args.scenario) if args.scenario else None
    if args.sets:
        seq, oinf, d = _load_sets(args.sets)
        if scn is not None:
            _check_hash(scn, d, args.sets)
        if seq.sets[0].dim != n:
            raise DimensionMismatch(f"sets have dimension {seq.sets[0].dim}, trajectory has {n}")
        kprime = args.kprime if args.kprime is not None else (scn.kprime if scn else None)
        unsafe = seq.unsafe(kprime)
        v = None
        if args.v is not None:
            v = _vector(args.v)
        elif oinf is not None and "rg_v" in header:
            col = data[:, header.index("rg_v")]
            col = col[np.isfinite(col)]
            v = col[-1:] if len(col) else None
        if oinf is not None and v is not None:
            oinf_slice = oinf.state_slice(v)
    if scn is not None:
        target = (scn.reference_map() @ scn.reference.at(len(X)))[list(axes)]
    else:
        last = X[np.all(np.isfinite(X), axis=1)][-1]
        target = last[list(axes)]
    Path(args.out).write_text(phase_svg(X, unsafe, oinf_slice, axes, target, title=args.title))
    print(args.out)
    return EXIT_OK


def cmd_export_miqp(args) -> int:
    scn = _scenario(args.scenario)
    seq, _, d = _load_sets(args.sets)
    _check_hash(scn, d, args.sets)
    kprime = args.kprime if args.kprime is not None else scn.kprime
    prob = GovernorProblem(scn.sys, scn.U, scn.S, seq.unsafe(kprime), Mode.MIQP)
    x = _vector(args.state) if args.state else scn.x0
    if x.size != scn.sys.n:
        raise DimensionMismatch(f"--state needs {scn.sys.n} entries")
    if args.nominal:
        u = _vector(args.nominal)
    else:
        u = scn.nominal_policy()(x, scn.reference.at(0))
    if u.size != scn.sys.m:
        raise DimensionMismatch(f"--nominal needs {scn.sys.m} entries")
    Path(args.out).write_text(export_miqp(prob, x, u))
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="action-governor", description="Action Governor toolkit")
    p.add_argument("--seed", type=int, default=0, help="seed for sampling-based routines")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-scenario", help="write a shipped scenario to JSON")
    s.add_argument("name", choices=sorted(BUILTIN))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_scenario)

    s = sub.add_parser("compute-sets", help="unrecoverable sets X_0..X_K (and O-inf for RG)")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kmax", type=int, default=None)
    s.set_defaults(func=cmd_compute_sets)

    s = sub.add_parser("simulate", help="closed-loop run to CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--sets", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    s.add_argument("--kprime", type=int, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--no-figures", action="store_true", help="skip the PNG report figures")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("plot", help="state-plane SVG of a trajectory")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--sets", default=None)
    s.add_argument("--scenario", default=None, help="checks the sets hash and supplies the target")
    s.add_argument("--out", required=True)
    s.add_argument("--axes", default="1,2", help="1-based state coordinates, e.g. 1,2")
    s.add_argument("--kprime", type=int, default=None)
    s.add_argument("--v", default=None, help="reference for the O-inf slice")
    s.add_argument("--title", default=None)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("export-miqp", help="big-M MIQP of one governing step, CPLEX LP format")
    s.add_argument("--scenario", required=True)
    s.add_argument("--sets", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kprime", type=int, default=None)
    s.add_argument("--state", default=None, help="comma-separated state (default: initial state)")
    s.add_argument("--nominal", default=None, help="comma-separated nominal control")
    s.set_defaults(func=cmd_export_miqp)
    return p


def _exit_code(e: BaseException) -> int:
    if isinstance(e, HashMismatch):
        return EXIT_HASH
    if isinstance(e, (ScenarioError, DimensionMismatch)):
        return EXIT_INPUT
    if isinstance(e, (GovernorError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return EXIT_INPUT


def main(argv=None) -> int:
    level = os.environ.get("AG_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except (GovernorError, ArithmeticError, np.linalg.LinAlgError, ValueError, KeyError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
