"""Command-line front end: ``gridfdi <command> ...``.

Exit codes:
  0  success (stealthy / clean / converged)
  1  input error (bad file, unknown node or state variable)
  2  solver failure (load flow, estimator or constraint solve)
  3  degrees-of-freedom mismatch in attack design
  4  detectable (assessment failed or bad data found)
  5  unobservable measurement set
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from gridfdi.assessment import DEFAULT_THRESHOLD, assess
from gridfdi.attack import (
    SV,
    AreaError,
    AttackArea,
    AttackError,
    AttackResult,
    ConvergenceError,
    DegreesOfFreedomError,
    apply_dc_attack,
    changeable_state_variables,
    dc_model,
    design_attack_a1,
    design_attack_a2,
    find_all_attack_areas,
    find_attack_areas,
)
from gridfdi.estimation import EstimationError, UnobservableError, detect_bad_data, dc_estimate, estimate
from gridfdi.grid import GridError, load_grid
from gridfdi.powerflow import (
    LoadflowError,
    MeasurementSet,
    Network,
    SteadyState,
    add_noise,
    measure_all,
    solve_loadflow,
    steady_state_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_DOF, EXIT_DETECTABLE, EXIT_UNOBSERVABLE = range(6)
DEFAULT_GRID = "data/ieee13_mod.grid"

log = logging.getLogger("gridfdi")


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _grid(args, positional=None):
    path = positional or args.grid
    try:
        return load_grid(path)
    except GridError as exc:
        raise InputError(f"{path}:\n" + "\n".join(f"  {d}" for d in exc.diagnostics)) from None
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None


def _out(args, name: str) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write(args, name: str, text: str) -> Path:
    p = _out(args, name)
    p.write_text(text, encoding="utf-8")
    return p


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _steady(grid) -> SteadyState:
    return solve_loadflow(grid)


def _measurements(args, grid, steady):
    z = measure_all(steady)
    if getattr(args, "noise", False):
        z = add_noise(z, args.seed)
    return z


def _sv_delta(sv: SV, value: float) -> float:
    """CLI deltas are degrees for angles, pu for magnitudes."""
    return math.radians(value) if sv.kind == "theta" else value


def _print_area(area: AttackArea, grid, out=None):
    out = out or sys.stdout
    d = area.as_dict(grid)
    members = " ".join(f"{n}{p}" for n, p in d["members"].items())
    print(f"area seed={d['seed']} type={d['type']}", file=out)
    print(f"  members:   {members}", file=out)
    print(f"  boundary:  {' '.join(d['boundary']) or '-'}", file=out)
    print(f"  zero-inj:  {' '.join(d['zero_injection']) or '-'}", file=out)
    print(f"  launch:    {' '.join(d['launch_candidates']) or '-'}", file=out)
    if area.touches_slack:
        print("  note:      area reaches the slack node (kept on the boundary)", file=out)


def _state_table(result: AttackResult) -> str:
    lines = [f"{'state variable':<18}{'steady':>16}{'attack':>16}  unit"]
    for sv, a, b in result.state_rows():
        lines.append(f"{str(sv):<18}{sv.display(a):>16.6f}{sv.display(b):>16.6f}  {sv.unit}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# commands


def cmd_powerflow(args) -> int:
    grid = _grid(args, args.grid_file)
    steady = solve_loadflow(grid, tol=args.tol)
    path = _write(args, "steady_state.csv", steady_state_csv(steady))
    st = steady.state
    print(f"converged in {steady.iterations} iterations, mismatch {steady.mismatch:.2e} pu")
    print(f"{'node':<8}{'phase':<6}{'V (pu)':>10}{'theta (deg)':>14}")
    for node, ph in st.bus_phases:
        print(f"{node:<8}{ph:<6}{st.magnitude(node, ph):>10.4f}{st.angle_deg(node, ph):>14.3f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    grid = _grid(args)
    text = _read(args.measurements)
    try:
        z = MeasurementSet.from_csv(text, grid)
    except (KeyError, ValueError) as exc:
        raise InputError(f"{args.measurements}: {exc}") from None
    result = estimate(grid, z)
    _write(args, "estimate.csv", result.to_csv(grid))
    if not result.converged:
        print(f"estimator did not converge after {result.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    verdict = detect_bad_data(result, args.tau)
    print(f"objective {result.objective:.6e}  tau {verdict.tau:.4f}  max r_N {verdict.max_normalized_residual:.3f}")
    if verdict.clean:
        print("verdict: clean")
        return EXIT_OK
    print("verdict: bad  suspects: " + ", ".join(f"{i} ({rn:.1f})" for i, rn in verdict.suspects[:10]))
    return EXIT_DETECTABLE


def cmd_find_areas(args) -> int:
    grid = _grid(args)
    if args.all:
        areas = find_all_attack_areas(grid)
    elif args.node:
        areas = [find_attack_areas(grid, args.node)]
    else:
        raise InputError("give a seed node or --all")
    for k, area in enumerate(areas):
        if k:
            print()
        _print_area(area, grid)
    _write(args, "areas.json", json.dumps([a.as_dict(grid) for a in areas], indent=1) + "\n")
    return EXIT_OK


def _design(args, grid, steady, z, node, init: str, delta: float, fixed, extra=()):
    area = find_attack_areas(grid, node)
    net = Network.of(grid)
    init_sv = SV.parse(init, net)
    if area.area_type == "a2":
        return design_attack_a2(
            area, steady, net, init=(init_sv, _sv_delta(init_sv, delta)), fixed=[SV.parse(f, net) for f in fixed], z=z
        )
    assignments = {init_sv: _sv_delta(init_sv, delta)}
    for item in extra:
        handle, _, value = item.partition("=")
        sv = SV.parse(handle, net)
        assignments[sv] = _sv_delta(sv, float(value))
    return design_attack_a1(area, steady, net, assignments=assignments, z=z, relative=True)


def cmd_attack(args) -> int:
    grid = _grid(args)
    steady = _steady(grid)
    z = _measurements(args, grid, steady)
    try:
        result = _design(args, grid, steady, z, args.node, args.init, args.delta, args.fixed or (), args.also or ())
    except DegreesOfFreedomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.suggestions:
            print("valid fixed sets (best conditioned first):", file=sys.stderr)
            for s in exc.suggestions:
                print("  --fixed " + " ".join(str(sv) for sv in s), file=sys.stderr)
        return EXIT_DOF
    if args.noise:
        result.diagnostics["noisy_measurements"] = True
    _print_area(result.area, grid)
    print()
    print(_state_table(result))
    path = _write(args, "attack.json", result.to_json())
    _write(args, "attacked_measurements.csv", result.z_hat.to_csv(grid))
    print(f"\n{len(result.changed_ids())} readings changed; wrote {path}")
    return EXIT_OK


def _load_attack(args, grid) -> AttackResult:
    text = _read(args.attack)
    try:
        return AttackResult.from_json(text, grid)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{args.attack}: not an attack file ({exc})") from None


def cmd_assess(args) -> int:
    grid = _grid(args)
    attack = _load_attack(args, grid)
    report = assess(grid, attack, threshold=args.stealth_threshold)
    _write(args, "assessment.csv", report.to_csv())
    _write(args, "assessment.json", report.summary_json())
    if args.emit_plot_data:
        _write(args, "assessment_plot.csv", report.plot_data())
    if attack.diagnostics.get("noisy_measurements"):
        print("note: attack built on noisy readings; differences include meter noise")
    if report.reason:
        print(f"{report.reason} -> {report.verdict}")
    else:
        print(
            f"max |diff| {report.max_abs_pct_diff:.4f} %  max angle diff {report.max_angle_diff_deg:.5f} deg  "
            f"-> {report.verdict}"
        )
    return EXIT_OK if report.stealthy else EXIT_DETECTABLE


def cmd_dc_attack(args) -> int:
    grid = _grid(args)
    net = Network.of(grid)
    steady = _steady(grid)
    z = _measurements(args, grid, steady)
    model = dc_model(grid)
    _, r0 = dc_estimate(model.h, model.select(z))
    rng = np.random.default_rng(args.seed)
    rows = ["case,dc_residual,relative_change,ac_verdict,max_rn"]
    detected = 0
    first = None
    for k in range(args.count):
        c = rng.normal(0.0, args.scale, model.h.shape[1])
        za = apply_dc_attack(z, model, c)
        _, r1 = dc_estimate(model.h, model.select(za))
        est = estimate(grid, za)
        if est.converged:
            v = detect_bad_data(est, args.tau)
            label, rn = v.label, v.max_normalized_residual
        else:
            label, rn = "bad(nonconverged)", float("nan")
        detected += label != "clean"
        rows.append(f"{k},{r1:.12e},{abs(r1 - r0) / r0:.3e},{label},{rn:.6g}")
        if first is None:
            x = steady.state.copy()
            cols = [net.bp(n, p) for n, p in model.columns]
            x.theta[cols] += c
            area = AttackArea("*", frozenset(net.bus_phases), frozenset(), frozenset(), (), tuple(b.id for b in net.grid.branches))
            first = AttackResult(area, steady, x, z, za, [], [], [], {"type": "dc", "c": c.tolist()})
    _write(args, "dc_attacks.csv", "\n".join(rows) + "\n")
    if first is not None:
        _write(args, "dc_attack.json", first.to_json())
    print(f"steady DC residual {r0:.6e}")
    print(f"{detected}/{args.count} DC attacks flagged by the AC estimator")
    return EXIT_OK


def _parse_range(text: str) -> list[float]:
    if ":" in text:
        lo, hi, n = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(n))]
    return [float(v) for v in text.split(",")]


def cmd_sweep(args) -> int:
    grid = _grid(args)
    steady = _steady(grid)
    z = _measurements(args, grid, steady)
    area = find_attack_areas(grid, args.node)
    svs = [SV.parse(s, grid) for s in args.sv] if args.sv else changeable_state_variables(area, grid)
    cases = [(sv, d) for sv in svs for d in _parse_range(args.deltas) if d != 0.0]

    def run(case):
        sv, d = case
        try:
            res = _design(args, grid, steady, z, args.node, str(sv), d, args.fixed or ())
        except AttackError as exc:
            return sv, d, None, str(exc)
        rep = assess(grid, res, threshold=args.stealth_threshold)
        est = estimate(grid, res.z_hat)
        bdd = detect_bad_data(est, args.tau).label if est.converged else "nonconverged"
        return sv, d, (rep, bdd), ""

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run, cases))

    lines = ["case,sv,delta,verdict,max_abs_pct,mean_sv_pct,bdd,error"]
    plot = ["case,mean_sv_pct"]
    for k, (sv, d, out, err) in enumerate(results):
        if out is None:
            lines.append(f"{k},{sv},{d!r},error,,,,{err}")
            continue
        rep, bdd = out
        lines.append(f"{k},{sv},{d!r},{rep.verdict},{rep.max_abs_pct_diff:.6e},{rep.mean_abs_pct():.6e},{bdd},")
        plot.append(f"{k},{rep.mean_abs_pct():.6e}")
        print(f"{k:>3} {str(sv):<16}{d:>+10.4f}  {rep.verdict:<10} max {rep.max_abs_pct_diff:.2e} %  mean SV {rep.mean_abs_pct():.2e} %  bdd {bdd}")
    _write(args, "sweep.csv", "\n".join(lines) + "\n")
    if args.emit_plot_data:
        _write(args, "sweep_plot.csv", "\n".join(plot) + "\n")
    bad = sum(1 for _, _, out, _ in results if out is None or not out[0].stealthy)
    return EXIT_OK if bad == 0 else EXIT_DETECTABLE


# --------------------------------------------------------------------------
# parser


def _common(parser, suppress: bool):
    def d(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--grid", default=d(DEFAULT_GRID), help="grid file or bundled dataset name")
    parser.add_argument("--out", default=d("."), help="output directory")
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (noise, DC attack vectors)")
    parser.add_argument("--tau", type=float, default=d(None), help="objective threshold (default: chi-square 97.5%%)")
    parser.add_argument("--stealth-threshold", type=float, default=d(DEFAULT_THRESHOLD), help="assessment threshold in %%")
    parser.add_argument("--emit-plot-data", action="store_true", default=d(False), help="write (index, %% diff) pairs")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridfdi",
        description="Unbalanced grid load flow, state estimation and false data injection design.",
        epilog="exit codes: 0 ok, 1 input error, 2 solver failure, 3 degrees-of-freedom mismatch, "
        "4 detectable / bad data, 5 unobservable",
    )
    _common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    p = sub.add_parser("powerflow", parents=[common], help="solve the load flow and write the steady state")
    p.add_argument("grid_file", nargs="?", help="grid file (overrides --grid)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("estimate", parents=[common], help="WLS estimation plus bad-data detection")
    p.add_argument("measurements", help="measurement CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("find-areas", parents=[common], help="attack areas from a seed node")
    p.add_argument("node", nargs="?")
    p.add_argument("--all", action="store_true", help="sweep every non-slack seed")
    p.set_defaults(func=cmd_find_areas)

    p = sub.add_parser("attack", parents=[common], help="design an attack and write attack.json")
    p.add_argument("node", help="seed node of the attack area")
    p.add_argument("--init", required=True, help="initialized state variable, e.g. theta:652:a")
    p.add_argument("--delta", type=float, required=True, help="change (deg for angles, pu for magnitudes)")
    p.add_argument("--fixed", nargs="*", help="state variables held at steady values (a2 areas)")
    p.add_argument("--also", nargs="*", help="further a1 changes as sv=delta")
    p.add_argument("--noise", action="store_true", help="start from noisy measurements (uses --seed)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("assess", parents=[common], help="load-flow oracle check of an attack file")
    p.add_argument("attack", help="attack JSON")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("dc-attack", parents=[common], help="random linear (DC) attacks against the AC estimator")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--scale", type=float, default=0.05, help="std of the angle vector c, rad")
    p.add_argument("--noise", action="store_true")
    p.set_defaults(func=cmd_dc_attack)

    p = sub.add_parser("sweep", parents=[common], help="batch of initializations with assessment")
    p.add_argument("node")
    p.add_argument("--sv", nargs="*", help="state variables to perturb (default: all changeable)")
    p.add_argument("--deltas", default="-0.005:0.005:5", help="lo:hi:n or comma list (deg / pu)")
    p.add_argument("--fixed", nargs="*")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--noise", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UnobservableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    except (LoadflowError, ConvergenceError, EstimationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DegreesOfFreedomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOF
    except (AreaError, AttackError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
