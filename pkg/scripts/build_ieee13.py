#!/usr/bin/env python3
"""Generate src/gridfdi/data/ieee13_mod.grid from the IEEE 13-node feeder data.

The workbench models loads as constant power on wye phases. The original
feeder has delta-connected and constant-Z / constant-I loads, so this script
solves the feeder repeatedly, re-evaluating each native load at the latest
voltages, until the equivalent wye constant-power values stop moving. Those
converged values are what the dataset stores: at the bundled operating point
they draw exactly what the native loads would.

Usage: python scripts/build_ieee13.py [--taps A,B,C] [--shift A,B,C] [--out PATH]
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from gridfdi.grid import Branch, Grid, Load, Node, Shunt, serialize_grid
from gridfdi.powerflow import Network, solve_loadflow

FT_PER_MILE = 5280.0
M_PER_FT = 0.3048
VLN = 4160.0 / math.sqrt(3.0)
VLN_LV = 480.0 / math.sqrt(3.0)
S_BASE = 1.0e6

# ohm / mile, upper triangle (aa, ab, ac, bb, bc, cc)
CONFIGS = {
    "601": ("abc", (0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j, 0.3375 + 1.0478j, 0.1535 + 0.3849j, 0.3414 + 1.0348j)),
    "602": ("abc", (0.7526 + 1.1814j, 0.1580 + 0.4236j, 0.1560 + 0.5017j, 0.7475 + 1.1983j, 0.1535 + 0.3849j, 0.7436 + 1.2112j)),
    "603": ("bc", (0, 0, 0, 1.3294 + 1.3471j, 0.2066 + 0.4591j, 1.3238 + 1.3569j)),
    "604": ("ac", (1.3238 + 1.3569j, 0, 0.2066 + 0.4591j, 0, 0, 1.3294 + 1.3471j)),
    "605": ("c", (0, 0, 0, 0, 0, 1.3292 + 1.3475j)),
    "606": ("abc", (0.7982 + 0.4463j, 0.3192 + 0.0328j, 0.2849 - 0.0143j, 0.7891 + 0.4041j, 0.3192 + 0.0328j, 0.7982 + 0.4463j)),
    "607": ("a", (1.3425 + 0.5124j, 0, 0, 0, 0, 0)),
}

# id, phases, role, vbase, alias
NODES = [
    ("650H", "abc", "slack", VLN, "01"),
    ("650L", "abc", "zero", VLN, "02"),
    ("632", "abc", "zero", VLN, "03"),
    ("645", "bc", "injection", VLN, "04"),
    ("646", "bc", "injection", VLN, "05"),
    ("633", "abc", "injection", VLN, "06"),
    ("634", "abc", "injection", VLN_LV, "07"),
    ("671", "abc", "injection", VLN, "08"),
    ("692", "abc", "injection", VLN, "09"),
    ("675", "abc", "injection", VLN, "10"),
    ("684", "ac", "zero", VLN, "11"),
    ("652", "a", "injection", VLN, "12"),
    ("611", "c", "injection", VLN, "13"),
    ("680", "abc", "zero", VLN, "14"),
]

# id, from, to, config, length ft
LINES = [
    ("L650-632", "650L", "632", "601", 2000),
    ("L632-633", "632", "633", "602", 500),
    ("L632-645", "632", "645", "603", 500),
    ("L645-646", "645", "646", "603", 300),
    ("L632-671", "632", "671", "601", 2000),
    ("L671-684", "671", "684", "604", 300),
    ("L684-611", "684", "611", "605", 300),
    ("L684-652", "684", "652", "607", 800),
    ("L671-680", "671", "680", "601", 1000),
    ("L692-675", "692", "675", "606", 500),
]

# node, connection (phase or phase pair), model, kW, kVAr
LOADS = [
    ("634", "a", "PQ", 160, 110),
    ("634", "b", "PQ", 120, 90),
    ("634", "c", "PQ", 120, 90),
    ("645", "b", "PQ", 170, 125),
    ("646", "bc", "Z", 230, 132),
    ("652", "a", "Z", 128, 86),
    ("671", "ab", "PQ", 385, 220),
    ("671", "bc", "PQ", 385, 220),
    ("671", "ca", "PQ", 385, 220),
    ("675", "a", "PQ", 485, 190),
    ("675", "b", "PQ", 68, 60),
    ("675", "c", "PQ", 290, 212),
    ("692", "ca", "I", 170, 151),
    ("611", "c", "I", 170, 80),
]

CAPACITORS = [("675", "a", 200e3), ("675", "b", 200e3), ("675", "c", 200e3), ("611", "c", 100e3)]

# Config 607 as published gives 9% less loss on 684-652 than the published
# flows imply; this series impedance is fitted to the published steady and
# attack flows on that cable (ohm / mile).
CABLE_607_FITTED = 1.4636 + 0.5236j

XFM1 = (0.011 + 0.02j) * (4160.0**2 / 500e3)  # ohms referred to the 4.16 kV side


def _zmatrix(config, length_ft, cable607=None):
    phases, (aa, ab, ac, bb, bc, cc) = CONFIGS[config]
    if config == "607" and cable607 is not None:
        aa = cable607
    z = np.array([[aa, ab, ac], [ab, bb, bc], [ac, bc, cc]], dtype=complex)
    return phases, z * length_ft / FT_PER_MILE


def build(taps, reg_z, loads=None, shift=None, cable607=CABLE_607_FITTED):
    nodes = tuple(Node(i, ph, role, vb, alias=al, vset=1.0 if role == "slack" else None) for i, ph, role, vb, al in NODES)
    branches = [
        Branch("REG", "650H", "650L", "abc", np.diag([reg_z] * 3), kind="transformer", tap=tuple(taps),
               shift=tuple(shift) if shift and any(shift) else None),
    ]
    for bid, f, t, cfg, ft in LINES:
        phases, z = _zmatrix(cfg, ft, cable607)
        branches.append(Branch(bid, f, t, phases, z, kind="line", length=round(ft * M_PER_FT, 4)))
    branches.insert(3, Branch("XFM-1", "633", "634", "abc", np.diag([XFM1] * 3), kind="transformer"))
    branches.append(Branch("SW671-692", "671", "692", "abc", np.zeros((3, 3), dtype=complex), kind="switch"))
    shunts = tuple(Shunt(n, p, q) for n, p, q in CAPACITORS)
    return Grid(S_BASE, nodes, tuple(branches), tuple(loads or ()), shunts, name="ieee13_mod")


def wye_equivalents(steady):
    """Evaluate every native load at the solved voltages, as wye powers (W, VAr)."""
    net = steady.network
    vc = steady.state.complex
    out: dict[tuple[str, str], complex] = {}
    for node, conn, model, kw, kvar in LOADS:
        s0 = complex(kw, kvar) * 1e3
        vbase = net.grid.node(net.mapping[node]).vbase
        if len(conn) == 1:
            v = vc[net.bp(node, conn)] * vbase
            vmag, vnom = abs(v), vbase
            s = s0 * {"PQ": 1.0, "I": vmag / vnom, "Z": (vmag / vnom) ** 2}[model]
            out[(node, conn)] = out.get((node, conn), 0) + s
        else:
            p, q = conn
            vp, vq = vc[net.bp(node, p)] * vbase, vc[net.bp(node, q)] * vbase
            vll = vp - vq
            ratio = abs(vll) / (vbase * math.sqrt(3.0))
            s = s0 * {"PQ": 1.0, "I": ratio, "Z": ratio**2}[model]
            i = np.conj(s / vll)
            out[(node, p)] = out.get((node, p), 0) + vp * np.conj(i)
            out[(node, q)] = out.get((node, q), 0) - vq * np.conj(i)
    return out


def converge(taps, reg_z, shift=None, iters=40):
    loads = [Load(n, ph, kw * 1e3, kvar * 1e3) for n, ph, _m, kw, kvar in LOADS if len(ph) == 1]
    steady = None
    for _ in range(iters):
        grid = build(taps, reg_z, loads, shift)
        steady = solve_loadflow(grid, init=steady.state if steady else None, tol=1e-11)
        eq = wye_equivalents(steady)
        new = [Load(n, p, s.real, s.imag) for (n, p), s in sorted(eq.items(), key=lambda kv: _order(kv[0]))]
        delta = max(abs(complex(a.p, a.q) - complex(b.p, b.q)) for a, b in zip(new, loads)) if len(new) == len(loads) else 1.0
        loads = new
        if delta < 1e-6:
            break
    grid = build(taps, reg_z, loads, shift)
    return grid, solve_loadflow(grid, tol=1e-11)


def _order(key):
    ids = [n[0] for n in NODES]
    return ids.index(key[0]), key[1]


def report(steady):
    st = steady.state
    net = steady.network
    rows = [("652", "a"), ("684", "a"), ("684", "c"), ("611", "c"), ("671", "a"), ("671", "c")]
    for node, p in rows:
        print(f"  {node}{p}: V={st.magnitude(net.mapping[node], p):.5f} pu  theta={st.angle_deg(net.mapping[node], p):9.4f} deg")
    kw = net.s_base / 1e3
    for b, end, p in [("L671-684", "to", "a"), ("L684-652", "from", "a"), ("L671-684", "to", "c"), ("L684-611", "from", "c")]:
        s = steady.flow(b, end, p) * kw
        print(f"  flow {b} {end} {p}: {s.real:9.3f} kW {s.imag:9.3f} kVAr")


def write(grid, path, taps, reg_z, shift):
    body = serialize_grid(grid).splitlines()
    cfg_of = {bid: cfg for bid, _f, _t, cfg, _l in LINES}
    header = [
        "# Modified IEEE 13-node test feeder (distributed load on 632-671 removed).",
        "# Generated by scripts/build_ieee13.py; do not edit by hand.",
        "# Line impedances are series-only (no shunt charging), ohms per branch.",
        f"# Cable 684-652 (config 607) uses a fitted self impedance of {CABLE_607_FITTED.real}+{CABLE_607_FITTED.imag}j ohm/mile",
        "#   (IEEE table: 1.3425+0.5124j) so that its losses match the published flows.",
        f"# Regulator REG 650H->650L: fixed per-phase taps {', '.join(f'{t:.5f}' for t in taps)}",
        f"#   and per-phase angle shifts {', '.join(f'{a:g}' for a in shift)} deg, fitted so the steady",
        "#   state matches the published operating point at 652, 684 and 611,",
        f"#   with series impedance {reg_z.real:g}+{reg_z.imag:g}j ohm per phase.",
        "# Loads: constant-power wye equivalents of the native delta / Z / I loads,",
        "#   evaluated at this dataset's own load-flow solution.",
        "# Capacitors: constant impedance, rated VAr at nominal voltage.",
    ]
    out = list(header)
    for line in body:
        if line.startswith("branch "):
            bid = line.split()[1]
            if bid in cfg_of:
                out.append(f"# config {cfg_of[bid]}")
            elif bid == "XFM-1":
                out.append("# transformer XFM-1 500 kVA 4.16/0.48 kV Gr.Y-Gr.Y R=1.1% X=2%")
            elif bid == "REG":
                out.append("# voltage regulator, fixed taps")
            else:
                out.append("# switch")
        out.append(line)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--taps", default="1.063945,1.05,1.069897")
    ap.add_argument("--shift", default="0.15811,0,0.15836", help="regulator angle shift per phase, degrees")
    ap.add_argument("--reg-z", default="0+0.001j")
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/gridfdi/data/ieee13_mod.grid"))
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()
    taps = [float(t) for t in args.taps.split(",")]
    reg_z = complex(args.reg_z)
    shift = [float(a) for a in args.shift.split(",")]
    grid, steady = converge(taps, reg_z, shift)
    report(steady)
    for ld in grid.loads:
        print(f"  load {ld.node}.{ld.phase}: {ld.p / 1e3:9.3f} kW {ld.q / 1e3:9.3f} kVAr")
    if not args.dry_run:
        write(grid, args.out, taps, reg_z, shift)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
