#!/usr/bin/env python3
"""Generate src/gridfdi/data/wscc9.grid: the WSCC 9-bus system as a balanced
three-phase network.

Every quantity is on a single 230 kV voltage base; the three step-up
transformers become plain series reactances. Line charging is dropped
(the workbench uses series-only branches). Generators at buses 2 and 3 are
negative loads with voltage setpoints; bus 1 is the slack.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from gridfdi.grid import Branch, Grid, Load, Node, serialize_grid

S3 = 100e6
S_BASE = S3 / 3.0
VLN = 230e3 / math.sqrt(3.0)
Z_BASE = VLN**2 / S_BASE

# id, role, vset
BUSES = [("1", "slack", 1.04), ("2", "injection", 1.025), ("3", "injection", 1.025)] + [
    (str(i), "injection" if i in (5, 6, 8) else "zero", None) for i in range(4, 10)
]
# from, to, kind, r pu, x pu (100 MVA)
BRANCHES = [
    ("1", "4", "transformer", 0.0, 0.0576),
    ("4", "5", "line", 0.010, 0.085),
    ("4", "6", "line", 0.017, 0.092),
    ("5", "7", "line", 0.032, 0.161),
    ("6", "9", "line", 0.039, 0.170),
    ("7", "8", "line", 0.0085, 0.072),
    ("8", "9", "line", 0.0119, 0.1008),
    ("2", "7", "transformer", 0.0, 0.0625),
    ("3", "9", "transformer", 0.0, 0.0586),
]
# bus, MW, MVAr (three-phase; negative = generation)
LOADS = [("2", -163.0, 0.0), ("3", -85.0, 0.0), ("5", 125.0, 50.0), ("6", 90.0, 30.0), ("8", 100.0, 35.0)]


def build() -> Grid:
    nodes = tuple(Node(b, "abc", role, VLN, vset=v) for b, role, v in BUSES)
    branches = tuple(
        Branch(f"{k[0].upper()}{f}-{t}", f, t, "abc", np.eye(3) * complex(r, x) * Z_BASE, kind=k)
        for f, t, k, r, x in BRANCHES
    )
    loads = tuple(Load(b, p, mw * 1e6 / 3.0, mvar * 1e6 / 3.0) for b, mw, mvar in LOADS for p in "abc")
    return Grid(S_BASE, nodes, branches, loads, (), name="wscc9")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/gridfdi/data/wscc9.grid"))
    args = ap.parse_args()
    header = [
        "# WSCC 9-bus system, balanced three-phase encoding (100 MVA, 230 kV base).",
        "# Generated by scripts/build_wscc9.py; do not edit by hand.",
        "# Series impedances only; line charging omitted. Transformers as series reactance.",
        "# Generators: slack bus 1 (1.04 pu), buses 2 and 3 PV at 1.025 pu with 163 / 85 MW",
        "#   entered as negative loads split equally over the phases.",
    ]
    Path(args.out).write_text("\n".join(header) + "\n" + serialize_grid(build()), encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
