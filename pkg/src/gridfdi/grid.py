"""Network data model, grid file parsing and the bundled feeder datasets.

A grid file is line oriented UTF-8 text with ``#`` comments::

    base S=1000000
    node 650 phases=abc role=slack vbase=2401.78 alias=01
    branch L1 from=650 to=632 phases=abc kind=line length=609.6 z aa=0.13+0.39j ab=0.06+0.19j ...
    load node=632 phase=a P=160000 Q=110000
    shunt node=632 phase=c Q=100000

Impedances are in ohms referred to the voltage base of the ``from`` node.
Loads are constant power (watts / VArs, consumption positive); shunts are
constant impedance with ``Q`` the rated VAr injection at nominal voltage.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

PHASES = "abc"
ROLES = ("slack", "injection", "zero")
BRANCH_KINDS = ("line", "switch", "transformer")
BUNDLED = ("ieee13_mod.grid", "wscc9.grid")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self) -> str:
        if self.line:
            return f"line {self.line}, col {self.column}: {self.message}"
        return self.message


class GridError(ValueError):
    """Raised for malformed or inconsistent grid descriptions.

    ``diagnostics`` holds one entry per problem found, with 1-based line and
    column numbers (0 when the problem is not tied to a line).
    """

    def __init__(self, diagnostics: Iterable[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def canonical_phases(text: str) -> str:
    """Return ``text`` as a canonical phase string (``"ca"`` -> ``"ac"``)."""
    text = text.strip().lower()
    if not text or any(p not in PHASES for p in text) or len(set(text)) != len(text):
        raise ValueError(f"invalid phase set {text!r}")
    return "".join(p for p in PHASES if p in text)


@dataclass(frozen=True)
class Node:
    id: str
    phases: str
    role: str
    vbase: float
    alias: str | None = None
    # slack magnitude setpoint, or the regulated magnitude of a PV node
    vset: float | None = None

    @property
    def label(self) -> str:
        return self.alias or self.id

    @property
    def is_pv(self) -> bool:
        return self.role == "injection" and self.vset is not None


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_node: str
    to_node: str
    phases: str
    z: np.ndarray
    kind: str = "line"
    length: float | None = None
    tap: tuple[float, ...] | None = None
    # per-phase phase shift of the ideal ratio, degrees
    shift: tuple[float, ...] | None = None

    def other(self, node: str) -> str:
        return self.to_node if node == self.from_node else self.from_node

    def tap_vector(self) -> np.ndarray:
        """Per-phase complex ratio V_to / V_from at no load (a, b, c order)."""
        t = np.ones(3, dtype=complex)
        if self.tap is not None:
            for p, ratio in zip(self.phases, self.tap):
                t[PHASES.index(p)] = ratio
        if self.shift is not None:
            for p, deg in zip(self.phases, self.shift):
                t[PHASES.index(p)] *= np.exp(1j * math.radians(deg))
        return t


@dataclass(frozen=True)
class Load:
    node: str
    phase: str
    p: float
    q: float


@dataclass(frozen=True)
class Shunt:
    node: str
    phase: str
    q: float


@dataclass(frozen=True, eq=False)
class Grid:
    s_base: float
    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...] = ()
    shunts: tuple[Shunt, ...] = ()
    name: str = ""
    _node_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_node_index", {n.id: n for n in self.nodes})

    def node(self, node_id: str) -> Node:
        try:
            return self._node_index[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_index

    def resolve(self, name: str) -> str:
        """Map a node id or alias to its id."""
        if name in self._node_index:
            return name
        for n in self.nodes:
            if n.alias == name:
                return n.id
        raise KeyError(f"unknown node {name!r}")

    @property
    def slack(self) -> Node:
        return next(n for n in self.nodes if n.role == "slack")

    def branch(self, branch_id: str) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise KeyError(f"unknown branch {branch_id!r}")

    def branches_at(self, node_id: str) -> list[Branch]:
        return [b for b in self.branches if node_id in (b.from_node, b.to_node)]

    def neighbors(self, node_id: str) -> list[str]:
        return [b.other(node_id) for b in self.branches_at(node_id)]

    def loads_at(self, node_id: str) -> list[Load]:
        return [ld for ld in self.loads if ld.node == node_id]

    def with_loads(self, loads: Iterable[Load]) -> "Grid":
        return replace(self, loads=tuple(loads))


# --------------------------------------------------------------------------
# parsing


def _parse_complex(text: str) -> complex:
    return complex(text.replace(" ", "").replace("i", "j"))


def _fields(tokens, line_no, diags, text):
    """Split ``key=value`` tokens; returns dict key -> (value, column)."""
    out = {}
    for tok in tokens:
        col = text.find(tok) + 1
        if "=" not in tok:
            diags.append(Diagnostic(line_no, col, f"expected key=value, got {tok!r}"))
            continue
        k, v = tok.split("=", 1)
        out[k] = (v, col)
    return out


def parse_grid(text: str, name: str = "") -> Grid:
    """Parse grid file content into a validated :class:`Grid`.

    Raises
    ------
    GridError
        With every syntax and consistency problem found.
    """
    diags: list[Diagnostic] = []
    s_base = None
    nodes: list[Node] = []
    branches: list[Branch] = []
    loads: list[Load] = []
    shunts: list[Shunt] = []
    lines_of: dict[tuple[str, str], int] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            diags.append(Diagnostic(line_no, 1, str(exc)))
            continue
        head, rest = tokens[0], tokens[1:]
        try:
            if head == "base":
                f = _fields(rest, line_no, diags, line)
                if "S" not in f:
                    raise _Err(len(head) + 2, "base needs S=<VA per phase>")
                s_base = _positive(f["S"])
            elif head == "node":
                if not rest:
                    raise _Err(len(line) + 1, "node needs an id")
                nid = rest[0]
                f = _fields(rest[1:], line_no, diags, line)
                for key in ("phases", "role", "vbase"):
                    if key not in f:
                        raise _Err(len(line) + 1, f"node {nid} missing {key}=")
                role = f["role"][0]
                if role == "zero-injection":
                    role = "zero"
                if role not in ROLES:
                    raise _Err(f["role"][1], f"unknown role {role!r}")
                nodes.append(
                    Node(
                        id=nid,
                        phases=_phases(f["phases"]),
                        role=role,
                        vbase=_positive(f["vbase"]),
                        alias=f["alias"][0] if "alias" in f else None,
                        vset=_positive(f["vset"]) if "vset" in f else None,
                    )
                )
                lines_of[("node", nid)] = line_no
            elif head == "branch":
                if not rest:
                    raise _Err(len(line) + 1, "branch needs an id")
                bid = rest[0]
                if "z" in rest:
                    k = rest.index("z")
                    keyvals, zvals = rest[1:k], rest[k + 1:]
                else:
                    keyvals, zvals = rest[1:], []
                f = _fields(keyvals, line_no, diags, line)
                for key in ("from", "to", "phases", "kind"):
                    if key not in f:
                        raise _Err(len(line) + 1, f"branch {bid} missing {key}=")
                kind = f["kind"][0]
                if kind not in BRANCH_KINDS:
                    raise _Err(f["kind"][1], f"unknown branch kind {kind!r}")
                phases = _phases(f["phases"])
                z = np.zeros((3, 3), dtype=complex)
                seen = {}
                for tok, (val, col) in _fields(zvals, line_no, diags, line).items():
                    if len(tok) != 2 or any(p not in PHASES for p in tok):
                        raise _Err(col, f"bad impedance key {tok!r}")
                    i, j = PHASES.index(tok[0]), PHASES.index(tok[1])
                    try:
                        zij = _parse_complex(val)
                    except ValueError:
                        raise _Err(col, f"bad complex value {val!r}") from None
                    pair = (min(i, j), max(i, j))
                    if pair in seen and seen[pair] != zij:
                        raise _Err(col, f"asymmetric impedance {tok}")
                    seen[pair] = zij
                    if tok[0] not in phases or tok[1] not in phases:
                        if zij != 0:
                            raise _Err(col, f"impedance {tok} on absent phase")
                        continue
                    z[i, j] = z[j, i] = zij
                tap = _per_phase(f, "tap", phases)
                shift = _per_phase(f, "shift", phases)
                z.setflags(write=False)
                branches.append(
                    Branch(
                        id=bid,
                        from_node=f["from"][0],
                        to_node=f["to"][0],
                        phases=phases,
                        z=z,
                        kind=kind,
                        length=float(f["length"][0]) if "length" in f else None,
                        tap=tap,
                        shift=shift,
                    )
                )
                lines_of[("branch", bid)] = line_no
            elif head == "load":
                f = _fields(rest, line_no, diags, line)
                for key in ("node", "phase", "P", "Q"):
                    if key not in f:
                        raise _Err(len(line) + 1, f"load missing {key}=")
                ld = Load(f["node"][0], _phases(f["phase"]), _float(f["P"]), _float(f["Q"]))
                if len(ld.phase) != 1:
                    raise _Err(f["phase"][1], "load phase must be a single phase")
                loads.append(ld)
                lines_of[("load", len(loads) - 1)] = line_no
            elif head == "shunt":
                f = _fields(rest, line_no, diags, line)
                for key in ("node", "phase", "Q"):
                    if key not in f:
                        raise _Err(len(line) + 1, f"shunt missing {key}=")
                sh = Shunt(f["node"][0], _phases(f["phase"]), _float(f["Q"]))
                if len(sh.phase) != 1:
                    raise _Err(f["phase"][1], "shunt phase must be a single phase")
                shunts.append(sh)
                lines_of[("shunt", len(shunts) - 1)] = line_no
            else:
                raise _Err(1, f"unknown record {head!r}")
        except _Err as err:
            diags.append(Diagnostic(line_no, err.column, err.message))

    if s_base is None:
        diags.append(Diagnostic(0, 0, "missing 'base S=' record"))
    if diags:
        raise GridError(diags)
    grid = Grid(s_base, tuple(nodes), tuple(branches), tuple(loads), tuple(shunts), name=name)
    problems = validate(grid, lines_of)
    if problems:
        raise GridError(problems)
    return grid


class _Err(Exception):
    def __init__(self, column, message):
        self.column = column
        self.message = message


def _per_phase(f, key, phases):
    if key not in f:
        return None
    text, col = f[key]
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise _Err(col, f"{key} must be comma separated numbers") from None
    if len(vals) != len(phases):
        raise _Err(col, f"{key} needs one value per branch phase")
    return vals


def _phases(value):
    text, col = value
    try:
        return canonical_phases(text)
    except ValueError as exc:
        raise _Err(col, str(exc)) from None


def _float(value):
    text, col = value
    try:
        x = float(text)
    except ValueError:
        raise _Err(col, f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise _Err(col, f"not finite: {text!r}")
    return x


def _positive(value):
    x = _float(value)
    if x <= 0:
        raise _Err(value[1], f"must be positive: {value[0]!r}")
    return x


def validate(grid: Grid, lines_of: dict | None = None) -> list[Diagnostic]:
    """Consistency checks; returns a list of diagnostics (empty when valid)."""
    lines_of = lines_of or {}
    out = []

    def diag(key, message):
        out.append(Diagnostic(lines_of.get(key, 0), 1 if key in lines_of else 0, message))

    ids = {}
    for n in grid.nodes:
        if n.id in ids:
            diag(("node", n.id), f"duplicate node {n.id}")
        ids[n.id] = n
    slacks = [n for n in grid.nodes if n.role == "slack"]
    if len(slacks) > 1:
        diag(("node", slacks[1].id), f"duplicate slack node {slacks[1].id} (first is {slacks[0].id})")
    elif not slacks:
        diag(None, "grid has no slack node")

    pairs = {}
    seen_branch = set()
    for b in grid.branches:
        key = ("branch", b.id)
        if b.id in seen_branch:
            diag(key, f"duplicate branch {b.id}")
        seen_branch.add(b.id)
        ok = True
        for end in (b.from_node, b.to_node):
            if end not in ids:
                diag(key, f"branch {b.id} references undefined node {end}")
                ok = False
        if not ok:
            continue
        if b.from_node == b.to_node:
            diag(key, f"branch {b.id} is a self loop")
        for end in (b.from_node, b.to_node):
            missing = set(b.phases) - set(ids[end].phases)
            if missing:
                diag(key, f"branch {b.id} phase mismatch: node {end} lacks phase(s) {''.join(sorted(missing))}")
        pair = frozenset((b.from_node, b.to_node))
        if pair in pairs:
            diag(key, f"parallel branches {pairs[pair]} and {b.id} are not supported")
        pairs[pair] = b.id
        if b.kind != "switch":
            for p in b.phases:
                k = PHASES.index(p)
                if b.z[k, k] == 0:
                    diag(key, f"branch {b.id} has zero self impedance on phase {p}")
        if b.kind == "switch" and ids[b.from_node].vbase != ids[b.to_node].vbase:
            diag(key, f"switch {b.id} joins nodes with different nominal voltages")
        if (b.tap is not None or b.shift is not None) and b.kind != "transformer":
            diag(key, f"tap/shift is only allowed on transformer branches ({b.id})")

    for i, ld in enumerate(grid.loads):
        key = ("load", i)
        n = ids.get(ld.node)
        if n is None:
            diag(key, f"load references undefined node {ld.node}")
            continue
        if n.role != "injection":
            diag(key, f"load at node {ld.node} whose role is {n.role}")
        if ld.phase not in n.phases:
            diag(key, f"load on absent phase {ld.node}.{ld.phase}")
    for i, sh in enumerate(grid.shunts):
        key = ("shunt", i)
        n = ids.get(sh.node)
        if n is None:
            diag(key, f"shunt references undefined node {sh.node}")
            continue
        if n.role == "zero":
            diag(key, f"shunt at zero-injection node {sh.node}")
        if sh.phase not in n.phases:
            diag(key, f"shunt on absent phase {sh.node}.{sh.phase}")

    if not out and grid.nodes:
        adj = {n.id: set() for n in grid.nodes}
        for b in grid.branches:
            adj[b.from_node].add(b.to_node)
            adj[b.to_node].add(b.from_node)
        start = grid.nodes[0].id
        reached, stack = {start}, [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in reached:
                    reached.add(nb)
                    stack.append(nb)
        isolated = [n.id for n in grid.nodes if n.id not in reached]
        if isolated:
            diag(None, f"grid is not connected; unreachable nodes: {', '.join(isolated)}")
    return out


# --------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_complex(z: complex) -> str:
    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"{_fmt(z.real)}{sign}{_fmt(abs(z.imag))}j"


def serialize_grid(grid: Grid) -> str:
    """Render ``grid`` in the grid file format (full float precision)."""
    out = [f"base S={_fmt(grid.s_base)}"]
    for n in grid.nodes:
        parts = [f"node {n.id}", f"phases={n.phases}", f"role={n.role}", f"vbase={_fmt(n.vbase)}"]
        if n.alias:
            parts.append(f"alias={n.alias}")
        if n.vset is not None:
            parts.append(f"vset={_fmt(n.vset)}")
        out.append(" ".join(parts))
    for b in grid.branches:
        parts = [f"branch {b.id}", f"from={b.from_node}", f"to={b.to_node}", f"phases={b.phases}", f"kind={b.kind}"]
        if b.length is not None:
            parts.append(f"length={_fmt(b.length)}")
        if b.tap is not None:
            parts.append("tap=" + ",".join(_fmt(t) for t in b.tap))
        if b.shift is not None:
            parts.append("shift=" + ",".join(_fmt(t) for t in b.shift))
        zparts = []
        for i, pi in enumerate(PHASES):
            for j in range(i, 3):
                if b.z[i, j] != 0:
                    zparts.append(f"{pi}{PHASES[j]}={_fmt_complex(b.z[i, j])}")
        if zparts:
            parts.append("z " + " ".join(zparts))
        out.append(" ".join(parts))
    for ld in grid.loads:
        out.append(f"load node={ld.node} phase={ld.phase} P={_fmt(ld.p)} Q={_fmt(ld.q)}")
    for sh in grid.shunts:
        out.append(f"shunt node={sh.node} phase={sh.phase} Q={_fmt(sh.q)}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# loading


def bundled_path(name: str) -> Path:
    if not name.endswith(".grid"):
        name += ".grid"
    return Path(str(resources.files("gridfdi") / "data" / name))


def bundled_grid(name: str) -> Grid:
    """Load one of the bundled datasets (``ieee13_mod`` or ``wscc9``)."""
    path = bundled_path(name)
    return parse_grid(path.read_text(encoding="utf-8"), name=path.stem)


def load_grid(path: str | Path) -> Grid:
    """Load a grid file; ``data/<name>.grid`` falls back to the bundled copy."""
    p = Path(path)
    if not p.exists():
        candidate = bundled_path(p.name)
        if p.name in BUNDLED or candidate.exists():
            p = candidate
        else:
            raise FileNotFoundError(f"grid file not found: {path}")
    return parse_grid(p.read_text(encoding="utf-8"), name=p.stem)


# --------------------------------------------------------------------------
# topology helpers


def zero_injection_nodes(grid: Grid) -> set[str]:
    return {n.id for n in grid.nodes if n.role == "zero"}


def merge_switches(grid: Grid) -> tuple[Grid, dict[str, str]]:
    """Collapse every switch into a supernode.

    The supernode keeps the id of the first node of its group in file order
    and carries the union of phases, loads and shunts. Returns the merged grid
    and a mapping from every original node id to its electrical node id.
    """
    parent = {n.id: n.id for n in grid.nodes}
    order = {n.id: i for i, n in enumerate(grid.nodes)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for b in grid.branches:
        if b.kind != "switch":
            continue
        if grid.node(b.from_node).vbase != grid.node(b.to_node).vbase:
            raise GridError([Diagnostic(0, 0, f"switch {b.id} joins nodes with conflicting nominal voltages")])
        ra, rb = find(b.from_node), find(b.to_node)
        if ra != rb:
            keep, drop = (ra, rb) if order[ra] < order[rb] else (rb, ra)
            parent[drop] = keep
    mapping = {n.id: find(n.id) for n in grid.nodes}
    if all(k == v for k, v in mapping.items()):
        return grid, mapping

    groups: dict[str, list[Node]] = {}
    for n in grid.nodes:
        groups.setdefault(mapping[n.id], []).append(n)
    nodes = []
    for n in grid.nodes:
        if mapping[n.id] != n.id:
            continue
        members = groups[n.id]
        roles = {m.role for m in members}
        role = "slack" if "slack" in roles else "injection" if "injection" in roles else "zero"
        phases = "".join(p for p in PHASES if any(p in m.phases for m in members))
        vset = next((m.vset for m in members if m.vset is not None), None)
        nodes.append(replace(n, phases=phases, role=role, vset=vset))
    branches = tuple(
        replace(b, from_node=mapping[b.from_node], to_node=mapping[b.to_node])
        for b in grid.branches
        if b.kind != "switch"
    )
    loads = tuple(replace(ld, node=mapping[ld.node]) for ld in grid.loads)
    shunts = tuple(replace(sh, node=mapping[sh.node]) for sh in grid.shunts)
    merged = Grid(grid.s_base, tuple(nodes), branches, loads, shunts, name=grid.name)
    return merged, mapping
