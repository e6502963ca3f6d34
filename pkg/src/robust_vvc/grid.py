"""Feeder data model and the plain-text case format.

A case file is a sectioned, whitespace-delimited table::

    # comment
    [meta]
    name = toy6
    base_mva = 1.0
    v_ref = 1.0

    [bus]
    # id region slack pd_mw qd_mvar
    1 1 1 0.0 0.0
    2 1 0 0.1 0.04

    [branch]
    # from to r_pu x_pu
    1 2 0.02 0.04

    [pv]
    # bus s_mva p_max_mw p_min_mw beta
    2 0.72 0.6 0.0 0.6

    [regions]
    1: 1 2

Floats are written with ``repr`` so text -> model -> text is bit exact.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Sequence

import numpy as np


class CaseError(ValueError):
    """Raised for any malformed or inconsistent case description."""


@dataclass(frozen=True)
class Bus:
    id: int
    region: int
    has_slack: bool
    load_p_base: float  # MW
    load_q_base: float  # MVAr


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float

    @property
    def g(self) -> float:
        return self.r / (self.r * self.r + self.x * self.x)

    @property
    def b(self) -> float:
        return -self.x / (self.r * self.r + self.x * self.x)


@dataclass(frozen=True)
class InverterConfig:
    bus: int
    s_cap: float  # MVA
    p_max: float  # MW
    p_min: float  # MW
    beta: float


@dataclass(frozen=True)
class NetworkModel:
    name: str
    base_mva: float
    v_ref: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    inverters: tuple[InverterConfig, ...]
    regions: tuple[tuple[int, ...], ...]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def slack(self) -> int:
        """Zero-based index of the slack bus."""
        return next(i for i, b in enumerate(self.buses) if b.has_slack)

    @cached_property
    def non_slack(self) -> np.ndarray:
        return np.array([i for i in range(self.n_bus) if i != self.slack], dtype=int)

    @cached_property
    def inverter_index(self) -> np.ndarray:
        """Zero-based bus index of every inverter, in declaration order."""
        return np.array([inv.bus - 1 for inv in self.inverters], dtype=int)

    @cached_property
    def region_buses(self) -> list[np.ndarray]:
        return [np.array(r, dtype=int) - 1 for r in self.regions]

    @cached_property
    def region_inverters(self) -> list[np.ndarray]:
        """Per region, positions into ``inverters`` of the inverters it owns."""
        out = []
        for members in self.regions:
            s = set(members)
            out.append(np.array([k for k, inv in enumerate(self.inverters) if inv.bus in s], dtype=int))
        return out

    @cached_property
    def load_p(self) -> np.ndarray:
        return np.array([b.load_p_base for b in self.buses])

    @cached_property
    def load_q(self) -> np.ndarray:
        return np.array([b.load_q_base for b in self.buses])

    @cached_property
    def ybus(self) -> np.ndarray:
        n = self.n_bus
        y = np.zeros((n, n), dtype=complex)
        for br in self.branches:
            i, j = br.from_bus - 1, br.to_bus - 1
            ys = complex(br.g, br.b)
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
        return y

    @cached_property
    def branch_ends(self) -> tuple[np.ndarray, np.ndarray]:
        f = np.array([br.from_bus - 1 for br in self.branches], dtype=int)
        t = np.array([br.to_bus - 1 for br in self.branches], dtype=int)
        return f, t

    @cached_property
    def branch_g(self) -> np.ndarray:
        return np.array([br.g for br in self.branches])


# ---------------------------------------------------------------- parsing

_SECTIONS = ("meta", "bus", "branch", "pv", "regions")


def _num(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise CaseError(f"{where}: non-numeric value {tok!r}") from None
    if not math.isfinite(v):
        raise CaseError(f"{where}: non-finite value {tok!r}")
    return v


def _int(tok: str, where: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseError(f"{where}: expected integer, got {tok!r}") from None


def _split_sections(text: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise CaseError(f"line {lineno}: unknown section [{current}]")
            if current in sections:
                raise CaseError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise CaseError(f"line {lineno}: content outside of any section")
        sections[current].append((lineno, line))
    for name in ("meta", "bus", "branch"):
        if name not in sections:
            raise CaseError(f"missing section [{name}]")
    return sections


def parse_case(text: str) -> NetworkModel:
    """Parse case-file text into a validated :class:`NetworkModel`."""
    sec = _split_sections(text)

    meta: dict[str, str] = {}
    for lineno, line in sec["meta"]:
        if "=" not in line:
            raise CaseError(f"line {lineno}: expected key = value in [meta]")
        k, v = (s.strip() for s in line.split("=", 1))
        meta[k] = v
    base_mva = _num(meta.get("base_mva", "10.0"), "meta base_mva")
    v_ref = _num(meta.get("v_ref", "1.0"), "meta v_ref")
    if base_mva <= 0:
        raise CaseError("meta base_mva must be positive")

    buses: dict[int, Bus] = {}
    for lineno, line in sec["bus"]:
        tok = line.split()
        if len(tok) != 5:
            raise CaseError(f"line {lineno}: [bus] rows need 5 columns (id region slack pd_mw qd_mvar)")
        where = f"line {lineno}"
        bid = _int(tok[0], where)
        if bid in buses:
            raise CaseError(f"{where}: duplicate bus id {bid}")
        slack = _int(tok[2], where)
        if slack not in (0, 1):
            raise CaseError(f"{where}: slack flag must be 0 or 1")
        pd, qd = _num(tok[3], where), _num(tok[4], where)
        if pd < 0 or qd < 0:
            raise CaseError(f"{where}: load values must be non-negative")
        buses[bid] = Bus(bid, _int(tok[1], where), bool(slack), pd, qd)
    if not buses:
        raise CaseError("[bus] section is empty")
    if sorted(buses) != list(range(1, len(buses) + 1)):
        raise CaseError("bus ids must be dense 1..B")
    n_slack = sum(b.has_slack for b in buses.values())
    if n_slack == 0:
        raise CaseError("missing slack bus")
    if n_slack > 1:
        raise CaseError("more than one slack bus")

    branches = []
    for lineno, line in sec["branch"]:
        tok = line.split()
        if len(tok) != 4:
            raise CaseError(f"line {lineno}: [branch] rows need 4 columns (from to r_pu x_pu)")
        where = f"line {lineno}"
        f, t = _int(tok[0], where), _int(tok[1], where)
        for b in (f, t):
            if b not in buses:
                raise CaseError(f"{where}: unknown bus {b}")
        if f == t:
            raise CaseError(f"{where}: branch connects bus {f} to itself")
        r, x = _num(tok[2], where), _num(tok[3], where)
        if r < 0 or (x == 0 and r <= 0):
            raise CaseError(f"{where}: degenerate branch impedance")
        branches.append(Branch(f, t, r, x))

    inverters = []
    seen_pv = set()
    for lineno, line in sec.get("pv", []):
        tok = line.split()
        if len(tok) != 5:
            raise CaseError(f"line {lineno}: [pv] rows need 5 columns (bus s_mva p_max_mw p_min_mw beta)")
        where = f"line {lineno}"
        bid = _int(tok[0], where)
        if bid not in buses:
            raise CaseError(f"{where}: unknown bus {bid}")
        if bid in seen_pv:
            raise CaseError(f"{where}: duplicate inverter at bus {bid}")
        seen_pv.add(bid)
        s, pmax, pmin, beta = (_num(v, where) for v in tok[1:])
        if not 0 < beta <= 1:
            raise CaseError(f"{where}: beta must lie in (0, 1]")
        if pmin > pmax or pmin < 0 or s <= 0:
            raise CaseError(f"{where}: inconsistent inverter limits")
        inverters.append(InverterConfig(bid, s, pmax, pmin, beta))

    if "regions" in sec:
        regions = []
        ids = []
        for lineno, line in sec["regions"]:
            if ":" not in line:
                raise CaseError(f"line {lineno}: expected 'region_id: bus list'")
            head, rest = line.split(":", 1)
            where = f"line {lineno}"
            ids.append(_int(head.strip(), where))
            members = tuple(_int(t, where) for t in rest.split())
            for b in members:
                if b not in buses:
                    raise CaseError(f"{where}: unknown bus {b}")
            regions.append(members)
        if sorted(ids) != list(range(1, len(ids) + 1)) or ids != sorted(ids):
            raise CaseError("region ids must be listed in order 1..M")
        regions = tuple(regions)
    else:
        by_region: dict[int, list[int]] = {}
        for b in buses.values():
            by_region.setdefault(b.region, []).append(b.id)
        if sorted(by_region) != list(range(1, len(by_region) + 1)):
            raise CaseError("bus region ids must be dense 1..M")
        regions = tuple(tuple(by_region[k]) for k in sorted(by_region))

    net = NetworkModel(
        name=meta.get("name", "unnamed"),
        base_mva=base_mva,
        v_ref=v_ref,
        buses=tuple(buses[i] for i in range(1, len(buses) + 1)),
        branches=tuple(branches),
        inverters=tuple(inverters),
        regions=regions,
    )
    _check_topology(net)
    _check_regions(net)
    return net


def _check_topology(net: NetworkModel) -> None:
    n = net.n_bus
    if len(net.branches) != n - 1:
        raise CaseError(f"network is not radial: {len(net.branches)} branches for {n} buses")
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for br in net.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    start = net.buses[net.slack].id
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != n:
        missing = sorted(set(adj) - seen)
        raise CaseError(f"disconnected graph: buses {missing} unreachable from slack")


def _check_regions(net: NetworkModel) -> None:
    owner: dict[int, int] = {}
    for k, members in enumerate(net.regions, 1):
        for b in members:
            if b in owner:
                raise CaseError(f"overlapping regions: bus {b} in regions {owner[b]} and {k}")
            owner[b] = k
    if len(owner) != net.n_bus:
        missing = sorted({b.id for b in net.buses} - set(owner))
        raise CaseError(f"regions do not cover buses {missing}")
    for b in net.buses:
        if owner[b.id] != b.region:
            raise CaseError(f"bus {b.id} declares region {b.region} but is listed in region {owner[b.id]}")


@dataclass(frozen=True)
class RegionSummary:
    region: int
    n_bus: int
    n_branch: int
    n_inverter: int


def validate_partition(net: NetworkModel) -> list[RegionSummary]:
    """Check the region partition and return per-region counts.

    A branch is counted in a region when both of its ends belong to it;
    tie branches between regions are not attributed to either side.
    """
    _check_regions(net)
    out = []
    for k, members in enumerate(net.regions, 1):
        s = set(members)
        n_br = sum(1 for br in net.branches if br.from_bus in s and br.to_bus in s)
        n_inv = sum(1 for inv in net.inverters if inv.bus in s)
        if n_inv == 0:
            raise CaseError(f"region {k} has zero inverters")
        out.append(RegionSummary(k, len(members), n_br, n_inv))
    return out


# ---------------------------------------------------------------- emitting

def _f(v: float) -> str:
    return repr(float(v))


def format_case(net: NetworkModel) -> str:
    lines = [
        "[meta]",
        f"name = {net.name}",
        f"base_mva = {_f(net.base_mva)}",
        f"v_ref = {_f(net.v_ref)}",
        "",
        "[bus]",
        "# id region slack pd_mw qd_mvar",
    ]
    for b in net.buses:
        lines.append(f"{b.id} {b.region} {int(b.has_slack)} {_f(b.load_p_base)} {_f(b.load_q_base)}")
    lines += ["", "[branch]", "# from to r_pu x_pu"]
    for br in net.branches:
        lines.append(f"{br.from_bus} {br.to_bus} {_f(br.r)} {_f(br.x)}")
    lines += ["", "[pv]", "# bus s_mva p_max_mw p_min_mw beta"]
    for inv in net.inverters:
        lines.append(f"{inv.bus} {_f(inv.s_cap)} {_f(inv.p_max)} {_f(inv.p_min)} {_f(inv.beta)}")
    lines += ["", "[regions]"]
    for k, members in enumerate(net.regions, 1):
        lines.append(f"{k}: " + " ".join(str(b) for b in members))
    return "\n".join(lines) + "\n"


# MATPOWER column positions (0-based)
_BUS_I, _BUS_TYPE, _PD, _QD = 0, 1, 2, 3
_F_BUS, _T_BUS, _BR_R, _BR_X = 0, 1, 2, 3
_REF = 3


def _table(rows, ncols: int, what: str) -> list[list[float]]:
    out = []
    for k, row in enumerate(rows):
        row = list(row)
        if len(row) < ncols:
            raise CaseError(f"{what} row {k}: missing columns (need at least {ncols})")
        vals = []
        for c in row[:ncols]:
            try:
                v = float(c)
            except (TypeError, ValueError):
                raise CaseError(f"{what} row {k}: non-numeric cell {c!r}") from None
            if not math.isfinite(v):
                raise CaseError(f"{what} row {k}: non-numeric cell {c!r}")
            vals.append(v)
        out.append(vals)
    return out


def import_matpower_tables(
    bus_table,
    branch_table,
    base_mva: float,
    *,
    name: str = "imported",
    v_ref: float = 1.0,
    pv: Sequence[Sequence[float]] = (),
    regions: Sequence[Sequence[int]] | None = None,
) -> str:
    """Convert MATPOWER ``bus``/``branch`` tables into native case text.

    ``bus_table`` rows follow the MATPOWER layout (bus_i, type, Pd, Qd, ...),
    the reference bus being ``type == 3``. ``branch_table`` rows start with
    (fbus, tbus, r, x) in per unit. MATPOWER has no notion of inverters or
    control regions, so both can be supplied; without ``regions`` every bus
    lands in one region.
    """
    buses = _table(bus_table, 4, "bus table")
    branches = _table(branch_table, 4, "branch table")
    if not buses:
        raise CaseError("bus table is empty")
    if not branches and len(buses) > 1:
        raise CaseError("branch table is empty")

    ids = [int(r[_BUS_I]) for r in buses]
    if regions is None:
        regions = [sorted(ids)]
    owner = {b: k for k, members in enumerate(regions, 1) for b in members}
    pv_rows = _table(pv, 5, "pv table")

    lines = ["[meta]", f"name = {name}", f"base_mva = {_f(base_mva)}", f"v_ref = {_f(v_ref)}",
             "", "[bus]", "# id region slack pd_mw qd_mvar"]
    for r in buses:
        bid = int(r[_BUS_I])
        slack = 1 if int(r[_BUS_TYPE]) == _REF else 0
        lines.append(f"{bid} {owner.get(bid, 0)} {slack} {_f(r[_PD])} {_f(r[_QD])}")
    lines += ["", "[branch]", "# from to r_pu x_pu"]
    for r in branches:
        lines.append(f"{int(r[_F_BUS])} {int(r[_T_BUS])} {_f(r[_BR_R])} {_f(r[_BR_X])}")
    lines += ["", "[pv]", "# bus s_mva p_max_mw p_min_mw beta"]
    for r in pv_rows:
        lines.append(f"{int(r[0])} {_f(r[1])} {_f(r[2])} {_f(r[3])} {_f(r[4])}")
    lines += ["", "[regions]"]
    for k, members in enumerate(regions, 1):
        lines.append(f"{k}: " + " ".join(str(int(b)) for b in members))
    text = "\n".join(lines) + "\n"
    parse_case(text)
    return text


def load_case(path_or_name: str) -> NetworkModel:
    """Load a case from a path, or one of the shipped cases by name (``ieee33``, ``toy6``)."""
    return parse_case(read_case_text(path_or_name))


def read_case_text(path_or_name: str) -> str:
    shipped = resources.files("robust_vvc") / "cases" / f"{path_or_name}.case"
    if shipped.is_file():
        return shipped.read_text(encoding="utf-8")
    with open(path_or_name, encoding="utf-8") as fh:
        return fh.read()


def read_table_csv(path_or_name: str) -> list[list[str]]:
    """Read a comma separated numeric table, skipping ``#`` comment lines.

    Cells are returned as strings; :func:`import_matpower_tables` does the
    numeric validation.
    """
    shipped = resources.files("robust_vvc") / "cases" / f"{path_or_name}.csv"
    if shipped.is_file():
        text = shipped.read_text(encoding="utf-8")
    else:
        with open(path_or_name, encoding="utf-8") as fh:
            text = fh.read()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([c.strip() for c in line.split(",")])
    return rows
