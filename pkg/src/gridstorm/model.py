"""Domain model for composed grid/microgrid networks.

A :class:`GridCase` is the static description of one network: buses,
generators and branches.  Case files use a three-section text format
(``BUS``, ``GEN``, ``BRANCH``) with whitespace-separated columns; lines
starting with ``#`` are comments.  A branch capacity of ``-`` means "to
be assigned later from the base flow".

Microgrids are attached to a main case with :func:`compose`, which remaps
bus and branch ids into a reserved range and adds one tie line per
attachment.  Attached generators are flagged as standby units: they sit
idle while their island still contains a primary (main grid) generator
and only pick up load once the microgrid is cut loose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

GENERATOR = "generator"
LOAD = "load"
JUNCTION = "junction"
BUS_KINDS = (GENERATOR, LOAD, JUNCTION)

#: Bus/branch ids of attachment k (1-based) are offset by k * this value.
MICROGRID_ID_OFFSET = 100

#: Reactance of every generated tie line, in the same units as branch reactance.
TIE_REACTANCE = 0.01

#: Tie capacity before any reduction: this factor times the summed nominal
#: load of all attached microgrids.  Sized to carry full import with slack
#: while staying within reach of a demand-amplification attack.
TIE_CAPACITY_FACTOR = 1.5


class CaseError(ValueError):
    """Base class for case file problems."""


class CaseFormatError(CaseError):
    """A row that cannot be tokenized or typed, with its line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CaseValidationError(CaseError):
    """A structurally invalid case (dangling ids, bad ranges, ...)."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    nominal_demand: float = 0.0


@dataclass
class Generator:
    bus: int
    p_min: float
    p_max: float
    output: float = 0.0
    # Standby units only run when no primary generator shares their island.
    standby: bool = False


@dataclass
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    capacity: float | None = None
    alive: bool = True


@dataclass
class GridCase:
    """One network: buses, generators, branches.

    The static data is shared freely; only ``Branch.alive`` and
    ``Generator.output`` are mutated during simulation, and always on a
    private :meth:`clone`.
    """

    name: str
    buses: list[Bus]
    generators: list[Generator]
    branches: list[Branch]

    # -- lookups ---------------------------------------------------------

    def bus_map(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    def branch_map(self) -> dict[int, Branch]:
        return {br.id: br for br in self.branches}

    def gen_by_bus(self) -> dict[int, Generator]:
        return {g.bus: g for g in self.generators}

    def loads(self) -> list[Bus]:
        return [b for b in self.buses if b.kind == LOAD]

    def load_buses(self) -> list[int]:
        return [b.id for b in self.buses if b.kind == LOAD]

    def nominal_demands(self) -> dict[int, float]:
        return {b.id: b.nominal_demand for b in self.buses if b.kind == LOAD}

    def total_nominal_load(self) -> float:
        return sum(b.nominal_demand for b in self.buses if b.kind == LOAD)

    def alive_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.alive]

    def clone(self) -> "GridCase":
        return GridCase(
            self.name,
            list(self.buses),
            [replace(g) for g in self.generators],
            [replace(br) for br in self.branches],
        )

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if not ids:
            raise CaseValidationError("case has no buses")
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        known = set(ids)
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise CaseValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
            if b.nominal_demand < 0:
                raise CaseValidationError(f"bus {b.id}: negative demand")
            if b.kind != LOAD and b.nominal_demand != 0:
                raise CaseValidationError(
                    f"bus {b.id}: nonzero demand on non-load bus"
                )
        gen_buses = [g.bus for g in self.generators]
        if len(set(gen_buses)) != len(gen_buses):
            raise CaseValidationError("more than one generator on a bus")
        for g in self.generators:
            if g.bus not in known:
                raise CaseValidationError(f"generator references unknown bus {g.bus}")
            if not (0 <= g.p_min <= g.p_max):
                raise CaseValidationError(
                    f"generator at bus {g.bus}: need 0 <= p_min <= p_max"
                )
        br_ids = [br.id for br in self.branches]
        if len(set(br_ids)) != len(br_ids):
            raise CaseValidationError("duplicate branch ids")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseValidationError(f"branch {br.id}: dangling bus reference")
            if br.from_bus == br.to_bus:
                raise CaseValidationError(f"branch {br.id}: self-loop")
            if br.reactance <= 0:
                raise CaseValidationError(f"branch {br.id}: non-positive reactance")
            if br.capacity is not None and br.capacity <= 0:
                raise CaseValidationError(f"branch {br.id}: non-positive capacity")
        if self.total_nominal_load() > 0 and not self.generators:
            raise CaseValidationError("case has load but no generator")


# -- case file parsing ----------------------------------------------------

_SECTIONS = ("BUS", "GEN", "BRANCH")


def parse_case(text: str, name: str = "case") -> GridCase:
    """Parse the three-section case format into a validated GridCase."""
    buses: list[Bus] = []
    gens: list[Generator] = []
    branches: list[Branch] = []
    section = None
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in _SECTIONS:
            section = line
            continue
        if section is None:
            raise CaseFormatError(line_no, "data before any section header")
        tokens = line.split()
        try:
            if section == "BUS":
                if len(tokens) not in (2, 3):
                    raise ValueError("expected: id kind [demand]")
                kind = tokens[1].lower()
                if kind not in BUS_KINDS:
                    raise ValueError(f"unknown bus kind {tokens[1]!r}")
                demand = float(tokens[2]) if len(tokens) == 3 else 0.0
                buses.append(Bus(int(tokens[0]), kind, demand))
            elif section == "GEN":
                if len(tokens) != 3:
                    raise ValueError("expected: bus p_min p_max")
                gens.append(Generator(int(tokens[0]), float(tokens[1]), float(tokens[2])))
            else:
                if len(tokens) != 5:
                    raise ValueError("expected: id from to reactance capacity")
                cap = None if tokens[4] == "-" else float(tokens[4])
                branches.append(
                    Branch(int(tokens[0]), int(tokens[1]), int(tokens[2]),
                           float(tokens[3]), cap)
                )
        except ValueError as exc:
            raise CaseFormatError(line_no, str(exc)) from None
    grid = GridCase(name, buses, gens, branches)
    grid.validate()
    return grid


def serialize_case(grid: GridCase) -> str:
    """Render a GridCase back into the case file format (round-trips)."""
    out = ["BUS"]
    for b in grid.buses:
        out.append(f"{b.id} {b.kind} {b.nominal_demand!r}")
    out.append("")
    out.append("GEN")
    for g in grid.generators:
        out.append(f"{g.bus} {g.p_min!r} {g.p_max!r}")
    out.append("")
    out.append("BRANCH")
    for br in grid.branches:
        cap = "-" if br.capacity is None else repr(br.capacity)
        out.append(f"{br.id} {br.from_bus} {br.to_bus} {br.reactance!r} {cap}")
    out.append("")
    return "\n".join(out)


# -- connectivity ---------------------------------------------------------

def islands(grid: GridCase) -> list[frozenset[int]]:
    """Connected components of the grid over alive branches.

    Buses with no alive branch form singleton islands.  Components are
    returned sorted by their smallest bus id.
    """
    adj: dict[int, list[int]] = {b.id: [] for b in grid.buses}
    for br in grid.branches:
        if br.alive:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen: set[int] = set()
    comps: list[frozenset[int]] = []
    for start in adj:
        if start in seen:
            continue
        stack = [start]
        comp = {start}
        seen.add(start)
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if nxt not in comp:
                    comp.add(nxt)
                    seen.add(nxt)
                    stack.append(nxt)
        comps.append(frozenset(comp))
    comps.sort(key=min)
    return comps


# -- composition ----------------------------------------------------------

@dataclass(frozen=True)
class MicrogridSpec:
    """Bookkeeping for one attached microgrid inside the merged case."""

    microgrid_id: int
    member_buses: frozenset[int]
    tie_lines: frozenset[int]
    internal_case: GridCase

    def member_load_buses(self, merged: GridCase) -> list[int]:
        members = self.member_buses
        return [b.id for b in merged.buses if b.id in members and b.kind == LOAD]


@dataclass
class ComposedGrid:
    main: GridCase
    microgrids: list[MicrogridSpec]
    merged: GridCase

    def main_reference_bus(self) -> int:
        return min(b.id for b in self.main.buses)


def compose(main: GridCase, attachments: Sequence[tuple[int, GridCase]]) -> ComposedGrid:
    """Attach microgrid cases to host buses of a main case.

    Attachment ``k`` (0-based) gets its bus and branch ids offset by
    ``MICROGRID_ID_OFFSET * (k + 1)``; the tie line itself takes the bare
    offset value as its id.  The tie runs from the host bus to the
    attached case's bus 1, with fixed reactance and a capacity of
    ``TIE_CAPACITY_FACTOR`` times the total nominal load of all
    attachments.  Attached generators become standby units.
    """
    main.validate()
    merged_buses = list(main.buses)
    merged_gens = [replace(g) for g in main.generators]
    merged_branches = [replace(br) for br in main.branches]
    main_bus_ids = {b.id for b in main.buses}
    used_bus_ids = set(main_bus_ids)
    used_branch_ids = {br.id for br in main.branches}

    total_attached_load = sum(att.total_nominal_load() for _, att in attachments)
    tie_capacity = TIE_CAPACITY_FACTOR * total_attached_load

    specs: list[MicrogridSpec] = []
    for idx, (host, attached) in enumerate(attachments):
        attached.validate()
        if host not in main_bus_ids:
            raise CaseValidationError(f"attachment host bus {host} not in main case")
        if 1 not in {b.id for b in attached.buses}:
            raise CaseValidationError(
                f"attached case {attached.name!r} has no bus 1 for the tie"
            )
        offset = MICROGRID_ID_OFFSET * (idx + 1)
        members = set()
        for b in attached.buses:
            nid = b.id + offset
            if nid in used_bus_ids:
                raise CaseValidationError(f"bus id collision at {nid} after offset")
            used_bus_ids.add(nid)
            members.add(nid)
            merged_buses.append(Bus(nid, b.kind, b.nominal_demand))
        for g in attached.generators:
            merged_gens.append(
                Generator(g.bus + offset, g.p_min, g.p_max, standby=True)
            )
        for br in attached.branches:
            nid = br.id + offset
            if nid in used_branch_ids:
                raise CaseValidationError(f"branch id collision at {nid} after offset")
            used_branch_ids.add(nid)
            merged_branches.append(
                Branch(nid, br.from_bus + offset, br.to_bus + offset,
                       br.reactance, br.capacity)
            )
        if offset in used_branch_ids:
            raise CaseValidationError(f"branch id collision at {offset} (tie line)")
        used_branch_ids.add(offset)
        merged_branches.append(
            Branch(offset, host, 1 + offset, TIE_REACTANCE, tie_capacity)
        )
        specs.append(
            MicrogridSpec(idx + 1, frozenset(members), frozenset({offset}), attached)
        )

    merged = GridCase(
        f"{main.name}+{len(specs)}mg", merged_buses, merged_gens, merged_branches
    )
    merged.validate()
    return ComposedGrid(main, specs, merged)
