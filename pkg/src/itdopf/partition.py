"""Sharing-components decomposition and the affine consensus structure.

Regions exchange boundary quantities through paired coupling descriptors:
the owning (core) side keeps the physical variable, the neighboring (copy)
side holds a replica, and one consensus row per pair forces them equal.
Node identity is kept global through ``("bus", region, bus_id)`` keys so a
copy bus never collides with the host region's own numbering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cases import Branch, Bus, Generator, ItdCase, validate_itd_case
from .exceptions import CaseInvariantError, ModelError

NodeKey = tuple  # ("bus", region, bus_id)
LocKey = tuple   # node key, ("tie", icx) or ("br", region, pos)

PHYSICALS = ("u_sq_voltage", "v_mag", "theta", "p_flow", "q_flow")


def bus_node(region: int, bus_id: int) -> NodeKey:
    return ("bus", region, bus_id)


@dataclass(frozen=True)
class CouplingVarDescriptor:
    physical: str   # one of PHYSICALS
    location: LocKey
    side: str       # core | copy
    region: int


@dataclass(frozen=True)
class RegionBranch:
    from_node: NodeKey
    to_node: NodeKey
    data: Branch
    key: LocKey


@dataclass
class RegionSpec:
    id: int
    name: str
    kind: str  # bim | bfm
    core_nodes: list[NodeKey]
    copy_nodes: list[NodeKey] = field(default_factory=list)
    bus_data: dict = field(default_factory=dict)  # NodeKey -> Bus
    branches: list[RegionBranch] = field(default_factory=list)
    generators: list[tuple[NodeKey, Generator]] = field(default_factory=list)
    # free tie injections on the upstream side of a tso_dso link:
    # (boundary node, tie key, tie branch data)
    tie_injections: list[tuple[NodeKey, LocKey, Branch]] = field(default_factory=list)
    boundary_vars: list[CouplingVarDescriptor] = field(default_factory=list)
    slack_node: NodeKey | None = None

    @property
    def nodes(self) -> list[NodeKey]:
        return self.core_nodes + self.copy_nodes

    def core_bus_ids(self) -> set[int]:
        return {n[2] for n in self.core_nodes}

    def copy_bus_ids(self) -> set[int]:
        return {n[2] for n in self.copy_nodes}


@dataclass
class ConsensusStructure:
    blocks: list[np.ndarray]   # per region, shape (n_rows, n_vars_region)
    rhs: np.ndarray            # always zero here
    pairs: list[tuple[CouplingVarDescriptor, CouplingVarDescriptor]]

    @property
    def n_rows(self) -> int:
        return len(self.rhs)


def decompose(itd: ItdCase) -> list[RegionSpec]:
    """Decompose an ItdCase into region specs by sharing boundary components.

    For every tso_dso interconnection the downstream region receives the
    upstream boundary bus as a copy bus and owns the tie line; the upstream
    region gains free tie-flow injection variables at its boundary bus plus,
    when it is voltage-angle formulated, an auxiliary squared-voltage
    variable so the coupling stays affine.  For tso_tso interconnections
    both regions copy the other's boundary bus, both carry a replica of the
    tie line, and voltage magnitude and angle are coupled at both ends.
    """
    validate_itd_case(itd)
    specs: list[RegionSpec] = []
    for r, (case, region_kind) in enumerate(itd.regions):
        kind = "bfm" if (region_kind == "distribution" and case.model_hint == "radial") else "bim"
        name = ("T" if region_kind == "transmission" else "D") + str(r)
        core = [bus_node(r, b.id) for b in case.buses]
        spec = RegionSpec(id=r, name=name, kind=kind, core_nodes=core)
        spec.bus_data = {bus_node(r, b.id): b for b in case.buses}
        spec.branches = [
            RegionBranch(bus_node(r, br.from_bus), bus_node(r, br.to_bus), br, ("br", r, k))
            for k, br in enumerate(case.branches)
        ]
        spec.generators = [(bus_node(r, g.bus), g) for g in case.generators]
        spec.slack_node = next(bus_node(r, b.id) for b in case.buses if b.kind == "slack")
        specs.append(spec)

    def add_copy(spec: RegionSpec, node: NodeKey, bus: Bus) -> None:
        if node not in spec.copy_nodes:
            spec.copy_nodes.append(node)
            spec.bus_data[node] = bus

    def add_descriptor(spec: RegionSpec, desc: CouplingVarDescriptor) -> None:
        if desc not in spec.boundary_vars:
            spec.boundary_vars.append(desc)

    for k, icx in enumerate(itd.interconnections):
        a, b = icx.region_a, icx.region_b
        up, down = specs[a], specs[b]
        na = bus_node(a, icx.boundary_bus_a)
        nb = bus_node(b, icx.boundary_bus_b)
        bus_a = itd.regions[a][0].bus_by_id(icx.boundary_bus_a)
        bus_b = itd.regions[b][0].bus_by_id(icx.boundary_bus_b)
        tie_key = ("tie", k)
        if icx.kind == "tso_dso":
            if down.kind != "bfm":
                raise ModelError(
                    f"interconnection {k}: downstream region {down.name} is not "
                    "radial; tso_dso sharing requires a branch-flow downstream"
                )
            add_copy(down, na, bus_a)
            down.branches.append(RegionBranch(na, nb, icx.tie_line, tie_key))
            up.tie_injections.append((na, tie_key, icx.tie_line))
            for phys in ("u_sq_voltage", "p_flow", "q_flow"):
                add_descriptor(up, CouplingVarDescriptor(phys, tie_key, "core", a))
                add_descriptor(down, CouplingVarDescriptor(phys, tie_key, "copy", b))
        else:  # tso_tso
            add_copy(up, nb, bus_b)
            add_copy(down, na, bus_a)
            up.branches.append(RegionBranch(na, nb, icx.tie_line, ("rep", k, a)))
            down.branches.append(RegionBranch(na, nb, icx.tie_line, ("rep", k, b)))
            for phys in ("v_mag", "theta"):
                add_descriptor(up, CouplingVarDescriptor(phys, na, "core", a))
                add_descriptor(down, CouplingVarDescriptor(phys, na, "copy", b))
                add_descriptor(down, CouplingVarDescriptor(phys, nb, "core", b))
                add_descriptor(up, CouplingVarDescriptor(phys, nb, "copy", a))
    return specs


def build_consensus(regions: list[RegionSpec], layouts) -> ConsensusStructure:
    """Assemble per-region consensus blocks (one +1/-1 row per coupled pair).

    ``layouts`` must provide ``n`` and ``descriptor_index(desc)`` per region.
    """
    groups: dict[tuple, dict[str, CouplingVarDescriptor]] = {}
    order: list[tuple] = []
    for spec in regions:
        for desc in spec.boundary_vars:
            gkey = (desc.physical, desc.location)
            if gkey not in groups:
                groups[gkey] = {}
                order.append(gkey)
            if desc.side in groups[gkey]:
                raise CaseInvariantError(f"duplicate {desc.side} descriptor for {gkey}")
            groups[gkey][desc.side] = desc

    pairs = []
    for gkey in order:
        grp = groups[gkey]
        if set(grp) != {"core", "copy"}:
            raise CaseInvariantError(f"unpaired coupling descriptor for {gkey}: has {set(grp)}")
        pairs.append((grp["core"], grp["copy"]))

    m = len(pairs)
    blocks = [np.zeros((m, lay.n)) for lay in layouts]
    for row, (core, copy) in enumerate(pairs):
        blocks[core.region][row, layouts[core.region].descriptor_index(core)] = 1.0
        blocks[copy.region][row, layouts[copy.region].descriptor_index(copy)] = -1.0

    if m:
        stacked = np.hstack(blocks)
        rank = np.linalg.matrix_rank(stacked)
        if rank != m:
            raise CaseInvariantError(f"consensus matrix rank {rank} < rows {m}")
    return ConsensusStructure(blocks=blocks, rhs=np.zeros(m), pairs=pairs)


def coupling_residual(blocks: list[np.ndarray], xs: list[np.ndarray],
                      rhs: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Return (sum_l A_l x_l - b, ||.||_2)."""
    if len(blocks) != len(xs):
        raise ValueError(f"{len(blocks)} blocks but {len(xs)} region vectors")
    m = blocks[0].shape[0] if blocks else 0
    res = np.zeros(m) if rhs is None else -np.asarray(rhs, dtype=float)
    for A, x in zip(blocks, xs):
        if A.shape[1] != len(x):
            raise ValueError(f"block has {A.shape[1]} columns, x has {len(x)}")
        res = res + A @ x
    return res, float(np.linalg.norm(res))
