"""Per-region variable layouts: slot ordering, bounds, flat start."""

from __future__ import annotations

import numpy as np

from ..partition import CouplingVarDescriptor, RegionSpec

# Copy buses carry no operating bounds of their own (those live in the owning
# region); they get wide safety boxes that keep the solver in a sane domain
# without ever becoming active.
_COPY_V_BOUNDS = (0.5, 1.5)
_COPY_U_BOUNDS = (0.25, 2.25)


class VariableLayout:
    """Ordered, named variable slots of one region.

    Slots are ``(name, key)`` pairs; ``index`` maps a slot to its position.
    Also carries box bounds, the flat-start point, and the resolution of
    coupling descriptors to slot indices.
    """

    def __init__(self, spec: RegionSpec):
        self.spec = spec
        self.slots: list[tuple] = []
        self.index: dict[tuple, int] = {}
        lo: list[float] = []
        hi: list[float] = []
        start: list[float] = []

        def add(slot, lo_v, hi_v, start_v):
            self.index[slot] = len(self.slots)
            self.slots.append(slot)
            lo.append(lo_v)
            hi.append(hi_v)
            start.append(start_v)

        inf = np.inf
        copy_set = set(spec.copy_nodes)
        if spec.kind == "bim":
            for node in spec.nodes:
                if node in copy_set:
                    add(("v", node), *_COPY_V_BOUNDS, 1.0)
                else:
                    bus = spec.bus_data[node]
                    add(("v", node), bus.v_min, bus.v_max, 1.0)
                add(("th", node), -inf, inf, 0.0)
            for gi, (_, gen) in enumerate(spec.generators):
                add(("pg", gi), gen.p_min, gen.p_max, 0.5 * (gen.p_min + gen.p_max))
                add(("qg", gi), gen.q_min, gen.q_max, 0.5 * (gen.q_min + gen.q_max))
            for node, tie_key, _tie in spec.tie_injections:
                if ("u", node) not in self.index:
                    bus = spec.bus_data[node]
                    # slightly wider than [v_min^2, v_max^2] so the auxiliary
                    # never introduces a second active bound at the boundary
                    add(("u", node), (0.95 * bus.v_min) ** 2, (1.05 * bus.v_max) ** 2, 1.0)
                add(("ptie", tie_key), -inf, inf, 0.0)
                add(("qtie", tie_key), -inf, inf, 0.0)
        else:  # bfm
            for node in spec.nodes:
                if node in copy_set:
                    add(("u", node), *_COPY_U_BOUNDS, 1.0)
                else:
                    bus = spec.bus_data[node]
                    add(("u", node), bus.v_min**2, bus.v_max**2, 1.0)
            for rb in spec.branches:
                add(("pf", rb.key), -inf, inf, 0.0)
                add(("qf", rb.key), -inf, inf, 0.0)
                # nonnegativity of the squared current is implied by the
                # current-definition row (u stays positive); adding it as a
                # bound only creates a spurious barrier corner at flat start
                add(("l", rb.key), -inf, rb.data.i_max if rb.data.i_max > 0 else inf, 0.0)
            for gi, (_, gen) in enumerate(spec.generators):
                add(("pg", gi), gen.p_min, gen.p_max, 0.5 * (gen.p_min + gen.p_max))
                add(("qg", gi), gen.q_min, gen.q_max, 0.5 * (gen.q_min + gen.q_max))
            for node, tie_key, _tie in spec.tie_injections:
                add(("ptie", tie_key), -inf, inf, 0.0)
                add(("qtie", tie_key), -inf, inf, 0.0)

        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.flat_start = np.array(start)
        self._tie_node = {tie_key: node for node, tie_key, _ in spec.tie_injections}
        self._tie_from = {rb.key: rb.from_node for rb in spec.branches}

    @property
    def n(self) -> int:
        return len(self.slots)

    def descriptor_index(self, desc: CouplingVarDescriptor) -> int:
        """Resolve a coupling descriptor to this layout's slot index."""
        phys, loc, side = desc.physical, desc.location, desc.side
        if phys == "v_mag":
            slot = ("v", loc)
        elif phys == "theta":
            slot = ("th", loc)
        elif phys == "u_sq_voltage":
            node = self._tie_node[loc] if side == "core" else self._tie_from[loc]
            slot = ("u", node)
        elif phys == "p_flow":
            slot = ("ptie", loc) if side == "core" else ("pf", loc)
        elif phys == "q_flow":
            slot = ("qtie", loc) if side == "core" else ("qf", loc)
        else:
            raise KeyError(f"unknown physical {phys!r}")
        return self.index[slot]

    def coupling_indices(self) -> list[int]:
        """Slot indices of all coupling variables held by this region."""
        return sorted({self.descriptor_index(d) for d in self.spec.boundary_vars})
