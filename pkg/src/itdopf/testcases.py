"""Bundled deterministic test systems.

Synthetic but physically sensible cases at several scales, used by the
test suite, the demos, and the CLI examples.  All values are per-unit on a
100 MVA base; cost coefficients are per-unit-power based.  Tie lines
between regions use r=0.01, x=0.05 (s_max 1.2) unless stated otherwise;
feeder branches use distribution-typical r/x near 1.
"""

from __future__ import annotations

import dataclasses
from importlib import resources

import numpy as np

from .cases import (
    Branch,
    Bus,
    CostPoly,
    Generator,
    InterconnectionSpec,
    ItdCase,
    NetworkCase,
    merge_itd,
    validate_itd_case,
)

_V_MIN, _V_MAX = 0.94, 1.06


def bundled_matpower_text() -> str:
    """The packaged 9-bus MATPOWER fixture (9 buses, 9 branches, 3 generators)."""
    return resources.files("itdopf").joinpath("data/case9.m").read_text()


def _bus(i, kind="pq", p=0.0, q=0.0, vmin=_V_MIN, vmax=_V_MAX):
    return Bus(id=i, kind=kind, p_load=p, q_load=q, v_min=vmin, v_max=vmax)


def transmission3() -> NetworkCase:
    """Three-bus meshed transmission with two generators; boundary at bus 3."""
    return NetworkCase(
        base_mva=100.0,
        buses=(
            _bus(1, "slack"),
            _bus(2, "pv", p=0.6, q=0.15),
            _bus(3, "pq", p=0.45, q=0.1),
        ),
        branches=(
            Branch(1, 2, r=0.01, x=0.06, b_charge=0.02, s_max=1.5),
            Branch(2, 3, r=0.008, x=0.05, b_charge=0.02, s_max=1.0),
            Branch(1, 3, r=0.012, x=0.07, b_charge=0.02, s_max=1.5),
        ),
        generators=(
            Generator(bus=1, p_min=0.0, p_max=3.0, q_min=-2.0, q_max=2.0,
                      cost=CostPoly(120.0, 380.0, 50.0)),
            Generator(bus=2, p_min=0.0, p_max=1.5, q_min=-1.0, q_max=1.0,
                      cost=CostPoly(200.0, 420.0, 30.0)),
        ),
        model_hint="meshed",
    )


def feeder3(first_bus: int = 4, root_gen: bool = True) -> NetworkCase:
    """Three-bus radial feeder; root carries the substation infeed when standalone."""
    b0 = first_bus
    gens = ()
    if root_gen:
        gens = (
            Generator(bus=b0, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      cost=CostPoly(150.0, 400.0, 0.0)),
        )
    return NetworkCase(
        base_mva=100.0,
        buses=(
            _bus(b0, "slack"),
            _bus(b0 + 1, "pq", p=0.25, q=0.08),
            _bus(b0 + 2, "pq", p=0.2, q=0.06),
        ),
        branches=(
            Branch(b0, b0 + 1, r=0.02, x=0.04),
            Branch(b0 + 1, b0 + 2, r=0.025, x=0.045),
        ),
        generators=gens,
        model_hint="radial",
    )


def default_tie(from_bus: int, to_bus: int, s_max: float = 1.2) -> Branch:
    return Branch(from_bus, to_bus, r=0.01, x=0.05, s_max=s_max)


def case_itd_fig1() -> ItdCase:
    """Six-bus, two-region system: transmission {1,2,3} plus feeder {4,5,6}."""
    return merge_itd(transmission3(), [(3, feeder3(), default_tie(3, 4))])


def case_itd_fig2() -> ItdCase:
    """Two three-bus transmissions sharing boundary buses 3 and 4."""
    t2 = NetworkCase(
        base_mva=100.0,
        buses=(
            _bus(4, "slack"),
            _bus(5, "pq", p=0.5, q=0.12),
            _bus(6, "pq", p=0.4, q=0.1),
        ),
        branches=(
            Branch(4, 5, r=0.01, x=0.06, b_charge=0.02, s_max=1.5),
            Branch(5, 6, r=0.009, x=0.055, b_charge=0.02, s_max=1.2),
            Branch(4, 6, r=0.011, x=0.065, b_charge=0.02, s_max=1.5),
        ),
        generators=(
            Generator(bus=4, p_min=0.0, p_max=2.0, q_min=-1.5, q_max=1.5,
                      cost=CostPoly(300.0, 520.0, 20.0)),
        ),
        model_hint="meshed",
    )
    return merge_itd(transmission3(), [(3, t2, default_tie(3, 4, s_max=1.5))])


def synthetic_transmission(
    n_bus: int,
    seed: int,
    gen_buses: tuple[int, ...],
    chords: tuple[tuple[int, int], ...],
    load_scale: float = 1.0,
    s_ring: float = 2.0,
    s_chord: float = 1.5,
    cost_shift: float = 0.0,
) -> NetworkCase:
    """Meshed ring-plus-chords system with randomized but seeded parameters."""
    rng = np.random.default_rng(seed)
    gen_set = set(gen_buses)
    buses = []
    for i in range(1, n_bus + 1):
        if i in gen_set:
            buses.append(_bus(i, "slack" if i == gen_buses[0] else "pv"))
        else:
            p = load_scale * rng.uniform(0.12, 0.3)
            buses.append(_bus(i, "pq", p=p, q=0.3 * p))
    branches = []
    for i in range(1, n_bus + 1):
        j = i % n_bus + 1
        branches.append(Branch(
            i, j,
            r=rng.uniform(0.004, 0.01),
            x=rng.uniform(0.04, 0.09),
            b_charge=rng.uniform(0.01, 0.02),
            s_max=s_ring,
        ))
    for i, j in chords:
        branches.append(Branch(
            i, j,
            r=rng.uniform(0.006, 0.012),
            x=rng.uniform(0.06, 0.12),
            b_charge=rng.uniform(0.01, 0.02),
            s_max=s_chord,
        ))
    gens = tuple(
        Generator(
            bus=i, p_min=0.0, p_max=rng.uniform(1.5, 3.0),
            q_min=-1.5, q_max=1.5,
            cost=CostPoly(
                a=rng.uniform(80.0, 300.0),
                b=cost_shift + rng.uniform(300.0, 500.0),
                c=rng.uniform(0.0, 50.0),
            ),
        )
        for i in gen_buses
    )
    return NetworkCase(
        base_mva=100.0, buses=tuple(buses), branches=tuple(branches),
        generators=gens, model_hint="meshed",
    )


def synthetic_feeder(n_bus: int = 15, seed: int = 7, first_bus: int = 1,
                     load_scale: float = 1.0, with_dg: bool = True) -> NetworkCase:
    """Radial feeder: a main chain with laterals, loads on every non-root bus.

    A small distributed generator sits mid-feeder (partial dispatch at the
    optimum), giving the region its own economics like merged ITD benchmarks.
    """
    rng = np.random.default_rng(seed)
    ids = list(range(first_bus, first_bus + n_bus))
    # main chain over the first ~60% of buses, laterals tap in round-robin
    n_chain = max(2, int(0.6 * n_bus))
    edges = [(ids[k], ids[k + 1]) for k in range(n_chain - 1)]
    taps = ids[1:n_chain]
    for m, lateral in enumerate(ids[n_chain:]):
        edges.append((taps[m % len(taps)], lateral))
    buses = [_bus(ids[0], "slack")]
    for i in ids[1:]:
        p = load_scale * rng.uniform(0.012, 0.028)
        buses.append(_bus(i, "pq", p=p, q=0.35 * p))
    branches = tuple(
        Branch(i, j, r=rng.uniform(0.008, 0.022), x=rng.uniform(0.012, 0.03))
        for i, j in edges
    )
    gens = [
        Generator(bus=ids[0], p_min=0.0, p_max=1.5, q_min=-0.8, q_max=0.8,
                  cost=CostPoly(180.0, 420.0, 0.0)),
    ]
    if with_dg:
        dg_bus = ids[n_chain // 2]
        gens.append(
            Generator(bus=dg_bus, p_min=0.0, p_max=0.25 * load_scale,
                      q_min=-0.12, q_max=0.12,
                      cost=CostPoly(rng.uniform(400.0, 700.0),
                                    rng.uniform(380.0, 440.0), 0.0)),
        )
    return NetworkCase(
        base_mva=100.0, buses=tuple(buses), branches=branches,
        generators=tuple(gens), model_hint="radial",
    )


def case_star84() -> ItdCase:
    """One 39-bus meshed transmission with three 15-bus feeders (84 buses, 4 regions)."""
    t = synthetic_transmission(
        n_bus=39, seed=11,
        gen_buses=(1, 5, 10, 14, 20, 25, 28, 33),
        chords=((1, 14), (5, 20), (10, 28), (16, 33), (22, 39), (3, 25)),
    )
    attachments = [
        (8, synthetic_feeder(15, seed=21), default_tie(8, 1)),
        (19, synthetic_feeder(15, seed=22), default_tie(19, 1)),
        (31, synthetic_feeder(15, seed=23), default_tie(31, 1)),
    ]
    return merge_itd(t, attachments)


def attach_feeder(itd: ItdCase, region: int, bus_id: int, feeder: NetworkCase,
                  tie: Branch) -> ItdCase:
    """Attach a radial feeder to any existing region of an ItdCase."""
    root = next(b.id for b in feeder.buses if b.kind == "slack")
    feeder = dataclasses.replace(
        feeder, generators=tuple(g for g in feeder.generators if g.bus != root)
    )
    host, host_kind = itd.regions[region]
    host = dataclasses.replace(
        host,
        buses=tuple(
            dataclasses.replace(b, p_load=0.0, q_load=0.0) if b.id == bus_id else b
            for b in host.buses
        ),
    )
    regions = list(itd.regions)
    regions[region] = (host, host_kind)
    regions.append((feeder, "distribution"))
    links = list(itd.interconnections)
    links.append(InterconnectionSpec(
        kind="tso_dso", region_a=region, region_b=len(regions) - 1,
        boundary_bus_a=bus_id, boundary_bus_b=root, tie_line=tie,
    ))
    out = ItdCase(regions=tuple(regions), interconnections=tuple(links))
    validate_itd_case(out)
    return out


def case_meshed_small() -> ItdCase:
    """Two 3-bus transmissions joined by two tie lines, one feeder on each.

    The doubled inter-transmission link gives the region graph a cycle while
    every region stays small enough for tight reference comparisons.
    """
    t2 = NetworkCase(
        base_mva=100.0,
        buses=(
            _bus(4, "slack"),
            _bus(5, "pq", p=0.5, q=0.12),
            _bus(6, "pq", p=0.4, q=0.1),
        ),
        branches=(
            Branch(4, 5, r=0.01, x=0.06, b_charge=0.02, s_max=1.5),
            Branch(5, 6, r=0.009, x=0.055, b_charge=0.02, s_max=1.2),
            Branch(4, 6, r=0.011, x=0.065, b_charge=0.02, s_max=1.5),
        ),
        generators=(
            Generator(bus=4, p_min=0.0, p_max=2.0, q_min=-1.5, q_max=1.5,
                      cost=CostPoly(300.0, 520.0, 20.0)),
        ),
        model_hint="meshed",
    )
    itd = merge_itd(
        transmission3(),
        [(3, t2, Branch(3, 4, r=0.01, x=0.05, s_max=1.5))],
        links=[InterconnectionSpec(
            kind="tso_tso", region_a=0, region_b=1,
            boundary_bus_a=2, boundary_bus_b=5,
            tie_line=Branch(2, 5, r=0.012, x=0.06, s_max=1.2),
        )],
    )
    itd = attach_feeder(itd, 0, 1, feeder3(first_bus=7), default_tie(1, 7))
    itd = attach_feeder(itd, 1, 6, feeder3(first_bus=10), default_tie(6, 10))
    return itd


def case_meshed_multi() -> ItdCase:
    """Two interconnected transmissions (two tie lines) plus two feeders.

    The doubled transmission link makes the region graph meshed, the shape
    a purely hierarchical coordination scheme cannot represent.
    """
    t1 = synthetic_transmission(
        n_bus=12, seed=31, gen_buses=(1, 6, 9), chords=((1, 7), (4, 10)),
    )
    t2 = synthetic_transmission(
        n_bus=12, seed=32, gen_buses=(1, 5, 11), chords=((2, 8), (6, 12)),
        cost_shift=150.0,
    )
    itd = merge_itd(
        t1,
        [(6, t2, Branch(6, 1, r=0.008, x=0.06, b_charge=0.01, s_max=1.5))],
        links=[InterconnectionSpec(
            kind="tso_tso", region_a=0, region_b=1,
            boundary_bus_a=12, boundary_bus_b=7,
            tie_line=Branch(12, 7, r=0.009, x=0.07, b_charge=0.01, s_max=1.5),
        )],
    )
    itd = attach_feeder(itd, 0, 3, synthetic_feeder(10, seed=33), default_tie(3, 1))
    itd = attach_feeder(itd, 1, 9, synthetic_feeder(10, seed=34), default_tie(9, 1))
    return itd


def case_stress() -> ItdCase:
    """Star system with deliberately tight line ratings and voltage bounds.

    Heavier loading drives early coordination steps into the active
    constraints, exercising the correction path.
    """
    t = synthetic_transmission(
        n_bus=12, seed=41, gen_buses=(1, 7), chords=((3, 9),),
        load_scale=1.3, s_ring=1.0, s_chord=0.7,
    )
    t = dataclasses.replace(
        t,
        buses=tuple(dataclasses.replace(b, v_min=0.95, v_max=1.05) for b in t.buses),
    )
    attachments = [
        (4, synthetic_feeder(8, seed=42, load_scale=1.5), default_tie(4, 1, s_max=0.9)),
        (10, synthetic_feeder(8, seed=43, load_scale=1.5), default_tie(10, 1, s_max=0.9)),
    ]
    return merge_itd(t, attachments)
