"""BIM/BFM evaluator correctness against independent oracles."""

import dataclasses
import math

import numpy as np
import pytest

from itdopf import testcases as tc
from itdopf.cases import Branch, Bus, CostPoly, Generator, ItdCase, NetworkCase, merge_itd
from itdopf.exceptions import ModelError
from itdopf.models import (
    build_bfm_model,
    build_bim_model,
    build_region_models,
    check_model_derivatives,
    conic_residual,
    eval_all,
)
from itdopf.partition import decompose

ALL_FIXTURES = {
    "fig1": tc.case_itd_fig1,
    "fig2": tc.case_itd_fig2,
    "star84": tc.case_star84,
    "meshed_small": tc.case_meshed_small,
    "stress": tc.case_stress,
}


def _single_region_model(case, relaxed=True):
    kind = "distribution" if case.model_hint == "radial" else "transmission"
    itd = ItdCase(regions=((case, kind),), interconnections=())
    return build_region_models(decompose(itd), relaxed=relaxed)[0]


# ---------------------------------------------------------------------------
# BIM


def _ybus(case):
    """Independent bus admittance assembly (shunts and charging included)."""
    ids = [b.id for b in case.buses]
    pos = {i: k for k, i in enumerate(ids)}
    n = len(ids)
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        y = 1.0 / complex(br.r, br.x)
        i, j = pos[br.from_bus], pos[br.to_bus]
        Y[i, i] += y + 1j * br.b_charge / 2
        Y[j, j] += y + 1j * br.b_charge / 2
        Y[i, j] -= y
        Y[j, i] -= y
    for b in case.buses:
        Y[pos[b.id], pos[b.id]] += complex(b.shunt_g, b.shunt_b)
    return Y


def test_bim_flat_start_matches_ybus_row_sums():
    case = dataclasses.replace(
        tc.transmission3(),
        buses=tuple(
            dataclasses.replace(b, shunt_g=0.01 * k, shunt_b=0.02 * k)
            for k, b in enumerate(tc.transmission3().buses)
        ),
    )
    model = _single_region_model(case)
    x = model.flat_start()
    # zero out generator midpoints so the residual isolates the injections
    x[model.pg_idx] = 0.0
    x[model.qg_idx] = 0.0
    res = model.c_eq(x)
    Y = _ybus(case)
    G, B = Y.real, Y.imag
    for k, b in enumerate(case.buses):
        p_inj = G[k].sum()     # v=1, theta=0 collapses the trig terms
        q_inj = -B[k].sum()
        assert res[k] == pytest.approx(p_inj + b.p_load, abs=1e-12)
        assert res[model.ncore + k] == pytest.approx(q_inj + b.q_load, abs=1e-12)


def _two_bus_case(r, x):
    return NetworkCase(
        base_mva=100.0,
        buses=(
            Bus(1, "slack", v_min=0.9, v_max=1.1),
            Bus(2, "pq", p_load=0.5, q_load=0.1, v_min=0.9, v_max=1.1),
        ),
        branches=(Branch(1, 2, r=r, x=x),),
        generators=(
            Generator(bus=1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      cost=CostPoly(100.0, 400.0, 0.0)),
        ),
        model_hint="meshed",
    )


def solve_two_bus_pf(case, v1=1.0):
    """Bisection oracle: nested solve of the 2-bus power flow at fixed v1.

    Outer bisection on v2 drives the reactive balance at bus 2; the inner
    bisection on th2 drives the active balance.  Returns (v2, th2, pg, qg).
    """
    br = case.branches[0]
    g = br.r / (br.r**2 + br.x**2)
    b = -br.x / (br.r**2 + br.x**2)
    bus2 = case.bus_by_id(2)
    pl, ql = bus2.p_load, bus2.q_load

    def p2(v2, th2):
        # flow from bus 2 toward bus 1 (angle difference th2 - 0)
        return v2 * v2 * g - v1 * v2 * (g * math.cos(th2) + b * math.sin(th2))

    def q2(v2, th2):
        return -v2 * v2 * b - v1 * v2 * (g * math.sin(th2) - b * math.cos(th2))

    def th_for(v2):
        lo, hi = -1.0, 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if p2(v2, mid) + pl > 0:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    lo, hi = 0.5, 1.5
    for _ in range(200):
        v2 = 0.5 * (lo + hi)
        th2 = th_for(v2)
        if q2(v2, th2) + ql > 0:
            hi = v2
        else:
            lo = v2
    v2 = 0.5 * (lo + hi)
    th2 = th_for(v2)
    # sending end 1 -> 2 sees angle difference -th2
    pg = v1 * v1 * g - v1 * v2 * (g * math.cos(th2) - b * math.sin(th2))
    qg = -v1 * v1 * b - v1 * v2 * (-g * math.sin(th2) - b * math.cos(th2))
    return v2, th2, pg, qg


def test_bim_lossless_two_bus_dispatch():
    case = _two_bus_case(r=0.0, x=0.05)
    model = _single_region_model(case)
    v2, th2, pg, qg = solve_two_bus_pf(case)
    assert pg == pytest.approx(0.5, abs=1e-9)  # lossless: generation == load
    x = model.flat_start()
    x[model.layout.index[("v", ("bus", 0, 2))]] = v2
    x[model.layout.index[("th", ("bus", 0, 2))]] = th2
    x[model.pg_idx[0]] = pg
    x[model.qg_idx[0]] = qg
    assert np.max(np.abs(model.c_eq(x))) < 1e-9


def test_bim_unlimited_branch_emits_no_flow_row():
    case = _two_bus_case(r=0.01, x=0.05)  # s_max defaults to 0
    model = _single_region_model(case)
    assert model.m_ineq == 0
    limited = dataclasses.replace(
        case, branches=(dataclasses.replace(case.branches[0], s_max=1.0),)
    )
    assert _single_region_model(limited).m_ineq == 1


def test_bim_zero_reactance_rejected():
    case = _two_bus_case(r=0.01, x=0.0)
    with pytest.raises(ModelError, match="x = 0"):
        _single_region_model(case)


def test_objective_quadratic_example():
    case = dataclasses.replace(
        _two_bus_case(0.01, 0.05),
        generators=(
            Generator(bus=1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0,
                      cost=CostPoly(1.0, 2.0, 0.0)),
        ),
    )
    model = _single_region_model(case)
    x = model.flat_start()
    x[model.pg_idx[0]] = 0.3
    assert model.f(x) == pytest.approx(0.69)
    assert model.grad(x)[model.pg_idx[0]] == pytest.approx(2.6)


# ---------------------------------------------------------------------------
# BFM


def test_bfm_zero_flow_feeder_residuals():
    feeder = dataclasses.replace(
        tc.feeder3(),
        buses=tuple(dataclasses.replace(b, p_load=0.0, q_load=0.0) for b in tc.feeder3().buses),
    )
    model = _single_region_model(feeder)
    x = model.flat_start()  # u = 1, flows and currents zero
    x[model.pg_idx] = 0.0
    x[model.qg_idx] = 0.0
    assert np.max(np.abs(model.c_eq(x))) == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(model.c_ineq(x))) == pytest.approx(0.0, abs=1e-15)


def test_conic_row_values():
    model = _single_region_model(tc.feeder3())
    x = model.flat_start()
    pf, qf, u, l = (arr[0] for arr in model.conic_branches)
    x[pf], x[qf], x[u], x[l] = 0.3, 0.4, 1.0, 0.25
    assert model.c_ineq(x)[0] == pytest.approx(0.0)
    assert conic_residual(model, x) == pytest.approx(0.0)
    x[l] = 0.26
    assert conic_residual(model, x) == pytest.approx(0.01)


def sweep_two_bus_feeder(r, x, pl, ql, u1):
    """Fixed-point oracle on the backward/forward sweep of one branch."""
    l = 0.0
    for _ in range(200):
        p = pl + r * l
        q = ql + x * l
        l = (p * p + q * q) / u1
    u2 = u1 - 2 * (r * p + x * q) + (r * r + x * x) * l
    return p, q, l, u2


def test_bfm_two_bus_sweep_oracle():
    feeder = NetworkCase(
        base_mva=100.0,
        buses=(
            Bus(1, "slack", v_min=0.9, v_max=1.1),
            Bus(2, "pq", p_load=0.1, q_load=0.05, v_min=0.9, v_max=1.1),
        ),
        branches=(Branch(1, 2, r=0.01, x=0.02),),
        generators=(
            Generator(bus=1, p_min=0.0, p_max=1.0, q_min=-0.5, q_max=0.5,
                      cost=CostPoly(100.0, 400.0, 0.0)),
        ),
        model_hint="radial",
    )
    model = _single_region_model(feeder, relaxed=False)
    p, q, l, u2 = sweep_two_bus_feeder(0.01, 0.02, 0.1, 0.05, u1=1.0)
    x = model.flat_start()
    lay = model.layout.index
    x[lay[("u", ("bus", 0, 1))]] = 1.0
    x[lay[("u", ("bus", 0, 2))]] = u2
    key = model.spec.branches[0].key
    x[lay[("pf", key)]] = p
    x[lay[("qf", key)]] = q
    x[lay[("l", key)]] = l
    x[model.pg_idx[0]] = p
    x[model.qg_idx[0]] = q
    assert np.max(np.abs(model.c_eq(x))) < 1e-12


def test_bfm_nonradial_rejected():
    feeder = tc.feeder3()
    looped = dataclasses.replace(
        feeder, branches=feeder.branches + (Branch(4, 6, r=0.01, x=0.02),),
        model_hint="meshed",
    )
    itd = ItdCase(regions=((looped, "distribution"),), interconnections=())
    spec = decompose(itd)[0]
    assert spec.kind == "bim"  # meshed distribution routes to the polar model
    spec_bfm = dataclasses.replace(spec, kind="bfm")
    with pytest.raises(ModelError, match="radial"):
        build_bfm_model(spec_bfm)


def test_bfm_shunt_rejected():
    feeder = tc.feeder3()
    shunted = dataclasses.replace(
        feeder,
        buses=tuple(
            dataclasses.replace(b, shunt_b=0.05) if b.id == 5 else b for b in feeder.buses
        ),
    )
    with pytest.raises(ModelError, match="shunt"):
        _single_region_model(shunted)


# ---------------------------------------------------------------------------
# derivative validation (finite differences as the oracle)


@pytest.mark.parametrize("name", sorted(ALL_FIXTURES))
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_derivatives_match_finite_differences(name, seed):
    itd = ALL_FIXTURES[name]()
    models = build_region_models(decompose(itd), relaxed=True)
    for model in models:
        errs = check_model_derivatives(model, seed=seed, n_points=3)
        assert errs["grad"] <= 1e-6, (name, model.name, errs)
        assert errs["jac_eq"] <= 1e-5, (name, model.name, errs)
        assert errs["jac_ineq"] <= 1e-5, (name, model.name, errs)
        assert errs["hess"] <= 1e-5, (name, model.name, errs)


def test_eval_all_consistency_and_symmetry():
    itd = tc.case_itd_fig1()
    models = build_region_models(decompose(itd), relaxed=True)
    rng = np.random.default_rng(5)
    for model in models:
        x = model.flat_start() + rng.uniform(-0.05, 0.05, model.n)
        x = np.clip(x, np.where(np.isfinite(model.lo), model.lo + 0.01, -np.inf),
                    np.where(np.isfinite(model.hi), model.hi - 0.01, np.inf))
        kappa = rng.uniform(-1, 1, model.m_eq + model.m_ineq)
        out = eval_all(model, x, kappa)
        assert out.h.shape == (model.m_eq + model.m_ineq,)
        assert out.jac.shape == (model.m_eq + model.m_ineq, model.n)
        assert np.allclose(out.hess, out.hess.T)


def test_eval_all_invalid_point_raises():
    model = _single_region_model(tc.feeder3())
    x = model.flat_start()
    x[model.pg_idx[0]] = np.nan
    with pytest.raises(FloatingPointError):
        eval_all(model, x, np.zeros(model.m_eq + model.m_ineq))
