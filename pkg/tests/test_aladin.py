"""Coordinator and region-side operations of the distributed solver."""

import inspect
import json

import numpy as np
import pytest

from itdopf import testcases as tc
from itdopf.aladin import (
    AladinConfig,
    ConvergenceRecord,
    IterateState,
    SensitivityPacket,
    assemble_packet,
    check_termination,
    detect_active_set,
    local_step,
    penalty_value,
    regularize_hessian,
    run,
    second_order_correction,
    soc_trigger,
    solve_coupled_qp,
    update_iterate,
    write_trace,
)
from itdopf.cases import merge_itd
from itdopf.centralized import solve_centralized
from itdopf.models import build_region_models
from itdopf.partition import build_consensus, decompose


def _setup(case, relaxed=True):
    specs = decompose(case)
    models = build_region_models(specs, relaxed=relaxed)
    consensus = build_consensus(specs, [m.layout for m in models])
    return models, consensus


# ---------------------------------------------------------------------------
# small operations


def test_detect_active_set_threshold():
    act = detect_active_set(np.array([-0.5, 0.0, -1e-9]), np.array([], dtype=int), 1e-6)
    assert list(act) == [1, 2]


def test_detect_active_set_conic_rows_forced():
    act = detect_active_set(np.full(6, -1.0), np.array([4]), 1e-6)
    assert list(act) == [4]


def test_detect_active_set_empty():
    act = detect_active_set(np.zeros(0), np.array([], dtype=int), 1e-6)
    assert len(act) == 0


def test_regularize_hessian_cases():
    assert np.allclose(regularize_hessian(np.diag([2.0, 3.0]), 1e-6), np.diag([2.0, 3.0]))
    assert np.allclose(regularize_hessian(np.diag([-1.0, 2.0]), 1e-6), np.diag([1.0, 2.0]))
    assert np.allclose(regularize_hessian(np.diag([0.0, 1.0]), 1e-6), np.diag([1e-6, 1.0]))
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    H = regularize_hessian(0.5 * (M + M.T), 1e-6)
    assert np.all(np.linalg.eigvalsh(H) >= 1e-6 - 1e-12)


def test_check_termination_cases():
    models, consensus = _setup(tc.case_itd_fig1())
    x = np.concatenate([m.flat_start() for m in models])
    sigma = np.ones_like(x)
    offsets = []
    start = 0
    for m in models:
        offsets.append((start, start + m.n))
        start += m.n
    stop, primal, dual = check_termination(
        x, x.copy(), consensus.blocks, consensus.rhs, sigma, 1e-4, offsets
    )
    assert stop and primal == pytest.approx(0.0) and dual == pytest.approx(0.0)
    z = x.copy()
    z[0] += 1.0  # dual residual 1, primal residual unchanged
    stop, primal, dual = check_termination(
        x, z, consensus.blocks, consensus.rhs, sigma, 1e-4, offsets
    )
    assert not stop and dual == pytest.approx(1.0)


def test_penalty_value_cases():
    models, consensus = _setup(tc.case_itd_fig1())
    oracle = solve_centralized(tc.case_itd_fig1())
    offsets = []
    start = 0
    for m in models:
        offsets.append((start, start + m.n))
        start += m.n
    xs = [oracle.x[a:b] for a, b in offsets]
    phi, cons_l1, psi = penalty_value(models, consensus, xs, zeta=1e4, xi=1e4)
    f = sum(m.f(x) for m, x in zip(models, xs))
    # feasible consensus-consistent point: Phi collapses to the raw objective
    assert phi == pytest.approx(f, rel=1e-6)
    assert cons_l1 <= 1e-7 and psi <= 1e-6

    # push one flow-limit row into violation by 0.1: Phi = f + xi * 0.1
    m0 = models[0]
    x_bad = [x.copy() for x in xs]
    base_ineq = m0.c_ineq(x_bad[0])
    pi, qi, s2 = m0.tie_lim[0]
    x_bad[0][pi] = np.sqrt(s2 + 0.1)
    x_bad[0][qi] = 0.0
    phi_b, _, psi_b = penalty_value(models, consensus, x_bad, zeta=0.0, xi=100.0)
    f_b = sum(m.f(x) for m, x in zip(models, x_bad))
    extra = psi_b - abs(m0.c_eq(x_bad[0])).sum() - abs(models[1].c_eq(x_bad[1])).sum() \
        - np.maximum(models[1].c_ineq(x_bad[1]), 0).sum()
    assert phi_b - f_b == pytest.approx(100.0 * psi_b, rel=1e-12)
    assert extra == pytest.approx(0.1, abs=1e-6)


def test_soc_trigger_cases():
    assert not soc_trigger(phi_new=1.0, phi_old=2.0, psi_act_new=1.0, tau_soc=1e-4)
    assert not soc_trigger(phi_new=2.0, phi_old=1.0, psi_act_new=0.0, tau_soc=1e-4)
    assert soc_trigger(phi_new=2.0, phi_old=1.0, psi_act_new=0.257, tau_soc=1e-4)


def test_update_iterate_branches():
    cfg = AladinConfig(rho=1e2, mu=1e3)
    state = IterateState(
        z=np.zeros(2), lam=np.zeros(1), x=np.zeros(2), kappa=[],
        iteration=3, rho=1e2, mu=1e3, sigma=np.ones(2),
    )
    x = np.array([1.0, 2.0])
    p = np.array([0.1, -0.1])
    nxt = update_iterate(state, x, p, np.array([5.0]), cfg)
    assert np.allclose(nxt.z, [1.1, 1.9])
    assert nxt.lam[0] == 5.0
    assert nxt.rho == pytest.approx(1.5e2)
    assert nxt.mu == pytest.approx(2e3)
    capped = IterateState(
        z=np.zeros(2), lam=np.zeros(1), x=np.zeros(2), kappa=[],
        iteration=3, rho=cfg.rho_max, mu=cfg.mu_max, sigma=np.ones(2),
    )
    nxt = update_iterate(capped, x, p, np.array([0.0]), cfg)
    assert nxt.rho == cfg.rho_max
    assert nxt.mu == cfg.mu_max


# ---------------------------------------------------------------------------
# local step


class _QuadModel:
    """Unconstrained quadratic region, for closed-form coordination checks."""

    def __init__(self, Q, c):
        self.Q = np.asarray(Q, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.n = len(c)
        self.lo = np.full(self.n, -np.inf)
        self.hi = np.full(self.n, np.inf)
        self.m_eq = 0
        self.m_ineq = 0
        self.conic_rows = np.array([], dtype=int)
        self.name = "quad"

    def flat_start(self):
        return np.zeros(self.n)

    def f(self, x):
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def grad(self, x):
        return self.Q @ x + self.c

    def c_eq(self, x):
        return np.zeros(0)

    def jac_eq(self, x):
        return np.zeros((0, self.n))

    def c_ineq(self, x):
        return np.zeros(0)

    def jac_ineq(self, x):
        return np.zeros((0, self.n))

    def hess(self, x, ke, ki, obj_w=1.0):
        return obj_w * self.Q


def test_local_step_quadratic_closed_form():
    Q = np.diag([2.0, 6.0])
    c = np.array([1.0, -2.0])
    model = _QuadModel(Q, c)
    z = np.array([0.3, -0.4])
    price = np.array([0.5, 0.1])
    rho, sigma = 10.0, np.array([1.0, 2.0])
    sol = local_step(model, z, price, rho, sigma, tol=1e-10)
    assert sol.status == "optimal"
    expected = np.linalg.solve(Q + rho * np.diag(sigma), rho * sigma * z - price - c)
    assert np.max(np.abs(sol.x - expected)) <= 1e-8


def test_local_step_proximal_limit():
    itd = tc.case_itd_fig1()
    models, _ = _setup(itd)
    model = models[1]
    free = local_step(model, model.flat_start(), np.zeros(model.n), 1e-2, np.ones(model.n),
                      tol=1e-10, max_iter=300)
    assert free.status == "optimal"
    pinned = local_step(model, free.x, np.zeros(model.n), 1e6, np.ones(model.n),
                        tol=1e-8, max_iter=300)
    assert pinned.status == "optimal"
    assert np.max(np.abs(pinned.x - free.x)) <= 1e-6


# ---------------------------------------------------------------------------
# coupled QP and correction


def _packet(region, x, g, J, H, active=None):
    return SensitivityPacket(
        region=region, name=f"r{region}", x=np.asarray(x, dtype=float),
        g=np.asarray(g, dtype=float), J=np.asarray(J, dtype=float),
        H=np.asarray(H, dtype=float),
        active=active or [("ineq", i) for i in range(np.asarray(J).shape[0])],
    )


def test_coupled_qp_zero_step_at_consistent_point():
    # one region, variable pair already satisfying the consensus row
    A = [np.array([[1.0, -1.0]])]
    x = np.array([0.7, 0.7])
    lam = np.array([0.0])
    g = np.array([0.3, -0.3])  # exactly A' * lambda_ls with lambda_ls = 0.3
    pk = _packet(0, x, g, np.zeros((0, 2)), np.eye(2), active=[])
    qp = solve_coupled_qp([pk], A, np.zeros(1), lam, mu=1e8)
    assert np.max(np.abs(qp.p)) <= 1e-6
    assert qp.lam[0] == pytest.approx(-0.3, abs=1e-6)


def test_coupled_qp_hand_solved_system():
    # min .5 p'p + g'p  s.t. a (x+p) = s (coupled to slack), J p = 0
    a = np.array([[1.0, -1.0]])
    J = np.array([[1.0, 0.0]])
    g = np.array([0.2, -0.1])
    x = np.array([0.5, 0.3])
    lam = np.array([0.4])
    mu = 2.0
    pk = _packet(0, x, g, J, np.eye(2))
    qp = solve_coupled_qp([pk], [a], np.zeros(1), lam, mu)
    K = np.zeros((4, 4))
    K[:2, :2] = np.eye(2)
    K[:2, 2] = a[0]
    K[2, :2] = a[0]
    K[2, 2] = -1.0 / mu
    K[:2, 3] = J[0]
    K[3, :2] = J[0]
    rhs = np.concatenate([-(g + a[0] * lam[0]), [-(a[0] @ x)], [0.0]])
    sol = np.linalg.solve(K, rhs)
    assert np.max(np.abs(qp.p - sol[:2])) <= 1e-10
    assert qp.lam[0] == pytest.approx(lam[0] + sol[2], abs=1e-10)


def test_second_order_correction_identity_when_residual_zero():
    a = np.array([[1.0, -1.0]])
    J = np.array([[1.0, 0.0]])
    pk = _packet(0, np.array([0.5, 0.3]), np.array([0.2, -0.1]), J, np.eye(2))
    qp = solve_coupled_qp([pk], [a], np.zeros(1), np.array([0.4]), 2.0)
    p_soc, lam_soc = second_order_correction(
        qp.p, qp.lam, [pk], [a], 2.0, np.zeros(1), qp=qp
    )
    assert np.allclose(p_soc, qp.p, atol=1e-12)
    assert np.allclose(lam_soc, qp.lam, atol=1e-12)


def test_second_order_correction_matches_reduced_formula():
    # two variables, H = I, A = (1 -1), J = (1 0), mu = 1, r = (0.1)
    H = np.eye(2)
    A = np.array([[1.0, -1.0]])
    J = np.array([[1.0, 0.0]])
    mu = 1.0
    r = np.array([0.1])
    pk = _packet(0, np.zeros(2), np.zeros(2), J, H)
    qp = solve_coupled_qp([pk], [A], np.zeros(1), np.zeros(1), mu)
    p_soc, lam_soc = second_order_correction(qp.p, qp.lam, [pk], [A], mu, r, qp=qp)
    M = np.linalg.inv(H + mu * A.T @ A)
    JMJ = J @ M @ J.T
    dp = -(M @ J.T @ np.linalg.inv(JMJ) @ r)
    dlam = -(mu * A @ M @ J.T @ np.linalg.inv(JMJ) @ r)
    assert np.max(np.abs(p_soc - (qp.p + dp))) <= 1e-10
    assert np.max(np.abs(lam_soc - (qp.lam + dlam))) <= 1e-10
    # defining equation of the corrected step
    assert np.max(np.abs(J @ p_soc + r)) <= 1e-10


def test_correction_pseudo_inverse_on_dependent_rows():
    # duplicated active row: J M J' singular; least-squares semantics apply
    H = np.eye(2)
    A = np.array([[1.0, -1.0]])
    J = np.array([[1.0, 0.0], [1.0, 0.0]])
    pk = _packet(0, np.zeros(2), np.zeros(2), J, H)
    qp = solve_coupled_qp([pk], [A], np.zeros(1), np.zeros(1), 1.0)
    r = np.array([0.1])  # one row pruned, one kept
    assert sum(len(k) for k in qp.kept) == 1
    p_soc, lam_soc = second_order_correction(qp.p, qp.lam, [pk], [A], 1.0, r, qp=qp)
    assert np.all(np.isfinite(p_soc)) and np.all(np.isfinite(lam_soc))


# ---------------------------------------------------------------------------
# driver behavior


def test_single_region_terminates_in_one_iteration():
    itd = merge_itd(tc.transmission3(), [])
    models, consensus = _setup(itd, relaxed=False)
    state, records, status = run(models, consensus, AladinConfig())
    assert status == "converged"
    assert len(records) == 1
    assert records[0].primal_res == 0.0
    sol = solve_centralized(itd)
    assert abs(records[0].objective - sol.objective) / sol.objective <= 1e-8


def test_fig1_first_qp_step_reduces_consensus_residual():
    models, consensus = _setup(tc.case_itd_fig1())
    cfg = AladinConfig(eps=1e-6, max_iter=3)
    state, records, status = run(models, consensus, cfg)
    assert records[1].primal_res < records[0].primal_res


def test_run_is_deterministic():
    models, consensus = _setup(tc.case_itd_fig1())
    cfg = AladinConfig(eps=1e-6, max_iter=30)
    _, rec_a, _ = run(models, consensus, cfg)
    _, rec_b, _ = run(models, consensus, cfg)
    assert len(rec_a) == len(rec_b)
    for a, b in zip(rec_a, rec_b):
        assert a.primal_res == b.primal_res
        assert a.dual_res == b.dual_res
        assert a.objective == b.objective
        assert a.phi == b.phi


def test_trace_round_trip(tmp_path):
    models, consensus = _setup(tc.case_itd_fig1())
    cfg = AladinConfig(eps=1e-6, max_iter=30)
    _, records, status = run(models, consensus, cfg)
    path = tmp_path / "trace.jsonl"
    write_trace(records, {"status": status, "iterations": len(records)}, str(path))
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == len(records) + 1
    for rec, row in zip(records, lines):
        assert row["primal_res"] == rec.primal_res
        assert row["dual_res"] == rec.dual_res
    assert lines[-1]["status"] == status


def test_privacy_boundary_of_coordinator_interfaces():
    # coordinator operations consume packets/consensus data only
    for fn in (solve_coupled_qp, second_order_correction, check_termination):
        params = set(inspect.signature(fn).parameters)
        assert not params & {"model", "models", "case", "itd", "spec", "specs"}, fn
    import itdopf.aladin as mod

    source = inspect.getsource(mod)
    for forbidden in ("NetworkCase", "ItdCase", "parse_matpower", "bus_data"):
        assert forbidden not in source


def test_hessian_deviation_is_logged():
    models, consensus = _setup(tc.case_itd_fig1())
    cfg = AladinConfig(eps=1e-6, max_iter=30)
    _, records, _ = run(models, consensus, cfg)
    assert all(rec.hess_dev >= 0.0 for rec in records)
    assert any(rec.hess_dev > 0.0 for rec in records)
