"""Full-step augmented-Lagrangian distributed solver with second-order correction.

One iteration: (1) every region solves its proximally regularized local NLP
in parallel, (2) regions assemble sensitivity packets (gradient, active-set
Jacobian, positive-definite Hessian approximation), (3) the coordinator
checks the primal/dual termination test, (4) it solves one coupled
equality-constrained QP built solely from the packets, (5) if the exact
penalty worsened together with a meaningful active-constraint violation,
a correction step re-targets the linearized active constraints to their
nonlinear residual by re-solving the cached QP factorization, and (6) the
primal-dual iterate is updated with a full step.

The coordinator sees only packets, consensus blocks, multipliers, and the
slack penalty: never any grid data.  Relaxed current rows in branch-flow
regions are always treated as active, which sidesteps active-set detection
for constraints known to bind at the optimum.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import RegionSolveError
from .nlp import NlpSolution, solve_nlp
from .partition import ConsensusStructure, coupling_residual

# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class AladinConfig:
    rho: float = 1e2            # proximal penalty, grows geometrically
    mu: float = 1e3             # consensus slack penalty in the coupled QP
    eps: float = 1e-4           # termination tolerance on primal/dual residuals
    zeta: float = 1e4           # exact-penalty weight on consensus violation
    xi: float = 1e4             # exact-penalty weight on local violation
    tau_act: float = 1e-6       # active-set threshold: h_i >= -tau_act
    tau_soc: float = 1e-4       # correction trigger on active-set violation
    delta_h: float = 1e-6       # eigenvalue floor of the Hessian approximation
    rho_growth: float = 1.5
    rho_max: float = 1e6
    mu_growth: float = 2.0
    mu_max: float = 1e8
    max_iter: int = 100
    soc_enabled: bool = True
    coupling_weight: float = 10.0  # proximal scaling on coupling slots
    local_tol: float = 1e-8        # must be tighter than eps
    local_max_iter: int = 300
    parallel: bool = True
    # "mirror": regularize the full Lagrangian Hessian.  "reduced": regularize
    # only its projection onto the active-constraint null space, which is the
    # only block the coupled QP step actually sees; exact there whenever the
    # reduced curvature is already positive definite.  The reduced form keeps
    # multi-area meshed topologies from ratcheting their consensus prices.
    hessian_mode: str = "mirror"


@dataclass
class IterateState:
    z: np.ndarray
    lam: np.ndarray
    x: np.ndarray
    kappa: list            # per region (kappa_eq, kappa_ineq)
    iteration: int
    rho: float
    mu: float
    sigma: np.ndarray      # stacked proximal scaling diagonal


@dataclass
class SensitivityPacket:
    region: int
    name: str
    x: np.ndarray
    g: np.ndarray                  # objective gradient at x
    J: np.ndarray                  # Jacobian rows of the active constraints
    H: np.ndarray                  # positive-definite Hessian approximation
    active: list                   # (kind, index) per J row; kind in eq|ineq|lo|hi
    hess_dev: float = 0.0          # ||H - exact Lagrangian Hessian||_F


@dataclass
class ConvergenceRecord:
    iter: int
    primal_res: float
    dual_res: float
    objective: float
    gap: float | None
    conic_res: float
    phi: float
    soc_fired: bool
    t_local_max_ms: float
    t_coord_ms: float
    x_err: float | None = None
    hess_dev: float = 0.0
    kkt_res: float | None = None
    soc_phi_qp: float | None = None
    soc_phi_soc: float | None = None
    soc_psi_qp: float | None = None
    soc_psi_soc: float | None = None
    soc_lin_res: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# region-side operations


class _AugmentedProblem:
    """Local model plus consensus price term and proximal regularization."""

    def __init__(self, model, price, rho, sigma, z):
        self.model = model
        self.price = price      # A_l' lam, the only consensus data a region sees
        self.rho = rho
        self.sigma = sigma
        self.z = z
        self.n = model.n
        self.lo = model.lo
        self.hi = model.hi

    def f(self, x):
        d = x - self.z
        return self.model.f(x) + self.price @ x + 0.5 * self.rho * (d @ (self.sigma * d))

    def grad(self, x):
        return self.model.grad(x) + self.price + self.rho * self.sigma * (x - self.z)

    def c_eq(self, x):
        return self.model.c_eq(x)

    def jac_eq(self, x):
        return self.model.jac_eq(x)

    def c_ineq(self, x):
        return self.model.c_ineq(x)

    def jac_ineq(self, x):
        return self.model.jac_ineq(x)

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0):
        W = self.model.hess(x, kap_eq, kap_ineq, obj_w=obj_w)
        return W + obj_w * self.rho * np.diag(self.sigma)


def local_step(model, z_l, price, rho, sigma_l, tol=1e-8, max_iter=200) -> NlpSolution:
    """Solve one region's proximally regularized subproblem from z_l."""
    problem = _AugmentedProblem(model, price, rho, sigma_l, z_l)
    return solve_nlp(problem, z_l, tol=tol, max_iter=max_iter)


def detect_active_set(h, conic_rows, tau_act) -> np.ndarray:
    """Indices of active inequality rows: h_i >= -tau_act, plus all conic rows.

    Equality rows are unconditionally active and appended by the packet
    assembler; the one-sided threshold counts slightly violated rows as
    active.
    """
    h = np.asarray(h, dtype=float)
    active = set(np.flatnonzero(h >= -tau_act).tolist())
    active.update(int(i) for i in np.asarray(conic_rows, dtype=int))
    return np.array(sorted(active), dtype=int)


def regularize_hessian(H, delta_h) -> np.ndarray:
    """Mirror negative eigenvalues and floor all of them at delta_h."""
    Hs = 0.5 * (H + H.T)
    lam, V = np.linalg.eigh(Hs)
    lam = np.maximum(np.abs(lam), delta_h)
    out = (V * lam) @ V.T
    return 0.5 * (out + out.T)


def assemble_packet(model, region, x, kap_eq, kap_ineq, cfg) -> SensitivityPacket:
    """H, J, g of one region at its local solution, ready for the coordinator."""
    h = model.c_ineq(x)
    act_ineq = detect_active_set(h, model.conic_rows, cfg.tau_act)
    active: list[tuple[str, int]] = [("eq", i) for i in range(model.m_eq)]
    rows = [model.jac_eq(x)] if model.m_eq else []
    if len(act_ineq):
        rows.append(model.jac_ineq(x)[act_ineq])
        active.extend(("ineq", int(i)) for i in act_ineq)
    lo, hi = model.lo, model.hi
    for i in np.flatnonzero(np.isfinite(lo) & (lo - x >= -cfg.tau_act)):
        e = np.zeros((1, model.n))
        e[0, i] = -1.0
        rows.append(e)
        active.append(("lo", int(i)))
    for i in np.flatnonzero(np.isfinite(hi) & (x - hi >= -cfg.tau_act)):
        e = np.zeros((1, model.n))
        e[0, i] = 1.0
        rows.append(e)
        active.append(("hi", int(i)))
    J = np.vstack(rows) if rows else np.zeros((0, model.n))
    H_exact = model.hess(x, kap_eq, kap_ineq)
    if cfg.hessian_mode == "reduced":
        H = _reduced_regularization(H_exact, J, cfg.delta_h)
    else:
        H = regularize_hessian(H_exact, cfg.delta_h)
    return SensitivityPacket(
        region=region, name=model.name, x=x.copy(), g=model.grad(x), J=J, H=H,
        active=active, hess_dev=float(np.linalg.norm(H - H_exact)),
    )


def _reduced_regularization(H_exact, J, delta_h):
    """Regularize only the curvature the QP can move along: null(J).

    The step and consensus multiplier of the coupled QP depend on H solely
    through Z' H Z with Z spanning null(J); directions pinned by J get a
    benign stiff placeholder.
    """
    Z = sla.null_space(J) if J.shape[0] else np.eye(H_exact.shape[0])
    if Z.shape[1] == 0:
        return regularize_hessian(H_exact, delta_h)
    Hr = regularize_hessian(Z.T @ H_exact @ Z, delta_h)
    c = max(1.0, float(np.linalg.norm(Hr, 2)))
    n = H_exact.shape[0]
    H = Z @ Hr @ Z.T + c * (np.eye(n) - Z @ Z.T)
    return 0.5 * (H + H.T)


def active_values(model, active, x) -> np.ndarray:
    """Signed values of the listed active constraints at x."""
    vals = np.empty(len(active))
    c_eq = model.c_eq(x) if model.m_eq else None
    c_in = model.c_ineq(x) if model.m_ineq else None
    for k, (kind, i) in enumerate(active):
        if kind == "eq":
            vals[k] = c_eq[i]
        elif kind == "ineq":
            vals[k] = c_in[i]
        elif kind == "lo":
            vals[k] = model.lo[i] - x[i]
        else:
            vals[k] = x[i] - model.hi[i]
    return vals


def penalty_value(models, consensus, xs, zeta, xi):
    """Exact-penalty value Phi, the consensus l1 term, and psi(h).

    psi sums positive parts of inequality rows, bound violations, and the
    absolute values of equality residuals across all regions.
    """
    f = sum(m.f(x) for m, x in zip(models, xs))
    res, _ = coupling_residual(consensus.blocks, xs, consensus.rhs)
    cons_l1 = float(np.sum(np.abs(res)))
    psi = 0.0
    for m, x in zip(models, xs):
        if m.m_eq:
            psi += float(np.sum(np.abs(m.c_eq(x))))
        if m.m_ineq:
            psi += float(np.sum(np.maximum(m.c_ineq(x), 0.0)))
        lo, hi = m.lo, m.hi
        psi += float(np.sum(np.maximum(lo[np.isfinite(lo)] - x[np.isfinite(lo)], 0.0)))
        psi += float(np.sum(np.maximum(x[np.isfinite(hi)] - hi[np.isfinite(hi)], 0.0)))
    return f + zeta * cons_l1 + xi * psi, cons_l1, psi


def psi_of_active(models, packets, xs) -> float:
    """Violation of the active constraints: positive parts, equalities absolute."""
    total = 0.0
    for m, pk, x in zip(models, packets, xs):
        vals = active_values(m, pk.active, x)
        for (kind, _), v in zip(pk.active, vals):
            total += abs(v) if kind == "eq" else max(v, 0.0)
    return total


def soc_trigger(phi_new, phi_old, psi_act_new, tau_soc) -> bool:
    """Fire the correction when the penalty rose with intolerable violation."""
    return phi_new > phi_old and psi_act_new > tau_soc


# ---------------------------------------------------------------------------
# coordinator-side operations (packets and consensus data only)


def check_termination(x, z, blocks, rhs, sigma, eps, offsets):
    """Primal/dual residual test; returns (stop, primal_norm, dual_norm)."""
    xs = [x[a:b] for a, b in offsets]
    _, primal = coupling_residual(blocks, xs, rhs)
    dual = float(np.linalg.norm(sigma * (x - z)))
    return (primal <= eps and dual <= eps), primal, dual


def _prune_rows(J, tol=1e-6):
    """Greedy rank-revealing row selection preserving the given priority order.

    The threshold is deliberately loose: on the cone-tight manifold the
    always-active current rows of a radial region become linearly dependent
    on its balance and voltage-drop rows, and keeping near-dependent rows
    produces wild coordination multipliers.
    """
    kept = list(range(J.shape[0]))
    while kept:
        Jk = J[kept]
        R = np.linalg.qr(Jk.T, mode="r")
        diag = np.abs(np.diag(R))
        norms = np.maximum(np.linalg.norm(Jk, axis=1), 1.0)
        limit = min(len(kept), J.shape[1])
        drop = None
        for k in range(len(kept)):
            if k >= limit or diag[k] <= tol * norms[k]:
                drop = k
                break
        if drop is None:
            break
        kept.pop(drop)
    return kept


@dataclass
class CoupledQpResult:
    p: np.ndarray
    lam: np.ndarray
    kappa: np.ndarray
    kept: list                    # per region, kept (kind, index) rows of J
    J_blocks: list                # per region, the pruned Jacobian actually used
    offsets: list
    n_rows: int
    _solver: object = field(repr=False, default=None)

    def resolve(self, rhs):
        return self._solver(rhs)


def solve_coupled_qp(packets, blocks, rhs_b, lam, mu) -> CoupledQpResult:
    """Direct factorization of the coupled QP's KKT system (slack eliminated).

    Dependent active rows are pruned per region (equalities first, then
    inequalities ordered by violation) before assembly; a least-squares
    solve stands in when the KKT matrix is still numerically singular.
    """
    offsets = []
    start = 0
    for pk in packets:
        offsets.append((start, start + len(pk.x)))
        start += len(pk.x)
    N = start
    m = len(rhs_b)

    kept_rows = []
    J_blocks = []
    for pk in packets:
        order = _active_priority_order(pk)
        Jo = pk.J[order]
        kept_local = _prune_rows(Jo)
        kept_rows.append([pk.active[order[k]] for k in kept_local])
        J_blocks.append(Jo[kept_local])
    mJ = sum(Jb.shape[0] for Jb in J_blocks)

    H = sla.block_diag(*[pk.H for pk in packets]) if packets else np.zeros((0, 0))
    A = np.hstack(blocks) if m else np.zeros((0, N))
    J = np.zeros((mJ, N))
    row = 0
    for Jb, (a, b) in zip(J_blocks, offsets):
        J[row : row + Jb.shape[0], a:b] = Jb
        row += Jb.shape[0]

    dim = N + m + mJ
    K = np.zeros((dim, dim))
    K[:N, :N] = H
    K[:N, N : N + m] = A.T
    K[N : N + m, :N] = A
    K[N : N + m, N : N + m] = -np.eye(m) / mu
    K[:N, N + m :] = J.T
    K[N + m :, :N] = J

    g = np.concatenate([pk.g for pk in packets])
    x = np.concatenate([pk.x for pk in packets])
    rhs = np.concatenate([-(g + A.T @ lam), -(A @ x - rhs_b), np.zeros(mJ)])

    lu = None
    try:
        lu = sla.lu_factor(K)
    except Exception:
        lu = None

    def solver(b):
        if lu is not None:
            sol = sla.lu_solve(lu, b)
            sol += sla.lu_solve(lu, b - K @ sol)
            res = float(np.max(np.abs(K @ sol - b))) if dim else 0.0
            if res <= 1e-6 * (1.0 + float(np.max(np.abs(b)))):
                return sol
        # pseudo-inverse semantics for a singular system
        return np.linalg.lstsq(K, b, rcond=None)[0]

    sol = solver(rhs)
    return CoupledQpResult(
        p=sol[:N],
        lam=lam + sol[N : N + m],
        kappa=sol[N + m :],
        kept=kept_rows,
        J_blocks=J_blocks,
        offsets=offsets,
        n_rows=m,
        _solver=solver,
    )


def _active_priority_order(pk: SensitivityPacket) -> list[int]:
    """Equalities first (kept positionally), then inequality-type rows by violation."""
    eq = [k for k, (kind, _) in enumerate(pk.active) if kind == "eq"]
    rest = [k for k, (kind, _) in enumerate(pk.active) if kind != "eq"]
    return eq + rest


def second_order_correction(p_qp, lam_qp, packets, blocks, mu, r, qp: CoupledQpResult | None = None):
    """Re-target the linearized active constraints to their nonlinear residual.

    Solves the coupled QP's KKT system once more with right-hand side
    (0, 0, -r), reusing the cached factorization when available; the
    least-squares fallback covers rank-deficient active Jacobians.
    """
    if qp is None:
        lam_zero = np.zeros(blocks[0].shape[0] if blocks else 0)
        qp = solve_coupled_qp(packets, blocks, np.zeros(len(lam_zero)), lam_zero, mu)
    N = len(p_qp)
    m = len(lam_qp)
    rhs = np.concatenate([np.zeros(N + m), -np.asarray(r, dtype=float)])
    sol = qp.resolve(rhs)
    return p_qp + sol[:N], lam_qp + sol[N : N + m]


def update_iterate(state: IterateState, x, p, lam_new, cfg: AladinConfig) -> IterateState:
    """Full-step primal-dual update followed by the penalty growth schedule."""
    return IterateState(
        z=x + p,
        lam=np.asarray(lam_new, dtype=float),
        x=state.x,
        kappa=state.kappa,
        iteration=state.iteration + 1,
        rho=min(state.rho * cfg.rho_growth, cfg.rho_max),
        mu=min(state.mu * cfg.mu_growth, cfg.mu_max),
        sigma=state.sigma,
    )


# ---------------------------------------------------------------------------
# driver


def build_sigma(models, weight) -> np.ndarray:
    """Proximal scaling: unit weights, coupling slots emphasized."""
    parts = []
    for m in models:
        s = np.ones(m.n)
        s[m.layout.coupling_indices()] = weight
        parts.append(s)
    return np.concatenate(parts)


def flat_start(models) -> np.ndarray:
    return np.concatenate([m.flat_start() for m in models])


def _conic_norm(models, xs) -> float:
    total = 0.0
    for m, x in zip(models, xs):
        if getattr(m, "conic_branches", None) is not None:
            pf, qf, u, l = m.conic_branches
            res = (x[pf] ** 2 + x[qf] ** 2) / x[u] - x[l]
            total += float(res @ res)
    return float(np.sqrt(total))


def _kkt_residual(models, packets, xs, kappas, duals, blocks, lam) -> float:
    """Stationarity of the original problem at the local solutions."""
    parts = []
    for m, x, (kap_eq, kap_ineq), (z_lo, z_hi), A in zip(models, xs, kappas, duals, blocks):
        r = m.grad(x) + A.T @ lam + z_hi - z_lo
        if m.m_eq:
            r += m.jac_eq(x).T @ kap_eq
        if m.m_ineq:
            r += m.jac_ineq(x).T @ kap_ineq
        parts.append(r)
    return float(np.linalg.norm(np.concatenate(parts)))


def run(models, consensus: ConsensusStructure, config: AladinConfig | None = None,
        oracle: NlpSolution | None = None):
    """Drive the distributed solve to convergence or iteration exhaustion.

    Returns ``(state, records, status)`` with one ConvergenceRecord per
    iteration and status ``converged`` or ``max_iter``.  When an oracle
    solution is supplied, per-iteration deviation and solution gap are
    recorded against it.
    """
    cfg = config or AladinConfig()
    offsets = []
    start = 0
    for m in models:
        offsets.append((start, start + m.n))
        start += m.n

    sigma = build_sigma(models, cfg.coupling_weight)
    z = flat_start(models)
    lam = np.zeros(consensus.n_rows)
    records: list[ConvergenceRecord] = []

    f_star = oracle.objective if oracle is not None else None
    x_star = oracle.x if oracle is not None else None

    if consensus.n_rows == 0:
        # no coupling: the decomposition is trivial and one exact local solve
        # per region is the whole algorithm
        t0 = time.perf_counter()
        xs = []
        for m in models:
            sol = solve_nlp(m, m.flat_start(), tol=cfg.local_tol, max_iter=cfg.local_max_iter)
            if sol.status != "optimal":
                raise RegionSolveError(m.name, 1, f"status {sol.status}")
            xs.append(sol.x)
        x = np.concatenate(xs)
        obj = sum(m.f(xv) for m, xv in zip(models, xs))
        rec = ConvergenceRecord(
            iter=1, primal_res=0.0, dual_res=0.0, objective=obj,
            gap=None if f_star is None else (f_star - obj) / f_star,
            conic_res=_conic_norm(models, xs),
            phi=obj, soc_fired=False,
            t_local_max_ms=(time.perf_counter() - t0) * 1e3, t_coord_ms=0.0,
            x_err=None if x_star is None else float(np.linalg.norm(x - x_star)),
        )
        state = IterateState(z=x, lam=lam, x=x, kappa=[], iteration=1,
                             rho=cfg.rho, mu=cfg.mu, sigma=sigma)
        return state, [rec], "converged"

    state = IterateState(z=z, lam=lam, x=z.copy(), kappa=[], iteration=0,
                         rho=cfg.rho, mu=cfg.mu, sigma=sigma)
    zs = [z[a:b] for a, b in offsets]
    phi_prev, _, _ = penalty_value(models, consensus, zs, cfg.zeta, cfg.xi)
    status = "max_iter"

    for it in range(1, cfg.max_iter + 1):
        def region_task(idx):
            t0 = time.perf_counter()
            m = models[idx]
            a, b = offsets[idx]
            price = consensus.blocks[idx].T @ state.lam
            sol = local_step(m, state.z[a:b], price, state.rho, sigma[a:b],
                             tol=cfg.local_tol, max_iter=cfg.local_max_iter)
            if sol.status != "optimal":
                raise RegionSolveError(m.name, it, f"local solve status {sol.status}")
            pk = assemble_packet(m, idx, sol.x, sol.kappa_eq, sol.kappa_ineq, cfg)
            return sol, pk, (time.perf_counter() - t0) * 1e3

        if cfg.parallel and len(models) > 1:
            with ThreadPoolExecutor(max_workers=len(models)) as pool:
                results = list(pool.map(region_task, range(len(models))))
        else:
            results = [region_task(i) for i in range(len(models))]

        sols = [r[0] for r in results]
        packets = [r[1] for r in results]
        t_local_max = max(r[2] for r in results)
        t0_coord = time.perf_counter()

        x = np.concatenate([s.x for s in sols])
        xs = [s.x for s in sols]
        kappas = [(s.kappa_eq, s.kappa_ineq) for s in sols]
        state.x = x
        state.kappa = kappas

        stop, primal, dual = check_termination(
            x, state.z, consensus.blocks, consensus.rhs, sigma, cfg.eps, offsets
        )
        obj = sum(m.f(xv) for m, xv in zip(models, xs))
        hess_dev = max(pk.hess_dev for pk in packets)

        if stop:
            duals = [(s.z_lo, s.z_hi) for s in sols]
            kkt = _kkt_residual(models, packets, xs, kappas, duals, consensus.blocks, state.lam)
            phi_x, _, _ = penalty_value(models, consensus, xs, cfg.zeta, cfg.xi)
            records.append(ConvergenceRecord(
                iter=it, primal_res=primal, dual_res=dual, objective=obj,
                gap=None if f_star is None else (f_star - obj) / f_star,
                conic_res=_conic_norm(models, xs), phi=phi_x, soc_fired=False,
                t_local_max_ms=t_local_max,
                t_coord_ms=(time.perf_counter() - t0_coord) * 1e3,
                x_err=None if x_star is None else float(np.linalg.norm(x - x_star)),
                hess_dev=hess_dev, kkt_res=kkt,
            ))
            status = "converged"
            state.iteration = it
            break

        qp = solve_coupled_qp(packets, consensus.blocks, consensus.rhs, state.lam, state.mu)
        z_qp = x + qp.p
        zqs = [z_qp[a:b] for a, b in offsets]
        phi_qp, _, _ = penalty_value(models, consensus, zqs, cfg.zeta, cfg.xi)

        kept_packets = [
            SensitivityPacket(pk.region, pk.name, pk.x, pk.g, pk.J, pk.H, kept)
            for pk, kept in zip(packets, qp.kept)
        ]
        psi_qp = psi_of_active(models, kept_packets, zqs)

        fired = False
        soc_diag = {}
        accepted_p, accepted_lam = qp.p, qp.lam
        phi_acc = phi_qp
        if cfg.soc_enabled and soc_trigger(phi_qp, phi_prev, psi_qp, cfg.tau_soc):
            r = np.concatenate([
                active_values(m, kept, zq)
                for m, kept, zq in zip(models, qp.kept, zqs)
            ])
            try:
                p_soc, lam_soc = second_order_correction(
                    qp.p, qp.lam, packets, consensus.blocks, state.mu, r, qp=qp
                )
            except Exception:
                p_soc = None
            if p_soc is not None:
                z_soc = x + p_soc
                zss = [z_soc[a:b] for a, b in offsets]
                phi_soc, _, _ = penalty_value(models, consensus, zss, cfg.zeta, cfg.xi)
                psi_soc = psi_of_active(models, kept_packets, zss)
                lin = []
                row = 0
                for Jk, (a, b) in zip(qp.J_blocks, offsets):
                    k = Jk.shape[0]
                    lin.append(Jk @ p_soc[a:b] + r[row : row + k])
                    row += k
                lin_res = float(np.max(np.abs(np.concatenate(lin)))) if row else 0.0
                fired = True
                accepted_p, accepted_lam = p_soc, lam_soc
                phi_acc = phi_soc
                soc_diag = dict(
                    soc_phi_qp=phi_qp, soc_phi_soc=phi_soc,
                    soc_psi_qp=psi_qp, soc_psi_soc=psi_soc, soc_lin_res=lin_res,
                )

        records.append(ConvergenceRecord(
            iter=it, primal_res=primal, dual_res=dual, objective=obj,
            gap=None if f_star is None else (f_star - obj) / f_star,
            conic_res=_conic_norm(models, xs), phi=phi_acc, soc_fired=fired,
            t_local_max_ms=t_local_max,
            t_coord_ms=(time.perf_counter() - t0_coord) * 1e3,
            x_err=None if x_star is None else float(np.linalg.norm(x - x_star)),
            hess_dev=hess_dev, **soc_diag,
        ))

        phi_prev = phi_acc
        state = update_iterate(state, x, accepted_p, accepted_lam, cfg)
        state.x = x
        state.kappa = kappas

    return state, records, status


def write_trace(records, final: dict, path: str) -> None:
    """JSON-lines trace: one record per iteration, then a status line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
        fh.write(json.dumps(final) + "\n")
