"""Primal-dual interior-point solver for smooth NLPs.

Solves   min f(x)  s.t.  c_eq(x) = 0,  c_ineq(x) <= 0,  lo <= x <= hi

with slack variables on the inequalities, log barriers on slacks and finite
box bounds, Newton steps on the perturbed KKT system (condensed to the
(x, y) block and factorized by symmetric indefinite LDL with inertia
correction), monotone barrier reduction, a fraction-to-boundary rule, and
an l1-merit backtracking line search.

Sign conventions: Lagrangian L = f + kap_eq' c_eq + kap_ineq' c_ineq with
kap_ineq >= 0.  The objective is scaled internally when its initial
gradient is large; returned multipliers are always for the unscaled
problem.  A solver call is deterministic: identical inputs produce
identical iterate sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class NlpProblem:
    """Generic NLP container matching the region-model evaluator interface."""

    def __init__(self, n, f, grad, c_eq=None, jac_eq=None, c_ineq=None,
                 jac_ineq=None, hess=None, lo=None, hi=None):
        self.n = n
        self._f = f
        self._grad = grad
        self._c_eq = c_eq
        self._jac_eq = jac_eq
        self._c_ineq = c_ineq
        self._jac_ineq = jac_ineq
        self._hess = hess
        self.lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
        self.hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)

    def f(self, x):
        return float(self._f(x))

    def grad(self, x):
        return np.asarray(self._grad(x), dtype=float)

    def c_eq(self, x):
        return np.zeros(0) if self._c_eq is None else np.asarray(self._c_eq(x), dtype=float)

    def jac_eq(self, x):
        return np.zeros((0, self.n)) if self._jac_eq is None else np.asarray(self._jac_eq(x), dtype=float)

    def c_ineq(self, x):
        return np.zeros(0) if self._c_ineq is None else np.asarray(self._c_ineq(x), dtype=float)

    def jac_ineq(self, x):
        return np.zeros((0, self.n)) if self._jac_ineq is None else np.asarray(self._jac_ineq(x), dtype=float)

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0):
        if self._hess is None:
            return np.zeros((self.n, self.n))
        return np.asarray(self._hess(x, kap_eq, kap_ineq, obj_w), dtype=float)


@dataclass
class NlpSolution:
    x: np.ndarray
    kappa_eq: np.ndarray
    kappa_ineq: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    status: str            # optimal | max_iter | infeasible_guess | numerical
    iterations: int
    kkt_residual: float
    objective: float = np.nan
    message: str = ""


def _clip_interior(x0, lo, hi):
    x = np.array(x0, dtype=float)
    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    both = has_lo & has_hi
    lo_f = np.where(has_lo, lo, 0.0)
    hi_f = np.where(has_hi, hi, 0.0)
    width = np.where(both, hi_f - lo_f, np.inf)
    push_lo = np.minimum(0.01 * np.maximum(1.0, np.abs(lo_f)), 0.25 * width)
    push_hi = np.minimum(0.01 * np.maximum(1.0, np.abs(hi_f)), 0.25 * width)
    x[has_lo] = np.maximum(x[has_lo], (lo_f + push_lo)[has_lo])
    x[has_hi] = np.minimum(x[has_hi], (hi_f - push_hi)[has_hi])
    return x


class _LdlFactor:
    """LDL' factorization of a symmetric indefinite matrix, with inertia."""

    def __init__(self, K):
        lu, d, perm = sla.ldl(K)
        self.L = lu[perm]
        self.perm = perm
        self.d = d
        self.inertia = self._count_inertia(d, np.max(np.abs(d)) if d.size else 1.0)

    @staticmethod
    def _count_inertia(d, scale):
        n = d.shape[0]
        pos = neg = zero = 0
        off_tol = 1e-300
        k = 0
        while k < n:
            if k + 1 < n and abs(d[k + 1, k]) > off_tol:
                # Bunch-Kaufman 2x2 pivots always carry one eigenvalue of
                # each sign
                pos += 1
                neg += 1
                k += 2
            else:
                v = d[k, k]
                if v > 0.0:
                    pos += 1
                elif v < 0.0:
                    neg += 1
                else:
                    zero += 1
                k += 1
        return pos, neg, zero

    def solve(self, b):
        bp = b[self.perm]
        z = sla.solve_triangular(self.L, bp, lower=True, unit_diagonal=True)
        z = self._solve_block_diag(z)
        z = sla.solve_triangular(self.L.T, z, lower=False, unit_diagonal=True)
        out = np.empty_like(b)
        out[self.perm] = z
        return out

    def _solve_block_diag(self, b):
        d = self.d
        n = d.shape[0]
        out = np.array(b, dtype=float)
        tol = 1e-300
        k = 0
        while k < n:
            if k + 1 < n and abs(d[k + 1, k]) > tol:
                blk = d[k : k + 2, k : k + 2]
                out[k : k + 2] = np.linalg.solve(blk, b[k : k + 2])
                k += 2
            else:
                out[k] = b[k] / d[k, k]
                k += 1
        return out


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, tau * np.min(-v[neg] / dv[neg])))


def solve_nlp(
    problem,
    x0,
    tol: float = 1e-8,
    max_iter: int = 100,
    bmu0: float = 0.1,
    delta0: float = 1e-8,
    delta_max: float = 1e-2,
    tau_ftb: float = 0.995,
    verbose: bool = False,
) -> NlpSolution:
    """Solve an NLP from a (clipped-interior) starting point.

    On status ``optimal`` the max-norms of stationarity, feasibility, and
    complementarity of the unscaled problem are all below ``tol``.
    ``max_iter`` exhaustion returns the best iterate found; repeated KKT
    factorization failure returns status ``numerical``.
    """
    n = problem.n
    lo, hi = problem.lo, problem.hi
    x = _clip_interior(x0, lo, hi)
    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)

    try:
        f = problem.f(x)
        g = problem.grad(x)
        cE = problem.c_eq(x)
        cI = problem.c_ineq(x)
    except FloatingPointError:
        f, g, cE, cI = np.nan, None, None, None
    if (
        f is None or not np.isfinite(f)
        or not np.all(np.isfinite(g))
        or not np.all(np.isfinite(cE))
        or not np.all(np.isfinite(cI))
    ):
        return NlpSolution(
            x=x, kappa_eq=np.zeros(0), kappa_ineq=np.zeros(0),
            z_lo=np.zeros(n), z_hi=np.zeros(n),
            status="infeasible_guess", iterations=0, kkt_residual=np.inf,
            message="non-finite evaluation at the start point",
        )

    mE, mI = len(cE), len(cI)
    gnorm = float(np.max(np.abs(g))) if n else 0.0
    sigma = min(1.0, 100.0 / gnorm) if gnorm > 100.0 else 1.0

    bmu = bmu0
    bmu_min = max(1e-16, 0.05 * sigma * tol)
    s = np.maximum(-cI, 0.1)
    y = np.zeros(mE)
    w = np.full(mI, bmu) / s
    zl = np.zeros(n)
    zh = np.zeros(n)
    zl[has_lo] = bmu / (x - lo)[has_lo]
    zh[has_hi] = bmu / (hi - x)[has_hi]
    nu = 1.0

    def barrier_terms(x_, s_):
        t = 0.0
        if mI:
            t += float(np.sum(np.log(s_)))
        if np.any(has_lo):
            t += float(np.sum(np.log((x_ - lo)[has_lo])))
        if np.any(has_hi):
            t += float(np.sum(np.log((hi - x_)[has_hi])))
        return t

    status = "max_iter"
    message = ""
    it = 0
    E0 = np.inf
    stalls = 0
    for it in range(1, max_iter + 1):
        g = sigma * problem.grad(x)
        cE = problem.c_eq(x)
        JE = problem.jac_eq(x)
        cI = problem.c_ineq(x)
        JI = problem.jac_ineq(x)

        r1 = g.copy()
        if mE:
            r1 += JE.T @ y
        if mI:
            r1 += JI.T @ w
        r1 -= zl
        r1 += zh

        feas_terms = [0.0]
        if mE:
            feas_terms.append(float(np.max(np.abs(cE))))
        if mI:
            feas_terms.append(float(np.max(np.abs(cI + s))))
        feas = max(feas_terms)
        comp_terms = [0.0]
        if mI:
            comp_terms.append(float(np.max(np.abs(s * w))))
        if np.any(has_lo):
            comp_terms.append(float(np.max(np.abs((x - lo)[has_lo] * zl[has_lo]))))
        if np.any(has_hi):
            comp_terms.append(float(np.max(np.abs((hi - x)[has_hi] * zh[has_hi]))))
        comp0 = max(comp_terms)
        stat = float(np.max(np.abs(r1))) if n else 0.0
        E0 = max(stat / sigma, feas, comp0 / sigma)
        if E0 <= tol:
            status = "optimal"
            break

        def comp_mu(bmu_):
            terms = [0.0]
            if mI:
                terms.append(float(np.max(np.abs(s * w - bmu_))))
            if np.any(has_lo):
                terms.append(float(np.max(np.abs((x - lo)[has_lo] * zl[has_lo] - bmu_))))
            if np.any(has_hi):
                terms.append(float(np.max(np.abs((hi - x)[has_hi] * zh[has_hi] - bmu_))))
            return max(terms)

        while bmu > bmu_min and max(stat, feas, comp_mu(bmu)) <= 10.0 * bmu:
            bmu = max(bmu_min, 0.2 * bmu)

        sig_x = np.zeros(n)
        sig_x[has_lo] += zl[has_lo] / (x - lo)[has_lo]
        sig_x[has_hi] += zh[has_hi] / (hi - x)[has_hi]
        sig_s = w / s if mI else np.zeros(0)

        W = problem.hess(x, y, w, obj_w=sigma)
        Hbar = W + np.diag(sig_x)
        if mI:
            Hbar = Hbar + JI.T @ (sig_s[:, None] * JI)

        rhs_x = -g
        if mE:
            rhs_x -= JE.T @ y
        if mI:
            rhs_x -= JI.T @ (bmu / s + sig_s * (cI + s))
        rhs_x[has_lo] += bmu / (x - lo)[has_lo]
        rhs_x[has_hi] -= bmu / (hi - x)[has_hi]
        rhs = np.concatenate([rhs_x, -cE])

        dim = n + mE
        delta = 0.0
        delta_c = 0.0
        fact = None
        while True:
            K = np.zeros((dim, dim))
            K[:n, :n] = Hbar + delta * np.eye(n)
            if mE:
                K[:n, n:] = JE.T
                K[n:, :n] = JE
                K[n:, n:] = -delta_c * np.eye(mE)
            try:
                fact = _LdlFactor(K)
            except Exception:
                fact = None
            ok = False
            if fact is not None:
                pos, neg, zero = fact.inertia
                ok = pos == n and neg == mE and zero == 0
            if ok:
                break
            if fact is not None and fact.inertia[2] > 0 and delta_c == 0.0:
                delta_c = 1e-8
                continue
            delta = delta0 if delta == 0.0 else delta * 10.0
            if delta > delta_max:
                break
        if fact is None or delta > delta_max:
            status = "numerical"
            message = f"KKT inertia correction failed (delta cap {delta_max:g})"
            break

        sol = fact.solve(rhs)
        sol += fact.solve(rhs - K @ sol)  # one refinement pass
        dx = sol[:n]
        dy = sol[n:]

        if mI:
            ds = -(cI + s) - JI @ dx
            dw = bmu / s - w - sig_s * ds
        else:
            ds = np.zeros(0)
            dw = np.zeros(0)
        dzl = np.zeros(n)
        dzh = np.zeros(n)
        d_lo = (x - lo)[has_lo]
        d_hi = (hi - x)[has_hi]
        dzl[has_lo] = bmu / d_lo - zl[has_lo] - (zl[has_lo] / d_lo) * dx[has_lo]
        dzh[has_hi] = bmu / d_hi - zh[has_hi] + (zh[has_hi] / d_hi) * dx[has_hi]

        alpha_p = 1.0
        if mI:
            alpha_p = min(alpha_p, _fraction_to_boundary(s, ds, tau_ftb))
        if np.any(has_lo):
            alpha_p = min(alpha_p, _fraction_to_boundary((x - lo)[has_lo], dx[has_lo], tau_ftb))
        if np.any(has_hi):
            alpha_p = min(alpha_p, _fraction_to_boundary((hi - x)[has_hi], -dx[has_hi], tau_ftb))
        alpha_d = 1.0
        if mI:
            alpha_d = min(alpha_d, _fraction_to_boundary(w, dw, tau_ftb))
        if np.any(has_lo):
            alpha_d = min(alpha_d, _fraction_to_boundary(zl[has_lo], dzl[has_lo], tau_ftb))
        if np.any(has_hi):
            alpha_d = min(alpha_d, _fraction_to_boundary(zh[has_hi], dzh[has_hi], tau_ftb))

        viol = (float(np.sum(np.abs(cE))) if mE else 0.0) + (
            float(np.sum(np.abs(cI + s))) if mI else 0.0
        )
        # penalty weight: model-decrease quotient plus the accepted multiplier
        # scale (exactness needs nu >= ||multipliers||); decay is allowed so a
        # transient bad dual step cannot poison later line searches
        mult_scale = max(
            float(np.max(np.abs(y))) if mE else 0.0,
            float(np.max(np.abs(w))) if mI else 0.0,
        )
        req = 1.02 * min(mult_scale, 1e8)
        if viol > 1e-12:
            curv = max(float(dx @ (Hbar @ dx)), 0.0)
            req = max(req, 1.1 * (float(g @ dx) + 0.5 * curv) / (0.5 * viol))
        nu = max(1.0, req, 0.5 * nu)
        D = float(g @ dx)
        if mI:
            D -= bmu * float(np.sum(ds / s))
        D -= bmu * float(np.sum(dx[has_lo] / (x - lo)[has_lo]))
        D += bmu * float(np.sum(dx[has_hi] / (hi - x)[has_hi]))
        D -= nu * viol

        phi0 = sigma * problem.f(x) - bmu * barrier_terms(x, s) + nu * viol
        noise = 1e-11 * (1.0 + abs(phi0))  # merit changes below fp noise accept
        alpha = alpha_p
        accepted = False
        for _ in range(30):
            x_t = x + alpha * dx
            s_t = s + alpha * ds
            try:
                f_t = problem.f(x_t)
                cE_t = problem.c_eq(x_t)
                cI_t = problem.c_ineq(x_t)
            except FloatingPointError:
                alpha *= 0.5
                continue
            viol_t = (float(np.sum(np.abs(cE_t))) if mE else 0.0) + (
                float(np.sum(np.abs(cI_t + s_t))) if mI else 0.0
            )
            phi_t = sigma * f_t - bmu * barrier_terms(x_t, s_t) + nu * viol_t
            if np.isfinite(phi_t) and phi_t <= phi0 + 1e-4 * alpha * min(D, 0.0) + noise:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            x_t = x + alpha * dx
            s_t = s + alpha * ds
            stalls += 1
            if stalls >= 10:
                status = "numerical"
                message = "line search stalled"
                break
        else:
            stalls = 0

        x, s = x_t, s_t
        y = y + alpha * dy
        w = w + alpha_d * dw
        zl = zl + alpha_d * dzl
        zh = zh + alpha_d * dzh
        # keep bound duals commensurate with the barrier parameter
        k_sig = 1e10
        if np.any(has_lo):
            d_lo = (x - lo)[has_lo]
            zl[has_lo] = np.clip(zl[has_lo], bmu / (k_sig * d_lo), k_sig * bmu / d_lo)
        if np.any(has_hi):
            d_hi = (hi - x)[has_hi]
            zh[has_hi] = np.clip(zh[has_hi], bmu / (k_sig * d_hi), k_sig * bmu / d_hi)

        if verbose:
            print(
                f"  ipm it {it:3d}  E0 {E0:9.2e} (st {stat/sigma:8.2e} fe {feas:8.2e} "
                f"co {comp0/sigma:8.2e})  bmu {bmu:8.2e}  alpha {alpha:6.1e} "
                f"aftb {alpha_p:6.1e} delta {delta:7.1e} nu {nu:8.2e} "
                f"|dx| {float(np.max(np.abs(dx))):8.2e} |dy| {float(np.max(np.abs(dy))) if mE else 0:8.2e}"
            )

    return NlpSolution(
        x=x,
        kappa_eq=y / sigma,
        kappa_ineq=w / sigma,
        z_lo=zl / sigma,
        z_hi=zh / sigma,
        status=status,
        iterations=it,
        kkt_residual=float(E0),
        objective=problem.f(x),
        message=message,
    )
