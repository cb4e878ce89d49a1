"""Common region-model interface shared by the BIM and BFM evaluators."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class RegionModel:
    """Objective/constraint evaluators with analytic first and second derivatives.

    Conventions: equalities ``c_eq(x) = 0``, inequalities ``c_ineq(x) <= 0``,
    box bounds ``lo <= x <= hi`` handled natively by the NLP solver.  The
    Lagrangian Hessian is ``obj_w * hess f + sum kap_eq_i hess c_eq_i +
    sum kap_ineq_i hess c_ineq_i``.  ``conic_rows`` indexes the relaxed
    current rows inside ``c_ineq`` (empty for BIM regions).
    """

    def __init__(self, spec, layout):
        self.spec = spec
        self.layout = layout
        self.name = spec.name
        self.conic_rows = np.array([], dtype=int)
        self.m_eq = 0
        self.m_ineq = 0

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def lo(self) -> np.ndarray:
        return self.layout.lo

    @property
    def hi(self) -> np.ndarray:
        return self.layout.hi

    def flat_start(self) -> np.ndarray:
        return self.layout.flat_start.copy()

    # quadratic generation cost over core generators
    def f(self, x) -> float:
        pg = x[self.pg_idx]
        return float(np.sum(self.cost_a * pg * pg + self.cost_b * pg + self.cost_c))

    def grad(self, x) -> np.ndarray:
        g = np.zeros(self.n)
        if len(self.pg_idx):
            g[self.pg_idx] = 2 * self.cost_a * x[self.pg_idx] + self.cost_b
        return g

    def c_eq(self, x) -> np.ndarray:
        raise NotImplementedError

    def jac_eq(self, x) -> np.ndarray:
        raise NotImplementedError

    def c_ineq(self, x) -> np.ndarray:
        raise NotImplementedError

    def jac_ineq(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0) -> np.ndarray:
        raise NotImplementedError


class EvalResult(NamedTuple):
    f: float
    grad: np.ndarray
    h: np.ndarray      # stacked [c_eq; c_ineq]
    jac: np.ndarray
    hess: np.ndarray


def eval_all(model: RegionModel, x: np.ndarray, kappa: np.ndarray) -> EvalResult:
    """Evaluate objective, stacked constraints, and the Lagrangian Hessian.

    ``kappa`` stacks equality multipliers first, then inequality multipliers.
    Raises on non-finite output, which signals evaluation at an invalid point.
    """
    kap_eq = np.asarray(kappa[: model.m_eq])
    kap_ineq = np.asarray(kappa[model.m_eq :])
    out = EvalResult(
        f=model.f(x),
        grad=model.grad(x),
        h=np.concatenate([model.c_eq(x), model.c_ineq(x)]),
        jac=np.vstack([model.jac_eq(x), model.jac_ineq(x)]),
        hess=model.hess(x, kap_eq, kap_ineq),
    )
    if not (
        np.isfinite(out.f)
        and np.all(np.isfinite(out.h))
        and np.all(np.isfinite(out.hess))
    ):
        raise FloatingPointError(f"region {model.name}: non-finite evaluation")
    if not np.allclose(out.hess, out.hess.T, atol=1e-12):
        raise FloatingPointError(f"region {model.name}: Hessian not symmetric")
    return out


def conic_residual(model: RegionModel, x: np.ndarray) -> float:
    """2-norm of (p^2 + q^2)/u - l over the region's relaxed current rows."""
    rows = getattr(model, "conic_branches", None)
    if rows is None:
        raise ValueError(f"region {model.name} has no conic rows")
    pf, qf, u, l = rows
    uv = x[u]
    if np.any(uv <= 0):
        raise FloatingPointError(f"region {model.name}: u <= 0 in conic residual")
    res = (x[pf] ** 2 + x[qf] ** 2) / uv - x[l]
    return float(np.linalg.norm(res))
