"""Finite-difference validation of the analytic model derivatives."""

from __future__ import annotations

import numpy as np

from .base import RegionModel


def fd_gradient(fun, x, step=1e-6):
    """Central-difference gradient with per-component scaled steps."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def fd_jacobian(fun, x, step=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.zeros((len(f0), len(x)))
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)
    return J


def _rel_err(analytic, numeric) -> float:
    num = float(np.max(np.abs(analytic - numeric))) if np.size(analytic) else 0.0
    den = 1.0 + (float(np.max(np.abs(numeric))) if np.size(numeric) else 0.0)
    return num / den


def sample_interior_point(model: RegionModel, rng: np.random.Generator) -> np.ndarray:
    """A random point strictly inside the box, near the flat start."""
    x = model.flat_start() + rng.uniform(-0.15, 0.15, model.n)
    lo, hi = model.lo, model.hi
    lo_eff = np.where(np.isfinite(lo), lo + 0.02, -np.inf)
    hi_eff = np.where(np.isfinite(hi), hi - 0.02, np.inf)
    narrow = lo_eff > hi_eff
    x = np.clip(x, lo_eff, hi_eff)
    x[narrow] = 0.5 * (lo[narrow] + hi[narrow])
    return x


def check_model_derivatives(
    model: RegionModel,
    seed: int = 1,
    n_points: int = 10,
) -> dict[str, float]:
    """Compare analytic gradient/Jacobians/Hessian against central differences.

    Returns the max relative error per derivative over ``n_points`` random
    interior points; multipliers for the Hessian check are drawn randomly.
    """
    rng = np.random.default_rng(seed)
    errs = {"grad": 0.0, "jac_eq": 0.0, "jac_ineq": 0.0, "hess": 0.0}
    for _ in range(n_points):
        x = sample_interior_point(model, rng)
        errs["grad"] = max(errs["grad"], _rel_err(model.grad(x), fd_gradient(model.f, x)))
        if model.m_eq:
            errs["jac_eq"] = max(
                errs["jac_eq"], _rel_err(model.jac_eq(x), fd_jacobian(model.c_eq, x))
            )
        if model.m_ineq:
            errs["jac_ineq"] = max(
                errs["jac_ineq"], _rel_err(model.jac_ineq(x), fd_jacobian(model.c_ineq, x))
            )
        kap_eq = rng.uniform(-1.0, 1.0, model.m_eq)
        kap_ineq = rng.uniform(0.0, 1.0, model.m_ineq)

        def grad_lagrangian(z):
            g = model.grad(z)
            if model.m_eq:
                g = g + model.jac_eq(z).T @ kap_eq
            if model.m_ineq:
                g = g + model.jac_ineq(z).T @ kap_ineq
            return g

        H = model.hess(x, kap_eq, kap_ineq)
        H_fd = fd_jacobian(grad_lagrangian, x, step=1e-6)
        errs["hess"] = max(errs["hess"], _rel_err(H, 0.5 * (H_fd + H_fd.T)))
    return errs
