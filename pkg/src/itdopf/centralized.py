"""Whole-system reference solve: all regions in one NLP.

Branch-flow regions enter with their current-definition rows as equalities
(no relaxation) and the consensus rows become plain equality constraints,
so the centralized optimum is the benchmark the distributed runs are
measured against.
"""

from __future__ import annotations

import numpy as np

from .cases import ItdCase, NetworkCase
from .models import build_region_models, conic_residual
from .nlp import NlpSolution, solve_nlp
from .partition import ConsensusStructure, build_consensus, decompose


def region_offsets(models) -> list[tuple[int, int]]:
    """Half-open stacked-vector spans, one per region."""
    spans = []
    start = 0
    for m in models:
        spans.append((start, start + m.n))
        start += m.n
    return spans


def split_stacked(x, offsets):
    return [x[a:b] for a, b in offsets]


class CompositeProblem:
    """Stack of region models plus consensus equalities, as one NLP."""

    def __init__(self, models, consensus: ConsensusStructure):
        self.models = models
        self.consensus = consensus
        self.offsets = region_offsets(models)
        self.n = self.offsets[-1][1] if models else 0
        self.lo = np.concatenate([m.lo for m in models])
        self.hi = np.concatenate([m.hi for m in models])
        self.m_eq_regions = [m.m_eq for m in models]
        self._A = (
            np.hstack(consensus.blocks) if consensus.n_rows else np.zeros((0, self.n))
        )

    def flat_start(self):
        return np.concatenate([m.flat_start() for m in self.models])

    def f(self, x):
        return sum(m.f(x[a:b]) for m, (a, b) in zip(self.models, self.offsets))

    def grad(self, x):
        return np.concatenate(
            [m.grad(x[a:b]) for m, (a, b) in zip(self.models, self.offsets)]
        )

    def c_eq(self, x):
        parts = [m.c_eq(x[a:b]) for m, (a, b) in zip(self.models, self.offsets)]
        parts.append(self._A @ x - self.consensus.rhs)
        return np.concatenate(parts)

    def jac_eq(self, x):
        m_tot = sum(self.m_eq_regions) + self.consensus.n_rows
        J = np.zeros((m_tot, self.n))
        row = 0
        for m, (a, b) in zip(self.models, self.offsets):
            J[row : row + m.m_eq, a:b] = m.jac_eq(x[a:b])
            row += m.m_eq
        J[row:, :] = self._A
        return J

    def c_ineq(self, x):
        return np.concatenate(
            [m.c_ineq(x[a:b]) for m, (a, b) in zip(self.models, self.offsets)]
        )

    def jac_ineq(self, x):
        m_tot = sum(m.m_ineq for m in self.models)
        J = np.zeros((m_tot, self.n))
        row = 0
        for m, (a, b) in zip(self.models, self.offsets):
            J[row : row + m.m_ineq, a:b] = m.jac_ineq(x[a:b])
            row += m.m_ineq
        return J

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0):
        W = np.zeros((self.n, self.n))
        row_e = 0
        row_i = 0
        for m, (a, b) in zip(self.models, self.offsets):
            W[a:b, a:b] = m.hess(
                x[a:b],
                kap_eq[row_e : row_e + m.m_eq],
                kap_ineq[row_i : row_i + m.m_ineq],
                obj_w=obj_w,
            )
            row_e += m.m_eq
            row_i += m.m_ineq
        return W  # consensus rows are linear: no curvature

    def conic_residual(self, x):
        total = 0.0
        for m, (a, b) in zip(self.models, self.offsets):
            if getattr(m, "conic_branches", None) is not None:
                total += conic_residual(m, x[a:b]) ** 2
        return float(np.sqrt(total))


def _as_itd(case: ItdCase | NetworkCase) -> ItdCase:
    if isinstance(case, ItdCase):
        return case
    kind = "distribution" if case.model_hint == "radial" else "transmission"
    return ItdCase(regions=((case, kind),), interconnections=())


def solve_centralized(
    case: ItdCase | NetworkCase,
    tol: float = 1e-8,
    max_iter: int = 300,
) -> NlpSolution:
    """Solve the full AC OPF as one NLP from a flat start.

    The solution vector uses the same stacked region layout as the
    distributed algorithm, so it serves directly as the reference point for
    solution-gap and deviation metrics.
    """
    itd = _as_itd(case)
    specs = decompose(itd)
    models = build_region_models(specs, relaxed=False)
    consensus = build_consensus(specs, [m.layout for m in models])
    problem = CompositeProblem(models, consensus)
    return solve_nlp(problem, problem.flat_start(), tol=tol, max_iter=max_iter)
