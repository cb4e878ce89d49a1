"""Branch flow model for radial regions, with optional conic relaxation.

State per branch (i,j): sending-end flows p, q and squared current l; per
bus: squared voltage magnitude u.  Nodal balance and the voltage-drop
equation are linear in this parametrization; the only nonlinearity is the
current-definition row p^2 + q^2 = u_i * l, kept either as an equality or
relaxed to the cone p^2 + q^2 - u_i*l <= 0 (written polynomially, valid
since u stays positive through its bounds).
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ModelError
from ..partition import RegionSpec
from .base import RegionModel
from .layout import VariableLayout


class BfmModel(RegionModel):
    def __init__(self, spec: RegionSpec, relaxed: bool = True):
        if spec.kind != "bfm":
            raise ModelError(f"region {spec.name} is not a branch-flow region")
        nodes = spec.nodes
        n_all = len(nodes)
        adj_count = len(spec.branches)
        if adj_count != n_all - 1 or not _connected(spec):
            raise ModelError(
                f"region {spec.name}: branch set is not radial over core+copy buses"
            )
        for node in spec.core_nodes:
            bus = spec.bus_data[node]
            if bus.shunt_g != 0 or bus.shunt_b != 0:
                raise ModelError(
                    f"region {spec.name}: bus {node[2]} has a shunt; "
                    "shunts are not supported in the branch flow model"
                )
        layout = VariableLayout(spec)
        super().__init__(spec, layout)
        self.relaxed = relaxed

        pos = {node: i for i, node in enumerate(nodes)}
        self.u_idx = np.array([layout.index[("u", n)] for n in nodes])
        ncore = len(spec.core_nodes)
        self.ncore = ncore
        prow = np.full(n_all, -1, dtype=int)
        for i, node in enumerate(spec.core_nodes):
            prow[pos[node]] = i
        self.prow = prow

        nb = len(spec.branches)
        self.nb = nb
        self.fi = np.array([pos[rb.from_node] for rb in spec.branches], dtype=int)
        self.ti = np.array([pos[rb.to_node] for rb in spec.branches], dtype=int)
        self.r = np.array([rb.data.r for rb in spec.branches])
        self.xr = np.array([rb.data.x for rb in spec.branches])
        self.pf_idx = np.array([layout.index[("pf", rb.key)] for rb in spec.branches], dtype=int)
        self.qf_idx = np.array([layout.index[("qf", rb.key)] for rb in spec.branches], dtype=int)
        self.l_idx = np.array([layout.index[("l", rb.key)] for rb in spec.branches], dtype=int)

        self.pl = np.array([spec.bus_data[n].p_load for n in nodes])
        self.ql = np.array([spec.bus_data[n].q_load for n in nodes])
        self.gen_bus = np.array([pos[node] for node, _ in spec.generators], dtype=int)
        self.pg_idx = np.array(
            [layout.index[("pg", i)] for i in range(len(spec.generators))], dtype=int
        )
        self.qg_idx = np.array(
            [layout.index[("qg", i)] for i in range(len(spec.generators))], dtype=int
        )
        self.cost_a = np.array([gen.cost.a for _, gen in spec.generators])
        self.cost_b = np.array([gen.cost.b for _, gen in spec.generators])
        self.cost_c = np.array([gen.cost.c for _, gen in spec.generators])
        self.tie_bus = np.array([pos[node] for node, _, _ in spec.tie_injections], dtype=int)
        self.ptie_idx = np.array(
            [layout.index[("ptie", key)] for _, key, _ in spec.tie_injections], dtype=int
        )
        self.qtie_idx = np.array(
            [layout.index[("qtie", key)] for _, key, _ in spec.tie_injections], dtype=int
        )

        # linear equality rows: [P core | Q core | voltage drop per branch]
        self.m_lin = 2 * ncore + nb
        self.m_eq = self.m_lin + (0 if relaxed else nb)
        self.m_ineq = nb if relaxed else 0
        self.conic_rows = np.arange(nb) if relaxed else np.array([], dtype=int)
        # (pf, qf, u_from, l) slot quadruple of every branch current row
        self.conic_branches = (
            self.pf_idx, self.qf_idx, self.u_idx[self.fi], self.l_idx
        )
        self._jac_lin = self._build_linear_jacobian()

    def _build_linear_jacobian(self) -> np.ndarray:
        J = np.zeros((self.m_lin, self.n))
        ncore = self.ncore
        for k in range(self.nb):
            pi, pj = self.prow[self.fi[k]], self.prow[self.ti[k]]
            if pi >= 0:  # sending bus: flow leaves
                J[pi, self.pf_idx[k]] += 1.0
                J[ncore + pi, self.qf_idx[k]] += 1.0
            if pj >= 0:  # receiving bus: flow minus line loss arrives
                J[pj, self.pf_idx[k]] += -1.0
                J[pj, self.l_idx[k]] += self.r[k]
                J[ncore + pj, self.qf_idx[k]] += -1.0
                J[ncore + pj, self.l_idx[k]] += self.xr[k]
            row = 2 * ncore + k
            J[row, self.u_idx[self.fi[k]]] = 1.0
            J[row, self.u_idx[self.ti[k]]] = -1.0
            J[row, self.pf_idx[k]] = -2.0 * self.r[k]
            J[row, self.qf_idx[k]] = -2.0 * self.xr[k]
            J[row, self.l_idx[k]] = self.r[k] ** 2 + self.xr[k] ** 2
        for gi in range(len(self.gen_bus)):
            pi = self.prow[self.gen_bus[gi]]
            J[pi, self.pg_idx[gi]] += -1.0
            J[ncore + pi, self.qg_idx[gi]] += -1.0
        for t in range(len(self.tie_bus)):
            pi = self.prow[self.tie_bus[t]]
            J[pi, self.ptie_idx[t]] += 1.0
            J[ncore + pi, self.qtie_idx[t]] += 1.0
        return J

    def _lin_residual(self, x) -> np.ndarray:
        res = self._jac_lin @ x
        core = self.prow >= 0
        res[self.prow[core]] += self.pl[core]
        res[self.ncore + self.prow[core]] += self.ql[core]
        return res

    def _current_rows(self, x) -> np.ndarray:
        return x[self.pf_idx] ** 2 + x[self.qf_idx] ** 2 - x[self.u_idx[self.fi]] * x[self.l_idx]

    def _current_jac(self, x) -> np.ndarray:
        J = np.zeros((self.nb, self.n))
        rows = np.arange(self.nb)
        J[rows, self.pf_idx] = 2 * x[self.pf_idx]
        J[rows, self.qf_idx] = 2 * x[self.qf_idx]
        J[rows, self.u_idx[self.fi]] = -x[self.l_idx]
        J[rows, self.l_idx] = -x[self.u_idx[self.fi]]
        return J

    def c_eq(self, x):
        res = self._lin_residual(x)
        if not self.relaxed:
            res = np.concatenate([res, self._current_rows(x)])
        return res

    def jac_eq(self, x):
        if self.relaxed:
            return self._jac_lin.copy()
        return np.vstack([self._jac_lin, self._current_jac(x)])

    def c_ineq(self, x):
        if not self.relaxed:
            return np.zeros(0)
        return self._current_rows(x)

    def jac_ineq(self, x):
        if not self.relaxed:
            return np.zeros((0, self.n))
        return self._current_jac(x)

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0):
        W = np.zeros((self.n, self.n))
        if len(self.pg_idx):
            W[self.pg_idx, self.pg_idx] += 2 * obj_w * self.cost_a
        kap = kap_ineq if self.relaxed else kap_eq[self.m_lin :]
        W[self.pf_idx, self.pf_idx] += 2 * kap
        W[self.qf_idx, self.qf_idx] += 2 * kap
        uf = self.u_idx[self.fi]
        np.add.at(W, (uf, self.l_idx), -kap)
        np.add.at(W, (self.l_idx, uf), -kap)
        return W


def _connected(spec: RegionSpec) -> bool:
    nodes = spec.nodes
    if not nodes:
        return False
    adj: dict = {n: [] for n in nodes}
    for rb in spec.branches:
        adj[rb.from_node].append(rb.to_node)
        adj[rb.to_node].append(rb.from_node)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def build_bfm_model(spec: RegionSpec, relaxed: bool = True) -> BfmModel:
    """Build the branch-flow evaluator set for one radial region."""
    return BfmModel(spec, relaxed=relaxed)
