"""Bus injection model (polar voltages) with analytic derivatives.

Per-branch pi-model flows with series admittance g + jb = 1/(r + jx) and
total line charging bc.  Sending-end flows seen from bus i toward bus j:

    p = g*vi^2 - vi*vj*(g*cos(d) + b*sin(d))
    q = -(b + bc/2)*vi^2 - vi*vj*(g*sin(d) - b*cos(d)),   d = th_i - th_j

Receiving-end flows reuse the same form with (vi, vj, d) -> (vj, vi, -d).
All evaluators are vectorized over branches; scatter index arrays are
precomputed at build time.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ModelError
from ..partition import RegionSpec
from .base import RegionModel
from .layout import VariableLayout


def _series_admittance(r, x):
    z2 = r * r + x * x
    return r / z2, -x / z2


def _flows(vi, vj, d, g, b, b2):
    """Sending-end p, q with gradients and Hessians in (vi, vj, d).

    Returns p, q, gp, gq (B,3) and hp, hq (B,3,3).
    """
    c, s = np.cos(d), np.sin(d)
    gc_bs = g * c + b * s
    gs_bc = g * s - b * c
    p = g * vi * vi - vi * vj * gc_bs
    q = -b2 * vi * vi - vi * vj * gs_bc

    gp = np.stack([2 * g * vi - vj * gc_bs, -vi * gc_bs, vi * vj * gs_bc], axis=1)
    gq = np.stack([-2 * b2 * vi - vj * gs_bc, -vi * gs_bc, -vi * vj * gc_bs], axis=1)

    nb = len(vi)
    hp = np.zeros((nb, 3, 3))
    hp[:, 0, 0] = 2 * g
    hp[:, 0, 1] = hp[:, 1, 0] = -gc_bs
    hp[:, 0, 2] = hp[:, 2, 0] = vj * gs_bc
    hp[:, 1, 2] = hp[:, 2, 1] = vi * gs_bc
    hp[:, 2, 2] = vi * vj * gc_bs

    hq = np.zeros((nb, 3, 3))
    hq[:, 0, 0] = -2 * b2
    hq[:, 0, 1] = hq[:, 1, 0] = -gs_bc
    hq[:, 0, 2] = hq[:, 2, 0] = -vj * gc_bs
    hq[:, 1, 2] = hq[:, 2, 1] = -vi * gc_bs
    hq[:, 2, 2] = vi * vj * gs_bc
    return p, q, gp, gq, hp, hq


# maps (vi', vj', d') of each end onto the shared 4-column block
# (v_from, v_to, th_from, th_to)
_T_SEND = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, -1]])
_T_RECV = np.array([[0.0, 1, 0, 0], [1, 0, 0, 0], [0, 0, -1, 1]])


class BimModel(RegionModel):
    def __init__(self, spec: RegionSpec):
        if spec.kind != "bim":
            raise ModelError(f"region {spec.name} is not a bus-injection region")
        layout = VariableLayout(spec)
        super().__init__(spec, layout)

        nodes = spec.nodes
        pos = {node: i for i, node in enumerate(nodes)}
        core = set(spec.core_nodes)
        self.v_idx = np.array([layout.index[("v", n)] for n in nodes])
        self.th_idx = np.array([layout.index[("th", n)] for n in nodes])

        ncore = len(spec.core_nodes)
        self.ncore = ncore
        # equality rows: [P core | Q core | aux u - v^2 | slack angle]
        prow = np.full(len(nodes), -1, dtype=int)
        qrow = np.full(len(nodes), -1, dtype=int)
        for i, node in enumerate(spec.core_nodes):
            prow[pos[node]] = i
            qrow[pos[node]] = ncore + i
        self.prow, self.qrow = prow, qrow

        branches = spec.branches
        nb = len(branches)
        if any(rb.data.x == 0 for rb in branches):
            bad = next(rb for rb in branches if rb.data.x == 0)
            raise ModelError(
                f"region {spec.name}: branch {bad.key} has x = 0"
            )
        self.fi = np.array([pos[rb.from_node] for rb in branches], dtype=int)
        self.ti = np.array([pos[rb.to_node] for rb in branches], dtype=int)
        g = np.empty(nb)
        b = np.empty(nb)
        for k, rb in enumerate(branches):
            g[k], b[k] = _series_admittance(rb.data.r, rb.data.x)
        self.g, self.b = g, b
        self.b2 = b + 0.5 * np.array([rb.data.b_charge for rb in branches])
        # shared 4-column block per branch
        self.cols4 = np.stack(
            [self.v_idx[self.fi], self.v_idx[self.ti],
             self.th_idx[self.fi], self.th_idx[self.ti]], axis=1,
        )
        self.prow_f = prow[self.fi]
        self.qrow_f = qrow[self.fi]
        self.prow_t = prow[self.ti]
        self.qrow_t = qrow[self.ti]

        self.gs = np.array([spec.bus_data[n].shunt_g for n in nodes])
        self.bs = np.array([spec.bus_data[n].shunt_b for n in nodes])
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

        self.tie_bus = np.array(
            [pos[node] for node, _, _ in spec.tie_injections], dtype=int
        )
        self.ptie_idx = np.array(
            [layout.index[("ptie", key)] for _, key, _ in spec.tie_injections], dtype=int
        )
        self.qtie_idx = np.array(
            [layout.index[("qtie", key)] for _, key, _ in spec.tie_injections], dtype=int
        )

        aux_nodes = sorted({node for node, _, _ in spec.tie_injections}, key=pos.get)
        self.aux_u_idx = np.array([layout.index[("u", n)] for n in aux_nodes], dtype=int)
        self.aux_v_idx = np.array([layout.index[("v", n)] for n in aux_nodes], dtype=int)
        self.n_aux = len(aux_nodes)

        self.slack_th = layout.index[("th", spec.slack_node)]
        self.m_eq = 2 * ncore + self.n_aux + 1

        # inequality rows: branch apparent-power limits, then tie-variable limits
        lim = np.array([k for k, rb in enumerate(branches) if rb.data.s_max > 0], dtype=int)
        self.lim_br = lim
        self.lim_s2 = np.array([branches[k].data.s_max ** 2 for k in lim])
        tie_lim = [
            (layout.index[("ptie", key)], layout.index[("qtie", key)], tie.s_max ** 2)
            for _, key, tie in spec.tie_injections
            if tie.s_max > 0
        ]
        self.tie_lim = tie_lim
        self.m_ineq = len(lim) + len(tie_lim)
        self.conic_rows = np.array([], dtype=int)

    # -- equality constraints -------------------------------------------------

    def _branch_terms(self, x, need_grad=False):
        v = x[self.v_idx]
        th = x[self.th_idx]
        vi, vj = v[self.fi], v[self.ti]
        d = th[self.fi] - th[self.ti]
        send = _flows(vi, vj, d, self.g, self.b, self.b2)
        recv = _flows(vj, vi, -d, self.g, self.b, self.b2)
        if not need_grad:
            return v, send[:2], recv[:2]
        return v, send, recv

    def c_eq(self, x):
        v, (pf, qf), (pt, qt) = self._branch_terms(x)
        res = np.zeros(self.m_eq)
        for rows, vals in (
            (self.prow_f, pf), (self.prow_t, pt),
            (self.qrow_f, qf), (self.qrow_t, qt),
        ):
            m = rows >= 0
            np.add.at(res, rows[m], vals[m])
        core_mask = self.prow >= 0
        res[self.prow[core_mask]] += self.gs[core_mask] * v[core_mask] ** 2 + self.pl[core_mask]
        res[self.qrow[core_mask]] += -self.bs[core_mask] * v[core_mask] ** 2 + self.ql[core_mask]
        if len(self.gen_bus):
            np.add.at(res, self.prow[self.gen_bus], -x[self.pg_idx])
            np.add.at(res, self.qrow[self.gen_bus], -x[self.qg_idx])
        if len(self.tie_bus):
            np.add.at(res, self.prow[self.tie_bus], x[self.ptie_idx])
            np.add.at(res, self.qrow[self.tie_bus], x[self.qtie_idx])
        r0 = 2 * self.ncore
        res[r0 : r0 + self.n_aux] = x[self.aux_u_idx] - x[self.aux_v_idx] ** 2
        res[-1] = x[self.slack_th]
        return res

    def jac_eq(self, x):
        v, send, recv = self._branch_terms(x, need_grad=True)
        _, _, gp_s, gq_s, _, _ = send
        _, _, gp_r, gq_r, _, _ = recv
        J = np.zeros((self.m_eq, self.n))
        g4 = {
            "pf": gp_s @ _T_SEND, "qf": gq_s @ _T_SEND,
            "pt": gp_r @ _T_RECV, "qt": gq_r @ _T_RECV,
        }
        for rows, grads in (
            (self.prow_f, g4["pf"]), (self.prow_t, g4["pt"]),
            (self.qrow_f, g4["qf"]), (self.qrow_t, g4["qt"]),
        ):
            m = rows >= 0
            np.add.at(J, (rows[m][:, None], self.cols4[m]), grads[m])
        core_mask = self.prow >= 0
        ci = np.where(core_mask)[0]
        J[self.prow[ci], self.v_idx[ci]] += 2 * self.gs[ci] * v[ci]
        J[self.qrow[ci], self.v_idx[ci]] += -2 * self.bs[ci] * v[ci]
        if len(self.gen_bus):
            np.add.at(J, (self.prow[self.gen_bus], self.pg_idx), -1.0)
            np.add.at(J, (self.qrow[self.gen_bus], self.qg_idx), -1.0)
        if len(self.tie_bus):
            np.add.at(J, (self.prow[self.tie_bus], self.ptie_idx), 1.0)
            np.add.at(J, (self.qrow[self.tie_bus], self.qtie_idx), 1.0)
        r0 = 2 * self.ncore
        for k in range(self.n_aux):
            J[r0 + k, self.aux_u_idx[k]] = 1.0
            J[r0 + k, self.aux_v_idx[k]] = -2.0 * x[self.aux_v_idx[k]]
        J[-1, self.slack_th] = 1.0
        return J

    # -- inequality constraints -----------------------------------------------

    def c_ineq(self, x):
        vals = np.zeros(self.m_ineq)
        if len(self.lim_br):
            _, (pf, qf), _ = self._branch_terms(x)
            vals[: len(self.lim_br)] = (
                pf[self.lim_br] ** 2 + qf[self.lim_br] ** 2 - self.lim_s2
            )
        for t, (pi, qi, s2) in enumerate(self.tie_lim):
            vals[len(self.lim_br) + t] = x[pi] ** 2 + x[qi] ** 2 - s2
        return vals

    def jac_ineq(self, x):
        J = np.zeros((self.m_ineq, self.n))
        if len(self.lim_br):
            _, send, _ = self._branch_terms(x, need_grad=True)
            pf, qf, gp, gq, _, _ = send
            k = self.lim_br
            grad4 = 2 * pf[k, None] * (gp[k] @ _T_SEND) + 2 * qf[k, None] * (gq[k] @ _T_SEND)
            np.add.at(J, (np.arange(len(k))[:, None], self.cols4[k]), grad4)
        for t, (pi, qi, _) in enumerate(self.tie_lim):
            J[len(self.lim_br) + t, pi] = 2 * x[pi]
            J[len(self.lim_br) + t, qi] = 2 * x[qi]
        return J

    # -- Lagrangian Hessian ---------------------------------------------------

    def hess(self, x, kap_eq, kap_ineq, obj_w=1.0):
        W = np.zeros((self.n, self.n))
        if len(self.pg_idx):
            W[self.pg_idx, self.pg_idx] += 2 * obj_w * self.cost_a

        v, send, recv = self._branch_terms(x, need_grad=True)
        pf, qf, gp_s, gq_s, hp_s, hq_s = send
        pt, qt, gp_r, gq_r, hp_r, hq_r = recv
        h4 = {
            "pf": np.einsum("ia,bij,jc->bac", _T_SEND, hp_s, _T_SEND),
            "qf": np.einsum("ia,bij,jc->bac", _T_SEND, hq_s, _T_SEND),
            "pt": np.einsum("ia,bij,jc->bac", _T_RECV, hp_r, _T_RECV),
            "qt": np.einsum("ia,bij,jc->bac", _T_RECV, hq_r, _T_RECV),
        }

        def row_mult(rows):
            out = np.zeros(len(rows))
            m = rows >= 0
            out[m] = kap_eq[rows[m]]
            return out

        block = (
            row_mult(self.prow_f)[:, None, None] * h4["pf"]
            + row_mult(self.qrow_f)[:, None, None] * h4["qf"]
            + row_mult(self.prow_t)[:, None, None] * h4["pt"]
            + row_mult(self.qrow_t)[:, None, None] * h4["qt"]
        )

        if len(self.lim_br):
            k = self.lim_br
            w = kap_ineq[: len(k)]
            g4p = gp_s[k] @ _T_SEND
            g4q = gq_s[k] @ _T_SEND
            block[k] += 2 * w[:, None, None] * (
                np.einsum("bi,bj->bij", g4p, g4p)
                + pf[k, None, None] * h4["pf"][k]
                + np.einsum("bi,bj->bij", g4q, g4q)
                + qf[k, None, None] * h4["qf"][k]
            )

        np.add.at(
            W,
            (self.cols4[:, :, None], self.cols4[:, None, :]),
            block,
        )

        core_mask = self.prow >= 0
        ci = np.where(core_mask)[0]
        W[self.v_idx[ci], self.v_idx[ci]] += 2 * self.gs[ci] * kap_eq[self.prow[ci]]
        W[self.v_idx[ci], self.v_idx[ci]] += -2 * self.bs[ci] * kap_eq[self.qrow[ci]]
        r0 = 2 * self.ncore
        for k2 in range(self.n_aux):
            W[self.aux_v_idx[k2], self.aux_v_idx[k2]] += -2.0 * kap_eq[r0 + k2]
        for t, (pi, qi, _) in enumerate(self.tie_lim):
            w = kap_ineq[len(self.lim_br) + t]
            W[pi, pi] += 2 * w
            W[qi, qi] += 2 * w
        return W


def build_bim_model(spec: RegionSpec) -> BimModel:
    """Build the polar bus-injection evaluator set for one region."""
    return BimModel(spec)
