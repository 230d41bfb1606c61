"""Assembly of one planning iteration's strongly convex inner program.

Given a feasible anchor plan, the four builders (orthogonal / non-orthogonal
access, flight model 1 / 2) produce a ConvexSubproblem whose objective is the
sum of objective-type surrogates plus proximal quadratics, whose inequalities
are the budget surrogate, the slack couplings, the pipeline prefixes, bounds
and the smoothed speed/acceleration cones, and whose equalities are the bit
totals, the endpoint/boundary pins and (model 2) the kinematics.

The solver works in scaled variables: bits in units of B*dt, positions in
units of the flight geometry, slacks in their natural energy units, and the
objective normalized by its anchor magnitude.  The scaling is applied while
assembling blocks, so the interior-point core sees a well-conditioned
program and its tolerances are meaningful across scenarios; callers only
ever touch physical quantities.

Constraint values and Jacobians at the anchor come out exact (the surrogate
module evaluates in cancellation-free difference form), so a feasible anchor
is always feasible for the subproblem it generates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ipsolver as ip
from .energy import FrameBitAlloc, Trajectory
from .ipsolver import KktSolution, MaxIterations, NumericalBreakdown  # re-export
from .scenario import Access, FlightModel, Scenario
from .surrogate import (Anchor, ComputeModel, DownlinkOmaModel, FlyModel2Surrogate,
                        NomaDownlinkModel, NomaObjectiveModel, NomaUplinkCouplingModel,
                        PlanVariables, UplinkOmaModel)

TAU_MIN = 1e-3  # m/s; keeps the model-2 propulsion bound away from its singularity
ANCHOR_FEAS_TOL = 1e-7  # scaled units

__all__ = [
    "AnchorInfeasible", "ConvexSubproblem", "KktSolution", "MaxIterations",
    "NumericalBreakdown", "PlanLayout", "Pins", "TAU_MIN",
    "build_oma_m1", "build_noma_m1", "build_oma_m2", "build_noma_m2", "build",
]


class AnchorInfeasible(Exception):
    """The anchor violates a constraint of the program it should seed."""


def uplink_cols(n):
    return np.arange(0, n - 2)


def compute_cols(n):
    return np.arange(1, n - 1)


def downlink_cols(n):
    return np.arange(2, n)


class PlanLayout:
    """Mapping between PlanVariables and the packed free-variable vector.

    Bit matrices are K x N with only the pipeline windows free; positions are
    free for rows 1..N-1 (endpoints pinned); model 2 adds velocities (rows
    1..N-1 free, boundary rows pinned), accelerations and speed slacks.
    """

    def __init__(self, s: Scenario, template: PlanVariables):
        self.s = s
        self.k = s.n_users
        self.n = s.grid.frames
        self.w = self.n - 2
        self.noma = s.access is Access.NON_ORTHOGONAL
        self.m2 = s.flight is FlightModel.MODEL2
        self.template = template.copy()

        k, n, w = self.k, self.n, self.w
        sizes = [("lu", k * w), ("lc", k * w), ("ld", k * w), ("pos", 2 * (n - 1))]
        if self.noma:
            sizes += [("alpha", k * w), ("beta", k * w)]
        if self.m2:
            sizes += [("vel", 2 * (n - 1)), ("acc", 2 * n), ("tau", n)]
        self.off = {}
        at = 0
        for name, size in sizes:
            self.off[name] = at
            at += size
        self.n_free = at

        # full slot count, windows and endpoints included (layout bookkeeping)
        self.total_slots = 3 * k * n + 2 * (n + 1)
        if self.noma:
            self.total_slots += 2 * k * n
        if self.m2:
            self.total_slots += 2 * (n + 1) + 2 * n + n

        bit_scale = s.radio.bandwidth * s.grid.dt
        pos_scale = max(s.uav.altitude, float(np.linalg.norm(s.uav.end - s.uav.start)))
        self.scales = {
            "lu": bit_scale, "lc": bit_scale, "ld": bit_scale, "pos": pos_scale,
            "alpha": s.radio.noise_psd * s.radio.bandwidth * s.grid.dt,
            "beta": 1.0, "vel": s.uav.v_max, "acc": s.uav.a_max, "tau": s.uav.v_max,
        }
        self.x_scale = np.empty(self.n_free)
        for name, size in sizes:
            self.x_scale[self.off[name]:self.off[name] + size] = self.scales[name]
        self.pos_scale = pos_scale
        self.bit_scale = bit_scale

    # -- index helpers (vectorized; -1 marks a pinned slot) ------------------

    def idx_bits(self, field, ks, ws):
        return self.off[field] + np.asarray(ks) * self.w + np.asarray(ws)

    def idx_pos(self, rows, axis):
        rows = np.asarray(rows)
        idx = self.off["pos"] + 2 * (rows - 1) + axis
        return np.where((rows >= 1) & (rows <= self.n - 1), idx, -1)

    def idx_vel(self, rows, axis):
        rows = np.asarray(rows)
        idx = self.off["vel"] + 2 * (rows - 1) + axis
        return np.where((rows >= 1) & (rows <= self.n - 1), idx, -1)

    def idx_acc(self, rows, axis):
        return self.off["acc"] + 2 * np.asarray(rows) + axis

    def idx_tau(self, rows):
        return self.off["tau"] + np.asarray(rows)

    # -- pack / unpack --------------------------------------------------------

    def pack(self, plan: PlanVariables) -> np.ndarray:
        k, n, w = self.k, self.n, self.w
        x = np.empty(self.n_free)
        x[self.off["lu"]:self.off["lu"] + k * w] = plan.bits.uplink[:, uplink_cols(n)].ravel()
        x[self.off["lc"]:self.off["lc"] + k * w] = plan.bits.compute[:, compute_cols(n)].ravel()
        x[self.off["ld"]:self.off["ld"] + k * w] = plan.bits.downlink[:, downlink_cols(n)].ravel()
        x[self.off["pos"]:self.off["pos"] + 2 * (n - 1)] = plan.traj.positions[1:n].ravel()
        if self.noma:
            x[self.off["alpha"]:self.off["alpha"] + k * w] = \
                plan.alpha[:, uplink_cols(n)].ravel()
            x[self.off["beta"]:self.off["beta"] + k * w] = \
                plan.beta[:, downlink_cols(n)].ravel()
        if self.m2:
            x[self.off["vel"]:self.off["vel"] + 2 * (n - 1)] = \
                plan.traj.velocities[1:n].ravel()
            x[self.off["acc"]:self.off["acc"] + 2 * n] = plan.traj.accelerations.ravel()
            x[self.off["tau"]:self.off["tau"] + n] = plan.tau_v
        return x

    def pack_scaled(self, plan: PlanVariables) -> np.ndarray:
        return self.pack(plan) / self.x_scale

    def unpack(self, x: np.ndarray) -> PlanVariables:
        """Physical plan from a packed physical vector; pinned slots come from the template."""
        k, n, w = self.k, self.n, self.w
        plan = self.template.copy()
        plan.bits.uplink[:, uplink_cols(n)] = \
            x[self.off["lu"]:self.off["lu"] + k * w].reshape(k, w)
        plan.bits.compute[:, compute_cols(n)] = \
            x[self.off["lc"]:self.off["lc"] + k * w].reshape(k, w)
        plan.bits.downlink[:, downlink_cols(n)] = \
            x[self.off["ld"]:self.off["ld"] + k * w].reshape(k, w)
        plan.traj.positions[1:n] = \
            x[self.off["pos"]:self.off["pos"] + 2 * (n - 1)].reshape(n - 1, 2)
        if self.noma:
            plan.alpha[:, uplink_cols(n)] = \
                x[self.off["alpha"]:self.off["alpha"] + k * w].reshape(k, w)
            plan.beta[:, downlink_cols(n)] = \
                x[self.off["beta"]:self.off["beta"] + k * w].reshape(k, w)
        if self.m2:
            plan.traj.velocities[1:n] = \
                x[self.off["vel"]:self.off["vel"] + 2 * (n - 1)].reshape(n - 1, 2)
            plan.traj.accelerations[:] = \
                x[self.off["acc"]:self.off["acc"] + 2 * n].reshape(n, 2)
            plan.tau_v[:] = x[self.off["tau"]:self.off["tau"] + n]
        return plan

    def decode_scaled(self, x_scaled: np.ndarray) -> PlanVariables:
        return self.unpack(x_scaled * self.x_scale)

    def prox_vector(self, prox) -> np.ndarray:
        """Physical proximal weight per packed slot, by variable kind."""
        k, n, w = self.k, self.n, self.w
        vec = np.empty(self.n_free)
        table = {"lu": prox.uplink_bits, "lc": prox.other_bits, "ld": prox.other_bits,
                 "pos": prox.pos, "alpha": prox.alpha, "beta": prox.beta,
                 "vel": prox.vel, "acc": prox.acc, "tau": prox.tau}
        sizes = {"lu": k * w, "lc": k * w, "ld": k * w, "pos": 2 * (n - 1),
                 "alpha": k * w, "beta": k * w, "vel": 2 * (n - 1), "acc": 2 * n, "tau": n}
        for name, start in self.off.items():
            vec[start:start + sizes[name]] = table[name]
        return vec


def _scatter(rows, cols, vals):
    """Drop entries whose column is pinned (index -1)."""
    rows = np.asarray(rows).ravel()
    cols = np.asarray(cols).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    keep = cols >= 0
    return rows[keep], cols[keep], vals[keep]


class _ScaledObjective:
    """Sum of per-(user, frame) objective surrogates plus proximal quadratics.

    Handles both access schemes: the model attribute is a batched
    UplinkOmaModel over (L, p) or a batched NomaObjectiveModel over
    (alpha, p).  Emits gradients and Hessians in scaled space, normalized by
    the anchor objective magnitude.
    """

    def __init__(self, layout: PlanLayout, model, var_idx, pos_rows, prox_vec,
                 x_anchor, obj_scale):
        self.layout = layout
        self.model = model
        self.var_idx = var_idx  # packed index of the L (or alpha) variable per instance
        self.pos_rows = pos_rows
        self.ix = layout.idx_pos(pos_rows, 0)
        self.iy = layout.idx_pos(pos_rows, 1)
        self.prox = prox_vec
        self.x_anchor = x_anchor
        self.obj_scale = obj_scale
        self.noma = isinstance(model, NomaObjectiveModel)

    def _fields(self, x):
        plan = self.layout.unpack(x)
        pos = plan.traj.positions[self.pos_rows]
        main = x[self.var_idx]
        return main, pos

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        main, pos = self._fields(x)
        val = float(np.sum(self.model.value(main, pos)))
        val += 0.5 * float(self.prox @ (x - self.x_anchor) ** 2)
        return val / self.obj_scale

    def grad(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        main, pos = self._fields(x)
        d_main, d_pos = self.model.grad(main, pos)
        g = self.prox * (x - self.x_anchor)
        np.add.at(g, self.var_idx, d_main)
        keep = self.ix >= 0
        np.add.at(g, self.ix[keep], d_pos[keep, 0])
        np.add.at(g, self.iy[keep], d_pos[keep, 1])
        return g * self.layout.x_scale / self.obj_scale

    def hess_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        main, pos = self._fields(x)
        d_mm, d_pp = self.model.hess(main, pos)
        rows = [np.arange(self.layout.n_free), self.var_idx]
        vals = [self.prox.copy(), np.broadcast_to(d_mm, self.var_idx.shape).copy()]
        keep = self.ix >= 0
        rows += [self.ix[keep], self.iy[keep]]
        d_pp_b = np.broadcast_to(d_pp, self.var_idx.shape)
        vals += [d_pp_b[keep], d_pp_b[keep]]
        r = np.concatenate(rows)
        v = np.concatenate(vals)
        scale = self.layout.x_scale[r] ** 2 / self.obj_scale
        return r, r.copy(), v * scale


class _BudgetBlock:
    """Single inequality: surrogate cloudlet + flying energy must fit the budget."""

    size = 1

    def __init__(self, layout: PlanLayout, anchor: Anchor, row_scale: float):
        self.layout = layout
        s = layout.s
        self.s = s
        self.row_scale = row_scale
        k, n, w = layout.k, layout.n, layout.w
        plan = anchor.plan

        ks = np.repeat(np.arange(k), w)
        ws = np.tile(np.arange(w), k)
        self.pair_ks, self.pair_ws = ks, ws

        # computing energy surrogate over every (user, compute frame) pair
        anchor_l = plan.bits.compute[:, compute_cols(n)].T  # (W, K)
        self.comp = ComputeModel(s, ks, np.tile(anchor_l, (k, 1)))
        self.lc_cols = compute_cols(n)

        if layout.noma:
            self.down = None
        else:
            self.down = DownlinkOmaModel(
                s, s.user_positions[ks],
                plan.bits.downlink[ks, ws + 2],
                plan.traj.positions[ws + 2])
        self.i_ld = layout.idx_bits("ld", ks, ws)
        self.i_dx = layout.idx_pos(ws + 2, 0)
        self.i_dy = layout.idx_pos(ws + 2, 1)

        if layout.m2:
            self.fly = FlyModel2Surrogate(s.uav.kappa1, s.uav.kappa2, s.uav.gravity)
            rows = np.arange(n)
            self.i_vx = layout.idx_vel(rows, 0)
            self.i_vy = layout.idx_vel(rows, 1)
            self.i_ax = layout.idx_acc(rows, 0)
            self.i_ay = layout.idx_acc(rows, 1)
            self.i_tau = layout.idx_tau(rows)
        else:
            self.kappa_dt2 = s.uav.kappa / s.grid.dt**2

    def _lc_matrix(self, plan):
        """(B, K) compute vectors per (user, frame) pair."""
        lmat = plan.bits.compute[:, self.lc_cols].T  # (W, K)
        return np.tile(lmat, (self.layout.k, 1))

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        plan = self.layout.unpack(x)
        total = float(np.sum(self.comp.value(self._lc_matrix(plan))))
        if self.down is not None:
            total += float(np.sum(self.down.value(
                plan.bits.downlink[self.pair_ks, self.pair_ws + 2],
                plan.traj.positions[self.pair_ws + 2])))
        else:
            total += float(np.sum(plan.beta[:, downlink_cols(self.layout.n)]))
        if self.layout.m2:
            nn = self.layout.n
            total += float(np.sum(self.fly.value(
                plan.traj.velocities[:nn], plan.traj.accelerations[:nn], plan.tau_v)))
        else:
            diff = np.diff(plan.traj.positions, axis=0)
            total += self.kappa_dt2 * float(np.sum(diff * diff))
        return np.array([(total - self.s.uav.energy_budget) / self.row_scale])

    def _grad_triplets(self, x):
        layout = self.layout
        plan = layout.unpack(x)
        cols, vals = [], []

        g_comp = self.comp.grad(self._lc_matrix(plan))  # (B, K)
        b = len(self.pair_ks)
        kk = layout.k
        grad_cols = layout.idx_bits("lc", np.tile(np.arange(kk), b),
                                    np.repeat(self.pair_ws, kk))
        cols.append(grad_cols)
        vals.append(g_comp.ravel())

        if self.down is not None:
            d_bits, d_pos = self.down.grad(
                plan.bits.downlink[self.pair_ks, self.pair_ws + 2],
                plan.traj.positions[self.pair_ws + 2])
            cols += [self.i_ld, self.i_dx, self.i_dy]
            vals += [d_bits, d_pos[:, 0], d_pos[:, 1]]
        else:
            ks = np.repeat(np.arange(layout.k), layout.w)
            ws = np.tile(np.arange(layout.w), layout.k)
            cols.append(layout.idx_bits("beta", ks, ws))
            vals.append(np.ones(layout.k * layout.w))

        if layout.m2:
            nn = layout.n
            d_v, d_a, d_tau = self.fly.grad(plan.traj.velocities[:nn],
                                            plan.traj.accelerations[:nn], plan.tau_v)
            cols += [self.i_vx, self.i_vy, self.i_ax, self.i_ay, self.i_tau]
            vals += [d_v[:, 0], d_v[:, 1], d_a[:, 0], d_a[:, 1], d_tau]
        else:
            pos = plan.traj.positions
            diff = np.diff(pos, axis=0)  # (N, 2)
            g = 2.0 * self.kappa_dt2 * (diff[:-1] - diff[1:])  # rows 1..N-1
            rows_free = np.arange(1, layout.n)
            cols += [layout.idx_pos(rows_free, 0), layout.idx_pos(rows_free, 1)]
            vals += [g[:, 0], g[:, 1]]
        return np.concatenate(cols), np.concatenate(vals)

    def jac_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        cols, vals = self._grad_triplets(x)
        rows = np.zeros(len(cols), dtype=int)
        rows, cols, vals = _scatter(rows, cols, vals)
        return rows, cols, vals * self.layout.x_scale[cols] / self.row_scale

    def hess_coo(self, x_scaled, w):
        layout = self.layout
        x = x_scaled * layout.x_scale
        plan = layout.unpack(x)
        weight = float(w[0]) / self.row_scale
        rows, cols, vals = [], [], []

        h_comp = self.comp.hess(self._lc_matrix(plan))  # (B, K, K)
        b = len(self.pair_ks)
        kk = layout.k
        idx = layout.idx_bits("lc", np.tile(np.arange(kk), b),
                              np.repeat(self.pair_ws, kk)).reshape(b, kk)
        rows.append(np.repeat(idx, kk, axis=1).ravel())
        cols.append(np.tile(idx, (1, kk)).ravel())
        vals.append(h_comp.ravel())

        if self.down is not None:
            h_down = self.down.hess(
                plan.bits.downlink[self.pair_ks, self.pair_ws + 2],
                plan.traj.positions[self.pair_ws + 2])  # (B, 3, 3)
            idx3 = np.stack([self.i_ld, self.i_dx, self.i_dy], axis=1)  # (B, 3)
            rows.append(np.repeat(idx3, 3, axis=1).ravel())
            cols.append(np.tile(idx3, (1, 3)).ravel())
            vals.append(h_down.ravel())

        if layout.m2:
            nn = layout.n
            h_fly = self.fly.hess(plan.traj.velocities[:nn],
                                  plan.traj.accelerations[:nn], plan.tau_v)  # (N, 5, 5)
            idx5 = np.stack([self.i_vx, self.i_vy, self.i_ax, self.i_ay, self.i_tau],
                            axis=1)
            rows.append(np.repeat(idx5, 5, axis=1).ravel())
            cols.append(np.tile(idx5, (1, 5)).ravel())
            vals.append(h_fly.ravel())
        else:
            # constant tridiagonal curvature of kappa |p_{n+1} - p_n|^2 / dt^2
            nfree = layout.n - 1
            for axis in (0, 1):
                i_free = layout.idx_pos(np.arange(1, layout.n), axis)
                rows.append(i_free)
                cols.append(i_free)
                vals.append(np.full(nfree, 4.0 * self.kappa_dt2))
                rows.append(i_free[:-1])
                cols.append(i_free[1:])
                vals.append(np.full(nfree - 1, -2.0 * self.kappa_dt2))
                rows.append(i_free[1:])
                cols.append(i_free[:-1])
                vals.append(np.full(nfree - 1, -2.0 * self.kappa_dt2))

        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        keep = (r >= 0) & (c >= 0)
        r, c, v = r[keep], c[keep], v[keep]
        return r, c, v * weight * layout.x_scale[r] * layout.x_scale[c]


class _CouplingUpBlock:
    """Non-orthogonal uplink couplings: surrogate of h_{k,n} minus alpha_{k,n} <= 0."""

    def __init__(self, layout: PlanLayout, anchor: Anchor, row_scale: float):
        self.layout = layout
        k, n, w = layout.k, layout.n, layout.w
        self.size = k * w
        ks = np.repeat(np.arange(k), w)
        ws = np.tile(np.arange(w), k)
        self.ks, self.ws = ks, ws
        plan = anchor.plan
        alpha_cols = plan.alpha[:, uplink_cols(n)].T  # (W, K)
        self.model = NomaUplinkCouplingModel(layout.s, ks,
                                             plan.bits.uplink[ks, ws],
                                             np.tile(alpha_cols, (k, 1)))
        self.i_lu = layout.idx_bits("lu", ks, ws)
        self.i_own = layout.idx_bits("alpha", ks, ws)
        # every alpha of the frame enters h through the interference sum
        self.i_alpha = layout.idx_bits(
            "alpha", np.tile(np.arange(k), self.size), np.repeat(ws, k)).reshape(self.size, k)
        self.row_scale = row_scale

    def _fields(self, x):
        plan = self.layout.unpack(x)
        bits = plan.bits.uplink[self.ks, self.ws]
        alpha = plan.alpha[:, uplink_cols(self.layout.n)].T  # (W, K)
        return bits, np.tile(alpha, (self.layout.k, 1)), plan

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        bits, alpha, plan = self._fields(x)
        own = plan.alpha[self.ks, self.ws]
        return (self.model.value(bits, alpha) - own) / self.row_scale

    def jac_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        bits, alpha, _ = self._fields(x)
        d_bits, d_alpha = self.model.grad(bits, alpha)
        m = self.size
        rows = [np.arange(m), np.arange(m)]
        cols = [self.i_lu, self.i_own]
        vals = [d_bits, -np.ones(m)]
        rows.append(np.repeat(np.arange(m), self.layout.k))
        cols.append(self.i_alpha.ravel())
        vals.append(d_alpha.ravel())
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        return r, c, v * self.layout.x_scale[c] / self.row_scale

    def hess_coo(self, x_scaled, w):
        x = x_scaled * self.layout.x_scale
        bits, alpha, _ = self._fields(x)
        h = self.model.hess(bits, alpha)  # (B, 1+K, 1+K)
        idx = np.concatenate([self.i_lu[:, None], self.i_alpha], axis=1)  # (B, 1+K)
        d = idx.shape[1]
        r = np.repeat(idx, d, axis=1).ravel()
        c = np.tile(idx, (1, d)).ravel()
        v = (h * (w / self.row_scale)[:, None, None]).ravel()
        return r, c, v * self.layout.x_scale[r] * self.layout.x_scale[c]


class _CouplingDownBlock:
    """Non-orthogonal downlink couplings: surrogate of E_hat minus beta <= 0."""

    def __init__(self, layout: PlanLayout, anchor: Anchor, row_scale: float):
        self.layout = layout
        k, n, w = layout.k, layout.n, layout.w
        self.size = k * w
        ks = np.repeat(np.arange(k), w)
        ws = np.tile(np.arange(w), k)
        self.ks, self.ws = ks, ws
        plan = anchor.plan
        beta_cols = plan.beta[:, downlink_cols(n)].T  # (W, K)
        self.model = NomaDownlinkModel(layout.s, ks, layout.s.user_positions[ks],
                                       plan.bits.downlink[ks, ws + 2],
                                       plan.traj.positions[ws + 2],
                                       np.tile(beta_cols, (k, 1)))
        self.i_ld = layout.idx_bits("ld", ks, ws)
        self.i_x = layout.idx_pos(ws + 2, 0)
        self.i_y = layout.idx_pos(ws + 2, 1)
        self.i_own = layout.idx_bits("beta", ks, ws)
        self.i_beta = layout.idx_bits(
            "beta", np.tile(np.arange(k), self.size), np.repeat(ws, k)).reshape(self.size, k)
        self.row_scale = row_scale

    def _fields(self, x):
        plan = self.layout.unpack(x)
        bits = plan.bits.downlink[self.ks, self.ws + 2]
        pos = plan.traj.positions[self.ws + 2]
        beta = plan.beta[:, downlink_cols(self.layout.n)].T
        return bits, pos, np.tile(beta, (self.layout.k, 1)), plan

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        bits, pos, beta, plan = self._fields(x)
        own = plan.beta[self.ks, self.ws + 2]
        return (self.model.value(bits, pos, beta) - own) / self.row_scale

    def jac_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        bits, pos, beta, _ = self._fields(x)
        d_bits, d_pos, d_beta = self.model.grad(bits, pos, beta)
        m = self.size
        rows = [np.arange(m)] * 4
        cols = [self.i_ld, self.i_x, self.i_y, self.i_own]
        vals = [d_bits, d_pos[:, 0], d_pos[:, 1], -np.ones(m)]
        rows.append(np.repeat(np.arange(m), self.layout.k))
        cols.append(self.i_beta.ravel())
        vals.append(d_beta.ravel())
        r = np.concatenate([np.asarray(q) for q in rows])
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        return r, c, v * self.layout.x_scale[c] / self.row_scale

    def hess_coo(self, x_scaled, w):
        x = x_scaled * self.layout.x_scale
        bits, pos, beta, _ = self._fields(x)
        h = self.model.hess(bits, pos, beta)  # (B, 3+K, 3+K)
        idx = np.concatenate([self.i_ld[:, None], self.i_x[:, None], self.i_y[:, None],
                              self.i_beta], axis=1)
        d = idx.shape[1]
        r = np.repeat(idx, d, axis=1).ravel()
        c = np.tile(idx, (1, d)).ravel()
        v = (h * (w / self.row_scale)[:, None, None]).ravel()
        return r, c, v * self.layout.x_scale[r] * self.layout.x_scale[c]


class _SpeedM1Block:
    """|p_{n+1} - p_n|^2 <= (v_max dt)^2 for every frame, endpoints pinned."""

    def __init__(self, layout: PlanLayout, row_scale: float):
        self.layout = layout
        self.size = layout.n
        self.bound2 = (layout.s.uav.v_max * layout.s.grid.dt) ** 2
        rows = np.arange(layout.n)
        self.i_lo = (layout.idx_pos(rows, 0), layout.idx_pos(rows, 1))
        self.i_hi = (layout.idx_pos(rows + 1, 0), layout.idx_pos(rows + 1, 1))
        self.row_scale = row_scale

    def value(self, x_scaled):
        pos = self.layout.unpack(x_scaled * self.layout.x_scale).traj.positions
        diff = np.diff(pos, axis=0)
        return (np.sum(diff * diff, axis=1) - self.bound2) / self.row_scale

    def jac_coo(self, x_scaled):
        pos = self.layout.unpack(x_scaled * self.layout.x_scale).traj.positions
        diff = np.diff(pos, axis=0)
        m = self.size
        rows = np.concatenate([np.arange(m)] * 4)
        cols = np.concatenate([self.i_hi[0], self.i_hi[1], self.i_lo[0], self.i_lo[1]])
        vals = np.concatenate([2 * diff[:, 0], 2 * diff[:, 1],
                               -2 * diff[:, 0], -2 * diff[:, 1]])
        rows, cols, vals = _scatter(rows, cols, vals)
        return rows, cols, vals * self.layout.x_scale[cols] / self.row_scale

    def hess_coo(self, x_scaled, w):
        ws = w / self.row_scale
        rows, cols, vals = [], [], []
        for axis in (0, 1):
            lo, hi = self.i_lo[axis], self.i_hi[axis]
            rows += [lo, hi, lo, hi]
            cols += [lo, hi, hi, lo]
            vals += [2 * ws, 2 * ws, -2 * ws, -2 * ws]
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        keep = (r >= 0) & (c >= 0)
        r, c, v = r[keep], c[keep], v[keep]
        return r, c, v * self.layout.x_scale[r] * self.layout.x_scale[c]


class _NormBallBlock:
    """x_i^2 + x_j^2 <= bound^2 over explicit index pairs (model-2 speed/accel)."""

    def __init__(self, layout: PlanLayout, idx_x, idx_y, bound, row_scale):
        self.layout = layout
        self.ix = np.asarray(idx_x)
        self.iy = np.asarray(idx_y)
        self.size = len(self.ix)
        self.bound2 = bound**2
        self.row_scale = row_scale

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        return (x[self.ix] ** 2 + x[self.iy] ** 2 - self.bound2) / self.row_scale

    def jac_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        m = self.size
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([self.ix, self.iy])
        vals = np.concatenate([2 * x[self.ix], 2 * x[self.iy]])
        return rows, cols, vals * self.layout.x_scale[cols] / self.row_scale

    def hess_coo(self, x_scaled, w):
        ws = w / self.row_scale
        r = np.concatenate([self.ix, self.iy])
        v = np.concatenate([2 * ws, 2 * ws]) * self.layout.x_scale[r] ** 2
        return r, r.copy(), v


class _TauConeBlock:
    """tau_n^2 <= linearized |v_n|^2: couples the speed slack to the velocity."""

    def __init__(self, layout: PlanLayout, anchor: Anchor, row_scale):
        self.layout = layout
        self.size = layout.n
        rows = np.arange(layout.n)
        self.i_tau = layout.idx_tau(rows)
        self.i_vx = layout.idx_vel(rows, 0)
        self.i_vy = layout.idx_vel(rows, 1)
        self.v_anchor = anchor.plan.traj.velocities[:layout.n].copy()
        self.row_scale = row_scale

    def value(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        plan = self.layout.unpack(x)
        v = plan.traj.velocities[:self.layout.n]
        flb = np.sum(self.v_anchor**2, axis=1) \
            + 2.0 * np.sum(self.v_anchor * (v - self.v_anchor), axis=1)
        return (plan.tau_v**2 - flb) / self.row_scale

    def jac_coo(self, x_scaled):
        x = x_scaled * self.layout.x_scale
        plan = self.layout.unpack(x)
        m = self.size
        rows = np.concatenate([np.arange(m)] * 3)
        cols = np.concatenate([self.i_tau, self.i_vx, self.i_vy])
        vals = np.concatenate([2 * plan.tau_v, -2 * self.v_anchor[:, 0],
                               -2 * self.v_anchor[:, 1]])
        rows, cols, vals = _scatter(rows, cols, vals)
        return rows, cols, vals * self.layout.x_scale[cols] / self.row_scale

    def hess_coo(self, x_scaled, w):
        v = 2.0 * w / self.row_scale * self.layout.x_scale[self.i_tau] ** 2
        return self.i_tau, self.i_tau.copy(), v


@dataclass
class Pins:
    """Optional extra equalities pinning whole variable groups to targets."""

    bits: FrameBitAlloc | None = None
    trajectory: Trajectory | None = None
    tau_v: np.ndarray | None = None


@dataclass
class ConvexSubproblem:
    """One iteration's inner convex program plus its variable bookkeeping."""

    layout: PlanLayout
    anchor: Anchor
    program: ip.Program
    blocks: dict
    objective_scale: float
    x0_scaled: np.ndarray
    pins: "Pins"

    @property
    def n_ineq(self) -> int:
        return self.program.n_ineq

    def interior_start(self) -> np.ndarray:
        """A strictly feasible scaled start derived from the (feasible) anchor.

        The anchor may sit exactly on constraint faces (equal-split bits make
        every pipeline prefix tight; speed slacks start at the speed).  Bits
        are blended a hair toward a strictly pipeline-interior schedule,
        model-2 speed slacks are pulled just inside their cones, and the
        interference slacks are lifted above their couplings.
        """
        layout = self.layout
        s = layout.s
        plan = self.anchor.plan.copy()
        eps = 1e-3

        if self.pins.bits is None:
            k, n, w = layout.k, layout.n, layout.w
            i_k = np.array([u.input_bits for u in s.users])
            o_k = np.array([u.output_ratio for u in s.users])
            front = 2.0 * np.arange(w, 0, -1) / (w * (w + 1))
            back = front[::-1]
            equal = np.full(w, 1.0 / w)
            plan.bits.uplink[:, uplink_cols(n)] = \
                (1 - eps) * plan.bits.uplink[:, uplink_cols(n)] + eps * i_k[:, None] * front
            plan.bits.compute[:, compute_cols(n)] = \
                (1 - eps) * plan.bits.compute[:, compute_cols(n)] + eps * i_k[:, None] * equal
            plan.bits.downlink[:, downlink_cols(n)] = \
                (1 - eps) * plan.bits.downlink[:, downlink_cols(n)] \
                + eps * (o_k * i_k)[:, None] * back

        if layout.m2 and self.pins.tau_v is None:
            speeds = np.linalg.norm(plan.traj.velocities[:layout.n], axis=1)
            plan.tau_v = np.minimum(plan.tau_v, (1 - 1e-3) * speeds)
            plan.tau_v = np.maximum(plan.tau_v, TAU_MIN * (1 + 1e-6))

        x = layout.pack_scaled(plan)
        if layout.noma:
            # lift the interference slacks strictly above their couplings;
            # the couplings grow with the other users' slacks, so iterate
            q = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt
            for _ in range(6):
                plan2 = layout.decode_scaled(x)
                up_rows = self.blocks["coupling_up"].value(x) * q  # h_bar - alpha
                need = plan2.alpha[:, uplink_cols(layout.n)].ravel() + up_rows
                plan2.alpha[:, uplink_cols(layout.n)] = np.maximum(
                    plan2.alpha[:, uplink_cols(layout.n)].ravel(),
                    1.02 * np.maximum(need, 0.0) + 1e-3 * q).reshape(layout.k, layout.w)
                dn_rows = self.blocks["coupling_down"].value(x)
                need = plan2.beta[:, downlink_cols(layout.n)].ravel() + dn_rows
                plan2.beta[:, downlink_cols(layout.n)] = np.maximum(
                    plan2.beta[:, downlink_cols(layout.n)].ravel(),
                    1.02 * np.maximum(need, 0.0) + 1e-9).reshape(layout.k, layout.w)
                x_new = layout.pack_scaled(plan2)
                if np.abs(x_new - x).max() <= 1e-14:
                    x = x_new
                    break
                x = x_new

        worst = max((float(np.max(blk.value(x), initial=-np.inf))
                     for blk in self.program.ineq_blocks), default=-np.inf)
        if worst >= -1e-13:
            raise AnchorInfeasible(
                f"could not construct a strictly interior start (margin {worst:.3e}); "
                "the constraint set has no usable interior around the anchor")
        return x

    def solve(self, tol: float = 1e-7, max_newton_iters: int = 400,
              t0: float | None = None, t_factor: float = 30.0,
              ) -> tuple[PlanVariables, KktSolution]:
        """Solve to KKT tolerance (scaled units); returns the plan and the raw solution."""
        sol = ip.solve_program(self.program, self.interior_start(), tol=tol,
                               max_iters=max_newton_iters, t0=t0, t_factor=t_factor)
        return self.layout.decode_scaled(sol.x), sol

    def anchor_gap(self, plan: PlanVariables) -> float:
        """Scaled inf-norm distance between a plan and the anchor plan."""
        return float(np.abs(self.layout.pack_scaled(plan) - self.x0_scaled).max())


def _bit_equalities(layout: PlanLayout):
    """Totals: window sums of uplink/compute/downlink bits per user."""
    s = layout.s
    k, w = layout.k, layout.w
    i_k = np.array([u.input_bits for u in s.users])
    o_k = np.array([u.output_ratio for u in s.users])
    rows, cols, vals, rhs, scale = [], [], [], [], []
    r = 0
    for field, target in (("lu", i_k), ("lc", i_k), ("ld", o_k * i_k)):
        for kk in range(k):
            idx = layout.idx_bits(field, np.full(w, kk), np.arange(w))
            rows.append(np.full(w, r))
            cols.append(idx)
            vals.append(np.ones(w))
            rhs.append(target[kk])
            scale.append(max(i_k[kk], 1.0))
            r += 1
    return rows, cols, vals, rhs, scale, r


def _pipeline_inequalities(layout: PlanLayout):
    """Prefix causality: cumulative compute <= uplink, downlink <= outputs.

    The full-window prefix (the last one) coincides with the bit-total
    equalities and would be identically tight at every feasible point, so
    only the proper prefixes become inequality rows.
    """
    k, w = layout.k, layout.w
    s = layout.s
    i_k = np.array([u.input_bits for u in s.users])
    o_k = np.array([u.output_ratio for u in s.users])
    rows, cols, vals = [], [], []
    scales = []
    r = 0
    for kk in range(k):
        sc = max(i_k[kk], 1.0)
        for n0 in range(w - 1):
            pre = np.arange(n0 + 1)
            idx_lc = layout.idx_bits("lc", np.full(n0 + 1, kk), pre)
            idx_lu = layout.idx_bits("lu", np.full(n0 + 1, kk), pre)
            rows.append(np.full(2 * (n0 + 1), r))
            cols.append(np.concatenate([idx_lc, idx_lu]))
            vals.append(np.concatenate([np.ones(n0 + 1), -np.ones(n0 + 1)]))
            scales.append(sc)
            r += 1
        for n0 in range(w - 1):
            pre = np.arange(n0 + 1)
            idx_ld = layout.idx_bits("ld", np.full(n0 + 1, kk), pre)
            idx_lc = layout.idx_bits("lc", np.full(n0 + 1, kk), pre)
            rows.append(np.full(2 * (n0 + 1), r))
            cols.append(np.concatenate([idx_ld, idx_lc]))
            vals.append(np.concatenate([np.ones(n0 + 1), -np.full(n0 + 1, o_k[kk])]))
            scales.append(max(o_k[kk] * i_k[kk], 1.0))
            r += 1
    return rows, cols, vals, scales, r


def _lower_bound_block(layout: PlanLayout, fields, lower=0.0):
    """lb - x <= 0 for all slots of the given variable groups, in scaled space."""
    sizes = {"lu": layout.k * layout.w, "lc": layout.k * layout.w,
             "ld": layout.k * layout.w, "alpha": layout.k * layout.w,
             "beta": layout.k * layout.w, "tau": layout.n}
    idx = np.concatenate([np.arange(layout.off[f], layout.off[f] + sizes[f])
                          for f in fields])
    m = len(idx)
    g = sp.coo_matrix((-np.ones(m), (np.arange(m), idx)),
                      shape=(m, layout.n_free)).tocsr()
    h = -np.full(m, lower) / layout.x_scale[idx]
    return ip.AffineBlock(g, h)


def build(s: Scenario, anchor: Anchor, pins: Pins | None = None) -> ConvexSubproblem:
    """Assemble the inner program for the scenario's access scheme and flight model."""
    pins = pins or Pins()
    layout = PlanLayout(s, _template_plan(s, anchor.plan))
    x_anchor = layout.pack(anchor.plan)
    x0_scaled = x_anchor / layout.x_scale
    noma = layout.noma

    obj_scale = _objective_anchor_scale(s, layout, anchor)
    prox_vec = layout.prox_vector(anchor.prox)

    k, n, w = layout.k, layout.n, layout.w
    ks = np.repeat(np.arange(k), w)
    ws = np.tile(np.arange(w), k)
    if noma:
        alpha_cols = anchor.plan.alpha[:, uplink_cols(n)]
        model = NomaObjectiveModel(s, s.user_positions[ks], alpha_cols[ks, ws],
                                   anchor.plan.traj.positions[ws])
        var_idx = layout.idx_bits("alpha", ks, ws)
    else:
        model = UplinkOmaModel(s, s.user_positions[ks], anchor.plan.bits.uplink[ks, ws],
                               anchor.plan.traj.positions[ws])
        var_idx = layout.idx_bits("lu", ks, ws)
    objective = _ScaledObjective(layout, model, var_idx, ws, prox_vec, x_anchor, obj_scale)

    blocks = {}
    blocks["budget"] = _BudgetBlock(layout, anchor, row_scale=s.uav.energy_budget)

    # Constraint families living entirely on pinned variables are constants
    # once the pin equalities hold; they are checked at the pin targets and
    # dropped so the barrier keeps a nonempty interior.
    if pins.bits is None:
        rows, cols, vals, scales, m = _pipeline_inequalities(layout)
        g = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, layout.n_free)).tocsr()
        row_scale = np.asarray(scales)
        g_scaled = sp.diags(1.0 / row_scale) @ g @ sp.diags(layout.x_scale)
        blocks["pipeline"] = ip.AffineBlock(g_scaled, np.zeros(m))
        bound_fields = ["lu", "lc", "ld"]
    else:
        _check_pinned_bits(s, pins.bits)
        bound_fields = []
    if noma:
        bound_fields = bound_fields + ["alpha", "beta"]
    if bound_fields:
        blocks["nonneg"] = _lower_bound_block(layout, bound_fields)

    if pins.trajectory is None:
        if layout.m2:
            rows_free = np.arange(1, n)
            blocks["speed"] = _NormBallBlock(layout, layout.idx_vel(rows_free, 0),
                                             layout.idx_vel(rows_free, 1),
                                             s.uav.v_max, s.uav.v_max**2)
            blocks["accel"] = _NormBallBlock(layout, layout.idx_acc(np.arange(n), 0),
                                             layout.idx_acc(np.arange(n), 1),
                                             s.uav.a_max, s.uav.a_max**2)
            blocks["tau_cone"] = _TauConeBlock(layout, anchor, row_scale=s.uav.v_max**2)
            blocks["tau_min"] = _lower_bound_block(layout, ["tau"], lower=TAU_MIN)
        else:
            blocks["speed"] = _SpeedM1Block(layout,
                                            row_scale=(s.uav.v_max * s.grid.dt) ** 2)

    if noma:
        q = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt
        blocks["coupling_up"] = _CouplingUpBlock(layout, anchor, row_scale=q)
        blocks["coupling_down"] = _CouplingDownBlock(layout, anchor, row_scale=1.0)

    a_eq, b_eq, eq_names = _equalities(layout, anchor, pins)

    program = ip.Program(n=layout.n_free, objective=objective,
                         ineq_blocks=list(blocks.values()), a_eq=a_eq, b_eq=b_eq)
    sub = ConvexSubproblem(layout=layout, anchor=anchor, program=program, blocks=blocks,
                           objective_scale=obj_scale, x0_scaled=x0_scaled, pins=pins)
    _check_anchor_feasible(sub)
    return sub


def _check_pinned_bits(s: Scenario, bits: FrameBitAlloc) -> None:
    n = s.grid.frames
    i_k = np.array([u.input_bits for u in s.users])
    o_k = np.array([u.output_ratio for u in s.users])
    scale = np.maximum(i_k, 1.0)[:, None]
    cum_up = np.cumsum(bits.uplink[:, uplink_cols(n)], axis=1)
    cum_cp = np.cumsum(bits.compute[:, compute_cols(n)], axis=1)
    cum_dn = np.cumsum(bits.downlink[:, downlink_cols(n)], axis=1)
    worst = max(float(((cum_cp - cum_up) / scale).max()),
                float(((cum_dn - o_k[:, None] * cum_cp) / scale).max()),
                float((-bits.uplink / scale).max()),
                float((-bits.compute / scale).max()),
                float((-bits.downlink / scale).max()))
    if worst > 1e-9:
        raise AnchorInfeasible(f"pinned bit allocation violates the pipeline by {worst:.3e}")


def _template_plan(s: Scenario, reference: PlanVariables) -> PlanVariables:
    """Zeroed plan carrying only the pinned structure (endpoints, boundary velocity)."""
    k, n = s.n_users, s.grid.frames
    bits = FrameBitAlloc(np.zeros((k, n)), np.zeros((k, n)), np.zeros((k, n)))
    pos = np.zeros((n + 1, 2))
    pos[0] = s.uav.start
    pos[n] = s.uav.end
    vel = acc = tau = alpha = beta = None
    if s.flight is FlightModel.MODEL2:
        vel = np.zeros((n + 1, 2))
        vel[0] = vel[n] = s.boundary_velocity
        acc = np.zeros((n, 2))
        tau = np.zeros(n)
    if s.access is Access.NON_ORTHOGONAL:
        alpha = np.zeros((k, n))
        beta = np.zeros((k, n))
    return PlanVariables(bits, Trajectory(pos, vel, acc), alpha, beta, tau)


def _objective_anchor_scale(s: Scenario, layout: PlanLayout, anchor: Anchor) -> float:
    k, n, w = layout.k, layout.n, layout.w
    ks = np.repeat(np.arange(k), w)
    ws = np.tile(np.arange(w), k)
    if layout.noma:
        mdl = NomaObjectiveModel(s, s.user_positions[ks],
                                 anchor.plan.alpha[ks, ws],
                                 anchor.plan.traj.positions[ws])
        vals = mdl.original(anchor.plan.alpha[ks, ws], anchor.plan.traj.positions[ws])
    else:
        mdl = UplinkOmaModel(s, s.user_positions[ks], anchor.plan.bits.uplink[ks, ws],
                             anchor.plan.traj.positions[ws])
        vals = mdl.original(anchor.plan.bits.uplink[ks, ws], anchor.plan.traj.positions[ws])
    return max(float(np.sum(vals)), 1e-9)


def _equalities(layout: PlanLayout, anchor: Anchor, pins: Pins):
    s = layout.s
    n = layout.n
    dt = s.grid.dt
    rows, cols, vals, rhs, scales = [], [], [], [], []
    r_rows, r_cols, r_vals, r_rhs, r_scale, r = _bit_equalities(layout)
    rows += r_rows
    cols += r_cols
    vals += r_vals
    rhs += r_rhs
    scales += r_scale
    names = ["totals"] * r

    if layout.m2:
        vel_tpl = layout.template.traj.velocities
        pos_tpl = layout.template.traj.positions
        # v_{n+1} = v_n + a_n dt
        for n0 in range(n):
            for axis in (0, 1):
                target = 0.0
                rr, cc, vv = [r], [], []
                i_next = int(layout.idx_vel(np.array([n0 + 1]), axis)[0])
                i_cur = int(layout.idx_vel(np.array([n0]), axis)[0])
                i_acc = int(layout.idx_acc(np.array([n0]), axis)[0])
                ent_cols, ent_vals = [], []
                if i_next >= 0:
                    ent_cols.append(i_next)
                    ent_vals.append(1.0)
                else:
                    target -= vel_tpl[n0 + 1, axis]
                if i_cur >= 0:
                    ent_cols.append(i_cur)
                    ent_vals.append(-1.0)
                else:
                    target += vel_tpl[n0, axis]
                ent_cols.append(i_acc)
                ent_vals.append(-dt)
                rows.append(np.full(len(ent_cols), r))
                cols.append(np.asarray(ent_cols))
                vals.append(np.asarray(ent_vals))
                rhs.append(target)
                scales.append(s.uav.v_max)
                names.append("kinematics_v")
                r += 1
        # p_{n+1} = p_n + v_n dt + a_n dt^2 / 2
        for n0 in range(n):
            for axis in (0, 1):
                target = 0.0
                i_next = int(layout.idx_pos(np.array([n0 + 1]), axis)[0])
                i_cur = int(layout.idx_pos(np.array([n0]), axis)[0])
                i_vel = int(layout.idx_vel(np.array([n0]), axis)[0])
                i_acc = int(layout.idx_acc(np.array([n0]), axis)[0])
                ent_cols, ent_vals = [], []
                if i_next >= 0:
                    ent_cols.append(i_next)
                    ent_vals.append(1.0)
                else:
                    target -= pos_tpl[n0 + 1, axis]
                if i_cur >= 0:
                    ent_cols.append(i_cur)
                    ent_vals.append(-1.0)
                else:
                    target += pos_tpl[n0, axis]
                if i_vel >= 0:
                    ent_cols.append(i_vel)
                    ent_vals.append(-dt)
                else:
                    target += dt * vel_tpl[n0, axis]
                ent_cols.append(i_acc)
                ent_vals.append(-0.5 * dt**2)
                rows.append(np.full(len(ent_cols), r))
                cols.append(np.asarray(ent_cols))
                vals.append(np.asarray(ent_vals))
                rhs.append(target)
                scales.append(layout.pos_scale)
                names.append("kinematics_p")
                r += 1

    if pins.bits is not None:
        for field, mat, colsel in (("lu", pins.bits.uplink, uplink_cols(n)),
                                   ("lc", pins.bits.compute, compute_cols(n)),
                                   ("ld", pins.bits.downlink, downlink_cols(n))):
            for kk in range(layout.k):
                idx = layout.idx_bits(field, np.full(layout.w, kk), np.arange(layout.w))
                for j, slot in enumerate(idx):
                    rows.append(np.array([r]))
                    cols.append(np.array([slot]))
                    vals.append(np.array([1.0]))
                    rhs.append(mat[kk, colsel[j]])
                    scales.append(layout.bit_scale)
                    names.append("pin_bits")
                    r += 1
    if pins.trajectory is not None:
        for row in range(1, n):
            for axis in (0, 1):
                idx = int(layout.idx_pos(np.array([row]), axis)[0])
                rows.append(np.array([r]))
                cols.append(np.array([idx]))
                vals.append(np.array([1.0]))
                rhs.append(pins.trajectory.positions[row, axis])
                scales.append(layout.pos_scale)
                names.append("pin_pos")
                r += 1
        if layout.m2 and pins.trajectory.velocities is not None:
            for row in range(1, n):
                for axis in (0, 1):
                    idx = int(layout.idx_vel(np.array([row]), axis)[0])
                    rows.append(np.array([r]))
                    cols.append(np.array([idx]))
                    vals.append(np.array([1.0]))
                    rhs.append(pins.trajectory.velocities[row, axis])
                    scales.append(s.uav.v_max)
                    names.append("pin_vel")
                    r += 1
            for row in range(n):
                for axis in (0, 1):
                    idx = int(layout.idx_acc(np.array([row]), axis)[0])
                    rows.append(np.array([r]))
                    cols.append(np.array([idx]))
                    vals.append(np.array([1.0]))
                    rhs.append(pins.trajectory.accelerations[row, axis])
                    scales.append(s.uav.a_max)
                    names.append("pin_acc")
                    r += 1
    if pins.tau_v is not None and layout.m2:
        for row in range(n):
            idx = int(layout.idx_tau(np.array([row]))[0])
            rows.append(np.array([r]))
            cols.append(np.array([idx]))
            vals.append(np.array([1.0]))
            rhs.append(pins.tau_v[row])
            scales.append(s.uav.v_max)
            names.append("pin_tau")
            r += 1

    a = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(r, layout.n_free)).tocsr()
    scale_arr = np.asarray(scales)
    a_scaled = sp.diags(1.0 / scale_arr) @ a @ sp.diags(layout.x_scale)
    b_scaled = np.asarray(rhs) / scale_arr
    return a_scaled.tocsr(), b_scaled, names


def _check_anchor_feasible(sub: ConvexSubproblem) -> None:
    x0 = sub.x0_scaled
    worst_name, worst = None, ANCHOR_FEAS_TOL
    for name, blk in sub.blocks.items():
        v = float(np.max(blk.value(x0), initial=-np.inf))
        if v > worst:
            worst_name, worst = name, v
    if sub.program.a_eq is not None:
        v = float(np.abs(sub.program.a_eq @ x0 - sub.program.b_eq).max(initial=0.0))
        if v > worst:
            worst_name, worst = "equalities", v
    if worst_name is not None:
        raise AnchorInfeasible(
            f"anchor violates {worst_name} by {worst:.3e} (scaled); "
            "the inner program must be seeded from a feasible plan")


def build_oma_m1(s: Scenario, anchor: Anchor, pins: Pins | None = None) -> ConvexSubproblem:
    """Orthogonal access, kinetic-only flying energy."""
    _expect(s, Access.ORTHOGONAL, FlightModel.MODEL1)
    return build(s, anchor, pins)


def build_noma_m1(s: Scenario, anchor: Anchor, pins: Pins | None = None) -> ConvexSubproblem:
    """Non-orthogonal access with interference slacks, kinetic-only flying energy."""
    _expect(s, Access.NON_ORTHOGONAL, FlightModel.MODEL1)
    return build(s, anchor, pins)


def build_oma_m2(s: Scenario, anchor: Anchor, pins: Pins | None = None) -> ConvexSubproblem:
    """Orthogonal access with the propulsion flying model and kinematic state."""
    _expect(s, Access.ORTHOGONAL, FlightModel.MODEL2)
    return build(s, anchor, pins)


def build_noma_m2(s: Scenario, anchor: Anchor, pins: Pins | None = None) -> ConvexSubproblem:
    """Non-orthogonal access combined with the propulsion flying model."""
    _expect(s, Access.NON_ORTHOGONAL, FlightModel.MODEL2)
    return build(s, anchor, pins)


def _expect(s: Scenario, access: Access, flight: FlightModel) -> None:
    if s.access is not access or s.flight is not flight:
        raise ValueError(f"scenario is {s.access.value}/model{s.flight.value}, "
                         f"but this builder expects {access.value}/model{flight.value}")
