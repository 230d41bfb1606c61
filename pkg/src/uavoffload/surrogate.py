"""Convex local models of the plan's non-convex energy terms.

Each non-convex term is replaced, around a feasible anchor plan, by one of
two kinds of convex models:

* objective-type: gradient-consistent with the original at the anchor and
  strongly convex (used for the mobile transmit energy being minimized);
* constraint-type: a convex upper bound that is tight at the anchor (used
  inside the UAV budget and the interference slack couplings), obtained by
  writing each product of convex nonnegative factors as half-square minus
  concave parts and linearizing the concave parts at the anchor.

Seven families cover every term the planner needs.  The *Model classes are
vectorized over a batch of (user, frame) instances so the subproblem
assembler can evaluate a whole window at once; `sur_*` wrap a single
instance in a uniform Surrogate object for testing and inspection.

All frame indices here are 0-based columns (frame n of the math is column
n-1).  Pipeline windows: uplink columns 0..N-3, compute 1..N-2, downlink
2..N-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .energy import FrameBitAlloc, Trajectory
from .scenario import Scenario

LN2 = math.log(2.0)
_EXP_CLIP = 60.0  # keeps 2^x finite for wild line-search trial points


def rate_factor(bits, bits_per_slot):
    """2^(L / slot) - 1: transmit-energy growth factor of L bits in a slot."""
    return np.exp2(np.clip(np.asarray(bits, dtype=float) / bits_per_slot,
                           -_EXP_CLIP, _EXP_CLIP)) - 1.0


def rate_factor_d1(bits, bits_per_slot):
    e = np.exp2(np.clip(np.asarray(bits, dtype=float) / bits_per_slot,
                        -_EXP_CLIP, _EXP_CLIP))
    return (LN2 / bits_per_slot) * e


def rate_factor_d2(bits, bits_per_slot):
    e = np.exp2(np.clip(np.asarray(bits, dtype=float) / bits_per_slot,
                        -_EXP_CLIP, _EXP_CLIP))
    return (LN2 / bits_per_slot) ** 2 * e


def dist2(p, user_xy, alt2):
    """Squared UAV-user distance (x-xu)^2 + (y-yu)^2 + H^2; p is (..., 2)."""
    d = np.asarray(p, dtype=float) - user_xy
    return np.sum(d * d, axis=-1) + alt2


# The half-square surrogates subtract anchored quantities from nearly equal
# query quantities; evaluated verbatim they lose many digits exactly where
# tightness matters.  These helpers give the same differences in cancellation
# free form, so surrogate values and gradients at the anchor match the
# original term to machine precision.

def _exp2c(bits, slot):
    return np.exp2(np.clip(np.asarray(bits, dtype=float) / slot, -_EXP_CLIP, _EXP_CLIP))


def rate_diff(bits, anchor_bits, slot, anchor_c):
    """c(bits) - c(anchor_bits), exact near the anchor."""
    return (anchor_c + 1.0) * np.expm1(
        LN2 * np.clip((np.asarray(bits, dtype=float) - anchor_bits) / slot,
                      -2 * _EXP_CLIP, 2 * _EXP_CLIP))


def rate_halfsq_grad_diff(bits, anchor_bits, slot):
    """c(L) c'(L) - c(La) c'(La), the gradient of (c^2 - c_a^2)/2, exact near La."""
    e = _exp2c(bits, slot)
    e_a = _exp2c(anchor_bits, slot)
    return (LN2 / slot) * (e - e_a) * (e + e_a - 1.0)


# ---------------------------------------------------------------------------
# plan variables and anchors

@dataclass
class PlanVariables:
    """One full iterate of the planner: bits, trajectory, and slack variables."""

    bits: FrameBitAlloc
    traj: Trajectory
    alpha: np.ndarray | None = None  # (K, N) uplink interference slacks
    beta: np.ndarray | None = None  # (K, N) downlink interference slacks
    tau_v: np.ndarray | None = None  # (N,) speed lower-bound slacks

    def copy(self) -> "PlanVariables":
        return PlanVariables(
            bits=self.bits.copy(),
            traj=self.traj.copy(),
            alpha=None if self.alpha is None else self.alpha.copy(),
            beta=None if self.beta is None else self.beta.copy(),
            tau_v=None if self.tau_v is None else self.tau_v.copy(),
        )


def plan_lincomb(a: float, za: PlanVariables, b: float, zb: PlanVariables) -> PlanVariables:
    """a * za + b * zb, fieldwise; None fields must match."""
    def comb(u, v):
        if u is None and v is None:
            return None
        return a * u + b * v

    bits = FrameBitAlloc(comb(za.bits.uplink, zb.bits.uplink),
                         comb(za.bits.compute, zb.bits.compute),
                         comb(za.bits.downlink, zb.bits.downlink))
    traj = Trajectory(comb(za.traj.positions, zb.traj.positions),
                      comb(za.traj.velocities, zb.traj.velocities),
                      comb(za.traj.accelerations, zb.traj.accelerations))
    return PlanVariables(bits, traj, comb(za.alpha, zb.alpha), comb(za.beta, zb.beta),
                         comb(za.tau_v, zb.tau_v))


@dataclass(frozen=True)
class ProxWeights:
    """Strong-convexity weights of the proximal quadratics, per variable kind.

    Weights multiply (x - anchor)^2 / 2 in physical units, so the natural
    magnitude is (objective scale) / (variable scale)^2 times a small factor.
    """

    uplink_bits: float
    pos: float
    alpha: float
    other_bits: float = 0.0
    beta: float = 0.0
    vel: float = 0.0
    acc: float = 0.0
    tau: float = 0.0

    @staticmethod
    def for_scenario(s: Scenario, objective_scale: float, base: float = 1e-6) -> "ProxWeights":
        obj = max(objective_scale, 1e-30)
        bit_scale = s.radio.bandwidth * s.grid.dt
        pos_scale = max(s.uav.altitude, float(np.linalg.norm(s.uav.end - s.uav.start)))
        alpha_scale = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt
        beta_scale = obj  # beta slacks carry joule-scale downlink energies
        w = base * obj
        return ProxWeights(
            uplink_bits=w / bit_scale**2,
            pos=w / pos_scale**2,
            alpha=w / alpha_scale**2,
            other_bits=w / bit_scale**2,
            beta=w / beta_scale**2,
            vel=w / s.uav.v_max**2,
            acc=w / s.uav.a_max**2,
            tau=w / s.uav.v_max**2,
        )


@dataclass
class Anchor:
    """A feasible iterate plus the proximal weights used to model around it."""

    scenario: Scenario
    plan: PlanVariables
    prox: ProxWeights

    def __post_init__(self):
        for name in ("uplink_bits", "pos", "alpha"):
            if getattr(self.prox, name) <= 0:
                raise ValueError(f"proximal weight {name} must be > 0")


@dataclass(frozen=True)
class Surrogate:
    """A convex local model of one energy term over its own variable slice.

    `value`, `gradient`, `hessian` and `original` all take a flat vector in
    the order given by `var_names`.  Constraint-type surrogates are tight
    upper bounds at the anchor; objective-type surrogates match the
    original's gradient there.
    """

    kind: str  # "objective" | "constraint"
    var_names: tuple
    anchor_point: np.ndarray
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    original: Callable[[np.ndarray], float]


# ---------------------------------------------------------------------------
# batched family models

class UplinkOmaModel:
    """Objective surrogate of the orthogonal uplink energy f1(L) f2(p).

    f1(L) = (N0 B dt / (K g0)) (2^(L K/(B dt)) - 1), f2 = squared distance.
    The surrogate is f1(L) f2(p~) + f1(L~) f2(p) plus proximal quadratics.
    """

    def __init__(self, s: Scenario, user_xy, anchor_bits, anchor_pos,
                 prox_bits=0.0, prox_pos=0.0):
        k = s.n_users
        self.slot = s.radio.bandwidth * s.grid.dt / k
        self.pref = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt / (k * s.radio.ref_gain)
        self.alt2 = s.uav.altitude**2
        self.user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
        self.l_a = np.atleast_1d(np.asarray(anchor_bits, dtype=float))
        self.p_a = np.atleast_2d(np.asarray(anchor_pos, dtype=float))
        self.s_a = dist2(self.p_a, self.user_xy, self.alt2)
        self.f1_a = self.pref * rate_factor(self.l_a, self.slot)
        self.prox_bits = prox_bits
        self.prox_pos = prox_pos

    def original(self, bits, pos):
        return self.pref * rate_factor(bits, self.slot) * dist2(pos, self.user_xy, self.alt2)

    def value(self, bits, pos):
        v = self.pref * rate_factor(bits, self.slot) * self.s_a \
            + self.f1_a * dist2(pos, self.user_xy, self.alt2)
        v = v + 0.5 * self.prox_bits * (bits - self.l_a) ** 2
        v = v + 0.5 * self.prox_pos * np.sum((pos - self.p_a) ** 2, axis=-1)
        return v

    def grad(self, bits, pos):
        d_bits = self.pref * rate_factor_d1(bits, self.slot) * self.s_a \
            + self.prox_bits * (bits - self.l_a)
        d_pos = 2.0 * self.f1_a[..., None] * (pos - self.user_xy) \
            + self.prox_pos * (pos - self.p_a)
        return d_bits, d_pos

    def hess(self, bits, pos):
        """Diagonal pieces (d_LL, d_xx = d_yy); there are no cross terms."""
        d_ll = self.pref * rate_factor_d2(bits, self.slot) * self.s_a + self.prox_bits
        d_pp = 2.0 * self.f1_a + self.prox_pos
        return d_ll, d_pp


class ComputeModel:
    """Constraint surrogate of the cloudlet computing energy of user k, frame n.

    The energy (gamma C_k / dt^2) l_k (sum C l)^2 is a product of convex
    nonnegative factors; the half-square expansion with the concave parts
    linearized at the anchor gives a tight convex upper bound.  The two
    factors live on wildly different scales (bits vs squared total cycles),
    so the expansion is applied to the rebalanced pair (l_k / b, b (sum C l)^2)
    with b fixed per instance at the anchor; the bound keeps every required
    property for any b > 0 and stays numerically sane.  Batched over
    instances; each instance sees the frame's full compute vector l in R^K.
    """

    def __init__(self, s: Scenario, k_idx, anchor_l):
        self.c_k = np.array([u.cycles_per_bit for u in s.users])
        self.k_idx = np.atleast_1d(np.asarray(k_idx, dtype=int))
        self.pref = s.uav.capacitance * self.c_k[self.k_idx] / s.grid.dt**2  # (B,)
        self.l_a = np.atleast_2d(np.asarray(anchor_l, dtype=float))  # (B, K)
        self.sum_a = self.l_a @ self.c_k  # (B,)
        self.lk_a = np.take_along_axis(self.l_a, self.k_idx[:, None], axis=1)[:, 0]
        self.b = np.sqrt(np.maximum(self.lk_a, 1.0)
                         / np.maximum(self.sum_a**2, self.c_k.min() ** 2))  # (B,)

    def original(self, l):
        l = np.atleast_2d(l)
        lk = np.take_along_axis(l, self.k_idx[:, None], axis=1)[:, 0]
        return self.pref * lk * (l @ self.c_k) ** 2

    def value(self, l):
        # half-square terms expanded into differences (d_u1, d_u2) that
        # vanish exactly at the anchor
        l = np.atleast_2d(l)
        b = self.b
        lk = np.take_along_axis(l, self.k_idx[:, None], axis=1)[:, 0]
        d_sum = (l - self.l_a) @ self.c_k
        ssum = self.sum_a + d_sum
        u1 = lk / b
        u2 = ssum**2 * b
        u1_a = self.lk_a / b
        u2_a = self.sum_a**2 * b
        d_u1 = (lk - self.lk_a) / b
        d_u2 = d_sum * (ssum + self.sum_a) * b
        val = 0.5 * d_u1 * (u1 + u1_a) + u1 * u2 + 0.5 * d_u2 * (u2 + u2_a) \
            - u1_a * d_u1 - u2_a * 2.0 * self.sum_a * b * d_sum
        return self.pref * val

    def grad(self, l):
        """(B, K) gradient with respect to the frame's compute vector."""
        l = np.atleast_2d(l)
        b = self.b
        lk = np.take_along_axis(l, self.k_idx[:, None], axis=1)[:, 0]
        d_sum = (l - self.l_a) @ self.c_k
        ssum = self.sum_a + d_sum
        u1 = lk / b
        u2 = ssum**2 * b
        d_u1 = (lk - self.lk_a) / b
        # cube difference S^3 - S_a^3 without cancellation
        d_cube = d_sum * (ssum**2 + ssum * self.sum_a + self.sum_a**2)
        g = (2.0 * b * (u1 * ssum + b * d_cube))[:, None] * self.c_k[None, :]
        np.add.at(g, (np.arange(len(lk)), self.k_idx), (d_u1 + u2) / b)
        return self.pref[:, None] * g

    def hess(self, l):
        """(B, K, K) blocks: pref (grad u grad u^T + (u1 + u2) 2 b C C^T)."""
        l = np.atleast_2d(l)
        b = self.b
        lk = np.take_along_axis(l, self.k_idx[:, None], axis=1)[:, 0]
        ssum = l @ self.c_k
        w = np.maximum(lk / b + ssum**2 * b, 0.0)  # keep PSD off-domain
        gw = (2.0 * ssum * b)[:, None] * self.c_k[None, :] \
            + _one_hot(self.k_idx, len(self.c_k)) / b[:, None]
        outer = gw[:, :, None] * gw[:, None, :]
        cct = self.c_k[:, None] * self.c_k[None, :]
        return self.pref[:, None, None] * (outer + (2.0 * w * b)[:, None, None] * cct[None])


class DownlinkOmaModel:
    """Constraint surrogate of the orthogonal downlink energy over (L, x, y)."""

    def __init__(self, s: Scenario, user_xy, anchor_bits, anchor_pos):
        k = s.n_users
        self.slot = s.radio.bandwidth * s.grid.dt / k
        self.pref = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt / (k * s.radio.ref_gain)
        self.alt2 = s.uav.altitude**2
        self.user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
        self.l_a = np.atleast_1d(np.asarray(anchor_bits, dtype=float))
        self.p_a = np.atleast_2d(np.asarray(anchor_pos, dtype=float))
        self.c_a = rate_factor(self.l_a, self.slot)
        self.cd_a = rate_factor_d1(self.l_a, self.slot)
        self.s_a = dist2(self.p_a, self.user_xy, self.alt2)

    def original(self, bits, pos):
        return self.pref * rate_factor(bits, self.slot) * dist2(pos, self.user_xy, self.alt2)

    def value(self, bits, pos):
        pos = np.atleast_2d(pos)
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        d_sq = np.sum((pos - self.p_a) * (pos + self.p_a - 2.0 * self.user_xy), axis=-1)
        sq = self.s_a + d_sq
        lin_l = self.c_a * self.cd_a * (bits - self.l_a)
        lin_p = 2.0 * self.s_a * np.sum((self.p_a - self.user_xy) * (pos - self.p_a), axis=-1)
        return self.pref * (0.5 * d_c * (c + self.c_a) + c * sq
                            + 0.5 * d_sq * (sq + self.s_a) - lin_l - lin_p)

    def grad(self, bits, pos):
        pos = np.atleast_2d(pos)
        cd = rate_factor_d1(bits, self.slot)
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        d_sq = np.sum((pos - self.p_a) * (pos + self.p_a - 2.0 * self.user_xy), axis=-1)
        sq = self.s_a + d_sq
        w = c + sq
        d_bits = self.pref * (sq * cd + rate_halfsq_grad_diff(bits, self.l_a, self.slot))
        d_pos = self.pref * 2.0 * (w[..., None] * (pos - self.p_a)
                                   + (c + d_sq)[..., None] * (self.p_a - self.user_xy))
        return d_bits, d_pos

    def hess(self, bits, pos):
        """(B, 3, 3) blocks over (L, x, y): pref (grad w grad w^T + w diag(c'', 2, 2))."""
        c = rate_factor(bits, self.slot)
        cdd = rate_factor_d2(bits, self.slot)
        cd = rate_factor_d1(bits, self.slot)
        sq = dist2(pos, self.user_xy, self.alt2)
        w = np.maximum(c + sq, 0.0)
        b = c.shape[0] if c.ndim else 1
        gw = np.empty((b, 3))
        gw[:, 0] = cd
        gw[:, 1:] = 2.0 * (np.atleast_2d(pos) - self.user_xy)
        h = gw[:, :, None] * gw[:, None, :]
        h[:, 0, 0] += w * cdd
        h[:, 1, 1] += 2.0 * w
        h[:, 2, 2] += 2.0 * w
        return self.pref * h


class NomaObjectiveModel:
    """Objective surrogate of alpha / gain = (alpha/g0) f2(p), Lemma-1 form."""

    def __init__(self, s: Scenario, user_xy, anchor_alpha, anchor_pos,
                 prox_alpha=0.0, prox_pos=0.0):
        self.inv_g0 = 1.0 / s.radio.ref_gain
        self.alt2 = s.uav.altitude**2
        self.user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
        self.a_a = np.atleast_1d(np.asarray(anchor_alpha, dtype=float))
        self.p_a = np.atleast_2d(np.asarray(anchor_pos, dtype=float))
        self.s_a = dist2(self.p_a, self.user_xy, self.alt2)
        self.prox_alpha = prox_alpha
        self.prox_pos = prox_pos

    def original(self, alpha, pos):
        return self.inv_g0 * alpha * dist2(pos, self.user_xy, self.alt2)

    def value(self, alpha, pos):
        v = self.inv_g0 * (alpha * self.s_a + self.a_a * dist2(pos, self.user_xy, self.alt2))
        v = v + 0.5 * self.prox_alpha * (alpha - self.a_a) ** 2
        v = v + 0.5 * self.prox_pos * np.sum((pos - self.p_a) ** 2, axis=-1)
        return v

    def grad(self, alpha, pos):
        d_alpha = self.inv_g0 * self.s_a + self.prox_alpha * (alpha - self.a_a)
        d_pos = 2.0 * self.inv_g0 * self.a_a[..., None] * (pos - self.user_xy) \
            + self.prox_pos * (pos - self.p_a)
        return d_alpha, d_pos

    def hess(self, alpha, pos):
        d_aa = np.full_like(np.atleast_1d(alpha), self.prox_alpha, dtype=float)
        d_pp = 2.0 * self.inv_g0 * self.a_a + self.prox_pos
        return d_aa, d_pp


class NomaUplinkCouplingModel:
    """Constraint surrogate of h = (N0 B dt + sum_{k'!=k} alpha_k') (2^(L/(B dt)) - 1).

    Bounds the gain-normalized non-orthogonal uplink energy that the slack
    alpha_k must dominate.  The rate factor is order one while the slack sum
    carries the noise-energy scale N0 B dt, so the half-square expansion is
    applied to the rebalanced pair (c / b, b sum alpha), with b fixed per
    instance at the anchor (the bound is valid for any b > 0).  Variables
    per instance: (L, alpha in R^K); the own component alpha_k does not
    enter h itself.
    """

    def __init__(self, s: Scenario, k_idx, anchor_bits, anchor_alpha):
        self.slot = s.radio.bandwidth * s.grid.dt
        self.q = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt
        self.k_idx = np.atleast_1d(np.asarray(k_idx, dtype=int))
        self.n_users = s.n_users
        self.l_a = np.atleast_1d(np.asarray(anchor_bits, dtype=float))
        a_a = np.atleast_2d(np.asarray(anchor_alpha, dtype=float))
        self.mask = 1.0 - _one_hot(self.k_idx, self.n_users)  # (B, K)
        self.sum_a = np.sum(a_a * self.mask, axis=1)
        self.c_a = rate_factor(self.l_a, self.slot)
        self.cd_a = rate_factor_d1(self.l_a, self.slot)
        self.b = np.sqrt(np.maximum(self.c_a, 1e-4) / np.maximum(self.sum_a, self.q))

    def _interf(self, alpha):
        return np.sum(np.atleast_2d(alpha) * self.mask, axis=1)

    def original(self, bits, alpha):
        return (self.q + self._interf(alpha)) * rate_factor(bits, self.slot)

    def value(self, bits, alpha):
        b = self.b
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        d_sa = self._interf(alpha) - self.sum_a
        sa = self.sum_a + d_sa
        # u1 = c/b, u2 = b sa: q c + (u1 u2 half-square expansion)
        return self.q * c + 0.5 * (d_c / b) * ((c + self.c_a) / b) + c * sa \
            + 0.5 * (b * d_sa) * (b * (sa + self.sum_a)) \
            - self.c_a * self.cd_a * (bits - self.l_a) / b**2 - self.sum_a * d_sa * b**2

    def grad(self, bits, alpha):
        b = self.b
        cd = rate_factor_d1(bits, self.slot)
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        sa = self._interf(alpha)
        d_bits = (self.q + sa) * cd \
            + rate_halfsq_grad_diff(bits, self.l_a, self.slot) / b**2
        d_alpha = (c + (sa - self.sum_a) * b**2)[:, None] * self.mask
        return d_bits, d_alpha

    def hess(self, bits, alpha):
        """(B, 1+K, 1+K) over (L, alpha_1..alpha_K)."""
        b = self.b
        c = rate_factor(bits, self.slot)
        cd = rate_factor_d1(bits, self.slot)
        cdd = rate_factor_d2(bits, self.slot)
        sa = self._interf(alpha)
        w = np.maximum(c / b + sa * b, 0.0)
        gw = np.concatenate([(cd / b)[:, None], self.mask * b[:, None]], axis=1)
        h = gw[:, :, None] * gw[:, None, :]
        h[:, 0, 0] += self.q * cdd + np.maximum(w / b, 0.0) * cdd
        return h


class NomaDownlinkModel:
    """Constraint surrogate of the slack-coupled non-orthogonal downlink energy.

    E_hat = (N0 B dt / g0) f2(p) c(L) + (sum_{k'!=k} beta_k') c(L), bounded by
    the half-square expansion of both products with concave parts linearized.
    Each product is rebalanced at the anchor (c/b, b f2) and (c/b2, b2 sum),
    which keeps the expansion's curvature on the scale of the energies it
    bounds; the bound's tightness/domination/consistency hold for any b > 0.
    Variables per instance: (L, x, y, beta in R^K).
    """

    def __init__(self, s: Scenario, k_idx, user_xy, anchor_bits, anchor_pos, anchor_beta):
        self.slot = s.radio.bandwidth * s.grid.dt
        self.big_q = s.radio.noise_psd * s.radio.bandwidth * s.grid.dt / s.radio.ref_gain
        self.alt2 = s.uav.altitude**2
        self.n_users = s.n_users
        self.k_idx = np.atleast_1d(np.asarray(k_idx, dtype=int))
        self.user_xy = np.atleast_2d(np.asarray(user_xy, dtype=float))
        self.l_a = np.atleast_1d(np.asarray(anchor_bits, dtype=float))
        self.p_a = np.atleast_2d(np.asarray(anchor_pos, dtype=float))
        b_a = np.atleast_2d(np.asarray(anchor_beta, dtype=float))
        self.mask = 1.0 - _one_hot(self.k_idx, self.n_users)
        self.sum_a = np.sum(b_a * self.mask, axis=1)
        self.c_a = rate_factor(self.l_a, self.slot)
        self.cd_a = rate_factor_d1(self.l_a, self.slot)
        self.s_a = dist2(self.p_a, self.user_xy, self.alt2)
        c_eff = np.maximum(self.c_a, 1e-4)
        self.b1sq = c_eff / self.s_a  # distance factor balance
        self.b2sq = c_eff / np.maximum(self.sum_a, 1e-9)  # interference balance

    def _interf(self, beta):
        return np.sum(np.atleast_2d(beta) * self.mask, axis=1)

    def original(self, bits, pos, beta):
        c = rate_factor(bits, self.slot)
        return (self.big_q * dist2(pos, self.user_xy, self.alt2) + self._interf(beta)) * c

    def value(self, bits, pos, beta):
        pos = np.atleast_2d(pos)
        b1sq, b2sq = self.b1sq, self.b2sq
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        d_sq = np.sum((pos - self.p_a) * (pos + self.p_a - 2.0 * self.user_xy), axis=-1)
        sq = self.s_a + d_sq
        d_sb = self._interf(beta) - self.sum_a
        sb = self.sum_a + d_sb
        half_c = 0.5 * d_c * (c + self.c_a)
        quad = self.big_q * (half_c / b1sq + c * sq + 0.5 * d_sq * (sq + self.s_a) * b1sq) \
            + half_c / b2sq + c * sb + 0.5 * d_sb * (sb + self.sum_a) * b2sq
        lin_l = (self.big_q / b1sq + 1.0 / b2sq) * self.c_a * self.cd_a * (bits - self.l_a)
        lin_p = 2.0 * self.big_q * b1sq * self.s_a \
            * np.sum((self.p_a - self.user_xy) * (pos - self.p_a), axis=-1)
        lin_b = self.sum_a * d_sb * b2sq
        return quad - lin_l - lin_p - lin_b

    def grad(self, bits, pos, beta):
        pos = np.atleast_2d(pos)
        b1sq, b2sq = self.b1sq, self.b2sq
        cd = rate_factor_d1(bits, self.slot)
        d_c = rate_diff(bits, self.l_a, self.slot, self.c_a)
        c = self.c_a + d_c
        d_sq = np.sum((pos - self.p_a) * (pos + self.p_a - 2.0 * self.user_xy), axis=-1)
        sq = self.s_a + d_sq
        d_sb = self._interf(beta) - self.sum_a
        sb = self.sum_a + d_sb
        halfsq = rate_halfsq_grad_diff(bits, self.l_a, self.slot)
        d_bits = (self.big_q * sq + sb) * cd + (self.big_q / b1sq + 1.0 / b2sq) * halfsq
        w1 = c / b1sq + sq
        d_pos = 2.0 * self.big_q * b1sq[:, None] * (
            w1[..., None] * (pos - self.p_a)
            + (c / b1sq + d_sq)[..., None] * (self.p_a - self.user_xy))
        d_beta = (c + d_sb * b2sq)[:, None] * self.mask
        return d_bits, d_pos, d_beta

    def hess(self, bits, pos, beta):
        """(B, 3+K, 3+K) over (L, x, y, beta_1..beta_K)."""
        b1sq, b2sq = self.b1sq, self.b2sq
        b1 = np.sqrt(b1sq)
        b2 = np.sqrt(b2sq)
        c = rate_factor(bits, self.slot)
        cd = rate_factor_d1(bits, self.slot)
        cdd = rate_factor_d2(bits, self.slot)
        sq = dist2(pos, self.user_xy, self.alt2)
        sb = self._interf(beta)
        w1 = np.maximum(c / b1 + sq * b1, 0.0)  # u-pair of the distance product
        w2 = np.maximum(c / b2 + sb * b2, 0.0)
        b = len(self.k_idx)
        k = self.n_users
        gw1 = np.zeros((b, 3 + k))
        gw1[:, 0] = cd / b1
        gw1[:, 1:3] = 2.0 * b1[:, None] * (np.atleast_2d(pos) - self.user_xy)
        gw2 = np.zeros((b, 3 + k))
        gw2[:, 0] = cd / b2
        gw2[:, 3:] = self.mask * b2[:, None]
        h = self.big_q * gw1[:, :, None] * gw1[:, None, :] + gw2[:, :, None] * gw2[:, None, :]
        h[:, 0, 0] += (self.big_q * w1 / b1 + w2 / b2) * cdd
        h[:, 1, 1] += 2.0 * self.big_q * w1 * b1
        h[:, 2, 2] += 2.0 * self.big_q * w1 * b1
        return h


class FlyModel2Surrogate:
    """Convex upper bound of the propulsion energy over (v, a, tau).

    kappa1 |v|^3 + kappa2/tau + kappa2 |a|^2 / (tau g^2); equals the true
    propulsion energy whenever tau = |v|, and bounds it from above whenever
    0 < tau <= |v|.  Jointly convex for tau > 0.
    """

    def __init__(self, kappa1, kappa2, gravity):
        self.k1 = kappa1
        self.k2 = kappa2
        self.g2 = gravity**2

    def original(self, v, a):
        speed = np.linalg.norm(np.atleast_2d(v), axis=-1)
        acc2 = np.sum(np.atleast_2d(a) ** 2, axis=-1)
        return self.k1 * speed**3 + self.k2 / speed * (1.0 + acc2 / self.g2)

    def value(self, v, a, tau):
        speed = np.linalg.norm(np.atleast_2d(v), axis=-1)
        acc2 = np.sum(np.atleast_2d(a) ** 2, axis=-1)
        return self.k1 * speed**3 + self.k2 / tau + self.k2 * acc2 / (tau * self.g2)

    def grad(self, v, a, tau):
        v = np.atleast_2d(v)
        a = np.atleast_2d(a)
        speed = np.linalg.norm(v, axis=-1)
        acc2 = np.sum(a * a, axis=-1)
        d_v = 3.0 * self.k1 * speed[..., None] * v
        d_a = 2.0 * self.k2 / (tau * self.g2)[..., None] * a
        d_tau = -self.k2 / tau**2 * (1.0 + acc2 / self.g2)
        return d_v, d_a, d_tau

    def hess(self, v, a, tau):
        """(B, 5, 5) over (vx, vy, ax, ay, tau)."""
        v = np.atleast_2d(v)
        a = np.atleast_2d(a)
        tau = np.atleast_1d(tau)
        speed = np.maximum(np.linalg.norm(v, axis=-1), 1e-12)
        acc2 = np.sum(a * a, axis=-1)
        b = v.shape[0]
        h = np.zeros((b, 5, 5))
        # |v|^3: 3 k1 (|v| I + v v^T / |v|)
        outer_v = v[:, :, None] * v[:, None, :] / speed[:, None, None]
        h[:, 0:2, 0:2] = 3.0 * self.k1 * (speed[:, None, None] * np.eye(2)[None] + outer_v)
        # kappa2 |a|^2 / (tau g^2) + kappa2 / tau
        h[:, 2, 2] += 2.0 * self.k2 / (tau * self.g2)
        h[:, 3, 3] += 2.0 * self.k2 / (tau * self.g2)
        h[:, 2, 4] = h[:, 4, 2] = -2.0 * self.k2 * a[:, 0] / (tau**2 * self.g2)
        h[:, 3, 4] = h[:, 4, 3] = -2.0 * self.k2 * a[:, 1] / (tau**2 * self.g2)
        h[:, 4, 4] = 2.0 * self.k2 / tau**3 * (1.0 + acc2 / self.g2)
        return h


def speed_sq_lower_bound(v, anchor_v):
    """Linear lower bound |v~|^2 + 2 v~.(v - v~) <= |v|^2, tight at the anchor."""
    v = np.asarray(v, dtype=float)
    va = np.asarray(anchor_v, dtype=float)
    return np.sum(va * va, axis=-1) + 2.0 * np.sum(va * (v - va), axis=-1)


def _one_hot(idx, width):
    out = np.zeros((len(idx), width))
    out[np.arange(len(idx)), idx] = 1.0
    return out


# ---------------------------------------------------------------------------
# single-instance wrappers

def _wrap(kind, names, anchor_vec, value, grad_full, hess_full, original):
    return Surrogate(kind=kind, var_names=tuple(names),
                     anchor_point=np.asarray(anchor_vec, dtype=float),
                     value=value, gradient=grad_full, hessian=hess_full,
                     original=original)


def sur_uplink_oma(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Objective surrogate of user k's uplink energy at frame column n; vars (L, x, y)."""
    s = anchor.scenario
    mdl = UplinkOmaModel(s, s.user_positions[k], anchor.plan.bits.uplink[k, n],
                         anchor.plan.traj.positions[n],
                         prox_bits=anchor.prox.uplink_bits, prox_pos=anchor.prox.pos)
    unpack = lambda z: (np.atleast_1d(z[0]), np.atleast_2d(z[1:3]))

    def grad_full(z):
        db, dp = mdl.grad(*unpack(z))
        return np.concatenate([db, dp[0]])

    def hess_full(z):
        dll, dpp = mdl.hess(*unpack(z))
        return np.diag([float(dll[0]), float(dpp[0]), float(dpp[0])])

    return _wrap("objective", ("uplink_bits", "x", "y"),
                 np.concatenate([[anchor.plan.bits.uplink[k, n]],
                                 anchor.plan.traj.positions[n]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full, hess_full,
                 lambda z: float(mdl.original(*unpack(z))[0]))


def sur_comp(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Constraint surrogate of user k's computing energy at frame column n; vars l in R^K."""
    s = anchor.scenario
    mdl = ComputeModel(s, [k], anchor.plan.bits.compute[None, :, n].copy())

    return _wrap("constraint", tuple(f"compute_bits_{j}" for j in range(s.n_users)),
                 anchor.plan.bits.compute[:, n].copy(),
                 lambda z: float(mdl.value(z[None, :])[0]),
                 lambda z: mdl.grad(z[None, :])[0],
                 lambda z: mdl.hess(z[None, :])[0],
                 lambda z: float(mdl.original(z[None, :])[0]))


def sur_downlink_oma(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Constraint surrogate of user k's orthogonal downlink energy; vars (L, x, y)."""
    s = anchor.scenario
    mdl = DownlinkOmaModel(s, s.user_positions[k], anchor.plan.bits.downlink[k, n],
                           anchor.plan.traj.positions[n])
    unpack = lambda z: (np.atleast_1d(z[0]), np.atleast_2d(z[1:3]))

    def grad_full(z):
        db, dp = mdl.grad(*unpack(z))
        return np.concatenate([db, dp[0]])

    return _wrap("constraint", ("downlink_bits", "x", "y"),
                 np.concatenate([[anchor.plan.bits.downlink[k, n]],
                                 anchor.plan.traj.positions[n]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full,
                 lambda z: mdl.hess(*unpack(z))[0],
                 lambda z: float(mdl.original(*unpack(z))[0]))


def sur_obj_noma(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Objective surrogate of user k's slack-normalized uplink term; vars (alpha, x, y)."""
    s = anchor.scenario
    if anchor.plan.alpha is None:
        raise ValueError("anchor has no alpha slacks; build it for non-orthogonal access")
    mdl = NomaObjectiveModel(s, s.user_positions[k], anchor.plan.alpha[k, n],
                             anchor.plan.traj.positions[n],
                             prox_alpha=anchor.prox.alpha, prox_pos=anchor.prox.pos)
    unpack = lambda z: (np.atleast_1d(z[0]), np.atleast_2d(z[1:3]))

    def grad_full(z):
        da, dp = mdl.grad(*unpack(z))
        return np.concatenate([da, dp[0]])

    def hess_full(z):
        daa, dpp = mdl.hess(*unpack(z))
        return np.diag([float(daa[0]), float(dpp[0]), float(dpp[0])])

    return _wrap("objective", ("alpha", "x", "y"),
                 np.concatenate([[anchor.plan.alpha[k, n]], anchor.plan.traj.positions[n]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full, hess_full,
                 lambda z: float(mdl.original(*unpack(z))[0]))


def sur_h_noma(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Constraint surrogate of the uplink slack coupling; vars (L, alpha_1..alpha_K)."""
    s = anchor.scenario
    if anchor.plan.alpha is None:
        raise ValueError("anchor has no alpha slacks; build it for non-orthogonal access")
    mdl = NomaUplinkCouplingModel(s, [k], anchor.plan.bits.uplink[k, n],
                                  anchor.plan.alpha[None, :, n].copy())
    unpack = lambda z: (np.atleast_1d(z[0]), z[None, 1:])

    def grad_full(z):
        db, da = mdl.grad(*unpack(z))
        return np.concatenate([db, da[0]])

    return _wrap("constraint", ("uplink_bits",) + tuple(f"alpha_{j}" for j in range(s.n_users)),
                 np.concatenate([[anchor.plan.bits.uplink[k, n]], anchor.plan.alpha[:, n]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full,
                 lambda z: mdl.hess(*unpack(z))[0],
                 lambda z: float(mdl.original(*unpack(z))[0]))


def sur_downlink_noma(anchor: Anchor, k: int, n: int) -> Surrogate:
    """Constraint surrogate of the downlink slack coupling; vars (L, x, y, beta_1..beta_K)."""
    s = anchor.scenario
    if anchor.plan.beta is None:
        raise ValueError("anchor has no beta slacks; build it for non-orthogonal access")
    mdl = NomaDownlinkModel(s, [k], s.user_positions[k], anchor.plan.bits.downlink[k, n],
                            anchor.plan.traj.positions[n], anchor.plan.beta[None, :, n].copy())
    unpack = lambda z: (np.atleast_1d(z[0]), np.atleast_2d(z[1:3]), z[None, 3:])

    def grad_full(z):
        db, dp, dbeta = mdl.grad(*unpack(z))
        return np.concatenate([db, dp[0], dbeta[0]])

    return _wrap("constraint",
                 ("downlink_bits", "x", "y") + tuple(f"beta_{j}" for j in range(s.n_users)),
                 np.concatenate([[anchor.plan.bits.downlink[k, n]],
                                 anchor.plan.traj.positions[n], anchor.plan.beta[:, n]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full,
                 lambda z: mdl.hess(*unpack(z))[0],
                 lambda z: float(mdl.original(*unpack(z))[0]))


def sur_fly_model2(anchor: Anchor, n: int) -> Surrogate:
    """Constraint surrogate of frame n's propulsion energy; vars (vx, vy, ax, ay, tau)."""
    s = anchor.scenario
    if anchor.plan.traj.velocities is None or anchor.plan.tau_v is None:
        raise ValueError("anchor has no velocity/tau state; build it for flight model 2")
    mdl = FlyModel2Surrogate(s.uav.kappa1, s.uav.kappa2, s.uav.gravity)
    unpack = lambda z: (z[None, 0:2], z[None, 2:4], np.atleast_1d(z[4]))

    def grad_full(z):
        dv, da, dtau = mdl.grad(*unpack(z))
        return np.concatenate([dv[0], da[0], dtau])

    return _wrap("constraint", ("vx", "vy", "ax", "ay", "tau"),
                 np.concatenate([anchor.plan.traj.velocities[n],
                                 anchor.plan.traj.accelerations[n],
                                 [anchor.plan.tau_v[n]]]),
                 lambda z: float(mdl.value(*unpack(z))[0]),
                 grad_full,
                 lambda z: mdl.hess(*unpack(z))[0],
                 lambda z: float(mdl.original(z[None, 0:2], z[None, 2:4])[0]))


def f_lb(anchor: Anchor, n: int, v) -> float:
    """Linear lower bound on |v_n|^2 anchored at the current iterate's velocity."""
    if anchor.plan.traj.velocities is None:
        raise ValueError("anchor has no velocity state; build it for flight model 2")
    return float(speed_sq_lower_bound(v, anchor.plan.traj.velocities[n]))
