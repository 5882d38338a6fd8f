"""Motion dynamics: learned weights back to desired distances, then to physical motion.

Positions are ``(n, 2)`` arrays in points. Wall proximity enters through
the distance ``d`` and inward normal ``n`` sampled from a :class:`WallField`.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .geometry import EnvironmentMap, WallField

__all__ = [
    "invert_swarm_kernel",
    "invert_reward_kernel",
    "swarm_shift",
    "reward_shift",
    "combine_shifts",
    "barrier_aware_shift",
    "field_chase_velocity",
    "single_entity_velocity",
    "momentum_filter",
    "speed_limit",
    "wall_avoid_velocity",
    "apply_position_updates",
    "project_inside",
]


def _checked_log(W, V):
    W = np.asarray(W, dtype=float)
    sel = np.ones(W.shape, dtype=bool) if V is None else np.asarray(V, dtype=bool)
    w = W[sel]
    if np.any(~(w > 0)) or np.any(w > 1):
        raise ContractViolation("weights must lie in (0, 1] to be inverted")
    out = np.zeros(W.shape)
    out[sel] = np.log(w)
    return out, sel


def invert_swarm_kernel(W, sigma, mode="verbatim", V=None, cap=None):
    """Desired distances from updated recurrent weights.

    ``mode="verbatim"`` uses ``sqrt(-2 sigma^2 log W)``; ``mode="exact"`` uses
    ``sigma*sqrt(-log W)``, the true inverse of the Gaussian weight kernel.
    Entries where ``V`` is false are returned as 0. ``cap`` bounds the result.
    """
    logw, sel = _checked_log(W, V)
    if mode == "verbatim":
        D = np.sqrt(-2.0 * sigma * sigma * logw)
    elif mode == "exact":
        D = sigma * np.sqrt(-logw)
    else:
        raise ContractViolation(f"unknown inversion mode {mode!r}")
    D = np.where(sel, D, 0.0)
    return D if cap is None else np.minimum(D, cap)


def invert_reward_kernel(W_r, kappa, V=None, cap=None):
    logw, sel = _checked_log(W_r, V)
    D = np.where(sel, -kappa * logw, 0.0)
    return D if cap is None else np.minimum(D, cap)


def _unit_vectors(src, dst):
    """Unit vectors from every ``src`` row to every ``dst`` row; zero where they coincide."""
    delta = np.asarray(dst, dtype=float)[None, :, :] - np.asarray(src, dtype=float)[:, None, :]
    dist = np.linalg.norm(delta, axis=-1, keepdims=True)
    return np.where(dist > 0, delta / np.where(dist > 0, dist, 1.0), 0.0)


def _averaged_shift(D_new, D, V, units, half, convention):
    if convention not in ("approach", "printed"):
        raise ContractViolation(f"unknown shift convention {convention!r}")
    V = np.asarray(V, dtype=float)
    err = np.asarray(D_new) - np.asarray(D)
    step = V * (-err if convention == "approach" else err)
    total = np.einsum("ij,ijk->ik", step, units)
    count = V.sum(axis=1)
    denom = np.where(count > 0, (2.0 if half else 1.0) * count, 1.0)
    return np.where(count[:, None] > 0, total / denom[:, None], 0.0)


def swarm_shift(D_new, D, V, x, convention="approach"):
    """Half the visibility-averaged distance error along each neighbour bearing.

    ``"approach"`` moves toward a neighbour whose desired distance shrank
    (``D - D_new`` along the bearing); ``"printed"`` uses ``D_new - D``.
    """
    return _averaged_shift(D_new, D, V, _unit_vectors(x, x), True, convention)


def reward_shift(D_r_new, D_r, V_r, x, reward_xy, convention="approach"):
    return _averaged_shift(D_r_new, D_r, V_r, _unit_vectors(x, reward_xy), False, convention)


def combine_shifts(f, f_r, alpha=0.5):
    return alpha * np.asarray(f) + (1.0 - alpha) * np.asarray(f_r)


def _blend_toward_normal(vec, d, n, lam):
    vec = np.asarray(vec, dtype=float)
    beta = np.exp(-np.asarray(d, dtype=float) / lam)[:, None]
    mag = np.linalg.norm(vec, axis=1, keepdims=True)
    return (1.0 - beta) * vec + beta * mag * np.asarray(n, dtype=float)


def barrier_aware_shift(dx, d, n, lam=20.0):
    """Redirect shifts toward the inward wall normal as walls get close.

    ``d`` and ``n`` are the wall distance and normal at the field locations.
    """
    return _blend_toward_normal(dx, d, n, lam)


def field_chase_velocity(x_s, x, dt):
    return (np.asarray(x_s, dtype=float) - np.asarray(x, dtype=float)) / dt


def single_entity_velocity(x_s, x, p, V_delta, dt):
    """Velocity toward the cubic-activation-weighted mean of visible particles."""
    w = np.asarray(V_delta, dtype=float) * np.asarray(p, dtype=float) ** 3
    total = w.sum()
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    if not total > 0:
        return np.zeros_like(x)
    offset = (w[:, None] * (np.asarray(x_s, dtype=float) - x[0])).sum(axis=0)
    return (offset / (dt * total))[None, :]


def momentum_filter(v, v_s, mu=0.9):
    return mu * np.asarray(v, dtype=float) + (1.0 - mu) * np.asarray(v_s, dtype=float)


def speed_limit(v_mu, m, E_max):
    """Saturate speed at ``sqrt(2 E_max / m)`` through a tanh."""
    v_mu = np.asarray(v_mu, dtype=float)
    v_max = np.sqrt(2.0 * E_max / np.asarray(m, dtype=float)).reshape(-1, 1)
    speed = np.linalg.norm(v_mu, axis=1, keepdims=True)
    scale = np.where(speed > 0, v_max * np.tanh(speed / v_max) / np.where(speed > 0, speed, 1.0), 0.0)
    return scale * v_mu


def wall_avoid_velocity(v_k, d, n, lam=20.0):
    return _blend_toward_normal(v_k, d, n, lam)


def project_inside(env: EnvironmentMap, field: WallField, pts):
    """Move points that left the interior to the center of the nearest interior cell."""
    pts = np.array(pts, dtype=float)
    outside = ~env.contains(pts)
    if outside.any():
        rows, cols = env.interior.shape
        col = np.clip(np.floor(pts[outside, 0]).astype(np.int64), 0, cols - 1)
        row = np.clip(np.floor(pts[outside, 1]).astype(np.int64), 0, rows - 1)
        near = field.nearest_interior[row, col]
        pts[outside] = near[:, ::-1] + 0.5
    return pts


def apply_position_updates(x, v, x_s, dx_b, dt, env: EnvironmentMap, field: WallField):
    """Integrate positions and field locations, then project strays back inside."""
    x_new = np.asarray(x, dtype=float) + np.asarray(v, dtype=float) * dt
    xs_new = np.asarray(x_s, dtype=float) + np.asarray(dx_b, dtype=float)
    return project_inside(env, field, x_new), project_inside(env, field, xs_new)
