"""Neural controller: distance-derived weights, leaky inputs, activation, phase, Oja learning.

Every function here is a pure numpy transformation of explicit state. Shapes
follow the swarm convention: ``N_s`` swarm units (agents or virtual
particles), ``N_c`` cues and ``N_r`` rewards.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
W_FLOOR = 1e-12

# config-file spelling -> attribute name (``lambda`` is reserved in Python)
KEY_ALIASES = {"lambda": "lambda_"}
SCALED = ("sigma", "kappa", "D_max")


@dataclass(frozen=True)
class ControllerParams:
    """Controller constants. ``sigma``, ``kappa`` and ``D_max`` are in units of the
    environment's notional radius until :meth:`resolve` fixes ``scale``."""

    dt: float = 0.01
    duration: float = 180.0
    N: int = 300
    N_s: int = 300
    D_max: float = 1.0
    E_max: float = 3e3
    mu: float = 0.9
    m: float | None = None  # None: 0.3 kg multi-agent, 3.0 kg single-entity
    sigma: float = 1.0
    kappa: float = 1.0
    eta: float = 1.0
    eta_r: float = 1.0
    omega_0: float = 0.0
    omega_I: float = 1.0
    g_c: float = 0.4
    g_r: float = 0.2
    g_s: float = 0.4
    tau_c: float = 0.5
    tau_r: float = 0.5
    tau_q: float = 0.1
    d_rad: float = 0.0
    alpha: float = 0.5
    lambda_: float = 20.0
    # not in the parameter table
    inverse: str = "verbatim"  # "verbatim" | "exact" kernel inversion for desired distances
    mass_spread: float = 0.0  # fractional half-width of a uniform mass spread (multi-agent)
    gain_override: bool = False  # allow gains that do not sum to 1
    shift: str = "approach"  # "approach" | "printed" sign of the distance-error shifts
    scale: float | None = None  # notional radius applied to sigma/kappa/D_max

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.gain_override and abs(self.g_c + self.g_r + self.g_s - 1.0) > 1e-9:
            raise ConfigError(
                f"gains must sum to 1 (g_c + g_r + g_s = {self.g_c + self.g_r + self.g_s!r}); "
                "set gain_override=1 to allow this"
            )
        if self.scale is not None and not self.scale > 0:
            raise ConfigError("scale must be > 0")
        for name in ("dt", "tau_c", "tau_r", "tau_q", "sigma", "kappa", "lambda_"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("duration", "D_max", "E_max", "eta", "eta_r", "d_rad"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.mu <= 1 or not 0 <= self.alpha <= 1:
            raise ConfigError("mu and alpha must lie in [0, 1]")
        if self.m is not None and not self.m > 0:
            raise ConfigError("m must be > 0")
        if not 0 <= self.mass_spread < 1:
            raise ConfigError("mass_spread must lie in [0, 1)")
        if self.inverse not in ("verbatim", "exact"):
            raise ConfigError(f"inverse must be 'verbatim' or 'exact', got {self.inverse!r}")
        if self.shift not in ("approach", "printed"):
            raise ConfigError(f"shift must be 'approach' or 'printed', got {self.shift!r}")
        if self.N < 1 or self.N_s < 1:
            raise ConfigError("N and N_s must be >= 1")

    # resolved (points) values
    @property
    def _scale(self) -> float:
        if self.scale is None:
            raise ConfigError("parameters are not resolved against an environment yet")
        return self.scale

    @property
    def sigma_pts(self) -> float:
        return self.sigma * self._scale

    @property
    def kappa_pts(self) -> float:
        return self.kappa * self._scale

    @property
    def D_max_pts(self) -> float:
        return self.D_max * self._scale

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def resolve(self, notional_radius: float) -> "ControllerParams":
        return dataclasses.replace(self, scale=float(notional_radius))

    def with_overrides(self, overrides: dict[str, Any]) -> "ControllerParams":
        return dataclasses.replace(self, **coerce_overrides(overrides))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            key = "lambda" if f.name == "lambda_" else f.name
            out[key] = getattr(self, f.name)
        return out

    def resolved_dict(self) -> dict[str, float]:
        return {"sigma": self.sigma_pts, "kappa": self.kappa_pts, "D_max": self.D_max_pts}


_FIELD_TYPES = {f.name: f.type for f in fields(ControllerParams)}


def coerce_overrides(overrides: dict[str, Any]) -> dict[str, Any]:
    """Map config keys to typed ControllerParams fields; unknown keys are rejected."""
    out = {}
    for key, value in overrides.items():
        name = KEY_ALIASES.get(key, key)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown parameter {key!r}")
        out[name] = _coerce(name, value)
    return out


def _coerce(name, value):
    kind = _FIELD_TYPES[name]
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if "None" in kind and text.lower() in ("", "none", "default"):
            return None
        if kind == "int":
            return int(float(text))
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "str":
            return text
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None


# -- weights ---------------------------------------------------------------

def compute_swarm_weights(D, V, sigma):
    """Gaussian distance kernel gated by visibility."""
    D = np.asarray(D, dtype=float)
    return np.where(V, np.exp(-(D * D) / (sigma * sigma)), 0.0)


def compute_reward_weights(D_r, V_r, kappa):
    """Exponential distance kernel gated by reward visibility."""
    D_r = np.asarray(D_r, dtype=float)
    return np.where(V_r, np.exp(-D_r / kappa), 0.0)


# -- leaky inputs ----------------------------------------------------------

def integrate_cue_inputs(c, V_c, V_cstar, tau_c, dt):
    drive = np.logical_and(V_c, V_cstar).astype(float)
    return c + (dt / tau_c) * (drive - c)


def integrate_reward_inputs(r, V_r, tau_r, dt):
    return r + (dt / tau_r) * (np.asarray(V_r, dtype=float) - r)


def integrate_swarm_inputs(q, V, theta, tau_q, dt):
    """Phase-modulated recurrent input; ``q[i, j]`` is post ``i``, pre ``j``."""
    theta = np.asarray(theta, dtype=float)
    drive = np.where(V, np.cos(theta[None, :] - theta[:, None]), 0.0)
    return q + (dt / tau_q) * (drive - q)


# -- currents, activation, phase --------------------------------------------

def _normalized_sum(total, n_visible, gain):
    n_visible = np.asarray(n_visible, dtype=float)
    safe = np.where(n_visible > 0, n_visible, 1.0)
    return np.where(n_visible > 0, gain * total / safe, 0.0)


def net_currents(c, r, q, W, W_r, V_c, V_r, V, g_c, g_r, g_s):
    """Gain-scaled, visibility-normalised cue, reward and swarm currents.

    Only currently visible cues enter the cue sum. A cue that just dropped out
    of view still carries a decaying ``c``; counting it against the smaller
    visible count would let ``p`` exceed 1.
    """
    I_c = _normalized_sum(np.sum(np.where(V_c, c, 0.0), axis=1), np.sum(V_c, axis=1), g_c)
    I_r = _normalized_sum(np.sum(W_r * r, axis=1), np.sum(V_r, axis=1), g_r)
    I_q = _normalized_sum(np.sum(W * q, axis=1), np.sum(V, axis=1), g_s)
    return I_c, I_r, I_q


def activation(I_c, I_r, I_q):
    return np.maximum(0.0, np.asarray(I_c) + I_r + I_q)


def advance_phase(theta, p, omega_0, omega_I, dt):
    """Advance phases by ``2*pi*(omega_0 + omega_I*p)*dt`` (frequencies in cycles/s)."""
    out = np.mod(np.asarray(theta, dtype=float) + TWO_PI * (omega_0 + omega_I * np.asarray(p)) * dt, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


# -- Oja learning -----------------------------------------------------------

def _oja(W, p, drive, V, mask, rate, dt):
    p = np.asarray(p, dtype=float)[:, None]
    V = np.asarray(V, dtype=bool)
    gate = V if mask is None else V & np.asarray(mask, dtype=bool)
    dW = dt * rate * p * (drive - p * W)
    # clamp only connected entries; unconnected weights pass through untouched
    return np.where(V, np.clip(np.where(gate, W + dW, W), W_FLOOR, 1.0), W)


def oja_update_swarm(W, p, q, V, mask=None, eta=1.0, dt=0.01):
    """Oja-normalised Hebbian step on the recurrent weights, clamped to ``[1e-12, 1]``.

    ``mask`` (same shape as ``W``) freezes entries in single-entity mode.
    """
    return _oja(W, p, q, V, mask, eta, dt)


def oja_update_reward(W_r, p, r, V_r, mask=None, eta_r=1.0, dt=0.01):
    return _oja(W_r, p, r, V_r, mask, eta_r, dt)


def single_entity_masks(V_delta, n_rewards):
    """Learning masks for the recurrent and reward weights from agent-to-particle visibility."""
    V_delta = np.asarray(V_delta, dtype=bool)
    return V_delta[:, None] & V_delta[None, :], np.repeat(V_delta[:, None], n_rewards, axis=1)
