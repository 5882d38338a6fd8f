"""Simulation engine: initialisation, the tick loop, reward capture and records."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import controller as ctl
from . import motion as mo
from .controller import ControllerParams
from .errors import ConfigError, InvalidEnvironment, NumericalDivergence
from .geometry import EnvironmentMap, WallField, build_wall_field, segments_intersect

log = logging.getLogger(__name__)

MULTI = "multi-agent"
SINGLE = "single-entity"
MODE_ALIASES = {"multi": MULTI, "multi-agent": MULTI, "single": SINGLE, "single-entity": SINGLE}
COVERAGE_BIN = 10.0
DEFAULT_MASS = {MULTI: 0.3, SINGLE: 3.0}
RNG_STREAMS = ("spawn", "phases", "preferences", "masses")


@dataclass(frozen=True)
class SimConfig:
    env: EnvironmentMap
    params: ControllerParams = field(default_factory=ControllerParams)
    mode: str = MULTI
    seed: int = 0
    rewards_capturable: bool = False
    record_stride: int = 10
    spawn: str | None = None  # pin the physical agent(s) to one spawn disc id
    backend: str = "numba"

    def __post_init__(self):
        mode = MODE_ALIASES.get(self.mode)
        if mode is None:
            raise ConfigError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        if self.backend not in ("numba", "numpy"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.spawn is not None and self.spawn not in [d.id for d in self.env.spawn_discs]:
            raise ConfigError(f"no spawn disc with id {self.spawn!r}")
        p = self.params
        updates = {}
        if mode == SINGLE and p.N != 1:
            updates["N"] = 1
        if mode == MULTI and p.N != p.N_s:
            updates["N"] = p.N_s
        if p.m is None:
            updates["m"] = DEFAULT_MASS[mode]
        if p.scale is None:
            updates["scale"] = self.env.notional_radius
        if updates:
            object.__setattr__(self, "params", dataclasses.replace(p, **updates))

    @property
    def single(self) -> bool:
        return self.mode == SINGLE

    def metadata(self) -> dict:
        return {
            "seed": int(self.seed),
            "mode": self.mode,
            "rewards_capturable": bool(self.rewards_capturable),
            "record_stride": int(self.record_stride),
            "spawn": self.spawn,
            "params": self.params.to_dict(),
            "resolved": self.params.resolved_dict(),
            "params_hash": params_hash(self.params),
            "env_hash": self.env.source_hash,
            "reward_ids": [m.id for m in self.env.rewards],
            "interior_bins": self.env.interior_bins(COVERAGE_BIN),
        }


def params_hash(params: ControllerParams) -> str:
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Coupling:
    """Per-tick visibility, distances and weights before and after learning."""

    V: np.ndarray
    V_c: np.ndarray
    V_r: np.ndarray
    V_delta: np.ndarray
    D: np.ndarray
    D_r: np.ndarray
    W: np.ndarray
    W_r: np.ndarray
    W_new: np.ndarray
    W_r_new: np.ndarray


@dataclass
class SimState:
    tick: int
    x: np.ndarray
    x_s: np.ndarray
    v: np.ndarray
    m: np.ndarray
    theta: np.ndarray
    c: np.ndarray
    r: np.ndarray
    q: np.ndarray
    p: np.ndarray
    active: np.ndarray
    V_cstar: np.ndarray
    coupling: Coupling | None = None

    def copy(self) -> "SimState":
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in kw.items()}
        kw["coupling"] = None
        return SimState(**kw)

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}


@dataclass
class SimulationRecord:
    metadata: dict
    t: np.ndarray  # (S,)
    x: np.ndarray  # (S, N, 2)
    x_s: np.ndarray  # (S, N_s, 2)
    theta: np.ndarray  # (S, N_s)
    p: np.ndarray  # (S, N_s)
    events: list  # (time s, agent index, reward id)

    def __len__(self):
        return len(self.t)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.metadata, sort_keys=True).encode())
        for arr in (self.t, self.x, self.x_s, self.theta, self.p):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(json.dumps([[float(t), int(a), str(k)] for t, a, k in self.events]).encode())
        return h.hexdigest()

    def sample_index(self, t: float) -> int:
        if len(self.t) == 0:
            raise IndexError("record has no samples")
        return int(np.argmin(np.abs(self.t - t)))


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Counter-based generator for one named stream of a run seed."""
    key = zlib.crc32(stream.encode())
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def _disc_sampler(env: EnvironmentMap, disc, rng):
    rows, cols = env.interior.shape
    r0, r1 = max(int(disc.y - disc.radius), 0), min(int(disc.y + disc.radius) + 1, rows)
    c0, c1 = max(int(disc.x - disc.radius), 0), min(int(disc.x + disc.radius) + 1, cols)
    jj, ii = np.mgrid[r0:r1, c0:c1] + 0.5
    inside = ((ii - disc.x) ** 2 + (jj - disc.y) ** 2 <= disc.radius**2) & env.interior[r0:r1, c0:c1]
    if not inside.any() and not env.contains(np.array([disc.x, disc.y])):
        raise InvalidEnvironment(f"spawn disc {disc.id!r} does not overlap the interior")

    def draw():
        if disc.radius <= 0:
            return np.array([disc.x, disc.y])
        for _ in range(10_000):
            rad = disc.radius * math.sqrt(rng.random())
            ang = 2.0 * math.pi * rng.random()
            pt = np.array([disc.x + rad * math.cos(ang), disc.y + rad * math.sin(ang)])
            if env.contains(pt):
                return pt
        raise InvalidEnvironment(f"could not sample inside spawn disc {disc.id!r}")

    return draw


def _spawn_positions(env, n, rng, pinned=None):
    discs = env.spawn_discs
    if not discs:
        raise InvalidEnvironment("environment defines no spawn discs")
    samplers = [_disc_sampler(env, d, rng) for d in discs]
    ids = [d.id for d in discs]
    out = np.empty((n, 2))
    for i in range(n):
        k = ids.index(pinned) if pinned is not None else int(rng.integers(len(discs)))
        out[i] = samplers[k]()
    return out


def initialize(config: SimConfig) -> SimState:
    env, p = config.env, config.params
    n_s, n_c, n_r = p.N_s, len(env.cues), len(env.rewards)
    spawn_rng = rng_for(config.seed, "spawn")
    if config.single:
        x = _spawn_positions(env, 1, spawn_rng, config.spawn)
        x_s = _spawn_positions(env, n_s, spawn_rng)
    else:
        x = _spawn_positions(env, n_s, spawn_rng, config.spawn)
        x_s = x.copy()
    theta = rng_for(config.seed, "phases").uniform(0.0, ctl.TWO_PI, n_s)
    V_cstar = rng_for(config.seed, "preferences").random((n_s, n_c)) < 0.5
    n_agents = len(x)
    if p.mass_spread > 0 and not config.single:
        m = p.m * (1.0 + rng_for(config.seed, "masses").uniform(-p.mass_spread, p.mass_spread, n_agents))
    else:
        m = np.full(n_agents, float(p.m))
    return SimState(
        tick=0,
        x=x,
        x_s=x_s,
        v=np.zeros((n_agents, 2)),
        m=m,
        theta=theta,
        c=np.zeros((n_s, n_c)),
        r=np.zeros((n_s, n_r)),
        q=np.zeros((n_s, n_s)),
        p=np.zeros(n_s),
        active=np.ones(n_r, dtype=bool),
        V_cstar=V_cstar,
    )


# -- visibility ----------------------------------------------------------------

def pair_visibility(env: EnvironmentMap, pts, d_max):
    """Symmetric inter-unit visibility (range and line of sight) with distances."""
    pts = np.asarray(pts, dtype=float)
    diff = pts[None, :, :] - pts[:, None, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    n = len(pts)
    V = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if D[i, j] <= d_max and not segments_intersect(*pts[i], *pts[j], env.walls).any():
                V[i, j] = V[j, i] = True
    return V, D


def point_visibility(env: EnvironmentMap, pts, targets):
    """Line of sight from each point to each target, with distances."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    diff = targets[None, :, :] - pts[:, None, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    V = np.zeros(D.shape, dtype=bool)
    for i, a in enumerate(pts):
        for k, b in enumerate(targets):
            V[i, k] = (a[0] == b[0] and a[1] == b[1]) or not segments_intersect(*a, *b, env.walls).any()
    return V, D


# -- tick ----------------------------------------------------------------------

_GEOMETRY_CACHE: dict = {}


def _cached(env: EnvironmentMap, kind: str, build: Callable):
    key = (id(env), env.source_hash, kind)
    hit = _GEOMETRY_CACHE.get(key)
    if hit is None or hit[0] is not env:
        if len(_GEOMETRY_CACHE) > 16:
            _GEOMETRY_CACHE.clear()
        hit = (env, build(env))
        _GEOMETRY_CACHE[key] = hit
    return hit[1]


class Engine:
    """Owns the immutable geometry caches for one configuration."""

    def __init__(self, config: SimConfig, field: WallField | None = None):
        self.config = config
        self.env = config.env
        self.field = field if field is not None else _cached(config.env, "field", build_wall_field)
        self.params = config.params
        self.diag = math.hypot(self.env.width, self.env.height)
        self._fast = None
        if config.backend == "numba":
            from . import _kernels

            self.blocks = _cached(config.env, "blocks", _kernels.block_table)
            self._fast = _kernels.FastTick(self)

    def initialize(self) -> SimState:
        return initialize(self.config)

    def tick(self, state: SimState, keep_coupling: bool = False, reuse: bool = False) -> SimState:
        """Advance one tick. ``reuse`` lets the fast path recycle the ``q`` buffer of
        the state from two ticks back; only safe when older states are discarded."""
        if self._fast is not None:
            new = self._fast.tick(state, keep_coupling, reuse)
        else:
            new = self._tick_numpy(state)
            if not keep_coupling:
                new.coupling = None
        if not _finite(new):
            raise NumericalDivergence(f"non-finite state at tick {new.tick}", tick=new.tick)
        return new

    def _tick_numpy(self, s: SimState) -> SimState:
        cfg, p, env = self.config, self.params, self.env
        dt = p.dt
        P = s.x_s if cfg.single else s.x
        reward_xy = env.reward_positions

        # (1) visibility and distances from the tick-start snapshot
        V, D = pair_visibility(env, P, p.D_max_pts)
        V_c, _ = point_visibility(env, P, env.cue_positions)
        V_r, D_r = point_visibility(env, P, reward_xy)
        V_r &= s.active[None, :]
        if cfg.single:
            V_delta = point_visibility(env, s.x, P)[0][0]
        else:
            V_delta = np.ones(len(P), dtype=bool)

        # (2) weights
        W = ctl.compute_swarm_weights(D, V, p.sigma_pts)
        W_r = ctl.compute_reward_weights(D_r, V_r, p.kappa_pts)

        # (3) inputs
        c = ctl.integrate_cue_inputs(s.c, V_c, s.V_cstar, p.tau_c, dt)
        r = ctl.integrate_reward_inputs(s.r, V_r, p.tau_r, dt)
        q = ctl.integrate_swarm_inputs(s.q, V, s.theta, p.tau_q, dt)

        # (4) currents and activation, (5) phase
        I_c, I_r, I_q = ctl.net_currents(c, r, q, W, W_r, V_c, V_r, V, p.g_c, p.g_r, p.g_s)
        act = ctl.activation(I_c, I_r, I_q)
        theta = ctl.advance_phase(s.theta, act, p.omega_0, p.omega_I, dt)

        # (6) learning
        if cfg.single:
            mask, mask_r = ctl.single_entity_masks(V_delta, len(reward_xy))
        else:
            mask = mask_r = None
        W_new = ctl.oja_update_swarm(W, act, q, V, mask, p.eta, dt)
        W_r_new = ctl.oja_update_reward(W_r, act, r, V_r, mask_r, p.eta_r, dt)

        # (7) desired distances, (8) shifts of the field locations
        D_new = mo.invert_swarm_kernel(W_new, p.sigma_pts, p.inverse, V=V, cap=self.diag)
        D_r_new = mo.invert_reward_kernel(W_r_new, p.kappa_pts, V=V_r, cap=self.diag)
        f = mo.swarm_shift(D_new, D, V, P, p.shift)
        f_r = mo.reward_shift(D_r_new, D_r, V_r, P, reward_xy, p.shift)
        dx = mo.combine_shifts(f, f_r, p.alpha)
        d_s, n_s = self.field.sample(s.x_s)
        x_s = s.x_s + mo.barrier_aware_shift(dx, d_s, n_s, p.lambda_)

        # (9) velocity pipeline
        if cfg.single:
            v_s = mo.single_entity_velocity(x_s, s.x, act, V_delta, dt)
        else:
            v_s = mo.field_chase_velocity(x_s, s.x, dt)
        v_mu = mo.momentum_filter(s.v, v_s, p.mu)
        v_k = mo.speed_limit(v_mu, s.m, p.E_max)
        d_x, n_x = self.field.sample(s.x)
        v = mo.wall_avoid_velocity(v_k, d_x, n_x, p.lambda_)

        # (10) integrate and project
        x = mo.project_inside(env, self.field, s.x + v * dt)
        x_s = mo.project_inside(env, self.field, x_s)

        new = SimState(
            tick=s.tick + 1, x=x, x_s=x_s, v=v, m=s.m, theta=theta, c=c, r=r, q=q, p=act,
            active=s.active.copy(), V_cstar=s.V_cstar,
            coupling=Coupling(V, V_c, V_r, V_delta, D, D_r, W, W_r, W_new, W_r_new),
        )
        return new


def _finite(s: SimState) -> bool:
    return all(np.isfinite(a).all() for a in (s.x, s.x_s, s.v, s.theta, s.c, s.r, s.q, s.p))


def check_reward_capture(state: SimState, config: SimConfig, contacted=None):
    """Contact events for this tick; deactivates rewards when they are capturable.

    With fixed rewards the first contact with each reward is still reported
    (``contacted`` tracks which were already seen) but nothing deactivates.
    """
    env, p = config.env, config.params
    if not env.rewards:
        return []
    t = state.tick * p.dt
    reward_xy = env.reward_positions
    dist = np.linalg.norm(state.x[:, None, :] - reward_xy[None, :, :], axis=-1)
    events = []
    for k, reward in enumerate(env.rewards):
        if config.rewards_capturable:
            if not state.active[k]:
                continue
        elif contacted is not None and contacted[k]:
            continue
        hits = np.nonzero(dist[:, k] <= p.d_rad)[0]
        if hits.size == 0:
            continue
        agent = int(hits[np.argmin(dist[hits, k])])
        events.append((t, agent, reward.id))
        if config.rewards_capturable:
            state.active[k] = False
        if contacted is not None:
            contacted[k] = True
    return events


def spawn_site(env: EnvironmentMap, x) -> str:
    """Id of the spawn disc nearest the agents' mean start, or ``"mixed"`` if they span several."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    if not env.spawn_discs:
        return "none"
    centers = np.array([[d.x, d.y] for d in env.spawn_discs])
    nearest = np.argmin(np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=-1), axis=1)
    if np.all(nearest == nearest[0]):
        return env.spawn_discs[int(nearest[0])].id
    return "mixed"


def run(config: SimConfig, monitor: Callable | None = None, engine: Engine | None = None,
        field: WallField | None = None) -> SimulationRecord:
    """Run ``duration / dt`` ticks and return the sampled record.

    ``monitor(state)`` is called at every sampled tick with the coupling
    matrices attached.
    """
    eng = engine if engine is not None else Engine(config, field)
    p = config.params
    n_ticks = p.n_ticks
    stride = config.record_stride
    n_samples = n_ticks // stride
    state = eng.initialize()
    n_ag, n_s = len(state.x), len(state.x_s)
    t = np.empty(n_samples)
    xs = np.empty((n_samples, n_ag, 2))
    fs = np.empty((n_samples, n_s, 2))
    th = np.empty((n_samples, n_s))
    pp = np.empty((n_samples, n_s))
    events: list = []
    contacted = np.zeros(len(config.env.rewards), dtype=bool)
    k = 0

    meta = config.metadata()
    meta["spawn_site"] = spawn_site(config.env, state.x)

    def partial():
        return SimulationRecord(dict(meta), t[:k].copy(), xs[:k].copy(), fs[:k].copy(),
                                th[:k].copy(), pp[:k].copy(), list(events))

    for step in range(1, n_ticks + 1):
        sampled = step % stride == 0
        try:
            state = eng.tick(state, keep_coupling=sampled and monitor is not None, reuse=True)
        except NumericalDivergence as exc:
            exc.record = partial()
            raise
        events.extend(check_reward_capture(state, config, contacted))
        if sampled:
            t[k] = step * p.dt
            xs[k], fs[k], th[k], pp[k] = state.x, state.x_s, state.theta, state.p
            k += 1
            if monitor is not None:
                monitor(state)
    return partial()
