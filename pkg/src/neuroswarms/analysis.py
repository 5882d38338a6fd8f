"""Post-hoc metrics over simulation records.

Capture counts and times, spatial coverage, path length, ensemble
aggregates, and a phase-order statistic for ring and line formations.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .engine import COVERAGE_BIN, SimulationRecord
from .errors import EmptyRecord

SUMMARY_MAGIC = "#neuroswarms-summary"
ENSEMBLE_MAGIC = "#neuroswarms-ensemble"
TABLE_VERSION = 1
HIST_BIN = 5.0


@dataclass(frozen=True)
class RunSummary:
    rewards_captured: int
    capture_times: tuple  # seconds, ascending
    coverage: float
    path_length: float
    completion: bool
    captured: dict = field(default_factory=dict)  # reward id -> first capture time
    seed: int | None = None
    spawn_site: str | None = None
    duration: float = 0.0
    trajectory_t: np.ndarray | None = field(default=None, repr=False, compare=False)
    trajectory: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class PhaseOrderStat:
    cluster_id: int
    center: np.ndarray
    n_members: int
    circ_corr: float
    members: np.ndarray = field(repr=False)
    bearings: np.ndarray = field(repr=False)


def _tracked(record: SimulationRecord) -> np.ndarray:
    """Positions tracked for coverage and paths: the agent, or the swarm centroid."""
    return record.x[:, 0, :] if record.x.shape[1] == 1 else record.x.mean(axis=1)


def summarize(record: SimulationRecord) -> RunSummary:
    if len(record.t) == 0:
        raise EmptyRecord("record holds no samples")
    meta = record.metadata
    captured: dict = {}
    for t, _agent, rid in record.events:
        captured.setdefault(rid, float(t))
    reward_ids = meta.get("reward_ids", [])

    pts = record.x.reshape(-1, 2)
    bins = np.floor(pts / COVERAGE_BIN).astype(np.int64)
    visited = np.unique(bins, axis=0).shape[0]
    total = meta.get("interior_bins") or visited
    coverage = min(1.0, visited / total)

    steps = np.diff(record.x, axis=0)
    path = float(np.linalg.norm(steps, axis=-1).sum(axis=0).mean()) if len(steps) else 0.0
    return RunSummary(
        rewards_captured=len(captured),
        capture_times=tuple(sorted(captured.values())),
        coverage=float(coverage),
        path_length=path,
        completion=bool(reward_ids) and all(r in captured for r in reward_ids),
        captured=captured,
        seed=meta.get("seed"),
        spawn_site=meta.get("spawn_site"),
        duration=float(meta.get("params", {}).get("duration", record.t[-1])),
        trajectory_t=np.asarray(record.t, dtype=float),
        trajectory=_tracked(record),
    )


# -- phase order -------------------------------------------------------------

def circular_correlation(a, b) -> float:
    """Fisher-Lee circular-circular correlation of two angle samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2:
        return 0.0
    sa = np.sin(a[:, None] - a[None, :])
    sb = np.sin(b[:, None] - b[None, :])
    iu = np.triu_indices(a.size, 1)
    sa, sb = sa[iu], sb[iu]
    denom = math.sqrt(float(np.sum(sa * sa)) * float(np.sum(sb * sb)))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.sum(sa * sb) / denom, -1.0, 1.0))


def cluster_phase_order(points, theta, link: float = 15.0, min_size: int = 5) -> list:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    theta = np.asarray(theta, dtype=float)
    if len(pts) < max(min_size, 2):
        return []
    labels = fcluster(linkage(pts, method="single"), t=link, criterion="distance")
    out = []
    for cid in np.unique(labels):
        members = np.nonzero(labels == cid)[0]
        if members.size < min_size:
            continue
        center = pts[members].mean(axis=0)
        rel = pts[members] - center
        bearings = np.arctan2(rel[:, 1], rel[:, 0])
        out.append(PhaseOrderStat(int(cid), center, int(members.size),
                                  circular_correlation(bearings, theta[members]), members, bearings))
    return out


def phase_order(record: SimulationRecord, t: float, link: float = 15.0, min_size: int = 5) -> list:
    """Clusters at the sample nearest ``t`` with their bearing-phase correlation.

    Multi-agent records cluster agent positions; single-entity records cluster
    the virtual particles, which are the units carrying phases.
    """
    if len(record.t) == 0:
        return []
    k = record.sample_index(t)
    pts = record.x[k] if record.x.shape[1] == record.theta.shape[1] else record.x_s[k]
    return cluster_phase_order(pts, record.theta[k], link, min_size)


def null_exceedance(bearings, threshold: float = 0.5, draws: int = 2000, seed: int = 0) -> float:
    """Probability that uniform random phases reach ``|circ_corr| >= threshold``."""
    rng = np.random.default_rng(seed)
    bearings = np.asarray(bearings, dtype=float)
    hits = 0
    for _ in range(draws):
        phases = rng.uniform(0.0, 2.0 * math.pi, bearings.size)
        hits += abs(circular_correlation(bearings, phases)) >= threshold
    return hits / draws


# -- ensembles ---------------------------------------------------------------

def trajectory_dispersion(summaries, n_grid: int = 200) -> float:
    """Mean pairwise distance between run trajectories on a shared time grid."""
    runs = [s for s in summaries if s.trajectory is not None and len(s.trajectory_t)]
    if len(runs) < 2:
        return 0.0
    lo = max(s.trajectory_t[0] for s in runs)
    hi = min(s.trajectory_t[-1] for s in runs)
    grid = np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo])
    paths = [np.stack([np.interp(grid, s.trajectory_t, s.trajectory[:, d]) for d in (0, 1)], axis=1)
             for s in runs]
    dists = [np.linalg.norm(a - b, axis=1).mean() for a, b in itertools.combinations(paths, 2)]
    return float(np.mean(dists))


def group_by_spawn(summaries) -> dict:
    groups: dict = {}
    for s in summaries:
        groups.setdefault(s.spawn_site or "unknown", []).append(s)
    return groups


def ensemble_stats(summaries) -> dict:
    summaries = list(summaries)
    if not summaries:
        raise ValueError("ensemble_stats needs at least one summary")
    duration = max(s.duration for s in summaries) or max((max(s.capture_times, default=0.0) for s in summaries))
    edges = np.arange(0.0, duration + HIST_BIN, HIST_BIN)
    if edges.size < 2:
        edges = np.array([0.0, HIST_BIN])
    ids = sorted({rid for s in summaries for rid in s.captured})
    hist = {rid: np.histogram([s.captured[rid] for s in summaries if rid in s.captured], bins=edges)[0]
            for rid in ids}
    counts = np.bincount([s.rewards_captured for s in summaries])
    return {
        "runs": len(summaries),
        "completion_fraction": float(np.mean([s.completion for s in summaries])),
        "capture_count_hist": counts,
        "capture_time_edges": edges,
        "capture_time_hist": hist,
        "dispersion": trajectory_dispersion(summaries),
        "mean_coverage": float(np.mean([s.coverage for s in summaries])),
    }


# -- tables ------------------------------------------------------------------

SUMMARY_COLUMNS = ("seed", "rewards_captured", "completion", "coverage", "path_length", "capture_times")


def format_summary_table(summaries) -> str:
    lines = [f"{SUMMARY_MAGIC}\t{TABLE_VERSION}", "\t".join(SUMMARY_COLUMNS)]
    for s in summaries:
        times = ",".join(f"{rid}:{t!r}" for rid, t in sorted(s.captured.items(), key=lambda kv: kv[1]))
        lines.append("\t".join([str(s.seed), str(s.rewards_captured), str(int(s.completion)),
                                repr(s.coverage), repr(s.path_length), times]))
    return "\n".join(lines) + "\n"


def format_ensemble_table(stats: dict) -> str:
    lines = [f"{ENSEMBLE_MAGIC}\t{TABLE_VERSION}", "key\tvalue"]
    lines.append(f"runs\t{stats['runs']}")
    lines.append(f"completion_fraction\t{stats['completion_fraction']!r}")
    lines.append(f"dispersion\t{stats['dispersion']!r}")
    lines.append(f"mean_coverage\t{stats['mean_coverage']!r}")
    lines.append("captured_counts\t" + ",".join(str(int(c)) for c in stats["capture_count_hist"]))
    edges = stats["capture_time_edges"]
    lines.append("capture_time_edges\t" + ",".join(repr(float(e)) for e in edges))
    for rid, h in stats["capture_time_hist"].items():
        lines.append(f"capture_time_hist.{rid}\t" + ",".join(str(int(c)) for c in h))
    return "\n".join(lines) + "\n"
