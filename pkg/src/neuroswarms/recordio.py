"""On-disk formats: simulation records and flat key=value configs.

Records are line-delimited JSON. The first line is a magic + version tag,
the second a header object (schema and run metadata), then one object per
sample or capture event in time order. Floats go through ``repr`` so they
read back bit-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .controller import ControllerParams, coerce_overrides
from .engine import SimulationRecord
from .errors import ConfigError, ParseError

RECORD_MAGIC = "#neuroswarms-record"
RECORD_VERSION = 1
COLUMNS = ("t", "x", "x_s", "theta", "p")


def _rows(a: np.ndarray):
    return a.tolist()


def write_record(record: SimulationRecord, path) -> None:
    path = Path(path)
    header = {
        "columns": list(COLUMNS),
        "n_agents": int(record.x.shape[1]) if record.x.ndim == 3 else 0,
        "n_units": int(record.x_s.shape[1]) if record.x_s.ndim == 3 else 0,
        "metadata": record.metadata,
    }
    events = sorted(record.events, key=lambda e: e[0])
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{RECORD_MAGIC} {RECORD_VERSION}\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        e = 0
        for k in range(len(record.t)):
            while e < len(events) and events[e][0] <= record.t[k]:
                _write_event(fh, events[e])
                e += 1
            fh.write(json.dumps({
                "kind": "sample", "t": float(record.t[k]), "x": _rows(record.x[k]),
                "x_s": _rows(record.x_s[k]), "theta": _rows(record.theta[k]), "p": _rows(record.p[k]),
            }) + "\n")
        for ev in events[e:]:
            _write_event(fh, ev)


def _write_event(fh, ev):
    t, agent, rid = ev
    fh.write(json.dumps({"kind": "event", "t": float(t), "agent": int(agent), "reward": str(rid)}) + "\n")


def read_record(path) -> SimulationRecord:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline().split()
        if len(first) != 2 or first[0] != RECORD_MAGIC:
            raise ParseError(f"{path}: not a record file")
        if int(first[1]) != RECORD_VERSION:
            raise ParseError(f"{path}: unsupported record version {first[1]}")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: bad header: {exc}") from None
        t, x, xs, th, p, events = [], [], [], [], [], []
        for n, line in enumerate(fh, start=3):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{n}: {exc}") from None
            if obj.get("kind") == "event":
                events.append((obj["t"], obj["agent"], obj["reward"]))
            else:
                t.append(obj["t"])
                x.append(obj["x"])
                xs.append(obj["x_s"])
                th.append(obj["theta"])
                p.append(obj["p"])
    na, nu = header.get("n_agents", 0), header.get("n_units", 0)
    return SimulationRecord(
        metadata=header["metadata"],
        t=np.array(t, dtype=float),
        x=np.array(x, dtype=float).reshape(len(t), na, 2),
        x_s=np.array(xs, dtype=float).reshape(len(t), nu, 2),
        theta=np.array(th, dtype=float).reshape(len(t), nu),
        p=np.array(p, dtype=float).reshape(len(t), nu),
        events=events,
    )


# -- configs -------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys are validated."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    coerce_overrides(out)  # rejects unknown keys and bad values early
    return out


def read_config(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def format_config(params: ControllerParams) -> str:
    lines = []
    for key, value in params.to_dict().items():
        if value is None:
            value = "none"
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
