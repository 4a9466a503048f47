"""
File formats used by the command-line pipeline.

Measurement records, one JSON object per line::

    {"schema_version": 1, "seq": 0, "time": 0.0,
     "b": [...], "f": [...], "s": [...],
     "coil_currents": {"PF1": ..., ...},
     "sigmas": [sigma_B, sigma_f, sigma_s]}          # optional

``b``, ``f`` and ``s`` follow the sensor order of the machine file. Results
are JSON lines produced by ``ReconstructionResult.to_record``. A reference
boundary is a single JSON object with ``r``, ``z`` (closed polyline),
``psi_p``, ``kind``, ``xpoint`` and ``minor_radius``. Scenario files are
JSON objects described in the ``cli`` module.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fit import MeasurementSet

SCHEMA_VERSION = 1


def _check_version(rec: dict, what: str):
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported {what} schema version {rec.get('schema_version')!r}")


def measurement_record(seq: int, time: float, meas: MeasurementSet, currents: dict,
                       sigmas=None) -> dict:
    rec = {"schema_version": SCHEMA_VERSION, "seq": int(seq), "time": float(time),
           "b": meas.b_values.tolist(), "f": meas.f_values.tolist(), "s": meas.s_values.tolist(),
           "coil_currents": {k: float(v) for k, v in currents.items()}}
    if sigmas is not None:
        rec["sigmas"] = [float(x) for x in sigmas]
    return rec


def parse_measurement(rec: dict, default_sigmas) -> tuple:
    """``(seq, time, MeasurementSet, currents)`` from one record."""
    _check_version(rec, "measurement")
    sig = rec.get("sigmas") or default_sigmas
    meas = MeasurementSet(rec["b"], rec["f"], rec["s"], *sig)
    return int(rec.get("seq", 0)), rec.get("time"), meas, dict(rec.get("coil_currents", {}))


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(source):
    """Records from a path or an open text stream; blank lines are skipped."""
    fh = open(source) if isinstance(source, (str, Path)) else source
    try:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
    finally:
        if fh is not source:
            fh.close()


def boundary_record(polyline, psi_p, kind, xpoint, minor_radius) -> dict:
    p = np.asarray(polyline, float)
    return {"schema_version": SCHEMA_VERSION, "r": p[:, 0].tolist(), "z": p[:, 1].tolist(),
            "psi_p": float(psi_p), "kind": kind, "xpoint": None if xpoint is None else list(map(float, xpoint)),
            "minor_radius": float(minor_radius)}


def read_boundary(path) -> dict:
    """Reference boundary with ``polyline`` added as an ``(n, 2)`` array."""
    with open(path) as fh:
        rec = json.load(fh)
    _check_version(rec, "boundary")
    rec["polyline"] = np.column_stack([rec["r"], rec["z"]])
    return rec


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
