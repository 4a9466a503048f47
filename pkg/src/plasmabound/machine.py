"""
Machine description: sensors, coils, limiter and outer-contour definition,
with a deterministic content hash and a JSON representation.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .boundary import LimiterContour
from .fit import Contour, FluxLoop, MagneticProbe, SaddleLoop, Sensors, make_outer_contour
from .magnetostatics import CoilSet

SCHEMA_VERSION = 1


def _canon(x):
    """Round-trip-safe canonical form used for hashing (floats via repr)."""
    if isinstance(x, dict):
        return {k: _canon(v) for k, v in sorted(x.items())}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return int(x)
    return x


@dataclass(frozen=True)
class MachineDescription:
    """
    Parameters
    ----------
    sensors : Sensors
    coils : CoilSet
    limiter : LimiterContour
    outer : dict
        ``{"kind": "offset", "offset": d, "n": n}`` for a smoothed inward
        offset of the sensor hull, or ``{"kind": "polyline", "points": [...]}``.
    name : str
    """

    sensors: Sensors
    coils: CoilSet
    limiter: LimiterContour
    outer: dict = field(default_factory=lambda: {"kind": "offset", "offset": 0.05, "n": 128})
    name: str = "machine"

    def __post_init__(self):
        if len(self.sensors) == 0:
            raise ValueError("machine needs at least one sensor")

    def outer_contour(self) -> Contour:
        spec = self.outer
        if spec.get("kind") == "polyline":
            return Contour.from_points(np.asarray(spec["points"], float))
        return make_outer_contour(self.sensors, float(spec.get("offset", 0.05)), int(spec.get("n", 128)))

    def check_geometry(self):
        """Limiter must sit inside the outer contour, which must sit inside the sensors' hull."""
        contour = self.outer_contour()
        if not np.all(geometry.points_in_polygon(self.limiter.points, contour.points)):
            raise ValueError("limiter is not inside the outer contour")

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        s = self.sensors
        coils = {}
        for label, group in zip(self.coils.labels, self.coils.groups):
            coils[label] = [[self.coils.filaments[i].r, self.coils.filaments[i].z,
                             self.coils.filaments[i].current] for i in group]
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "probes": [{"pos": list(p.pos), "dir": list(p.dir)} for p in s.probes],
            "flux_loops": [{"pos": list(f.pos)} for f in s.flux_loops],
            "saddle_loops": [{"pos1": list(q.pos1), "pos2": list(q.pos2)} for q in s.saddle_loops],
            "coils": [{"label": k, "filaments": v} for k, v in coils.items()],
            "limiter": self.limiter.points.tolist(),
            "outer": self.outer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MachineDescription":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported machine schema version {version!r}")
        sensors = Sensors(
            tuple(MagneticProbe(tuple(p["pos"]), tuple(p["dir"])) for p in d.get("probes", [])),
            tuple(FluxLoop(tuple(f["pos"])) for f in d.get("flux_loops", [])),
            tuple(SaddleLoop(tuple(q["pos1"]), tuple(q["pos2"])) for q in d.get("saddle_loops", [])),
        )
        coils = CoilSet.from_coils({c["label"]: [tuple(f) for f in c["filaments"]] for c in d.get("coils", [])})
        return cls(sensors, coils, LimiterContour(np.asarray(d["limiter"], float)),
                   dict(d.get("outer", {"kind": "offset", "offset": 0.05, "n": 128})), d.get("name", "machine"))

    @property
    def hash(self) -> str:
        text = json.dumps(_canon(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "MachineDescription":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def d_shape(r0, a, kappa, delta, n=256, phase=0.0):
    """Points of the curve ``r = r0 + a cos(t + delta sin t)``, ``z = kappa a sin t``."""
    t = np.linspace(0, 2 * np.pi, n, endpoint=False) + phase
    return np.column_stack([r0 + a * np.cos(t + delta * np.sin(t)), kappa * a * np.sin(t)])


def _coil(r, z, size=0.06):
    """Four filaments on a square of side ``size``, each carrying a quarter of the coil current."""
    off = 0.25 * size
    return [(r + dr, z + dz, 0.25) for dr in (-off, off) for dz in (-off, off)]


def west_like_machine(n_probes: int = 40, n_loops: int = 20, n_saddles: int = 8,
                      r0: float = 2.5, symmetric: bool = False) -> MachineDescription:
    """
    A medium-size machine with major radius ``r0 = 2.5`` m and a D-shaped
    limiter of half-width 0.52 m. Sensors lie on an ellipse outside the
    limiter; ten poloidal-field coils sit further out. With ``symmetric``
    every sensor and coil has a mirror partner about ``z = 0``.
    """
    def ellipse(n, a, b, phase):
        t = phase + np.linspace(0, 2 * np.pi, n, endpoint=False)
        return t, np.column_stack([r0 + a * np.cos(t), b * np.sin(t)])

    # offsets keep probe and loop sets distinct; zero phase keeps mirror symmetry
    t, pos = ellipse(n_probes, 0.70, 1.08, 0.0 if symmetric else 0.03)
    tang = np.column_stack([-0.70 * np.sin(t), 1.08 * np.cos(t)])
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    probes = tuple(MagneticProbe(tuple(p), tuple(d)) for p, d in zip(pos, tang))
    _, lpos = ellipse(n_loops, 0.74, 1.12, np.pi / n_loops)
    loops = tuple(FluxLoop(tuple(p)) for p in lpos)
    saddles = []
    if n_saddles:
        ts, _ = ellipse(n_saddles, 0.72, 1.10, np.pi / n_saddles)
        for tt in ts:
            a = (r0 + 0.72 * np.cos(tt - 0.08), 1.10 * np.sin(tt - 0.08))
            b = (r0 + 0.72 * np.cos(tt + 0.08), 1.10 * np.sin(tt + 0.08))
            saddles.append(SaddleLoop(a, b))
        if symmetric:
            saddles = [s for s in saddles if s.pos1[1] > 1e-12 or s.pos2[1] > 1e-12]
            saddles += [SaddleLoop((s.pos2[0], -s.pos2[1]), (s.pos1[0], -s.pos1[1])) for s in saddles]
    sensors = Sensors(probes, loops, tuple(saddles))

    angles = np.linspace(0, 2 * np.pi, 10, endpoint=False) + (0.0 if symmetric else np.pi / 10)
    coils = {f"PF{k + 1}": _coil(r0 + 1.05 * np.cos(a), 1.5 * np.sin(a)) for k, a in enumerate(angles)}
    limiter = LimiterContour(d_shape(r0, 0.52, 1.62, 0.0 if symmetric else 0.25, n=96))
    machine = MachineDescription(sensors, CoilSet.from_coils(coils), limiter,
                                 {"kind": "offset", "offset": 0.05, "n": 128}, "west-like")
    machine.check_geometry()
    return machine
