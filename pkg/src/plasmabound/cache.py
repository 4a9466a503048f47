"""
Binary container for a precomputed mesh bank.

Layout::

    b"PBKVBANK"            8-byte magic
    uint32 (LE)            format version
    uint64 (LE)            header length in bytes
    header                 UTF-8 JSON, see below
    array data             raw little-endian buffers, 8-byte aligned

The header holds ``machine_hash``, ``h``, ``epsilon``, ``radius``, a
``created`` timestamp of fixed width, one ``entries`` item per bank center
(center, inner contour, ``n_inner``, ``inertia``) and an ``arrays`` table
mapping names to ``dtype``, ``shape``, ``offset`` and ``nbytes``. Offsets
count from the start of the array data.

Per entry ``k`` the arrays are ``k/nodes``, ``k/triangles``, ``k/outer``
(ordered outer-boundary node indices), ``k/tags`` (0 interior, 1 inner,
2 outer), ``k/outer_curve``, the CSR parts of ``k/K`` and ``k/Mb``,
``k/S``, ``k/S_D``, ``k/S_N`` and ``k/S_chol`` (upper Cholesky factor of
``S``). The sparse LU factors of ``A_DD`` and ``A_DN`` are rebuilt on load.
"""
from __future__ import annotations

import json
import struct
import time

import numpy as np
import scipy.sparse as sp

from .errors import MachineMismatch, VersionMismatch
from .fem import BankEntry, FemSystem, MeshBank, _SPDFactor
from .mesh import InnerContour, TriMesh

MAGIC = b"PBKVBANK"
FORMAT_VERSION = 1
_ALIGN = 8


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _entry_arrays(k: int, entry: BankEntry) -> dict:
    m, s = entry.mesh, entry.system
    c, lower = s.S_factor
    tags = np.zeros(m.n_nodes, np.int8)
    tags[m.inner] = 1
    tags[m.outer] = 2
    out = {
        "nodes": m.nodes, "triangles": m.triangles, "outer": m.outer, "tags": tags,
        "outer_curve": m.outer_curve if m.outer_curve is not None else np.zeros((0, 2)),
        "S": s.S, "S_D": s.S_D, "S_N": s.S_N, "S_chol": np.triu(c.T if lower else c),
    }
    for name, mat in (("K", s.K), ("Mb", s.Mb)):
        mat = sp.csr_matrix(mat)
        mat.sort_indices()
        out[name + ".data"], out[name + ".indices"], out[name + ".indptr"] = mat.data, mat.indices, mat.indptr
        out[name + ".shape"] = np.array(mat.shape, np.int64)
    return {f"{k}/{name}": np.ascontiguousarray(a) for name, a in out.items()}


def save_bank(path, bank: MeshBank, machine_hash: str, created: str | None = None):
    """Write ``bank`` to ``path``; only ``created`` differs between runs on equal inputs."""
    arrays, entries = {}, []
    for k, e in enumerate(bank.entries):
        arrays.update(_entry_arrays(k, e))
        inner = e.inner
        entries.append({"center": list(e.center),
                        "inner": {"center": list(inner.center), "semi_axes": list(inner.semi_axes),
                                  "shape": inner.shape},
                        "n_inner": int(e.mesh.n_inner), "inertia": list(e.system.inertia)})
    table, offset = {}, 0
    for name, a in arrays.items():
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        arrays[name] = a
        table[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes}
        offset += -(-a.nbytes // _ALIGN) * _ALIGN
    header = {"schema_version": FORMAT_VERSION, "machine_hash": machine_hash, "h": bank.h,
              "epsilon": bank.epsilon, "radius": bank.radius, "created": created or _timestamp(),
              "entries": entries, "arrays": table}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob += b" " * (-len(blob) % _ALIGN)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name, a in arrays.items():
            raw = a.tobytes()
            fh.write(raw)
            fh.write(b"\0" * (-len(raw) % _ALIGN))


def read_header(path) -> dict:
    """Parse and validate the header only."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise VersionMismatch("not a mesh-bank cache (bad magic)")
    head = fh.read(12)
    if len(head) != 12:
        raise VersionMismatch("truncated cache header")
    version, length = struct.unpack("<IQ", head)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"cache format version {version}, expected {FORMAT_VERSION}")
    blob = fh.read(length)
    try:
        header = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VersionMismatch(f"unreadable cache header: {exc}") from exc
    if not isinstance(header, dict) or header.get("schema_version") != FORMAT_VERSION:
        raise VersionMismatch("cache header schema version mismatch")
    return header


def load_bank(path, machine_hash: str | None = None) -> MeshBank:
    """
    Read a bank written by :func:`save_bank`. With ``machine_hash`` the
    stored hash must match, otherwise :class:`MachineMismatch` is raised.
    """
    with open(path, "rb") as fh:
        header = _read_header(fh)
        data = fh.read()
    if machine_hash is not None and header["machine_hash"] != machine_hash:
        raise MachineMismatch(f"cache was built for machine {header['machine_hash'][:12]}, "
                              f"not {machine_hash[:12]}")
    table = header["arrays"]

    def get(name):
        t = table[name]
        if t["offset"] + t["nbytes"] > len(data):
            raise VersionMismatch(f"cache array {name} is truncated")
        a = np.frombuffer(data, dtype=np.dtype(t["dtype"]), count=int(np.prod(t["shape"], dtype=np.int64)),
                          offset=t["offset"])
        return a.reshape(t["shape"]).astype(a.dtype.newbyteorder("="))

    def csr(prefix):
        shape = tuple(get(prefix + ".shape"))
        return sp.csr_matrix((get(prefix + ".data"), get(prefix + ".indices"), get(prefix + ".indptr")),
                             shape=shape)

    entries = []
    for k, info in enumerate(header["entries"]):
        p = f"{k}/"
        ic = info["inner"]
        inner = InnerContour(tuple(ic["center"]), tuple(ic["semi_axes"]), ic["shape"])
        curve = get(p + "outer_curve")
        mesh = TriMesh(get(p + "nodes"), get(p + "triangles"), int(info["n_inner"]), get(p + "outer"),
                       inner, curve if len(curve) else None)
        K = csr(p + "K")
        interior = mesh.interior
        dn = np.concatenate([interior, mesh.outer])
        system = FemSystem(mesh, K, csr(p + "Mb"), _SPDFactor(K[interior][:, interior], "A_DD"),
                           _SPDFactor(K[dn][:, dn], "A_DN"), float(header["epsilon"]),
                           get(p + "S"), get(p + "S_D"), get(p + "S_N"), (get(p + "S_chol"), False),
                           tuple(info["inertia"]))
        entries.append(BankEntry(tuple(info["center"]), inner, mesh, system))
    return MeshBank(entries, float(header["h"]), float(header["epsilon"]), float(header["radius"]))
