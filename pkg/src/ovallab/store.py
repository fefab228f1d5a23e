"""Binary archives for trajectories and Gaussian frames.

Layout of an ``.ovl`` file::

    b"OVL1"            magic
    u8                 format version
    u32 (LE)           length of the JSON header in bytes
    JSON header        kind, symmetry, grid, arrays table, normalization, provenance
    float64 (LE) data  arrays in the order of the header's table
    32 bytes           SHA-256 of everything before it

A ``<file>.json`` sidecar repeats the header and the checksum for
inspection.  Files are written to a temporary name in the target directory
and renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .flow import FlowTrajectory, NormalizationRecord, SolverError
from .geometry import AngularGrid, GeometryError, Reduction, SymmetrySpec
from .spectral import GaussianFrame, build_frame

MAGIC = b"OVL1"
VERSION = 1
_PRE = struct.Struct("<4sBI")
_DIGEST = 32


class ArchiveError(Exception):
    pass


class ArchiveParseError(ArchiveError):
    pass


class ArchiveVersionError(ArchiveError):
    pass


class ArchiveChecksumError(ArchiveError):
    pass


class ArchiveInvariantError(ArchiveError):
    pass


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ----------------------------------------------------------------------------
# writing

def _write_atomic(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(header: dict, arrays: list) -> tuple:
    header = dict(header)
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    hb = json.dumps(header, sort_keys=True).encode()
    body = bytearray(_PRE.pack(MAGIC, VERSION, len(hb)))
    body += hb
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    digest = hashlib.sha256(body).digest()
    return bytes(body) + digest, header, digest.hex()


def _write(path, header: dict, arrays: list) -> Path:
    path = Path(path)
    payload, header, hexd = _pack(header, arrays)
    _write_atomic(path, payload)
    side = dict(header, sha256=hexd, format_version=VERSION)
    _write_atomic(path.with_name(path.name + ".json"), (json.dumps(side, sort_keys=True, indent=2) + "\n").encode())
    return path


def save(obj, path, provenance: dict | None = None) -> Path:
    """Write a :class:`FlowTrajectory` or :class:`GaussianFrame` archive."""
    if isinstance(obj, FlowTrajectory):
        return save_trajectory(obj, path, provenance)
    if isinstance(obj, GaussianFrame):
        header = {"kind": "frame", "k": obj.k, "order": obj.order, "provenance": provenance or {}}
        return _write(path, header, [("nodes", obj.nodes), ("weights", obj.weights)])
    raise TypeError(f"cannot archive {type(obj).__name__}")


def save_trajectory(traj: FlowTrajectory, path, provenance: dict | None = None) -> Path:
    header = {
        "kind": "trajectory",
        "sym": {"n": traj.sym.n, "k": traj.sym.k, "reduction": traj.sym.reduction.value},
        "grid": {"shape": list(traj.grid.shape), "stretch": list(traj.grid.stretch)},
        "renormalized": traj.is_renormalized,
        "t_ext": traj.t_ext,
        "norm": None if traj.norm is None else {
            "log_lam": traj.norm.log_lam, "tshift": traj.norm.tshift, "mu": traj.norm.mu,
            "density_at_minus_mu2": traj.norm.density_at_minus_mu2, "target_density": traj.norm.target_density},
        "meta": traj.meta,
        "provenance": provenance or {},
    }
    clock = ("taus", traj.taus) if traj.is_renormalized else ("times", traj.times)
    data = ("shapes", traj.shapes) if traj.is_renormalized else ("rho", traj.rho)
    return _write(path, header, [clock, data])


# ----------------------------------------------------------------------------
# reading

def _read(path) -> tuple:
    raw = Path(path).read_bytes()
    if len(raw) < _PRE.size:
        raise ArchiveParseError(f"parse error: {path} is too short to be an archive ({len(raw)} bytes)")
    magic, version, hlen = _PRE.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveParseError(f"parse error: bad magic {magic!r} in {path}")
    if version != VERSION:
        raise ArchiveVersionError(f"unsupported version {version} in {path} (expected {VERSION})")
    if len(raw) < _PRE.size + _DIGEST or hashlib.sha256(raw[:-_DIGEST]).digest() != raw[-_DIGEST:]:
        raise ArchiveChecksumError(f"checksum mismatch in {path}")
    try:
        header = json.loads(raw[_PRE.size:_PRE.size + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveParseError(f"parse error: header of {path}: {e}") from None
    arrays = {}
    off = _PRE.size + hlen
    end = len(raw) - _DIGEST
    for spec in header.get("arrays", []):
        shape = tuple(int(s) for s in spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > end:
            raise ArchiveInvariantError(f"array {spec['name']!r} overruns the data section of {path}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).astype(float)
        off += nbytes
    if off != end:
        raise ArchiveInvariantError(f"{end - off} unexplained bytes in the data section of {path}")
    return header, arrays


def load(path):
    """Read an archive written by :func:`save` and revalidate its invariants."""
    header, arrays = _read(path)
    kind = header.get("kind")
    if kind == "frame":
        fr = build_frame(int(header["k"]), int(header["order"]))
        if not (np.array_equal(fr.nodes, arrays.get("nodes")) and np.array_equal(fr.weights, arrays.get("weights"))):
            raise ArchiveInvariantError(f"frame arrays in {path} differ from the rule they declare")
        return fr
    if kind != "trajectory":
        raise ArchiveParseError(f"parse error: unknown archive kind {kind!r}")
    try:
        s = header["sym"]
        sym = SymmetrySpec(int(s["n"]), int(s["k"]), Reduction(s["reduction"]))
        grid = AngularGrid(tuple(header["grid"]["shape"]), tuple(header["grid"]["stretch"]))
        nr = header.get("norm")
        norm = None if nr is None else NormalizationRecord(nr["log_lam"], nr["tshift"], nr["density_at_minus_mu2"],
                                                           nr["target_density"], nr["mu"])
        if header["renormalized"]:
            traj = FlowTrajectory.renormalized(sym, grid, arrays["taus"], arrays["shapes"], header["t_ext"],
                                               norm=norm, meta=header.get("meta"))
        else:
            traj = FlowTrajectory(sym, grid, arrays["rho"], times=arrays["times"], norm=norm, meta=header.get("meta"))
    except KeyError as e:
        raise ArchiveParseError(f"parse error: missing field {e} in {path}") from None
    except (SolverError, GeometryError, ValueError) as e:
        raise ArchiveInvariantError(f"invariant error in {path}: {e}") from None
    return traj


def provenance(path) -> dict:
    """Provenance block of an archive (checksum verified)."""
    header, _ = _read(path)
    return header.get("provenance", {})


__all__ = [
    "ArchiveChecksumError", "ArchiveError", "ArchiveInvariantError", "ArchiveParseError",
    "ArchiveVersionError", "MAGIC", "VERSION", "config_hash", "load", "provenance", "save",
    "save_trajectory",
]
