"""Persistent containers for cubes and preprocessed spectra, plus label codecs.

The on-disk format ("CRNS") is a single file holding named arrays:

    bytes 0-3   magic "CRNS"
    bytes 4-5   version, u16 little-endian
    bytes 6-9   directory length, u32 little-endian
    directory   UTF-8 JSON: {"arrays": [...], "meta": {...}}
    payload     arrays back to back, each start 64-byte aligned

Each directory entry records name, dtype (numpy string, little-endian),
shape, offset (relative to the 64-byte-aligned payload start), byte length,
and a CRC32. Readers must reject mismatched magic/version, overlapping or
short entries, and CRC failures.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .spectral import WavenumberAxis

__all__ = [
    "CORE_TYPES",
    "SUBTYPES",
    "SUBTYPE_NONE",
    "HyperCube",
    "SpectraSet",
    "encode_labels",
    "subtype_one_hot",
    "write_container",
    "read_container",
    "write_spectraset",
    "read_spectraset",
    "write_cube",
    "read_cube",
    "spectraset_to_csv",
    "spectraset_from_csv",
]

MAGIC = b"CRNS"
VERSION = 1
_ALIGN = 64

CORE_TYPES = ("AT", "CA")
SUBTYPES = ("LA", "LB", "HER2", "TNBC")
SUBTYPE_NONE = -1


def encode_labels(core_type: str, subtype: str | None) -> tuple[int, np.ndarray | None]:
    """Binary type code plus the subtype one-hot row (None for AT).

    CA maps to 1 and AT to 0; the one-hot ordering is (LA, LB, HER2, TNBC).
    """
    if core_type not in CORE_TYPES:
        raise DataError(f"unknown core type {core_type!r}")
    if subtype in (None, "none"):
        subtype = None
    if core_type == "CA":
        if subtype is None:
            raise DataError("CA cores must carry a subtype")
        if subtype not in SUBTYPES:
            raise DataError(f"unknown subtype {subtype!r}")
        one_hot = np.zeros(len(SUBTYPES), dtype=np.float32)
        one_hot[SUBTYPES.index(subtype)] = 1.0
        return 1, one_hot
    if subtype is not None:
        raise DataError("AT cores cannot carry a subtype")
    return 0, None


def subtype_one_hot(codes: np.ndarray) -> np.ndarray:
    """One-hot matrix for an array of subtype codes (0..3); -1 rows rejected."""
    codes = np.asarray(codes)
    if np.any((codes < 0) | (codes >= len(SUBTYPES))):
        raise DataError("subtype codes must be in 0..3 for one-hot encoding")
    return np.eye(len(SUBTYPES), dtype=np.float32)[codes]


# ---------------------------------------------------------------------------
# data model


@dataclass
class HyperCube:
    """One imaged core: rows x cols x wavenumbers plus identity metadata."""

    intensities: np.ndarray
    axis: WavenumberAxis
    core_id: int
    patient_id: int
    core_type: str  # CA | AT | H2O (environment image)
    subtype: str    # LA | LB | HER2 | TNBC | none

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities)
        if self.intensities.ndim != 3:
            raise DataError("cube intensities must be rows x cols x points")
        if self.intensities.shape[2] != self.axis.n_points:
            raise DataError("cube spectral dimension does not match axis")
        if self.intensities.shape[0] < 1 or self.intensities.shape[1] < 1:
            raise DataError("cube must have at least one pixel")
        if self.core_type not in CORE_TYPES + ("H2O",):
            raise DataError(f"unknown core type {self.core_type!r}")
        if self.core_type == "CA":
            if self.subtype not in SUBTYPES:
                raise DataError("CA cubes must carry a subtype")
        elif self.subtype != "none":
            raise DataError(f"{self.core_type} cubes must carry subtype 'none'")

    @property
    def rows(self) -> int:
        return self.intensities.shape[0]

    @property
    def cols(self) -> int:
        return self.intensities.shape[1]

    @property
    def n_spectra(self) -> int:
        return self.rows * self.cols

    def spectra_matrix(self) -> np.ndarray:
        """(rows*cols, n_points) view of the cube, row-major pixel order."""
        return self.intensities.reshape(self.n_spectra, self.axis.n_points)


@dataclass
class SpectraSet:
    """Preprocessed spectra with per-spectrum labels and pixel provenance."""

    spectra: np.ndarray      # (n, p) float32 in [0, 1]
    patient_id: np.ndarray   # (n,) int32
    core_id: np.ndarray      # (n,) int32
    row: np.ndarray          # (n,) int32
    col: np.ndarray          # (n,) int32
    core_type: np.ndarray    # (n,) int8, 0=AT 1=CA
    subtype: np.ndarray      # (n,) int8, 0..3 or -1 for AT
    axis: WavenumberAxis

    def __post_init__(self):
        self.spectra = np.asarray(self.spectra, dtype=np.float32)
        for name in ("patient_id", "core_id", "row", "col"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int32))
        self.core_type = np.asarray(self.core_type, dtype=np.int8)
        self.subtype = np.asarray(self.subtype, dtype=np.int8)

        n = self.spectra.shape[0]
        if self.spectra.ndim != 2 or self.spectra.shape[1] != self.axis.n_points:
            raise DataError("spectra must be (n, axis.n_points)")
        for name in ("patient_id", "core_id", "row", "col", "core_type", "subtype"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"{name} must have one entry per spectrum")
        if n and (self.spectra.min() < 0.0 or self.spectra.max() > 1.0):
            raise DataError("spectra must lie in [0, 1] after min-max normalization")
        at = self.core_type == 0
        if np.any(self.subtype[at] != SUBTYPE_NONE) or np.any(self.subtype[~at] == SUBTYPE_NONE):
            raise DataError("subtype must be 'none' exactly for AT spectra")
        if np.any((self.subtype != SUBTYPE_NONE)
                  & ((self.subtype < 0) | (self.subtype >= len(SUBTYPES)))):
            raise DataError("subtype codes must be -1 or 0..3")

    def __len__(self) -> int:
        return self.spectra.shape[0]

    def select(self, mask: np.ndarray) -> "SpectraSet":
        return SpectraSet(
            spectra=self.spectra[mask],
            patient_id=self.patient_id[mask],
            core_id=self.core_id[mask],
            row=self.row[mask],
            col=self.col[mask],
            core_type=self.core_type[mask],
            subtype=self.subtype[mask],
            axis=self.axis,
        )


# ---------------------------------------------------------------------------
# CRNS container


def _align(offset: int) -> int:
    return (offset + _ALIGN - 1) // _ALIGN * _ALIGN


def _le_dtype(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.byteorder == ">":
        return arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def write_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON metadata block to a CRNS file."""
    entries = []
    blobs = []
    rel = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(_le_dtype(np.asarray(arr)))
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": rel,
            "length": len(blob),
            "crc32": zlib.crc32(blob),
        })
        blobs.append((rel, blob))
        rel = _align(rel + len(blob))

    directory = json.dumps({"arrays": entries, "meta": meta},
                           separators=(",", ":"), sort_keys=True).encode("utf-8")
    header = MAGIC + struct.pack("<H", VERSION) + struct.pack("<I", len(directory)) + directory
    data_start = _align(len(header))

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\x00" * (data_start - len(header)))
        pos = 0
        for rel_off, blob in blobs:
            fh.write(b"\x00" * (rel_off - pos))
            fh.write(blob)
            pos = rel_off + len(blob)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a CRNS file back into (arrays, meta); validates structure and CRCs."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a CRNS container")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    (dir_len,) = struct.unpack_from("<I", raw, 6)
    if 10 + dir_len > len(raw):
        raise DataError(f"{path}: truncated directory")
    try:
        directory = json.loads(raw[10:10 + dir_len].decode("utf-8"))
        entries = directory["arrays"]
        meta = directory["meta"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt directory ({exc})") from exc

    data_start = _align(10 + dir_len)
    arrays: dict[str, np.ndarray] = {}
    prev_end = -1
    for entry in sorted(entries, key=lambda e: e.get("offset", 0)):
        try:
            name = entry["name"]
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
            length = int(entry["length"])
            crc = int(entry["crc32"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed directory entry ({exc})") from exc
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if shape == ():
            expected = dtype.itemsize
        if expected != length:
            raise DataError(f"{path}: array {name!r} declared shape disagrees with byte length")
        if offset < 0 or offset < prev_end:
            raise DataError(f"{path}: array {name!r} overlaps a previous array")
        start = data_start + offset
        end = start + length
        if end > len(raw):
            raise DataError(f"{path}: array {name!r} extends past end of file")
        blob = raw[start:end]
        if zlib.crc32(blob) != crc:
            raise DataError(f"{path}: array {name!r} failed its CRC32 check")
        arrays[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        prev_end = offset + length
    return arrays, meta


def _axis_meta(axis: WavenumberAxis) -> dict:
    return {"start_wn": axis.start_wn, "end_wn": axis.end_wn, "n_points": axis.n_points}


def _axis_from_meta(meta: dict) -> WavenumberAxis:
    try:
        return WavenumberAxis(float(meta["start_wn"]), float(meta["end_wn"]),
                              int(meta["n_points"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"container axis metadata is malformed ({exc})") from exc


def write_spectraset(sset: SpectraSet, path) -> None:
    arrays = {
        "spectra": sset.spectra,
        "patient_id": sset.patient_id,
        "core_id": sset.core_id,
        "row": sset.row,
        "col": sset.col,
        "core_type": sset.core_type,
        "subtype": sset.subtype,
    }
    meta = {
        "kind": "spectraset",
        "axis": _axis_meta(sset.axis),
        "core_type_order": list(CORE_TYPES),
        "subtype_order": list(SUBTYPES),
    }
    write_container(path, arrays, meta)


def read_spectraset(path) -> SpectraSet:
    arrays, meta = read_container(path)
    if meta.get("kind") != "spectraset":
        raise DataError(f"{path}: container does not hold a spectra set")
    try:
        return SpectraSet(
            spectra=arrays["spectra"],
            patient_id=arrays["patient_id"],
            core_id=arrays["core_id"],
            row=arrays["row"],
            col=arrays["col"],
            core_type=arrays["core_type"],
            subtype=arrays["subtype"],
            axis=_axis_from_meta(meta["axis"]),
        )
    except KeyError as exc:
        raise DataError(f"{path}: spectra-set container is missing array {exc}") from exc


def write_cube(cube: HyperCube, path, ground_truth=None) -> None:
    """Persist a hypercube; generator ground truth rides along when given."""
    arrays = {"intensities": cube.intensities}
    meta = {
        "kind": "hypercube",
        "axis": _axis_meta(cube.axis),
        "core_id": cube.core_id,
        "patient_id": cube.patient_id,
        "core_type": cube.core_type,
        "subtype": cube.subtype,
    }
    if ground_truth is not None:
        arrays["gt_role"] = np.asarray(ground_truth.role, dtype=np.int8)
        arrays["gt_spike"] = np.asarray(ground_truth.spike, dtype=np.uint8)
        meta["ground_truth"] = {"roles": {"slide": 0, "tissue": 1, "paraffin": 2}}
    write_container(path, arrays, meta)


def read_cube(path) -> tuple[HyperCube, dict[str, np.ndarray]]:
    """Read a hypercube; returns (cube, extras) with any gt_* arrays in extras."""
    arrays, meta = read_container(path)
    if meta.get("kind") != "hypercube":
        raise DataError(f"{path}: container does not hold a hypercube")
    try:
        cube = HyperCube(
            intensities=arrays["intensities"],
            axis=_axis_from_meta(meta["axis"]),
            core_id=int(meta["core_id"]),
            patient_id=int(meta["patient_id"]),
            core_type=meta["core_type"],
            subtype=meta["subtype"],
        )
    except KeyError as exc:
        raise DataError(f"{path}: hypercube container is missing {exc}") from exc
    extras = {k: v for k, v in arrays.items() if k.startswith("gt_")}
    return cube, extras


# ---------------------------------------------------------------------------
# CSV interoperability


def spectraset_to_csv(sset: SpectraSet, path) -> None:
    """One spectrum per row; metadata columns first, then one column per wavenumber."""
    wns = sset.axis.values
    with open(path, "w", encoding="utf-8") as fh:
        header = ["patient_id", "core_id", "row", "col", "core_type", "subtype"]
        header += [f"{w:.6f}" for w in wns]
        fh.write(",".join(header) + "\n")
        for i in range(len(sset)):
            ct = CORE_TYPES[sset.core_type[i]]
            st = "none" if sset.subtype[i] == SUBTYPE_NONE else SUBTYPES[sset.subtype[i]]
            cells = [str(sset.patient_id[i]), str(sset.core_id[i]),
                     str(sset.row[i]), str(sset.col[i]), ct, st]
            # %.9g round-trips float32 exactly
            cells += [f"{v:.9g}" for v in sset.spectra[i]]
            fh.write(",".join(cells) + "\n")


def spectraset_from_csv(path) -> SpectraSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:6] != ["patient_id", "core_id", "row", "col", "core_type", "subtype"]:
            raise DataError(f"{path}: unexpected CSV header")
        wns = np.array([float(w) for w in header[6:]])
        if wns.size < 2:
            raise DataError(f"{path}: CSV carries no spectral columns")
        rows = []
        for line in fh:
            if line.strip():
                rows.append(line.rstrip("\n").split(","))
    if not rows:
        raise DataError(f"{path}: CSV holds no spectra")
    n = len(rows)
    spectra = np.empty((n, wns.size), dtype=np.float32)
    pid = np.empty(n, dtype=np.int32)
    cid = np.empty(n, dtype=np.int32)
    rr = np.empty(n, dtype=np.int32)
    cc = np.empty(n, dtype=np.int32)
    ct = np.empty(n, dtype=np.int8)
    st = np.empty(n, dtype=np.int8)
    for i, cells in enumerate(rows):
        if len(cells) != 6 + wns.size:
            raise DataError(f"{path}: row {i + 2} has {len(cells)} cells")
        pid[i], cid[i], rr[i], cc[i] = (int(c) for c in cells[:4])
        if cells[4] not in CORE_TYPES:
            raise DataError(f"{path}: row {i + 2} has unknown core type {cells[4]!r}")
        ct[i] = CORE_TYPES.index(cells[4])
        st[i] = SUBTYPE_NONE if cells[5] == "none" else SUBTYPES.index(cells[5])
        spectra[i] = [float(c) for c in cells[6:]]
    axis = WavenumberAxis(float(wns[0]), float(wns[-1]), int(wns.size))
    return SpectraSet(spectra=spectra, patient_id=pid, core_id=cid, row=rr, col=cc,
                      core_type=ct, subtype=st, axis=axis)
