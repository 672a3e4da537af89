# util/snapshot_io.py

import json
import os
import struct
import zipfile
import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from dmd.snapshots import FieldSpan, SnapshotSeries, TrainingSet, field_slice, slice_training_set, validate_series
from util.errors import CorruptionError, InvalidInputError, SnapshotFormatError, SnapshotIOError

# --- Configuration ---
MAGIC = b"PDMD1"
VERSION = 1
SERIES_SUFFIX = ".pdmd"
MANIFEST_NAME = "manifest.txt"
MODEL_FORMAT = "pdmd-model"
ROLES = ("train", "test")
STATUSES = ("pending", "done", "failed")

_HEADER = struct.Struct("<5sHIQQd")
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")
_SPAN = struct.Struct("<QQ")
_CRC = struct.Struct("<I")
_FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


# --- Series files ---

def encode_series(s: SnapshotSeries) -> bytes:
    """Serializes a series into the little-endian SeriesFile layout, CRC-32 trailer included."""
    validate_series(s)
    parts = [
        _HEADER.pack(MAGIC, VERSION, s.params.size, s.n, s.num_snapshots, s.dt),
        s.params.astype("<f8").tobytes(),
        _COUNT.pack(len(s.field_layout)),
    ]
    for span in s.field_layout:
        name = span.name.encode("utf-8")
        parts.append(_NAME_LEN.pack(len(name)) + name + _SPAN.pack(span.offset, span.length))
    parts.append(np.asarray(s.states, dtype="<f8").tobytes(order="F"))
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _take(blob: bytes, offset: int, size: int) -> Tuple[bytes, int]:
    if offset + size > len(blob):
        raise SnapshotFormatError(f"File truncated at byte {offset} (needed {size} more bytes).")
    return blob[offset:offset + size], offset + size


def decode_series(blob: bytes) -> SnapshotSeries:
    """Parses SeriesFile bytes, checking magic, version, length and checksum."""
    if len(blob) < _HEADER.size + _CRC.size:
        raise SnapshotFormatError(f"File too short ({len(blob)} bytes) to hold a series header.")
    magic, version, P, n, cols, dt = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"Bad magic {magic!r}; expected {MAGIC!r}.")
    if version != VERSION:
        raise SnapshotFormatError(f"Unsupported series file version {version}.")

    body, (stored_crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError("CRC-32 mismatch: the series file is corrupted or truncated.")

    offset = _HEADER.size
    raw, offset = _take(body, offset, 8 * P)
    params = np.frombuffer(raw, dtype="<f8").astype(float)
    raw, offset = _take(body, offset, _COUNT.size)
    (count,) = _COUNT.unpack(raw)
    layout = []
    for _ in range(count):
        raw, offset = _take(body, offset, _NAME_LEN.size)
        (name_len,) = _NAME_LEN.unpack(raw)
        name, offset = _take(body, offset, name_len)
        raw, offset = _take(body, offset, _SPAN.size)
        span_offset, span_length = _SPAN.unpack(raw)
        layout.append(FieldSpan(name.decode("utf-8"), span_offset, span_length))

    payload_size = 8 * n * cols
    if len(body) - offset != payload_size:
        raise SnapshotFormatError(
            f"Payload holds {len(body) - offset} bytes, expected {payload_size} for {n}x{cols} states."
        )
    states = np.frombuffer(body[offset:], dtype="<f8").reshape((n, cols), order="F").astype(float)
    series = SnapshotSeries(params, np.arange(cols) * dt, states, tuple(layout))
    try:
        return validate_series(series)
    except InvalidInputError as e:
        raise SnapshotFormatError(f"Decoded series is invalid: {e}") from e


def write_series(s: SnapshotSeries, path: str) -> None:
    """Writes a series file; the file appears under `path` only once complete."""
    blob = encode_series(s)
    partial = path + ".part"
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(partial, "wb") as f:
            f.write(blob)
        os.replace(partial, path)
    except OSError as e:
        raise SnapshotIOError(f"Could not write series file '{path}': {e}", path) from e


def read_series(path: str) -> SnapshotSeries:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise SnapshotIOError(f"Could not read series file '{path}': {e}", path) from e
    try:
        return decode_series(blob)
    except SnapshotFormatError as e:
        raise type(e)(f"{path}: {e}") from e


# --- Manifests ---

@dataclass(frozen=True)
class ManifestEntry:
    params: Tuple[float, ...]
    role: str
    path: str
    status: str = "pending"


@dataclass
class Manifest:
    """
    Line-oriented description of a generated snapshot set:

        # comment
        problem jet
        grid dims=64,64 dt=0.005 ...
        t0 0.025
        params k
        entry train done series/jet_0000.pdmd k=0.2

    Entry paths are relative to the manifest's directory. `t0` is the time
    of the first stored snapshot; series files only carry dt, so the
    manifest restores the absolute times on reading.
    """
    problem: str
    param_names: Tuple[str, ...]
    grid: Dict[str, str] = field(default_factory=dict)
    entries: List[ManifestEntry] = field(default_factory=list)
    root: str = "."
    t0: float = 0.0

    def entries_for(self, role: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    def resolve(self, entry: ManifestEntry) -> str:
        return os.path.join(self.root, entry.path)

    def read(self, entry: ManifestEntry) -> SnapshotSeries:
        series = read_series(self.resolve(entry))
        return replace(series, times=self.t0 + series.times) if self.t0 else series

    def set_status(self, index: int, status: str) -> None:
        if status not in STATUSES:
            raise InvalidInputError(f"Unknown entry status '{status}'.")
        self.entries[index] = replace(self.entries[index], status=status)

    def missing(self, role: str) -> List[ManifestEntry]:
        """Entries of `role` whose series file is not available."""
        return [e for e in self.entries_for(role) if e.status != "done" or not os.path.exists(self.resolve(e))]


def format_manifest(manifest: Manifest) -> str:
    lines = [
        "# parametric DMD snapshot manifest",
        f"problem {manifest.problem}",
        "grid " + " ".join(f"{k}={v}" for k, v in manifest.grid.items()),
        f"t0 {float(manifest.t0)!r}",
        "params " + " ".join(manifest.param_names),
    ]
    for e in manifest.entries:
        values = ",".join(f"{name}={float(value)!r}" for name, value in zip(manifest.param_names, e.params))
        lines.append(f"entry {e.role} {e.status} {e.path} {values}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str, root: str = ".") -> Manifest:
    """Parses manifest text; blank lines and '#' comments are ignored."""
    problem, param_names, grid, entries, t0 = None, None, {}, [], 0.0
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, rest = line.partition(" ")
        try:
            if keyword == "problem":
                problem = rest.strip()
            elif keyword == "grid":
                grid = dict(token.split("=", 1) for token in rest.split())
            elif keyword == "t0":
                t0 = float(rest)
            elif keyword == "params":
                param_names = tuple(rest.split())
            elif keyword == "entry":
                role, status, path, values = rest.split()
                pairs = dict(token.split("=", 1) for token in values.split(","))
                if role not in ROLES or status not in STATUSES:
                    raise ValueError(f"unknown role/status '{role}'/'{status}'")
                if os.path.isabs(path):
                    raise ValueError("entry paths must be relative to the manifest")
                entries.append(ManifestEntry(tuple(float(pairs[name]) for name in param_names), role, path, status))
            else:
                raise ValueError(f"unknown keyword '{keyword}'")
        except (ValueError, KeyError, TypeError) as e:
            raise SnapshotFormatError(f"Manifest line {number} is malformed ({e}): {line}") from e
    if problem is None or param_names is None:
        raise SnapshotFormatError("Manifest lacks a 'problem' or 'params' line.")
    return Manifest(problem, param_names, grid, entries, root, t0)


def write_manifest(manifest: Manifest, path: str) -> None:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="\n") as f:
            f.write(format_manifest(manifest))
    except OSError as e:
        raise SnapshotIOError(f"Could not write manifest '{path}': {e}", path) from e


def read_manifest(path: str) -> Manifest:
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise SnapshotIOError(f"Could not read manifest '{path}': {e}", path) from e
    return parse_manifest(text, root=os.path.dirname(os.path.abspath(path)))


def iter_series(manifest: Manifest, role: str, field_name: Optional[str] = None) -> Iterator[SnapshotSeries]:
    """Lazily reads the completed series of one role in manifest order."""
    for entry in manifest.entries_for(role):
        if entry.status != "done":
            continue
        series = manifest.read(entry)
        yield field_slice(series, field_name) if field_name else series


def load_training_set(manifest: Manifest, stride: int = 1, field_name: Optional[str] = None) -> TrainingSet:
    """Training series of a manifest, keeping every `stride`-th one."""
    if stride < 1:
        raise InvalidInputError(f"stride must be positive, got {stride}.")
    series = list(iter_series(manifest, "train"))[::stride]
    if not series:
        raise InvalidInputError("The manifest lists no completed training entries.")
    ts = TrainingSet(tuple(series), manifest.param_names)
    return slice_training_set(ts, field_name) if field_name else ts


# --- Model files ---

def _write_zip_arrays(path: str, arrays: Dict[str, np.ndarray]) -> None:
    # np.savez stamps entries with the current time; fixed stamps keep files reproducible.
    partial = path + ".part"
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with zipfile.ZipFile(partial, "w", compression=zipfile.ZIP_STORED) as zf:
            for key in sorted(arrays):
                info = zipfile.ZipInfo(f"{key}.npy", date_time=_FIXED_ZIP_TIME)
                with zf.open(info, "w", force_zip64=True) as f:
                    np.lib.format.write_array(f, np.ascontiguousarray(arrays[key]), allow_pickle=False)
        os.replace(partial, path)
    except OSError as e:
        raise SnapshotIOError(f"Could not write model file '{path}': {e}", path) from e


def _layout_to_json(layout: Sequence[FieldSpan]) -> List[List]:
    return [[span.name, span.offset, span.length] for span in layout]


def save_model(model, path: str) -> None:
    """Persists a trained parametric model (stacked blocks or local decompositions)."""
    meta = {
        "format": MODEL_FORMAT,
        "variant": model.variant,
        "dt": model.dt,
        "t0": model.t0,
        "num_snapshots": model.num_snapshots,
        "strict": model.strict,
        "normalize_axes": model.normalize_axes,
        "field_layout": _layout_to_json(model.field_layout),
        "param_names": list(model.param_names),
        "num_neighbors": model.num_neighbors,
        "extrapolation_fraction": model.extrapolation_fraction,
    }
    arrays = {"train_params": model.train_params}
    if model.variant == "stacked":
        meta.update(init_mode=model.init_mode, diagnostics=list(model.diagnostics))
        arrays.update(
            mode_blocks=model.mode_blocks,
            eigenvalues=model.eigenvalues,
            init_coeffs=model.init_coeffs,
            sigma=model.sigma,
        )
    else:
        if model.variant == "rkoi":
            meta["init_frame"] = model.init_frame
        meta["decomp_diagnostics"] = [list(d.diagnostics) for d in model.decomps]
        for j, d in enumerate(model.decomps):
            prefix = f"decomp_{j:04d}"
            arrays.update({
                f"{prefix}/params": d.params,
                f"{prefix}/U": d.svd.U,
                f"{prefix}/sigma": d.svd.sigma,
                f"{prefix}/V": d.svd.V,
                f"{prefix}/koopman": d.koopman,
                f"{prefix}/eigenvalues": d.eig.values,
                f"{prefix}/eigenvectors": d.eig.vectors,
                f"{prefix}/init_coeffs": d.init_coeffs,
            })
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    _write_zip_arrays(path, arrays)


def load_model(path: str):
    from dmd.parametric.local import LocalDecomposition
    from dmd.parametric.repi import Repi
    from dmd.parametric.rkoi import Rkoi
    from dmd.parametric.stacked import StackedDmd
    from util.linalg import EigenPair, SvdFactors

    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except OSError as e:
        raise SnapshotIOError(f"Could not read model file '{path}': {e}", path) from e
    except (ValueError, zipfile.BadZipFile) as e:
        raise SnapshotFormatError(f"{path}: not a model file ({e})") from e

    try:
        meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    except (KeyError, ValueError) as e:
        raise SnapshotFormatError(f"{path}: model metadata missing or unreadable") from e
    if meta.get("format") != MODEL_FORMAT:
        raise SnapshotFormatError(f"{path}: unknown model format {meta.get('format')!r}")

    common = dict(
        field_layout=tuple(FieldSpan(*span) for span in meta["field_layout"]),
        param_names=tuple(meta["param_names"]),
        num_neighbors=meta["num_neighbors"],
        extrapolation_fraction=meta["extrapolation_fraction"],
        strict=meta.get("strict", False),
        t0=meta.get("t0", 0.0),
        normalize_axes=meta.get("normalize_axes", False),
    )
    if meta["variant"] == "stacked":
        return StackedDmd(
            arrays["mode_blocks"],
            arrays["eigenvalues"],
            arrays["init_coeffs"],
            arrays["train_params"],
            meta["dt"],
            meta["num_snapshots"],
            sigma=arrays["sigma"],
            init_mode=meta["init_mode"],
            diagnostics=tuple(meta["diagnostics"]),
            **common,
        )

    decomps = []
    for j, diagnostics in enumerate(meta["decomp_diagnostics"]):
        prefix = f"decomp_{j:04d}"
        decomps.append(LocalDecomposition(
            arrays[f"{prefix}/params"],
            SvdFactors(arrays[f"{prefix}/U"], arrays[f"{prefix}/sigma"], arrays[f"{prefix}/V"]),
            arrays[f"{prefix}/koopman"],
            EigenPair(arrays[f"{prefix}/eigenvalues"], arrays[f"{prefix}/eigenvectors"], tuple(diagnostics)),
            arrays[f"{prefix}/init_coeffs"],
            meta["dt"],
            tuple(diagnostics),
            meta.get("t0", 0.0),
        ))
    if meta["variant"] == "rkoi":
        return Rkoi(decomps, init_frame=meta["init_frame"], num_snapshots=meta["num_snapshots"], **common)
    if meta["variant"] == "repi":
        return Repi(decomps, num_snapshots=meta["num_snapshots"], **common)
    raise SnapshotFormatError(f"{path}: unknown model variant {meta['variant']!r}")
