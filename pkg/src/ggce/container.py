"""GGCE binary container: datasets and checkpoints.

Layout: magic "GGCE", version u32, then tagged records. Each record is a
4-byte ASCII tag, a u64 payload length, and the payload. Everything is
little-endian; complex matrices are stored as interleaved (re, im) f64,
which is exactly the complex128 memory layout. Unknown (well-formed) tags
are skipped on read so containers stay forward-compatible; any truncation
or garbage raises DataFormatError with the byte offset.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .gaussmap import DeformerParams, GaussianPrimitive, SceneMap
from .radio import ArrayGeometry, CfrSnapshot, DelayWindow, OfdmGrid, PilotPattern
from .scene import ChannelDataset, PathComponent

MAGIC = b"GGCE"
VERSION = 1

_PATH_KINDS = ("los", "nlos")


# ---------------------------------------------------------------------------
# record layer


def write_records(path: str, records: list[tuple[bytes, bytes]]) -> None:
    """Atomically write a container file (temp file + rename)."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    for tag, payload in records:
        if len(tag) != 4:
            raise ValueError(f"record tag must be 4 bytes, got {tag!r}")
        blob += tag
        blob += struct.pack("<Q", len(payload))
        blob += payload
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(blob))
    os.replace(tmp, path)


def read_records(path: str) -> list[tuple[bytes, bytes]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read container {path}: {exc}") from exc
    if len(data) < 8:
        raise DataFormatError(f"{path}: truncated header", offset=0)
    if data[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}", offset=4)
    records = []
    pos = 8
    while pos < len(data):
        if pos + 12 > len(data):
            raise DataFormatError(f"{path}: truncated record header", offset=pos)
        tag = data[pos : pos + 4]
        if not all(0x20 <= b < 0x7F for b in tag):
            raise DataFormatError(f"{path}: invalid record tag {tag!r}", offset=pos)
        (length,) = struct.unpack_from("<Q", data, pos + 4)
        start = pos + 12
        if start + length > len(data):
            raise DataFormatError(f"{path}: truncated record {tag!r}", offset=pos)
        records.append((tag, data[start : start + length]))
        pos = start + length
    return records


def _take(records: list[tuple[bytes, bytes]], tag: bytes, path: str) -> bytes:
    for t, payload in records:
        if t == tag:
            return payload
    raise DataFormatError(f"{path}: missing record {tag!r}")


def _take_all(records, tag: bytes) -> list[bytes]:
    return [payload for t, payload in records if t == tag]


def _unpack(fmt: str, payload: bytes, path: str, tag: bytes):
    try:
        return struct.unpack_from(fmt, payload, 0)
    except struct.error as exc:
        raise DataFormatError(f"{path}: malformed record {tag!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# config-object records, shared by dataset and checkpoint files


def _pack_grid(grid: OfdmGrid) -> bytes:
    return struct.pack(
        "<QdQdd",
        grid.n_subcarriers,
        grid.subcarrier_spacing_hz,
        grid.n_symbols,
        grid.symbol_duration_s,
        grid.carrier_freq_hz,
    )


def _unpack_grid(payload: bytes, path: str) -> OfdmGrid:
    n, df, n_sym, t_sym, fc = _unpack("<QdQdd", payload, path, b"GRID")
    return OfdmGrid(n, df, n_sym, t_sym, fc)


def _pack_array(array: ArrayGeometry) -> bytes:
    return struct.pack(
        "<Qd6d",
        array.n_antennas,
        array.spacing_wavelengths,
        *array.bs_position,
        *array.broadside,
    )


def _unpack_array(payload: bytes, path: str) -> ArrayGeometry:
    vals = _unpack("<Qd6d", payload, path, b"ARRY")
    return ArrayGeometry(vals[0], vals[1], np.array(vals[2:5]), np.array(vals[5:8]))


def _pack_pattern(pattern: PilotPattern) -> bytes:
    ns, nc = len(pattern.pilot_symbols), len(pattern.pilot_subcarriers)
    return struct.pack(
        f"<Q{ns}QQ{nc}Qdd",
        ns,
        *pattern.pilot_symbols,
        nc,
        *pattern.pilot_subcarriers.tolist(),
        pattern.tx_power,
        pattern.noise_var,
    )


def _unpack_pattern(payload: bytes, path: str) -> PilotPattern:
    (ns,) = _unpack("<Q", payload, path, b"PILT")
    vals = _unpack(f"<Q{ns}QQ", payload, path, b"PILT")
    symbols = vals[1 : 1 + ns]
    nc = vals[1 + ns]
    vals = _unpack(f"<Q{ns}QQ{nc}Qdd", payload, path, b"PILT")
    subcarriers = np.array(vals[2 + ns : 2 + ns + nc], dtype=int)
    tx_power, noise_var = vals[-2], vals[-1]
    return PilotPattern(tuple(symbols), subcarriers, tx_power, noise_var)


def _pack_window(window: DelayWindow) -> bytes:
    return struct.pack("<QQ", window.n_taps, window.guard_taps)


def _unpack_window(payload: bytes, path: str) -> DelayWindow:
    n_taps, guard = _unpack("<QQ", payload, path, b"WNDW")
    return DelayWindow(n_taps, guard)


# ---------------------------------------------------------------------------
# dataset files


def _pack_snapshot(s: CfrSnapshot) -> bytes:
    n, m = s.cfr.shape
    head = struct.pack("<QQ3dQQ", s.slot, s.symbol, *s.ue_position, n, m)
    return head + np.ascontiguousarray(s.cfr).astype("<c16").tobytes()


def _unpack_snapshot(payload: bytes, path: str) -> CfrSnapshot:
    head = struct.calcsize("<QQ3dQQ")
    slot, symbol, px, py, pz, n, m = _unpack("<QQ3dQQ", payload, path, b"SNAP")
    want = head + 16 * n * m
    if len(payload) != want:
        raise DataFormatError(f"{path}: snapshot payload length {len(payload)} != {want}")
    cfr = np.frombuffer(payload, dtype="<c16", offset=head).reshape(n, m).copy()
    return CfrSnapshot(slot, symbol, np.array([px, py, pz]), cfr)


def _pack_paths(paths: list[PathComponent]) -> bytes:
    blob = struct.pack("<Q", len(paths))
    for p in paths:
        blob += struct.pack(
            "<Qddddd",
            _PATH_KINDS.index(p.kind),
            p.delay,
            p.beam_coord,
            p.complex_gain.real,
            p.complex_gain.imag,
            p.doppler,
        )
    return blob


def _unpack_paths(payload: bytes, path: str) -> list[PathComponent]:
    (count,) = _unpack("<Q", payload, path, b"PTHS")
    out = []
    offset = 8
    for _ in range(count):
        kind, delay, nu, g_re, g_im, doppler = _unpack("<Qddddd", payload[offset:], path, b"PTHS")
        if kind >= len(_PATH_KINDS):
            raise DataFormatError(f"{path}: unknown path kind {kind}")
        out.append(
            PathComponent(
                delay=delay,
                beam_coord=nu,
                complex_gain=complex(g_re, g_im),
                doppler=doppler,
                kind=_PATH_KINDS[kind],
            )
        )
        offset += struct.calcsize("<Qddddd")
    return out


def write_dataset(path: str, ds: ChannelDataset) -> None:
    records = [
        (b"CFGT", ds.config_text.encode("utf-8")),
        (b"GRID", _pack_grid(ds.grid)),
        (b"ARRY", _pack_array(ds.array)),
        (b"PILT", _pack_pattern(ds.pattern)),
        (b"WNDW", _pack_window(ds.window)),
    ]
    for snap, paths in zip(ds.snapshots, ds.paths):
        records.append((b"SNAP", _pack_snapshot(snap)))
        records.append((b"PTHS", _pack_paths(paths)))
    write_records(path, records)


def read_dataset(path: str) -> ChannelDataset:
    records = read_records(path)
    snaps = [_unpack_snapshot(p, path) for p in _take_all(records, b"SNAP")]
    paths = [_unpack_paths(p, path) for p in _take_all(records, b"PTHS")]
    if len(snaps) != len(paths):
        raise DataFormatError(f"{path}: {len(snaps)} snapshots but {len(paths)} path lists")
    try:
        return ChannelDataset(
            grid=_unpack_grid(_take(records, b"GRID", path), path),
            array=_unpack_array(_take(records, b"ARRY", path), path),
            pattern=_unpack_pattern(_take(records, b"PILT", path), path),
            window=_unpack_window(_take(records, b"WNDW", path), path),
            snapshots=snaps,
            paths=paths,
            config_text=_take(records, b"CFGT", path).decode("utf-8"),
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: inconsistent dataset contents: {exc}") from exc


# ---------------------------------------------------------------------------
# checkpoint files


@dataclass
class CheckpointMeta:
    epochs_completed: int = 0
    seed: int = 0


def _pack_scene(scene: SceneMap) -> bytes:
    blob = struct.pack("<Q", scene.size)
    for p in scene.primitives:
        blob += struct.pack("<3ddddd", *p.mu, p.scale, p.opacity_logit, p.delay_residual, p.gain_raw)
    blob += struct.pack("<d3d", scene.los_gain_raw, *scene.bs_position)
    return blob


def _unpack_scene(payload: bytes, path: str) -> SceneMap:
    (count,) = _unpack("<Q", payload, path, b"GMAP")
    offset = 8
    step = struct.calcsize("<3ddddd")
    prims = []
    for _ in range(count):
        vals = _unpack("<3ddddd", payload[offset:], path, b"GMAP")
        prims.append(GaussianPrimitive(np.array(vals[0:3]), vals[3], vals[4], vals[5], vals[6]))
        offset += step
    vals = _unpack("<d3d", payload[offset:], path, b"GMAP")
    return SceneMap(primitives=prims, los_gain_raw=vals[0], bs_position=np.array(vals[1:4]))


def _pack_deformer(params: DeformerParams) -> bytes:
    blob = struct.pack("<Q", len(params.weights) // 2)
    for i in range(len(params.weights) // 2):
        w, b = params.weights[2 * i], params.weights[2 * i + 1]
        blob += struct.pack("<QQ", w.shape[0], w.shape[1])
        blob += w.astype("<f8").tobytes()
        blob += b.astype("<f8").tobytes()
    blob += struct.pack(
        "<ddd3dd",
        params.eta_opacity,
        params.eta_delay,
        params.eta_gain,
        *params.center,
        params.extent,
    )
    return blob


def _unpack_deformer(payload: bytes, path: str) -> DeformerParams:
    (n_layers,) = _unpack("<Q", payload, path, b"DFRM")
    offset = 8
    weights = []
    for _ in range(n_layers):
        rows, cols = _unpack("<QQ", payload[offset:], path, b"DFRM")
        offset += 16
        w = np.frombuffer(payload, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols).copy()
        offset += 8 * rows * cols
        b = np.frombuffer(payload, dtype="<f8", count=rows, offset=offset).copy()
        offset += 8 * rows
        weights += [w, b]
    vals = _unpack("<ddd3dd", payload[offset:], path, b"DFRM")
    return DeformerParams(
        weights=weights,
        eta_opacity=vals[0],
        eta_delay=vals[1],
        eta_gain=vals[2],
        center=np.array(vals[3:6]),
        extent=vals[6],
    )


def write_checkpoint(
    path: str,
    scene: SceneMap,
    params: DeformerParams,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    meta: CheckpointMeta | None = None,
    config_text: str = "",
) -> None:
    meta = meta or CheckpointMeta()
    records = [
        (b"CFGT", config_text.encode("utf-8")),
        (b"GRID", _pack_grid(grid)),
        (b"ARRY", _pack_array(array)),
        (b"WNDW", _pack_window(window)),
        (b"GMAP", _pack_scene(scene)),
        (b"DFRM", _pack_deformer(params)),
        (b"META", struct.pack("<QQ", meta.epochs_completed, meta.seed)),
    ]
    write_records(path, records)


@dataclass(eq=False)
class Checkpoint:
    scene: SceneMap
    params: DeformerParams
    grid: OfdmGrid
    window: DelayWindow
    array: ArrayGeometry
    meta: CheckpointMeta
    config_text: str


def read_checkpoint(path: str) -> Checkpoint:
    records = read_records(path)
    epochs, seed = _unpack("<QQ", _take(records, b"META", path), path, b"META")
    try:
        return Checkpoint(
            scene=_unpack_scene(_take(records, b"GMAP", path), path),
            params=_unpack_deformer(_take(records, b"DFRM", path), path),
            grid=_unpack_grid(_take(records, b"GRID", path), path),
            window=_unpack_window(_take(records, b"WNDW", path), path),
            array=_unpack_array(_take(records, b"ARRY", path), path),
            meta=CheckpointMeta(epochs_completed=epochs, seed=seed),
            config_text=_take(records, b"CFGT", path).decode("utf-8"),
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: inconsistent checkpoint contents: {exc}") from exc
