"""Synthetic railway-corridor channel generator.

A straight constant-speed trajectory past a laterally offset base station,
with config-listed point scatterers contributing single-bounce paths.
Geometry is frozen at each slot start; within a slot every path's gain
rotates with the Doppler frequency computed from the slot-start geometry,
so consecutive symbols obey an exact per-path AR(1) phase law while the
UE advances slot by slot.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .radio import (
    C_LIGHT,
    ArrayGeometry,
    CfrSnapshot,
    DelayWindow,
    OfdmGrid,
    PilotPattern,
    array_response,
    beam_coordinate,
)
from .validation import as_position, as_unit_vector, check_nonnegative

LOS = "los"
NLOS = "nlos"


# ---------------------------------------------------------------------------
# types


@dataclass(eq=False)
class Scatterer:
    """Point reflector, visible over an interval of track coordinate."""

    position: np.ndarray
    reflectivity: complex
    active_range: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        self.position = as_position(self.position, "position")
        self.reflectivity = complex(self.reflectivity)
        if abs(self.reflectivity) > 1.0 + 1e-12:
            raise ValueError("reflectivity magnitude must not exceed 1")
        lo, hi = float(self.active_range[0]), float(self.active_range[1])
        if not lo <= hi:
            raise ValueError("active_range must be well-ordered")
        self.active_range = (lo, hi)


@dataclass(eq=False)
class Trajectory:
    """Straight constant-speed UE track."""

    start: np.ndarray
    direction: np.ndarray
    speed: float
    length: float

    def __post_init__(self):
        self.start = as_position(self.start, "start")
        self.direction = as_unit_vector(self.direction, "direction")
        self.speed = check_nonnegative(self.speed, "speed")
        self.length = check_nonnegative(self.length, "length")

    def position_at(self, track_coord: float) -> np.ndarray:
        return self.start + float(track_coord) * self.direction

    def track_coordinate(self, position: np.ndarray) -> float:
        return float(np.dot(np.asarray(position, dtype=float) - self.start, self.direction))


@dataclass(eq=False)
class PathComponent:
    """One propagation path as seen from the BS array."""

    delay: float
    beam_coord: float
    complex_gain: complex
    doppler: float
    kind: str

    def __post_init__(self):
        self.delay = float(self.delay)
        if not np.isfinite(self.delay) or self.delay < 0.0:
            raise ValueError("delay must be nonnegative and finite")
        self.beam_coord = float(self.beam_coord)
        self.complex_gain = complex(self.complex_gain)
        if not np.isfinite(self.complex_gain.real) or not np.isfinite(self.complex_gain.imag):
            raise ValueError("complex_gain must be finite")
        self.doppler = float(self.doppler)
        if self.kind not in (LOS, NLOS):
            raise ValueError(f"kind must be '{LOS}' or '{NLOS}'")


@dataclass(eq=False)
class ScenarioConfig:
    """Corridor layout and run length for dataset generation."""

    trajectory: Trajectory
    scatterers: list[Scatterer]
    n_slots: int
    scatterer_aperture_m: float = 50.0
    snr_db: float | None = 20.0

    def __post_init__(self):
        self.n_slots = int(self.n_slots)
        if self.n_slots < 1:
            raise ValueError("n_slots must be at least 1")
        check_nonnegative(self.scatterer_aperture_m, "scatterer_aperture_m")


@dataclass(eq=False)
class ChannelDataset:
    """Ordered snapshots with their generating path lists and configs."""

    grid: OfdmGrid
    array: ArrayGeometry
    pattern: PilotPattern
    window: DelayWindow
    snapshots: list[CfrSnapshot]
    paths: list[list[PathComponent]]
    config_text: str = ""

    def __post_init__(self):
        if len(self.snapshots) != len(self.paths):
            raise ValueError("snapshots and path lists must align")
        keys = [(s.slot, s.symbol) for s in self.snapshots]
        if keys != sorted(keys) or len(set(keys)) != len(keys):
            raise ValueError("snapshots must be ordered by (slot, symbol)")
        if len(self.snapshots) > 1:
            pos = np.array([s.ue_position for s in self.snapshots])
            span = pos[-1] - pos[0]
            steps = np.diff(pos, axis=0) @ span
            if np.any(steps < -1e-9 * max(np.linalg.norm(span), 1.0)):
                raise ValueError("snapshot positions must be monotone along the track")

    @property
    def n_slots(self) -> int:
        return 1 + self.snapshots[-1].slot if self.snapshots else 0

    def slot_snapshots(self, slot: int) -> list[CfrSnapshot]:
        return [s for s in self.snapshots if s.slot == slot]


# ---------------------------------------------------------------------------
# path enumeration and synthesis


def enumerate_paths(
    ue_position: np.ndarray,
    ue_velocity: np.ndarray,
    scatterers: list[Scatterer],
    array: ArrayGeometry,
    grid: OfdmGrid,
    aperture_m: float = 50.0,
) -> list[PathComponent]:
    """LoS plus one single-bounce path per scatterer, with Doppler.

    Doppler is f_c/c times the UE speed projected on the departure
    direction from the UE along the path (toward the BS for LoS, toward
    the scatterer otherwise), so approaching geometry gives positive f_D.
    """
    ue = as_position(ue_position, "ue_position")
    vel = np.asarray(ue_velocity, dtype=float)
    bs = array.bs_position
    lam = grid.wavelength_m
    d_los = float(np.linalg.norm(ue - bs))
    if d_los == 0.0:
        raise ValueError("UE coincides with the BS")

    fd_scale = grid.carrier_freq_hz / C_LIGHT
    paths = [
        PathComponent(
            delay=d_los / C_LIGHT,
            beam_coord=beam_coordinate(ue, array),
            complex_gain=lam / (4.0 * np.pi * d_los) * np.exp(-2j * np.pi * d_los / lam),
            doppler=fd_scale * float(np.dot(vel, (bs - ue) / d_los)),
            kind=LOS,
        )
    ]
    for sc in scatterers:
        d1 = float(np.linalg.norm(sc.position - bs))
        d2 = float(np.linalg.norm(ue - sc.position))
        if d1 == 0.0 or d2 == 0.0:
            raise ValueError("scatterer coincides with the BS or the UE")
        total = d1 + d2
        gain = (
            sc.reflectivity
            * lam
            * aperture_m
            / (4.0 * np.pi * d1 * d2)
            * np.exp(-2j * np.pi * total / lam)
        )
        paths.append(
            PathComponent(
                delay=total / C_LIGHT,
                beam_coord=beam_coordinate(sc.position, array),
                complex_gain=gain,
                doppler=fd_scale * float(np.dot(vel, (sc.position - ue) / d2)),
                kind=NLOS,
            )
        )
    return paths


def synthesize_cfr(
    paths: list[PathComponent],
    grid: OfdmGrid,
    array: ArrayGeometry,
    symbol_time: float,
    slot: int = 0,
    symbol: int = 0,
    ue_position=(0.0, 0.0, 0.0),
) -> CfrSnapshot:
    """Superpose path responses into an (N, M) CFR at the given time."""
    if not paths:
        raise ValueError("paths must be nonempty")
    n = np.arange(grid.n_subcarriers)
    coeff = np.array(
        [p.complex_gain * np.exp(2j * np.pi * p.doppler * symbol_time) for p in paths]
    )
    freq = np.exp(
        -2j
        * np.pi
        * np.outer(n, [p.delay for p in paths])
        * grid.subcarrier_spacing_hz
    )  # (N, P)
    resp = np.array([array_response(p.beam_coord, array) for p in paths])  # (P, M)
    cfr = (freq * coeff[None, :]) @ resp
    return CfrSnapshot(slot=slot, symbol=symbol, ue_position=ue_position, cfr=cfr)


def observe_pilots(snapshot: CfrSnapshot, pattern: PilotPattern, rng_seed) -> np.ndarray:
    """Pilot observation Y = tx_power * S_P(H) + W at a pilot symbol."""
    if snapshot.symbol not in pattern.pilot_symbols:
        raise ValueError(
            f"symbol {snapshot.symbol} is not a pilot symbol {pattern.pilot_symbols}"
        )
    if pattern.pilot_subcarriers[-1] >= snapshot.cfr.shape[0]:
        raise ValueError("pilot_subcarriers exceed the snapshot grid")
    y = pattern.tx_power * snapshot.cfr[pattern.pilot_subcarriers, :]
    if pattern.noise_var > 0.0:
        rng = np.random.default_rng(rng_seed)
        scale = np.sqrt(pattern.noise_var / 2.0)
        y = y + scale * (
            rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        )
    return y


# ---------------------------------------------------------------------------
# dataset generation


def visible_scatterers(scenario: ScenarioConfig, track_coord: float) -> list[Scatterer]:
    return [
        sc
        for sc in scenario.scatterers
        if sc.active_range[0] <= track_coord <= sc.active_range[1]
    ]


def _slot_snapshots(
    scenario: ScenarioConfig,
    grid: OfdmGrid,
    array: ArrayGeometry,
    slot: int,
) -> tuple[list[CfrSnapshot], list[PathComponent]]:
    """Synthesize one slot; pure function of (configs, slot)."""
    traj = scenario.trajectory
    t_slot = slot * grid.slot_duration_s
    coord = traj.speed * t_slot
    ue = traj.position_at(coord)
    vel = traj.speed * traj.direction
    paths = enumerate_paths(
        ue,
        vel,
        visible_scatterers(scenario, coord),
        array,
        grid,
        aperture_m=scenario.scatterer_aperture_m,
    )
    snaps = [
        synthesize_cfr(
            paths,
            grid,
            array,
            symbol_time=k * grid.symbol_duration_s,
            slot=slot,
            symbol=k,
            ue_position=ue,
        )
        for k in range(grid.n_symbols)
    ]
    return snaps, paths


def generate_dataset(
    grid: OfdmGrid,
    array: ArrayGeometry,
    window: DelayWindow,
    pattern: PilotPattern,
    scenario: ScenarioConfig,
    config_text: str = "",
    n_workers: int = 1,
) -> ChannelDataset:
    """Run the corridor and assemble ordered snapshots.

    When scenario.snr_db is set, the pattern's noise variance is replaced by
    tx_power^2 * (mean pilot-entry power) / 10^(snr/10), measured over the
    clean observations of the run; otherwise pattern.noise_var is kept.
    """
    traj = scenario.trajectory
    run_length = traj.speed * (scenario.n_slots - 1) * grid.slot_duration_s
    if run_length > traj.length + 1e-9:
        raise ValueError(
            f"trajectory length {traj.length} m is shorter than the "
            f"{run_length:.3f} m covered by {scenario.n_slots} slots"
        )

    slots = range(scenario.n_slots)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(
                pool.map(lambda s: _slot_snapshots(scenario, grid, array, s), slots)
            )
    else:
        results = [_slot_snapshots(scenario, grid, array, s) for s in slots]

    snapshots: list[CfrSnapshot] = []
    per_snapshot_paths: list[list[PathComponent]] = []
    for snaps, paths in results:
        snapshots.extend(snaps)
        per_snapshot_paths.extend([paths] * len(snaps))

    noise_var = pattern.noise_var
    if scenario.snr_db is not None:
        pilot_pow = [
            np.mean(np.abs(s.cfr[pattern.pilot_subcarriers, :]) ** 2)
            for s in snapshots
            if s.symbol in pattern.pilot_symbols
        ]
        mean_pow = float(np.mean(pilot_pow))
        noise_var = (
            pattern.tx_power**2 * mean_pow / (10.0 ** (scenario.snr_db / 10.0))
        )
    final_pattern = PilotPattern(
        pilot_symbols=pattern.pilot_symbols,
        pilot_subcarriers=pattern.pilot_subcarriers.copy(),
        tx_power=pattern.tx_power,
        noise_var=noise_var,
    )
    return ChannelDataset(
        grid=grid,
        array=array,
        pattern=final_pattern,
        window=window,
        snapshots=snapshots,
        paths=per_snapshot_paths,
        config_text=config_text,
    )


def summarize_dataset(ds: ChannelDataset) -> dict:
    """Headline numbers for the CLI report."""
    counts = [len(p) for p in ds.paths]
    delays = np.array([p.delay for paths in ds.paths for p in paths])
    return {
        "snapshots": len(ds.snapshots),
        "slots": ds.n_slots,
        "mean_paths": float(np.mean(counts)) if counts else 0.0,
        "min_delay_s": float(delays.min()) if delays.size else 0.0,
        "max_delay_s": float(delays.max()) if delays.size else 0.0,
        "noise_var": ds.pattern.noise_var,
    }
