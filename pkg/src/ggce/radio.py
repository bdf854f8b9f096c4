"""OFDM delay-beam signal core.

Types and transforms shared by the simulator, the renderer, and the
estimator: unitary DFT transforms between the subcarrier/antenna and
delay/beam domains, windowed tap selection, the pilot sensing operator,
and the Dirichlet leakage kernels on both axes.

Conventions, fixed here and relied on everywhere else:

* DFT matrix entry (n, k) = exp(-2j pi n k / size) / sqrt(size) (unitary).
* The delay-beam image of an (N, M) frequency-space grid H is
  X = P_D F_N^H H F_M, with P_D the windowed tap selection; the inverse
  zero-fills the unselected taps and inverts both transforms.
* Array response entry m at beam coordinate nu is
  exp(-1j pi m (spacing / 0.5) nu); with half-wavelength spacing the beam
  grid nu_u = wrap(-2u / M) maps onto itself under the transform pair.
* vec() of an (L, M) delay-beam image is column-major: entry b * L + l
  is (delay tap l, beam b).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import (
    as_position,
    as_unit_vector,
    check_nonnegative,
    check_positive,
)

C_LIGHT = 299_792_458.0

UP = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class OfdmGrid:
    """Static OFDM numerology for one link."""

    n_subcarriers: int
    subcarrier_spacing_hz: float
    n_symbols: int
    symbol_duration_s: float
    carrier_freq_hz: float

    def __post_init__(self):
        if int(self.n_subcarriers) < 2:
            raise ValueError("n_subcarriers must be at least 2")
        if int(self.n_symbols) < 1:
            raise ValueError("n_symbols must be at least 1")
        check_positive(self.subcarrier_spacing_hz, "subcarrier_spacing_hz")
        check_positive(self.symbol_duration_s, "symbol_duration_s")
        check_positive(self.carrier_freq_hz, "carrier_freq_hz")

    @property
    def delay_resolution_s(self) -> float:
        """Tap spacing 1 / (N df) of the delay grid."""
        return 1.0 / (self.n_subcarriers * self.subcarrier_spacing_hz)

    @property
    def slot_duration_s(self) -> float:
        return self.n_symbols * self.symbol_duration_s

    @property
    def wavelength_m(self) -> float:
        return C_LIGHT / self.carrier_freq_hz


@dataclass(eq=False)
class ArrayGeometry:
    """Uniform linear array at the base station.

    The element axis is horizontal, perpendicular to both the vertical and
    the broadside direction; beam coordinates nu are inner products of unit
    departure directions with that axis, so nu lies in [-1, 1].
    """

    n_antennas: int
    spacing_wavelengths: float
    bs_position: np.ndarray
    broadside: np.ndarray
    axis: np.ndarray = field(init=False)

    def __post_init__(self):
        if int(self.n_antennas) < 1:
            raise ValueError("n_antennas must be at least 1")
        check_positive(self.spacing_wavelengths, "spacing_wavelengths")
        self.bs_position = as_position(self.bs_position, "bs_position")
        self.broadside = as_unit_vector(self.broadside, "broadside")
        cross = np.cross(UP, self.broadside)
        if np.linalg.norm(cross) < 1e-9:
            raise ValueError("broadside must not be vertical")
        self.axis = cross / np.linalg.norm(cross)


@dataclass(eq=False)
class PilotPattern:
    """Comb or arbitrary pilot placement within a slot."""

    pilot_symbols: tuple[int, ...]
    pilot_subcarriers: np.ndarray
    tx_power: float
    noise_var: float

    def __post_init__(self):
        self.pilot_symbols = tuple(int(s) for s in self.pilot_symbols)
        if len(self.pilot_symbols) == 0:
            raise ValueError("pilot_symbols must be nonempty")
        if any(s < 0 for s in self.pilot_symbols):
            raise ValueError("pilot_symbols must be nonnegative")
        if len(set(self.pilot_symbols)) != len(self.pilot_symbols):
            raise ValueError("pilot_symbols must be unique")
        sub = np.asarray(self.pilot_subcarriers, dtype=int)
        if sub.ndim != 1 or sub.size == 0:
            raise ValueError("pilot_subcarriers must be a nonempty 1-D index list")
        if np.any(sub < 0):
            raise ValueError("pilot_subcarriers must be nonnegative")
        if np.any(np.diff(sub) <= 0):
            raise ValueError("pilot_subcarriers must be strictly increasing")
        self.pilot_subcarriers = sub
        self.tx_power = check_positive(self.tx_power, "tx_power")
        self.noise_var = check_nonnegative(self.noise_var, "noise_var")

    @property
    def n_pilot_subcarriers(self) -> int:
        return len(self.pilot_subcarriers)


@dataclass(frozen=True)
class DelayWindow:
    """Contiguous physical-delay window of L taps with a pre-cursor guard.

    The window covers FFT tap indices {N-guard, ..., N-1, 0, ..., L-guard-1},
    ordered by physical delay (guard taps first, negative delays).
    """

    n_taps: int
    guard_taps: int

    def __post_init__(self):
        if int(self.n_taps) < 1:
            raise ValueError("n_taps must be at least 1")
        if not 0 <= int(self.guard_taps) < int(self.n_taps):
            raise ValueError("guard_taps must satisfy 0 <= guard < n_taps")

    def fft_indices(self, n_subcarriers: int) -> np.ndarray:
        if self.n_taps > n_subcarriers:
            raise ValueError("delay window longer than the subcarrier grid")
        neg = np.arange(n_subcarriers - self.guard_taps, n_subcarriers)
        pos = np.arange(0, self.n_taps - self.guard_taps)
        return np.concatenate([neg, pos])

    def tap_delays(self, grid: OfdmGrid) -> np.ndarray:
        """Physical delay of each window tap, strictly increasing (seconds)."""
        idx = self.fft_indices(grid.n_subcarriers).astype(float)
        tau = idx * grid.delay_resolution_s
        upper = idx >= grid.n_subcarriers / 2
        tau[upper] -= 1.0 / grid.subcarrier_spacing_hz
        return tau


@dataclass(eq=False)
class CfrSnapshot:
    """One symbol's channel frequency response with its geometry tag."""

    slot: int
    symbol: int
    ue_position: np.ndarray
    cfr: np.ndarray

    def __post_init__(self):
        self.slot = int(self.slot)
        self.symbol = int(self.symbol)
        self.ue_position = as_position(self.ue_position, "ue_position")
        cfr = np.asarray(self.cfr, dtype=complex)
        if cfr.ndim != 2:
            raise ValueError("cfr must be a 2-D (subcarriers, antennas) array")
        if not np.all(np.isfinite(cfr)):
            raise ValueError("cfr must be finite")
        self.cfr = cfr


@dataclass(eq=False)
class SensingModel:
    """Pilot-domain linear map y = tx_power * A x + w for vec'd delay-beam x.

    A = kron(conj(F_M), S_P F_N P_D^T); every column has squared norm
    n_pilot_subcarriers / n_subcarriers.
    """

    matrix: np.ndarray
    pilot_subcarriers: np.ndarray
    n_subcarriers: int
    n_delay: int
    n_beam: int

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_coef(self) -> int:
        return self.matrix.shape[1]

    def observe(self, h: np.ndarray) -> np.ndarray:
        """Noiseless pilot observation of a full CFR, vectorized column-major."""
        return h[self.pilot_subcarriers, :].ravel(order="F")


# ---------------------------------------------------------------------------
# transforms


def dft_matrix(size: int) -> np.ndarray:
    """Unitary DFT matrix, entry (n, k) = exp(-2j pi n k / size) / sqrt(size)."""
    size = int(size)
    if size < 1:
        raise ValueError("size must be positive")
    n = np.arange(size)
    return np.exp(-2j * np.pi * np.outer(n, n) / size) / np.sqrt(size)


def to_delay_beam(h: np.ndarray, window: DelayWindow) -> np.ndarray:
    """Map an (N, M) frequency-space CFR to its (L, M) delay-beam image."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2:
        raise ValueError("h must be a 2-D (subcarriers, antennas) array")
    n, m = h.shape
    x_full = np.fft.ifft(h, axis=0) * np.sqrt(n)  # F_N^H H
    x_full = np.fft.fft(x_full, axis=1) / np.sqrt(m)  # ... F_M
    return x_full[window.fft_indices(n), :]


def from_delay_beam(x: np.ndarray, n_subcarriers: int, window: DelayWindow) -> np.ndarray:
    """Embed an (L, M) delay-beam image and return the (N, M) CFR."""
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != window.n_taps:
        raise ValueError("x must be a 2-D (window taps, antennas) array")
    m = x.shape[1]
    x_full = np.zeros((n_subcarriers, m), dtype=complex)
    x_full[window.fft_indices(n_subcarriers), :] = x
    h = np.fft.fft(x_full, axis=0) / np.sqrt(n_subcarriers)  # F_N P_D^T X
    h = np.fft.ifft(h, axis=1) * np.sqrt(m)  # ... F_M^H
    return h


def vec_spectrum(x: np.ndarray) -> np.ndarray:
    """Column-major vectorization; entry b * L + l is (delay l, beam b)."""
    return np.asarray(x).ravel(order="F")


def unvec_spectrum(v: np.ndarray, n_delay: int, n_beam: int) -> np.ndarray:
    v = np.asarray(v)
    if v.size != n_delay * n_beam:
        raise ValueError("length does not match the delay-beam grid")
    return v.reshape((n_delay, n_beam), order="F")


def build_sensing_model(
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    pattern: PilotPattern,
) -> SensingModel:
    """Assemble the pilot sensing matrix kron(conj(F_M), S_P F_N P_D^T)."""
    if pattern.pilot_subcarriers[-1] >= grid.n_subcarriers:
        raise ValueError("pilot_subcarriers exceed the subcarrier grid")
    f_n = dft_matrix(grid.n_subcarriers)
    f_m = dft_matrix(array.n_antennas)
    idx = window.fft_indices(grid.n_subcarriers)
    block = f_n[np.ix_(pattern.pilot_subcarriers, idx)]  # S_P F_N P_D^T
    return SensingModel(
        matrix=np.kron(np.conj(f_m), block),
        pilot_subcarriers=pattern.pilot_subcarriers.copy(),
        n_subcarriers=grid.n_subcarriers,
        n_delay=window.n_taps,
        n_beam=array.n_antennas,
    )


# ---------------------------------------------------------------------------
# kernels and beam geometry


def dirichlet_power(theta, size: int):
    """Normalized Dirichlet power |sin(pi size t) / (size sin(pi t))|^2.

    Periodic with period 1, symmetric, bounded in [0, 1], equal to 1 at
    integer theta (removable singularity filled by a quadratic series).
    """
    theta = np.asarray(theta, dtype=float)
    e = theta - np.round(theta)
    small = np.abs(e) < 1e-7
    # keep the denominator away from zero where the series branch is taken
    esafe = np.where(small, 1.0, e)
    val = (np.sin(np.pi * size * esafe) / (size * np.sin(np.pi * esafe))) ** 2
    series = 1.0 - (np.pi**2 * (size**2 - 1) / 3.0) * e**2
    out = np.where(small, series, val)
    return float(out) if out.ndim == 0 else out


def delay_kernel(tau_l, tau, grid: OfdmGrid):
    """Power leakage of a path at delay tau onto the grid delay tau_l."""
    tau_l = np.asarray(tau_l, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return dirichlet_power(grid.subcarrier_spacing_hz * (tau_l - tau), grid.n_subcarriers)


def beam_kernel(nu_b, nu, array: ArrayGeometry):
    """Power leakage of a path at beam coordinate nu onto the grid beam nu_b.

    Equals |a(nu_b)^H a(nu)|^2 / M^2 for the array response a; invariant to
    the sign convention of the response phase.
    """
    nu_b = np.asarray(nu_b, dtype=float)
    nu = np.asarray(nu, dtype=float)
    theta = (array.spacing_wavelengths / 0.5) * (nu - nu_b) / 2.0
    return dirichlet_power(theta, array.n_antennas)


def array_response(nu: float, array: ArrayGeometry) -> np.ndarray:
    """Unit-modulus array response, entry m = exp(-1j pi m (s/0.5) nu)."""
    m = np.arange(array.n_antennas)
    return np.exp(-1j * np.pi * m * (array.spacing_wavelengths / 0.5) * float(nu))


def wrap_nu(x):
    """Wrap beam coordinates into [-1, 1)."""
    return (np.asarray(x, dtype=float) + 1.0) % 2.0 - 1.0


def beam_grid(array: ArrayGeometry) -> np.ndarray:
    """Beam coordinates nu_u = wrap(-2u / M) resolved by the DFT beams.

    Defined for half-wavelength spacing, where beam u of F_M steers exactly
    to nu_u; to_delay_beam concentrates a response at nu_u onto column u.
    """
    if array.spacing_wavelengths != 0.5:
        raise ValueError("beam_grid requires half-wavelength spacing")
    u = np.arange(array.n_antennas)
    return wrap_nu(-2.0 * u / array.n_antennas)


def beam_coordinate(target: np.ndarray, array: ArrayGeometry) -> float:
    """Beam coordinate of the departure direction toward a point target."""
    d = as_position(target, "target") - array.bs_position
    dist = np.linalg.norm(d)
    if dist == 0.0:
        raise ValueError("target coincides with the array position")
    return float(np.dot(d / dist, array.axis))


def nearest_bins(
    tau: float,
    nu: float,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
) -> tuple[int, int]:
    """Indices of the window tap and grid beam closest to (tau, nu)."""
    taps = window.tap_delays(grid)
    l_idx = int(np.argmin(np.abs(taps - tau)))
    grid_nu = beam_grid(array)
    u_idx = int(np.argmin(np.abs(wrap_nu(nu - grid_nu))))
    return l_idx, u_idx


# ---------------------------------------------------------------------------
# metrics


def ground_truth_spectrum(h: np.ndarray, window: DelayWindow) -> np.ndarray:
    """Delay-beam power image |X|^2 of a CFR."""
    x = to_delay_beam(h, window)
    return np.abs(x) ** 2


def nmse_db(h_hat: np.ndarray, h_ref: np.ndarray) -> float:
    """Normalized squared error in dB, floored at -300 for exact matches."""
    h_hat = np.asarray(h_hat)
    h_ref = np.asarray(h_ref)
    if h_hat.shape != h_ref.shape:
        raise ValueError("shape mismatch between estimate and reference")
    ref = float(np.sum(np.abs(h_ref) ** 2))
    if ref == 0.0:
        raise ValueError("reference has zero energy")
    err = float(np.sum(np.abs(h_hat - h_ref) ** 2))
    if err == 0.0:
        return -300.0
    return max(10.0 * np.log10(err / ref), -300.0)
