"""Scene-level Gaussian channel map and its position-conditioned deformer.

A SceneMap holds G isotropic Gaussian primitives plus a learnable virtual
LoS power. A small tanh network (DeformerParams) predicts bounded residual
corrections to opacity, delay, and gain as a function of primitive and UE
position. Back-projection inverts a (delay, beam) measurement bin into a
candidate scatterer position on the bistatic ellipse; the initializer uses
it to seed the map from training spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoSolutionError
from .radio import (
    C_LIGHT,
    UP,
    ArrayGeometry,
    DelayWindow,
    OfdmGrid,
    beam_coordinate,
    beam_grid,
    beam_kernel,
    delay_kernel,
    nearest_bins,
)
from .validation import as_position, check_positive

DEFORMER_WIDTHS = (6, 64, 64, 3)


# ---------------------------------------------------------------------------
# types


@dataclass(eq=False)
class GaussianPrimitive:
    """One isotropic scene Gaussian with channel attributes."""

    mu: np.ndarray
    scale: float
    opacity_logit: float
    delay_residual: float
    gain_raw: float

    def __post_init__(self):
        self.mu = as_position(self.mu, "mu")
        self.scale = check_positive(self.scale, "scale")
        for name in ("opacity_logit", "delay_residual", "gain_raw"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, v)


@dataclass(eq=False)
class SceneMap:
    """Global Gaussian set shared across UE positions."""

    primitives: list[GaussianPrimitive]
    los_gain_raw: float
    bs_position: np.ndarray

    def __post_init__(self):
        if len(self.primitives) < 1:
            raise ValueError("SceneMap needs at least one primitive")
        self.los_gain_raw = float(self.los_gain_raw)
        if not np.isfinite(self.los_gain_raw):
            raise ValueError("los_gain_raw must be finite")
        self.bs_position = as_position(self.bs_position, "bs_position")

    @property
    def size(self) -> int:
        return len(self.primitives)


@dataclass(eq=False)
class DeformerParams:
    """Weights of the 6 -> 64 -> 64 -> 3 tanh residual network.

    `weights` alternates (W, b) per layer. Inputs are (mu, ue) coordinates
    shifted by `center` and divided by `extent` so the network sees O(1)
    values; `eta_*` bound the three residual outputs.
    """

    weights: list[np.ndarray]
    eta_opacity: float
    eta_delay: float
    eta_gain: float
    center: np.ndarray
    extent: float

    def __post_init__(self):
        if len(self.weights) != 2 * (len(DEFORMER_WIDTHS) - 1):
            raise ValueError("expected 3 (W, b) layer pairs")
        shaped = []
        for i in range(len(DEFORMER_WIDTHS) - 1):
            w = np.asarray(self.weights[2 * i], dtype=float)
            b = np.asarray(self.weights[2 * i + 1], dtype=float)
            want = (DEFORMER_WIDTHS[i + 1], DEFORMER_WIDTHS[i])
            if w.shape != want or b.shape != (DEFORMER_WIDTHS[i + 1],):
                raise ValueError(f"layer {i} must have shapes {want} and ({want[0]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("deformer weights must be finite")
            shaped += [w, b]
        self.weights = shaped
        self.eta_opacity = check_positive(self.eta_opacity, "eta_opacity")
        self.eta_delay = check_positive(self.eta_delay, "eta_delay")
        self.eta_gain = check_positive(self.eta_gain, "eta_gain")
        self.center = as_position(self.center, "center")
        self.extent = check_positive(self.extent, "extent")

    @classmethod
    def initialize(
        cls,
        eta_delay: float,
        center,
        extent: float,
        eta_opacity: float = 2.0,
        eta_gain: float = 1.0,
        seed: int = 0,
    ) -> "DeformerParams":
        """Random hidden layers, zero final layer (identity deformation)."""
        rng = np.random.default_rng(seed)
        weights = []
        for i in range(len(DEFORMER_WIDTHS) - 1):
            fan_in, fan_out = DEFORMER_WIDTHS[i], DEFORMER_WIDTHS[i + 1]
            if i == len(DEFORMER_WIDTHS) - 2:
                w = np.zeros((fan_out, fan_in))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            weights += [w, np.zeros(fan_out)]
        return cls(
            weights=weights,
            eta_opacity=eta_opacity,
            eta_delay=eta_delay,
            eta_gain=eta_gain,
            center=center,
            extent=extent,
        )


@dataclass(eq=False)
class DeformedAttributes:
    """Effective per-Gaussian attributes at one UE position."""

    opacity: float
    delay_residual: float
    gain: float

    def __post_init__(self):
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie in (0, 1)")
        if self.gain < 0.0:
            raise ValueError("gain must be nonnegative")


# ---------------------------------------------------------------------------
# deformation (numpy mirror of the training-path math)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def inverse_softplus(y: float) -> float:
    """Scalar inverse of log(1 + exp(x)), floored away from y <= 0."""
    y = max(float(y), 1e-12)
    if y > 30.0:
        return y
    return float(np.log(np.expm1(y)))


def deformer_forward(params: DeformerParams, mu: np.ndarray, ue: np.ndarray) -> np.ndarray:
    """Raw 3-channel network output for primitives (G,3) and one UE position."""
    mu = np.atleast_2d(mu)
    ue_n = (np.asarray(ue, dtype=float) - params.center) / params.extent
    mu_n = (mu - params.center) / params.extent
    h = np.concatenate([mu_n, np.broadcast_to(ue_n, mu_n.shape)], axis=1)
    w1, b1, w2, b2, w3, b3 = params.weights
    h = np.tanh(h @ w1.T + b1)
    h = np.tanh(h @ w2.T + b2)
    return h @ w3.T + b3


def deform(
    scene: SceneMap, params: DeformerParams, ue_position
) -> list[DeformedAttributes]:
    """Bounded residual correction of every primitive at one UE position."""
    ue = as_position(ue_position, "ue_position")
    mu = np.array([p.mu for p in scene.primitives])
    out = deformer_forward(params, mu, ue)
    attrs = []
    for i, p in enumerate(scene.primitives):
        d_o, d_tau, d_g = out[i]
        sig = _sigmoid(p.opacity_logit + params.eta_opacity * np.tanh(d_o))
        attrs.append(
            DeformedAttributes(
                # saturation can round to exactly 0/1 in float; keep the
                # open-interval invariant
                opacity=float(np.clip(sig, 1e-15, 1.0 - 1e-15)),
                delay_residual=float(p.delay_residual + params.eta_delay * np.tanh(d_tau)),
                gain=float(_softplus(p.gain_raw + params.eta_gain * np.tanh(d_g))),
            )
        )
    return attrs


def select_active(attrs, threshold: float, max_paths: int) -> list[int]:
    """Indices with opacity >= threshold, keeping the max_paths largest.

    Ties are broken toward lower index; the result is in index order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    max_paths = int(max_paths)
    if max_paths < 0:
        raise ValueError("max_paths must be nonnegative")
    o = np.array(
        [a.opacity if isinstance(a, DeformedAttributes) else float(a) for a in attrs]
    )
    idx = np.flatnonzero(o >= threshold)
    if idx.size == 0:
        return []
    order = np.lexsort((idx, -o[idx]))
    return sorted(idx[order][:max_paths].tolist())


# ---------------------------------------------------------------------------
# back-projection and initialization


def backproject_scatterer(bs, ue, tau: float, nu: float, array: ArrayGeometry) -> np.ndarray:
    """Invert a (delay, beam) bin to a point on the bistatic ellipse.

    The candidate lies at bs + r d(nu), with d(nu) the horizontal departure
    direction whose array-axis projection is nu, and r chosen so the
    BS -> point -> UE path length equals c tau.
    """
    bs = as_position(bs, "bs")
    ue = as_position(ue, "ue")
    tau = float(tau)
    nu = float(nu)
    if abs(nu) > 1.0:
        raise ValueError("nu must lie in [-1, 1]")
    q = ue - bs
    dq = float(np.linalg.norm(q))
    c_tau = C_LIGHT * tau
    if c_tau <= dq:
        raise NoSolutionError(
            f"path length {c_tau:.3f} m does not exceed the direct distance {dq:.3f} m"
        )
    axis = array.axis
    b_h = array.broadside - np.dot(array.broadside, UP) * UP
    b_h = b_h / np.linalg.norm(b_h)
    d = nu * axis + np.sqrt(max(1.0 - nu * nu, 0.0)) * b_h
    r = (c_tau**2 - dq**2) / (2.0 * (c_tau - float(np.dot(d, q))))
    return bs + r * d


def random_scene(
    positions: np.ndarray,
    array: ArrayGeometry,
    k: int = 8,
    jitter_m: float = 25.0,
    scale_init_m: float = 2.0,
    seed: int = 0,
) -> SceneMap:
    """Measurement-free starting map: weak primitives scattered off-track.

    Used when initialization from observed spectra is deliberately
    disabled; training has to discover geometry from scratch.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 0:
        raise ValueError("at least one UE position is required")
    if int(k) < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    anchor = positions.mean(axis=0)
    primitives = [
        GaussianPrimitive(
            mu=anchor + rng.normal(scale=jitter_m, size=3),
            scale=scale_init_m,
            opacity_logit=float(np.log(0.8 / 0.2)),
            delay_residual=0.0,
            gain_raw=inverse_softplus(1e-3),
        )
        for _ in range(int(k))
    ]
    return SceneMap(
        primitives=primitives,
        los_gain_raw=inverse_softplus(0.5),
        bs_position=array.bs_position.copy(),
    )


def init_from_measurements(
    positions: np.ndarray,
    spectra: np.ndarray,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    k_init: int = 8,
    merge_radius_m: float = 5.0,
    k_floor: int = 4,
    jitter_m: float = 5.0,
    scale_init_m: float = 2.0,
    los_exclusion_bins: int = 2,
    min_peak_fraction: float = 0.05,
    leakage_margin: float = 3.0,
    seed: int = 0,
) -> SceneMap:
    """Seed a SceneMap by back-projecting the strongest non-LoS bins.

    Spectra are unit-sum normalized per sample before bin powers become
    gains, so gain_raw starts in the responsive part of the softplus.
    A bin counts as scatterer evidence only if it clears both gates: at
    least min_peak_fraction of the strongest bin outside the direct-path
    region (the direct path would otherwise set the bar 15-30 dB above
    real scatterers), and leakage_margin times the direct path's own
    predicted kernel tail at that bin. Candidates within merge_radius_m
    are merged greedily in power order (power-weighted mean position,
    mean power). k_floor weak jittered primitives near the mean UE
    position are always appended: they give the optimizer spare mass to
    reassign (and keep G >= 1 even with no usable NLoS bins).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    spectra = np.asarray(spectra, dtype=float)
    if positions.shape[0] == 0:
        raise ValueError("at least one training sample is required")
    if spectra.ndim != 3 or spectra.shape[0] != positions.shape[0]:
        raise ValueError("spectra must be (samples, delay, beam) aligned with positions")
    if int(k_init) < 1:
        raise ValueError("k_init must be at least 1")

    taps = window.tap_delays(grid)
    nus = beam_grid(array)
    bs = array.bs_position
    candidates = []  # (power, position)
    los_powers = []
    for ue, q in zip(positions, spectra):
        total = q.sum()
        if total <= 0.0:
            continue
        qn = q / total
        tau_los = float(np.linalg.norm(ue - bs)) / C_LIGHT
        l_los, u_los = nearest_bins(tau_los, beam_coordinate(ue, array), grid, window, array)
        los_powers.append(qn[l_los, u_los])
        mask = np.ones_like(qn, dtype=bool)
        mask[taps <= tau_los, :] = False  # delays at or before the direct path
        lo = max(l_los - los_exclusion_bins, 0)
        hi = min(l_los + los_exclusion_bins + 1, window.n_taps)
        for u in range(-los_exclusion_bins, los_exclusion_bins + 1):
            mask[lo:hi, (u_los + u) % array.n_antennas] = False
        # predicted direct-path leakage, anchored at its measured bin power
        kt = delay_kernel(taps, tau_los, grid)
        kb = beam_kernel(nus, beam_coordinate(ue, array), array)
        ref = kt[l_los] * kb[u_los]
        leak = (qn[l_los, u_los] / ref) * np.outer(kt, kb) if ref > 0 else np.zeros_like(qn)
        flat = np.where(mask.ravel(), qn.ravel(), -1.0)
        floor = min_peak_fraction * flat.max()
        order = np.argsort(-flat, kind="stable")[: int(k_init)]
        for j in order:
            if flat[j] <= floor:
                break
            l_idx, u_idx = j // array.n_antennas, j % array.n_antennas
            if qn[l_idx, u_idx] <= leakage_margin * leak[l_idx, u_idx]:
                continue  # indistinguishable from a direct-path tail
            try:
                p = backproject_scatterer(bs, ue, taps[l_idx], nus[u_idx], array)
            except NoSolutionError:
                continue
            candidates.append((float(qn[l_idx, u_idx]), p))

    mean_los = float(np.mean(los_powers)) if los_powers else 1e-3
    clusters = []  # [weighted position sum, power sum, count]
    for power, pos in sorted(candidates, key=lambda c: -c[0]):
        for cl in clusters:
            center = cl[0] / cl[1]
            if np.linalg.norm(center - pos) <= merge_radius_m:
                cl[0] += power * pos
                cl[1] += power
                cl[2].append(power)
                break
        else:
            clusters.append([power * pos, power, [power]])

    primitives = []
    for wpos, wsum, powers in clusters:
        primitives.append(
            GaussianPrimitive(
                mu=wpos / wsum,
                scale=scale_init_m,
                opacity_logit=float(np.log(0.8 / 0.2)),
                delay_residual=0.0,
                gain_raw=inverse_softplus(float(np.mean(powers))),
            )
        )
    # always top up with weak primitives near the track: they are the
    # seed material for direct-path substitutes when no explicit direct
    # path is rendered, and they fade out through opacity otherwise
    rng = np.random.default_rng(seed)
    anchor = positions.mean(axis=0)
    for _ in range(max(int(k_floor), 1) if not primitives else int(k_floor)):
        primitives.append(
            GaussianPrimitive(
                mu=anchor + rng.normal(scale=jitter_m, size=3),
                scale=scale_init_m,
                opacity_logit=float(np.log(0.8 / 0.2)),
                delay_residual=0.0,
                gain_raw=inverse_softplus(1e-3 * max(mean_los, 1e-6)),
            )
        )
    return SceneMap(
        primitives=primitives,
        los_gain_raw=inverse_softplus(mean_los),
        bs_position=bs.copy(),
    )
