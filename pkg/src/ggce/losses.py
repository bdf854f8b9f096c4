"""Offline training objective on delay-beam power spectra.

All terms compare unit-sum normalized spectra, so they are invariant to
positive rescaling of either input; absolute power is recovered online
by the covariance calibration step, not here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_nonnegative, check_spectrum


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective.

    lambda_delay / lambda_beam weight the two axes inside the marginal
    term; support_threshold (fraction of the target peak) defines the
    target support; los_radius is the half-width, in bins, of the
    exclusion window that NLoS energy is pushed out of.
    """

    lambda_spec: float = 1.0
    lambda_marg: float = 0.3
    lambda_delay: float = 0.5
    lambda_beam: float = 0.5
    lambda_false: float = 0.1
    lambda_recall: float = 0.1
    lambda_los: float = 0.05
    support_threshold: float = 0.01
    los_radius: int = 2

    def __post_init__(self):
        for name in (
            "lambda_spec",
            "lambda_marg",
            "lambda_delay",
            "lambda_beam",
            "lambda_false",
            "lambda_recall",
            "lambda_los",
        ):
            check_nonnegative(getattr(self, name), name)
        if not 0.0 < self.support_threshold < 1.0:
            raise ValueError("support_threshold must lie in (0, 1)")
        if int(self.los_radius) < 0:
            raise ValueError("los_radius must be nonnegative")


def normalize_unit_sum(q: np.ndarray) -> np.ndarray:
    """Scale a nonnegative array to unit total; all-zero stays zero."""
    q = np.asarray(q, dtype=float)
    s = q.sum()
    if s <= 0.0:
        return np.zeros_like(q)
    return q / s


def loss_spec(q_hat: np.ndarray, q_gt: np.ndarray) -> float:
    """Mean squared bin error between unit-sum normalized spectra."""
    q_hat = check_spectrum(q_hat, "q_hat")
    q_gt = check_spectrum(q_gt, "q_gt")
    if q_hat.shape != q_gt.shape:
        raise ValueError("q_hat and q_gt must have the same shape")
    if q_gt.sum() <= 0.0:
        raise ValueError("q_gt must have positive total mass")
    diff = normalize_unit_sum(q_hat) - normalize_unit_sum(q_gt)
    return float(np.mean(diff**2))


def loss_marginal(
    q_hat: np.ndarray, q_gt: np.ndarray, lambda_delay: float, lambda_beam: float
) -> float:
    """Squared error of unit-sum delay and beam marginals, summed per axis."""
    q_hat = check_spectrum(q_hat, "q_hat")
    q_gt = check_spectrum(q_gt, "q_gt")
    if q_hat.shape != q_gt.shape:
        raise ValueError("q_hat and q_gt must have the same shape")
    if q_hat.sum() <= 0.0 or q_gt.sum() <= 0.0:
        raise ValueError("both spectra must have positive total mass")
    d = normalize_unit_sum(q_hat.sum(axis=1)) - normalize_unit_sum(q_gt.sum(axis=1))
    b = normalize_unit_sum(q_hat.sum(axis=0)) - normalize_unit_sum(q_gt.sum(axis=0))
    return float(lambda_delay * np.sum(d**2) + lambda_beam * np.sum(b**2))


def los_exclusion_mask(
    los_tap: int, los_beam: int, n_delay: int, n_beam: int, radius: int
) -> np.ndarray:
    """Boolean window of +-radius bins around the LoS bin.

    The delay axis is clipped at the window edges (the taps beyond them
    are not physically adjacent); the beam axis wraps.
    """
    radius = int(radius)
    mask = np.zeros((n_delay, n_beam), dtype=bool)
    lo = max(0, int(los_tap) - radius)
    hi = min(n_delay - 1, int(los_tap) + radius)
    beams = (int(los_beam) + np.arange(-radius, radius + 1)) % n_beam
    mask[np.ix_(np.arange(lo, hi + 1), np.unique(beams))] = True
    return mask


def loss_support(
    q_hat_total: np.ndarray,
    q_hat_nlos: np.ndarray,
    q_gt: np.ndarray,
    weights: LossWeights,
    los_bin: tuple[int, int],
) -> float:
    """Penalize off-support energy, missed support, and NLoS mass at LoS.

    los_bin is the (window tap, beam) location of the geometric LoS
    arrival. The last term is the fraction of NLoS energy inside the
    exclusion window, 0 when there is no NLoS energy at all.
    """
    q_hat_total = check_spectrum(q_hat_total, "q_hat_total")
    q_hat_nlos = check_spectrum(q_hat_nlos, "q_hat_nlos")
    q_gt = check_spectrum(q_gt, "q_gt")
    if not q_hat_total.shape == q_hat_nlos.shape == q_gt.shape:
        raise ValueError("all spectra must have the same shape")
    qh = normalize_unit_sum(q_hat_total)
    qg = normalize_unit_sum(q_gt)
    support = q_gt >= weights.support_threshold * q_gt.max()
    off = ~support
    l_false = float(qh[off].mean()) if off.any() else 0.0
    l_recall = float(np.maximum(0.0, qg[support] - qh[support]).mean()) if support.any() else 0.0
    nlos_sum = q_hat_nlos.sum()
    if nlos_sum > 0.0:
        window = los_exclusion_mask(
            los_bin[0], los_bin[1], q_gt.shape[0], q_gt.shape[1], weights.los_radius
        )
        l_los = float(q_hat_nlos[window].sum() / nlos_sum)
    else:
        l_los = 0.0
    return float(
        weights.lambda_false * l_false
        + weights.lambda_recall * l_recall
        + weights.lambda_los * l_los
    )


def total_loss(
    q_hat_total: np.ndarray,
    q_hat_nlos: np.ndarray,
    q_gt: np.ndarray,
    weights: LossWeights,
    los_bin: tuple[int, int],
) -> float:
    """Weighted sum of the spectral, marginal, and support terms."""
    return float(
        weights.lambda_spec * loss_spec(q_hat_total, q_gt)
        + weights.lambda_marg
        * loss_marginal(q_hat_total, q_gt, weights.lambda_delay, weights.lambda_beam)
        + loss_support(q_hat_total, q_hat_nlos, q_gt, weights, los_bin)
    )
