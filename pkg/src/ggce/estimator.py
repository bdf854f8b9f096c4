"""Online estimation: diagonal-prior LMMSE, temporal prediction, baselines.

The prior enters only through a diagonal covariance over the vectorized
delay-beam channel, so the LMMSE solve is a dense (n_obs x n_obs) system
at pilot symbols; between pilots a scalar AR coefficient extrapolates
the last measured posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistoryError, NumericFailure
from .radio import SensingModel, vec_spectrum
from .validation import check_nonnegative, check_positive, check_spectrum

RHO_FLOOR = 1e-12

MEASURED = "measured"
PREDICTED = "predicted"


@dataclass(eq=False)
class CovariancePrior:
    """Diagonal prior over the vectorized delay-beam channel."""

    diag: np.ndarray
    rho: float
    eps: float

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        if self.diag.ndim != 1:
            raise ValueError("diag must be a vector")
        self.rho = check_positive(self.rho, "rho")
        self.eps = check_positive(self.eps, "eps")
        if not np.all(np.isfinite(self.diag)):
            raise ValueError("diag must be finite")
        if self.diag.min() < self.rho * self.eps * (1.0 - 1e-12):
            raise ValueError("diag entries must not drop below the rho*eps floor")


@dataclass(eq=False)
class PosteriorState:
    """One estimate of the vectorized delay-beam channel at a symbol."""

    x_hat: np.ndarray
    symbol_index: int
    source: str

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=complex)
        if self.x_hat.ndim != 1 or not np.all(np.isfinite(self.x_hat)):
            raise ValueError("x_hat must be a finite complex vector")
        self.symbol_index = int(self.symbol_index)
        if self.source not in (MEASURED, PREDICTED):
            raise ValueError(f"source must be '{MEASURED}' or '{PREDICTED}'")


def build_prior(q_hat: np.ndarray, rho: float, eps: float) -> CovariancePrior:
    """Diagonal covariance rho * vec(q + eps), column-major like the sensing map."""
    q_hat = check_spectrum(q_hat, "q_hat")
    rho = check_positive(rho, "rho")
    eps = check_positive(eps, "eps")
    return CovariancePrior(diag=rho * vec_spectrum(q_hat + eps), rho=rho, eps=eps)


def default_eps(q_hat: np.ndarray, fraction: float = 1e-6) -> float:
    """Relative power floor: a fraction of the spectrum peak.

    Falls back to an absolute 1e-12 for an all-zero spectrum so the
    floor stays strictly positive.
    """
    peak = float(np.asarray(q_hat).max(initial=0.0))
    return max(fraction * peak, 1e-12)


def calibrate_rho(
    y: np.ndarray,
    sensing: SensingModel,
    q_hat: np.ndarray,
    eps: float,
    noise_var: float,
    tx_power: float = 1.0,
) -> float:
    """Moment-match pilot energy: E||y||^2 = P^2 tr(A D A^H) + sigma^2 dim."""
    y = np.asarray(y).ravel(order="F")
    eps = check_positive(eps, "eps")
    noise_var = check_nonnegative(noise_var, "noise_var")
    tx_power = check_positive(tx_power, "tx_power")
    d = vec_spectrum(check_spectrum(q_hat, "q_hat") + eps)
    col_sq = np.einsum("ij,ij->j", np.abs(sensing.matrix), np.abs(sensing.matrix))
    trace = float(col_sq @ d)
    if trace <= 0.0:
        raise ValueError("sensing matrix annihilates the prior support")
    excess = float(np.vdot(y, y).real) - noise_var * y.size
    return max(RHO_FLOOR, excess / (tx_power**2 * trace))


def lmmse_estimate(
    y: np.ndarray,
    sensing: SensingModel,
    prior: CovariancePrior,
    noise_var: float,
    *,
    tx_power: float = 1.0,
    symbol: int = 0,
) -> PosteriorState:
    """Posterior mean C A^H (A C A^H + noise I)^{-1} y via a linear solve."""
    y = np.asarray(y, dtype=complex).ravel(order="F")  # matches vec_spectrum
    noise_var = check_nonnegative(noise_var, "noise_var")
    a = tx_power * sensing.matrix
    if y.size != a.shape[0] or prior.diag.size != a.shape[1]:
        raise ValueError("dimension mismatch between y, sensing, and prior")
    weighted = a * prior.diag[None, :]  # A C
    gram = weighted @ np.conj(a.T)
    gram[np.diag_indices_from(gram)] += noise_var
    try:
        z = np.linalg.solve(gram, y)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("singular pilot system (zero noise, rank-deficient)") from exc
    x_hat = np.conj(weighted.T) @ z
    return PosteriorState(x_hat=x_hat, symbol_index=symbol, source=MEASURED)


def estimate_alpha(states: list[PosteriorState]) -> complex:
    """One-step AR coefficient from consecutive measured states.

    Pairs are formed between consecutive measured symbols; the
    least-squares ratio is accumulated over pairs sharing the most
    common gap, then gap-normalized through the principal root. The
    magnitude is clipped to 1 so prediction never amplifies.
    """
    measured = sorted(
        (s for s in states if s.source == MEASURED), key=lambda s: s.symbol_index
    )
    if len(measured) < 2:
        raise InsufficientHistoryError("need at least two measured states")
    gaps = np.array(
        [b.symbol_index - a.symbol_index for a, b in zip(measured, measured[1:])]
    )
    if np.any(gaps <= 0):
        raise ValueError("measured states must have distinct, increasing symbols")
    values, counts = np.unique(gaps, return_counts=True)
    gap = int(values[np.argmax(counts)])
    num = 0.0 + 0.0j
    den = 0.0
    for a, b, g in zip(measured, measured[1:], gaps):
        if g != gap:
            continue
        num += np.vdot(a.x_hat, b.x_hat)
        den += float(np.vdot(a.x_hat, a.x_hat).real)
    if den == 0.0:
        raise ValueError("degenerate history: reference states have zero energy")
    alpha = complex(num / den) ** (1.0 / gap)
    if abs(alpha) > 1.0:
        alpha = alpha / abs(alpha)
    return alpha


def predict(x_ref: PosteriorState, alpha: complex, t: int) -> PosteriorState:
    """Extrapolate a measured state forward by alpha^(t - t_ref)."""
    t = int(t)
    if t < x_ref.symbol_index:
        raise ValueError("cannot predict backwards in time")
    if t == x_ref.symbol_index:
        return x_ref
    step = complex(alpha) ** (t - x_ref.symbol_index)
    return PosteriorState(x_hat=step * x_ref.x_hat, symbol_index=t, source=PREDICTED)


def zero_prior(dims: tuple[int, int], power: float) -> CovariancePrior:
    """Uninformative prior: total power spread uniformly over all bins."""
    n_delay, n_beam = int(dims[0]), int(dims[1])
    power = check_positive(power, "power")
    per_bin = power / (n_delay * n_beam)
    return CovariancePrior(
        diag=np.full(n_delay * n_beam, per_bin), rho=1.0, eps=per_bin
    )


def genie_prior(x_true: np.ndarray, eps: float | None = None) -> CovariancePrior:
    """Oracle prior from the true delay-beam channel at this symbol."""
    x_true = np.asarray(x_true, dtype=complex)
    q = np.abs(x_true) ** 2
    if eps is None:
        eps = default_eps(q)
    return build_prior(q, 1.0, eps)


def omp_los_seeded(
    y: np.ndarray,
    sensing: SensingModel,
    los_bin: tuple[int, int],
    max_iters: int = 16,
    residual_tol: float = 0.1,
) -> np.ndarray:
    """Greedy sparse recovery with the support seeded at the LoS bin.

    Columns are correlation-ranked after L2 normalization; the support
    is refit by least squares each round. Stops at max_iters atoms
    (seed included) or once the residual drops to residual_tol * ||y||.
    """
    if int(max_iters) < 1:
        raise ValueError("max_iters must be at least 1")
    y = np.asarray(y, dtype=complex).ravel(order="F")
    a = sensing.matrix
    if y.size != a.shape[0]:
        raise ValueError("y length does not match the sensing matrix")
    l_idx, u_idx = int(los_bin[0]), int(los_bin[1])
    if not (0 <= l_idx < sensing.n_delay and 0 <= u_idx < sensing.n_beam):
        raise ValueError("los_bin outside the delay-beam grid")
    seed = u_idx * sensing.n_delay + l_idx

    norms = np.linalg.norm(a, axis=0)
    support = [seed]
    target = residual_tol * float(np.linalg.norm(y))

    def refit(support):
        coef, *_ = np.linalg.lstsq(a[:, support], y, rcond=None)
        return coef, y - a[:, support] @ coef

    coef, residual = refit(support)
    while len(support) < max_iters and np.linalg.norm(residual) > target:
        corr = np.abs(np.conj(a.T) @ residual) / np.where(norms > 0, norms, np.inf)
        corr[support] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 0.0:
            break
        support.append(j)
        coef, residual = refit(support)

    x_hat = np.zeros(a.shape[1], dtype=complex)
    x_hat[support] = coef
    return x_hat
