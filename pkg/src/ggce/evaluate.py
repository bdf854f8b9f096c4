"""Symbol-by-symbol online evaluation of estimation methods on a dataset.

At each pilot symbol every method sees the same noisy observation and
produces a measured state; between pilots each method extrapolates its
own last measurement with a scalar AR coefficient (plain holding until
two measurements exist). Errors are scored in the windowed delay-beam
domain against the window-projected true channel, which equals the
frequency-domain error against the window-limited truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimator import (
    MEASURED,
    PosteriorState,
    build_prior,
    calibrate_rho,
    default_eps,
    estimate_alpha,
    genie_prior,
    lmmse_estimate,
    omp_los_seeded,
    predict,
)
from .gaussmap import DeformerParams, SceneMap
from .radio import (
    C_LIGHT,
    beam_coordinate,
    build_sensing_model,
    nearest_bins,
    nmse_db,
    to_delay_beam,
    unvec_spectrum,
)
from .render import SelectionConfig, render
from .scene import ChannelDataset, observe_pilots

KNOWN_METHODS = ("trained", "genie", "zero", "omp")


@dataclass(frozen=True)
class SymbolRecord:
    """One scored estimate: who, when, how well, measured or predicted."""

    symbol: int
    method: str
    nmse_db: float
    source: str


@dataclass(eq=False)
class _MethodState:
    measured: list
    records: list


def evaluate_dataset(
    dataset: ChannelDataset,
    methods: list[str] | tuple[str, ...] = KNOWN_METHODS,
    *,
    scene: SceneMap | None = None,
    params: DeformerParams | None = None,
    seed: int = 0,
    eps_fraction: float = 1e-6,
    alpha_window: int = 4,
    selection: SelectionConfig | None = None,
    include_los: bool = True,
    nearest_bin: bool = False,
    omp_max_iters: int = 16,
    omp_tol: float = 0.1,
) -> list[SymbolRecord]:
    """Run the online loop and return per-symbol records in time order."""
    methods = list(methods)
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {KNOWN_METHODS}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods must be unique")
    if "trained" in methods and (scene is None or params is None):
        raise ConfigError("method 'trained' requires a scene map and deformer params")

    grid, array, window, pattern = (
        dataset.grid,
        dataset.array,
        dataset.window,
        dataset.pattern,
    )
    sensing = build_sensing_model(grid, window, array, pattern)
    states = {m: _MethodState(measured=[], records=[]) for m in methods}

    for snap in dataset.snapshots:
        t = snap.slot * grid.n_symbols + snap.symbol
        x_true = to_delay_beam(snap.cfr, window)
        if snap.symbol in pattern.pilot_symbols:
            # column-major vec to match the kron-structured sensing map
            y = observe_pilots(
                snap, pattern, rng_seed=[seed, snap.slot, snap.symbol]
            ).ravel(order="F")
            for m in methods:
                post = _measure(
                    m, y, snap, x_true, sensing, grid, window, array, pattern,
                    scene, params, selection, include_los, nearest_bin,
                    eps_fraction, omp_max_iters, omp_tol, t,
                )
                st = states[m]
                st.measured.append(post)
                del st.measured[:-max(alpha_window, 2)]
                st.records.append(
                    SymbolRecord(
                        symbol=t,
                        method=m,
                        nmse_db=nmse_db(
                            unvec_spectrum(post.x_hat, window.n_taps, array.n_antennas),
                            x_true,
                        ),
                        source=post.source,
                    )
                )
        else:
            for m in methods:
                st = states[m]
                if not st.measured:
                    continue  # nothing observed yet on this trajectory
                if len(st.measured) >= 2:
                    alpha = estimate_alpha(st.measured)
                else:
                    alpha = 1.0  # channel holding
                post = predict(st.measured[-1], alpha, t)
                st.records.append(
                    SymbolRecord(
                        symbol=t,
                        method=m,
                        nmse_db=nmse_db(
                            unvec_spectrum(post.x_hat, window.n_taps, array.n_antennas),
                            x_true,
                        ),
                        source=post.source,
                    )
                )

    merged = [rec for m in methods for rec in states[m].records]
    merged.sort(key=lambda r: (r.symbol, methods.index(r.method)))
    return merged


def _measure(
    method, y, snap, x_true, sensing, grid, window, array, pattern,
    scene, params, selection, include_los, nearest_bin,
    eps_fraction, omp_max_iters, omp_tol, t,
):
    noise_var, tx_power = pattern.noise_var, pattern.tx_power
    if method == "trained":
        q = render(
            scene, params, snap.ue_position, grid, array, window, selection,
            include_los=include_los, nearest_bin=nearest_bin,
        ).total
        eps = default_eps(q, eps_fraction)
        rho = calibrate_rho(y, sensing, q, eps, noise_var, tx_power)
        prior = build_prior(q, rho, eps)
        return lmmse_estimate(y, sensing, prior, noise_var, tx_power=tx_power, symbol=t)
    if method == "genie":
        return lmmse_estimate(
            y, sensing, genie_prior(x_true), noise_var, tx_power=tx_power, symbol=t
        )
    if method == "zero":
        uniform_q = np.ones((window.n_taps, array.n_antennas))
        eps = default_eps(uniform_q, eps_fraction)
        rho = calibrate_rho(y, sensing, uniform_q, eps, noise_var, tx_power)
        prior = build_prior(uniform_q, rho, eps)
        return lmmse_estimate(y, sensing, prior, noise_var, tx_power=tx_power, symbol=t)
    if method == "omp":
        diff = snap.ue_position - array.bs_position
        tau = float(np.linalg.norm(diff)) / C_LIGHT
        los_bin = nearest_bins(tau, beam_coordinate(snap.ue_position, array), grid, window, array)
        x_hat = omp_los_seeded(
            y / tx_power, sensing, los_bin, max_iters=omp_max_iters, residual_tol=omp_tol
        )
        return PosteriorState(x_hat=x_hat, symbol_index=t, source=MEASURED)
    raise ConfigError(f"unknown method {method!r}")


def summarize_records(records: list[SymbolRecord]) -> dict[str, dict[str, float]]:
    """Mean/median NMSE per method over all scored symbols."""
    out: dict[str, dict[str, float]] = {}
    for method in sorted({r.method for r in records}):
        vals = np.array([r.nmse_db for r in records if r.method == method])
        out[method] = {
            "mean_nmse_db": float(vals.mean()),
            "median_nmse_db": float(np.median(vals)),
            "count": int(vals.size),
        }
    return out
