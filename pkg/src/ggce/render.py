"""Projection of a deformed Gaussian path set onto the delay-beam grid.

This is the forward model shared by training and online estimation: each
active primitive contributes power w = opacity * gain at its round-trip
delay and beam coordinate, spread over bins by the closed-form leakage
kernels, plus an explicit LoS component at the UE's own geometry. The
public functions here are plain numpy; the training loop runs the torch
twin in _torchcore, and render_gradients bridges to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussmap import (
    DeformedAttributes,
    DeformerParams,
    GaussianPrimitive,
    SceneMap,
    _softplus,
    deform,
    select_active,
)
from .radio import (
    C_LIGHT,
    ArrayGeometry,
    DelayWindow,
    OfdmGrid,
    beam_grid,
    beam_kernel,
    delay_kernel,
    wrap_nu,
)
from .validation import as_position

CONV_OFFSETS = np.arange(-2, 3)


@dataclass(frozen=True)
class SelectionConfig:
    """Which primitives render: opacity gate plus a path-count cap."""

    threshold: float = 0.05
    max_paths: int = 64

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if int(self.max_paths) < 0:
            raise ValueError("max_paths must be nonnegative")


@dataclass(eq=False)
class RenderedSpectrum:
    """Rendered power with the per-path split retained."""

    total: np.ndarray
    nlos_only: np.ndarray
    los_only: np.ndarray
    path_indices: list[int] = field(default_factory=list)
    path_contributions: np.ndarray | None = None


def nlos_delay(primitive: GaussianPrimitive, deformed: DeformedAttributes, bs, ue) -> float:
    """Two-segment delay of a scattered component plus the learned residual.

    Both legs (BS to primitive, primitive to UE) count, so the delay
    tracks UE motion through geometry alone; the residual only corrects
    sub-bin placement.
    """
    bs = as_position(bs, "bs")
    ue = as_position(ue, "ue")
    legs = float(np.linalg.norm(primitive.mu - bs) + np.linalg.norm(ue - primitive.mu))
    return legs / C_LIGHT + float(deformed.delay_residual)


def los_delay(ue, bs) -> float:
    """Direct-path delay between UE and BS."""
    ue = as_position(ue, "ue")
    bs = as_position(bs, "bs")
    d = float(np.linalg.norm(ue - bs))
    if d == 0.0:
        raise ValueError("ue and bs must not coincide")
    return d / C_LIGHT


def widen_beam_profile(kb: np.ndarray, sigma: float, n_beam: int) -> np.ndarray:
    """5-point circular Gaussian smoothing of a beam kernel row."""
    delta = 2.0 / n_beam
    w = np.exp(-0.5 * ((CONV_OFFSETS * delta) / sigma) ** 2)
    w = w / w.sum()
    out = np.zeros_like(kb)
    for j, off in enumerate(CONV_OFFSETS):
        out += w[j] * np.roll(kb, off)
    return out


def _one_hot(size: int, index: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


def _path_profiles(
    tau: float,
    nu: float,
    taps: np.ndarray,
    nus: np.ndarray,
    grid: OfdmGrid,
    array: ArrayGeometry,
    nearest_bin: bool,
) -> tuple[np.ndarray, np.ndarray]:
    if nearest_bin:
        kt = _one_hot(taps.size, int(np.argmin(np.abs(taps - tau))))
        kb = _one_hot(nus.size, int(np.argmin(np.abs(wrap_nu(nu - nus)))))
        return kt, kb
    return delay_kernel(taps, tau, grid), beam_kernel(nus, nu, array)


def render(
    scene: SceneMap,
    params: DeformerParams,
    ue_position,
    grid: OfdmGrid,
    array: ArrayGeometry,
    window: DelayWindow,
    selection: SelectionConfig | None = None,
    *,
    include_los: bool = True,
    nearest_bin: bool = False,
) -> RenderedSpectrum:
    """Render the power spectrum seen from one UE position.

    nearest_bin=True replaces the leakage kernels with one-hot
    nearest-bin assignment (the kernel-ablation mode); the beam
    footprint widening is skipped there as part of the same machinery.
    """
    ue = as_position(ue_position, "ue_position")
    cfg = selection if selection is not None else SelectionConfig()
    attrs = deform(scene, params, ue)
    active = select_active(attrs, cfg.threshold, cfg.max_paths)

    taps = window.tap_delays(grid)
    nus = beam_grid(array)
    bs = scene.bs_position
    axis = array.axis
    shape = (taps.size, nus.size)

    contribs = np.zeros((len(active),) + shape)
    for j, i in enumerate(active):
        prim = scene.primitives[i]
        a = attrs[i]
        diff = prim.mu - bs
        dist = max(float(np.linalg.norm(diff)), 1e-9)
        tau = nlos_delay(prim, a, bs, ue)
        nu = float(diff @ axis / dist)
        kt, kb = _path_profiles(tau, nu, taps, nus, grid, array, nearest_bin)
        if not nearest_bin:
            sigma = float(np.clip(prim.scale / dist, 1e-9, 2.0 / nus.size))
            kb = widen_beam_profile(kb, sigma, nus.size)
        contribs[j] = (a.opacity * a.gain) * np.outer(kt, kb)
    nlos = contribs.sum(axis=0) if active else np.zeros(shape)

    los = np.zeros(shape)
    if include_los:
        diff = ue - bs
        dist = max(float(np.linalg.norm(diff)), 1e-9)
        tau = los_delay(ue, bs)
        nu = float(diff @ axis / dist)
        kt, kb = _path_profiles(tau, nu, taps, nus, grid, array, nearest_bin)
        los = float(_softplus(scene.los_gain_raw)) * np.outer(kt, kb)

    return RenderedSpectrum(
        total=nlos + los,
        nlos_only=nlos,
        los_only=los,
        path_indices=list(active),
        path_contributions=contribs,
    )


def render_gradients(
    scene: SceneMap,
    params: DeformerParams,
    ue_position,
    grid: OfdmGrid,
    array: ArrayGeometry,
    window: DelayWindow,
    upstream: np.ndarray,
    selection: SelectionConfig | None = None,
    *,
    include_los: bool = True,
) -> dict[str, object]:
    """Gradients of sum(upstream * total) w.r.t. every parameter group.

    Returns numpy arrays keyed by group name; "deformer" is a list of
    arrays matching DeformerParams.weights. Uses reverse-mode
    accumulation through the torch twin, with the active-path selection
    frozen at the current deformed opacities.
    """
    import torch

    from . import _torchcore as tc

    ue = as_position(ue_position, "ue_position")
    attrs = deform(scene, params, ue)
    cfg = selection if selection is not None else SelectionConfig()
    active = select_active(attrs, cfg.threshold, cfg.max_paths)
    mask = np.zeros((1, len(scene.primitives)), dtype=bool)
    mask[0, active] = True

    module = tc.PriorModule(scene, params)
    ctx = tc.RenderContext(grid, window, array)
    total, _ = tc.render_batch(
        module,
        torch.as_tensor(ue[None, :], dtype=tc.DTYPE),
        ctx,
        include_los=include_los,
        active_mask=torch.as_tensor(mask),
    )
    sens = torch.as_tensor(np.asarray(upstream, dtype=float), dtype=tc.DTYPE)
    if sens.shape != total.shape[1:]:
        raise ValueError("upstream sensitivity must match the spectrum shape")
    (total[0] * sens).sum().backward()

    def grab(p) -> np.ndarray:
        return np.zeros(p.shape) if p.grad is None else p.grad.numpy().copy()

    return {
        "mu": grab(module.mu),
        "scale": grab(module.scale),
        "opacity_logit": grab(module.opacity_logit),
        "delay_residual": grab(module.delay_residual),
        "gain_raw": grab(module.gain_raw),
        "los_gain_raw": grab(module.los_gain_raw),
        "deformer": [grab(p) for p in module.net.parameters()],
    }


def format_spectrum(q: np.ndarray) -> str:
    """Text-matrix dump: one row per delay tap, exponent notation."""
    q = np.asarray(q, dtype=float)
    lines = [" ".join(f"{v:.12e}" for v in row) for row in np.atleast_2d(q)]
    return "\n".join(lines) + "\n"
