"""Offline fitting of the scene map and deformer against target spectra.

The loop optimizes every primitive attribute, the LoS gain, and the
residual network jointly with per-group Adam learning rates; position
steps are metres, delay steps are expressed in tap widths so configs
stay grid-agnostic. gradient_check pits the training-path autograd
against central finite differences of the plain numpy forward, which is
an independent implementation of the same math.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from . import _torchcore as tc
from .errors import TrainingDivergence
from .gaussmap import DeformerParams, SceneMap
from .losses import LossWeights, los_exclusion_mask, total_loss
from .radio import ArrayGeometry, C_LIGHT, DelayWindow, OfdmGrid, nearest_bins
from .render import SelectionConfig, render
from .validation import check_nonnegative

MIN_SCALE_M = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; batch_size 0 means full-batch."""

    epochs: int
    batch_size: int = 0
    seed: int = 0
    warmup_epochs: int = 30
    lr_position: float = 0.5
    lr_scale: float = 0.05
    lr_opacity: float = 0.05
    lr_delay_bins: float = 0.05
    lr_gain: float = 0.05
    lr_los: float = 0.05
    lr_deformer: float = 1e-3
    lr_decay: float = 1.0

    def __post_init__(self):
        # zero epochs is a valid no-op run (checkpoint equals initialization)
        if int(self.epochs) < 0:
            raise ValueError("epochs must be nonnegative")
        if int(self.batch_size) < 0:
            raise ValueError("batch_size must be nonnegative")
        if int(self.warmup_epochs) < 0:
            raise ValueError("warmup_epochs must be nonnegative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        for name in (
            "lr_position",
            "lr_scale",
            "lr_opacity",
            "lr_delay_bins",
            "lr_gain",
            "lr_los",
            "lr_deformer",
        ):
            check_nonnegative(getattr(self, name), name)


@dataclass(eq=False)
class TrainResult:
    scene: SceneMap
    params: DeformerParams
    history: list[dict] = field(default_factory=list)


def _geometry_masks(
    positions: np.ndarray,
    targets: np.ndarray,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    bs: np.ndarray,
    weights: LossWeights,
) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
    k, n_delay, n_beam = targets.shape
    support = targets >= weights.support_threshold * targets.max(axis=(1, 2), keepdims=True)
    los = np.zeros_like(support)
    bins = []
    for i in range(k):
        diff = positions[i] - bs
        dist = float(np.linalg.norm(diff))
        nu = float(diff @ array.axis / max(dist, 1e-9))
        lb = nearest_bins(dist / C_LIGHT, nu, grid, window, array)
        bins.append(lb)
        los[i] = los_exclusion_mask(lb[0], lb[1], n_delay, n_beam, weights.los_radius)
    return support, los, bins


def train_prior(
    positions: np.ndarray,
    targets: np.ndarray,
    scene: SceneMap,
    params: DeformerParams,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    config: TrainConfig,
    weights: LossWeights | None = None,
    *,
    include_los: bool = True,
    one_hot: bool = False,
) -> TrainResult:
    """Fit scene and deformer to per-position target spectra.

    History rows carry full-weight component values regardless of the
    warmup scaling applied to the optimization objective.
    """
    weights = weights if weights is not None else LossWeights()
    if not include_los:
        # without the explicit direct path there is nothing to double
        # count; substitute mass must be free to cover the direct bins
        weights = dataclasses.replace(weights, lambda_los=0.0)
    positions = np.asarray(positions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must have shape (K, 3)")
    if targets.ndim != 3 or targets.shape[0] != positions.shape[0]:
        raise ValueError("targets must have shape (K, L, M) matching positions")
    k = positions.shape[0]
    if k == 0:
        raise ValueError("training set must be nonempty")

    support_np, los_np, _ = _geometry_masks(
        positions, targets, grid, window, array, scene.bs_position, weights
    )
    pos_t = torch.as_tensor(positions, dtype=tc.DTYPE)
    tgt_t = torch.as_tensor(targets, dtype=tc.DTYPE)
    support_t = torch.as_tensor(support_np)
    los_t = torch.as_tensor(los_np)

    module = tc.PriorModule(scene, params)
    ctx = tc.RenderContext(grid, window, array)
    lr_delay = config.lr_delay_bins * grid.delay_resolution_s
    optimizer = torch.optim.Adam(
        [
            {"params": [module.mu], "lr": config.lr_position},
            {"params": [module.scale], "lr": config.lr_scale},
            {"params": [module.opacity_logit], "lr": config.lr_opacity},
            {"params": [module.delay_residual], "lr": lr_delay},
            {"params": [module.gain_raw], "lr": config.lr_gain},
            {"params": [module.los_gain_raw], "lr": config.lr_los},
            {"params": module.deformer_groups(), "lr": config.lr_deformer},
        ]
    )
    base_lrs = [group["lr"] for group in optimizer.param_groups]
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    for epoch in range(int(config.epochs)):
        spec_scale = 0.1 if epoch < config.warmup_epochs else 1.0
        factor = config.lr_decay**epoch
        for group, base in zip(optimizer.param_groups, base_lrs):
            group["lr"] = base * factor
        if 0 < config.batch_size < k:
            perm = rng.permutation(k)
            batches = [
                perm[i : i + config.batch_size] for i in range(0, k, config.batch_size)
            ]
        else:
            batches = [np.arange(k)]
        sums = {"spec": 0.0, "marg": 0.0, "support": 0.0, "total": 0.0}
        for batch in batches:
            idx = torch.as_tensor(batch)
            optimizer.zero_grad()
            total, nlos = tc.render_batch(
                module,
                pos_t[idx],
                ctx,
                include_los=include_los,
                one_hot=one_hot,
            )
            objective, parts = tc.total_loss_t(
                total,
                nlos,
                tgt_t[idx],
                support_t[idx],
                los_t[idx],
                weights,
                spec_scale=spec_scale,
            )
            if not torch.isfinite(objective):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
            objective.backward()
            optimizer.step()
            with torch.no_grad():
                module.scale.clamp_(min=MIN_SCALE_M)
            for key in sums:
                sums[key] += parts[key] * len(batch)
        row = {"epoch": epoch}
        row.update({key: sums[key] / k for key in sums})
        history.append(row)

    trained_scene, trained_params = module.to_scene()
    return TrainResult(scene=trained_scene, params=trained_params, history=history)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass(eq=False)
class GradientReport:
    """Per-group scaled gradient mismatch and the pass verdict."""

    errors: dict[str, float]
    tolerance: float
    passed: bool

    def __str__(self) -> str:
        lines = [f"gradient check tolerance {self.tolerance:g}"]
        for name, err in self.errors.items():
            lines.append(f"  {name:>14s}  {err:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _numpy_objective(
    scene: SceneMap,
    params: DeformerParams,
    position: np.ndarray,
    target: np.ndarray,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    weights: LossWeights,
    los_bin: tuple[int, int],
    include_los: bool,
) -> float:
    out = render(
        scene,
        params,
        position,
        grid,
        array,
        window,
        SelectionConfig(threshold=0.0, max_paths=len(scene.primitives)),
        include_los=include_los,
    )
    return total_loss(out.total, out.nlos_only, target, weights, los_bin)


def _autograd_gradients(
    scene: SceneMap,
    params: DeformerParams,
    position: np.ndarray,
    target: np.ndarray,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    weights: LossWeights,
    support: np.ndarray,
    los_mask: np.ndarray,
    include_los: bool,
) -> dict[str, np.ndarray]:
    module = tc.PriorModule(scene, params)
    ctx = tc.RenderContext(grid, window, array)
    total, nlos = tc.render_batch(
        module,
        torch.as_tensor(position[None, :], dtype=tc.DTYPE),
        ctx,
        include_los=include_los,
    )
    objective, _ = tc.total_loss_t(
        total,
        nlos,
        torch.as_tensor(target[None], dtype=tc.DTYPE),
        torch.as_tensor(support[None]),
        torch.as_tensor(los_mask[None]),
        weights,
    )
    objective.backward()

    def grab(p) -> np.ndarray:
        return np.zeros(p.shape) if p.grad is None else p.grad.numpy().copy()

    out = {
        "mu": grab(module.mu),
        "scale": grab(module.scale),
        "opacity_logit": grab(module.opacity_logit),
        "delay_residual": grab(module.delay_residual),
        "gain_raw": grab(module.gain_raw),
        "los_gain_raw": grab(module.los_gain_raw).reshape(()),
    }
    out["deformer"] = np.concatenate([grab(p).ravel() for p in module.net.parameters()])
    return out


def _perturbed(scene, params, group, flat_index, delta):
    scene = copy.deepcopy(scene)
    params = copy.deepcopy(params)
    if group == "mu":
        i, ax = divmod(flat_index, 3)
        scene.primitives[i].mu[ax] += delta
    elif group == "scale":
        scene.primitives[flat_index].scale += delta
    elif group == "opacity_logit":
        scene.primitives[flat_index].opacity_logit += delta
    elif group == "delay_residual":
        scene.primitives[flat_index].delay_residual += delta
    elif group == "gain_raw":
        scene.primitives[flat_index].gain_raw += delta
    elif group == "los_gain_raw":
        scene.los_gain_raw += delta
    elif group == "deformer":
        offset = 0
        for w in params.weights:
            if flat_index < offset + w.size:
                w.flat[flat_index - offset] += delta
                break
            offset += w.size
    else:
        raise ValueError(f"unknown parameter group {group!r}")
    return scene, params


def _group_values(scene: SceneMap, params: DeformerParams, group: str) -> np.ndarray:
    if group == "mu":
        return np.array([p.mu for p in scene.primitives]).ravel()
    if group == "scale":
        return np.array([p.scale for p in scene.primitives])
    if group == "opacity_logit":
        return np.array([p.opacity_logit for p in scene.primitives])
    if group == "delay_residual":
        return np.array([p.delay_residual for p in scene.primitives])
    if group == "gain_raw":
        return np.array([p.gain_raw for p in scene.primitives])
    if group == "los_gain_raw":
        return np.array([scene.los_gain_raw])
    if group == "deformer":
        return np.concatenate([w.ravel() for w in params.weights])
    raise ValueError(f"unknown parameter group {group!r}")


def gradient_check(
    scene: SceneMap,
    params: DeformerParams,
    position,
    target: np.ndarray,
    grid: OfdmGrid,
    window: DelayWindow,
    array: ArrayGeometry,
    weights: LossWeights | None = None,
    *,
    include_los: bool = True,
    tolerance: float = 1e-4,
    fd_step: float = 1e-6,
    max_coords: int = 16,
    seed: int = 0,
    grad_fn=None,
) -> GradientReport:
    """Compare autograd of the full objective against finite differences.

    Per group the reported number is max_i |a_i - f_i| scaled by the
    larger of the two gradient magnitudes (floored at 1e-12), evaluated
    on a seeded subsample of at most max_coords coordinates. grad_fn
    lets tests substitute a deliberately wrong analytic gradient.
    """
    weights = weights if weights is not None else LossWeights()
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    diff = position - scene.bs_position
    dist = float(np.linalg.norm(diff))
    nu = float(diff @ array.axis / max(dist, 1e-9))
    los_bin = nearest_bins(dist / C_LIGHT, nu, grid, window, array)
    support = target >= weights.support_threshold * target.max()
    los_mask = los_exclusion_mask(
        los_bin[0], los_bin[1], target.shape[0], target.shape[1], weights.los_radius
    )

    if grad_fn is None:
        analytic = _autograd_gradients(
            scene, params, position, target, grid, window, array, weights,
            support, los_mask, include_los,
        )
    else:
        analytic = grad_fn(scene, params)

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for group in (
        "mu",
        "scale",
        "opacity_logit",
        "delay_residual",
        "gain_raw",
        "los_gain_raw",
        "deformer",
    ):
        a_flat = np.asarray(analytic[group], dtype=float).ravel()
        values = _group_values(scene, params, group)
        n = values.size
        coords = (
            np.arange(n)
            if n <= max_coords
            else np.sort(rng.choice(n, size=max_coords, replace=False))
        )
        # delays live on a ~1e-6 s grid; an absolute floor of 1.0 there
        # would step across many taps
        floor = grid.delay_resolution_s if group == "delay_residual" else 1.0
        fd = np.zeros(coords.size)
        for j, c in enumerate(coords):
            h = fd_step * max(abs(values[c]), floor)
            up = _numpy_objective(
                *_perturbed(scene, params, group, int(c), +h),
                position, target, grid, window, array, weights, los_bin, include_los,
            )
            dn = _numpy_objective(
                *_perturbed(scene, params, group, int(c), -h),
                position, target, grid, window, array, weights, los_bin, include_los,
            )
            fd[j] = (up - dn) / (2.0 * h)
        a_sub = a_flat[coords]
        scale = max(np.abs(a_sub).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
        errors[group] = float(np.abs(a_sub - fd).max(initial=0.0) / scale)
    passed = all(err < tolerance for err in errors.values())
    return GradientReport(errors=errors, tolerance=tolerance, passed=passed)
