"""Differentiable twin of the deform/render/loss math, used for training.

Everything here runs in float64 on CPU. The public numpy implementations
in gaussmap.py, render.py, and losses.py define the contracts; this
module mirrors them with torch tensors so gradients flow, and the test
suite pins the two routes together bitwise-tight. Keeping the twins
separate means autograd is never validated against itself: finite
differences run on the numpy route.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .gaussmap import DEFORMER_WIDTHS, DeformerParams, GaussianPrimitive, SceneMap
from .radio import C_LIGHT, ArrayGeometry, DelayWindow, OfdmGrid, beam_grid

DTYPE = torch.float64

CONV_OFFSETS = (-2, -1, 0, 1, 2)


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def dirichlet_power_t(theta: torch.Tensor, size: int) -> torch.Tensor:
    """Torch version of the Dirichlet power kernel (period 1 in theta)."""
    e = theta - torch.round(theta)
    small = e.abs() < 1e-7
    esafe = torch.where(small, torch.ones_like(e), e)
    val = (torch.sin(torch.pi * size * esafe) / (size * torch.sin(torch.pi * esafe))) ** 2
    series = 1.0 - (torch.pi**2 * (size**2 - 1) / 3.0) * e**2
    return torch.where(small, series, val)


class PriorModule(nn.Module):
    """Learnable scene parameters plus the residual network.

    Parameter groups exposed for the optimizer and the gradient checker:
    mu, scale, opacity_logit, delay_residual, gain_raw, los_gain_raw,
    and the deformer network.
    """

    def __init__(self, scene: SceneMap, params: DeformerParams):
        super().__init__()
        self.mu = nn.Parameter(_t([p.mu for p in scene.primitives]))
        self.scale = nn.Parameter(_t([p.scale for p in scene.primitives]))
        self.opacity_logit = nn.Parameter(_t([p.opacity_logit for p in scene.primitives]))
        self.delay_residual = nn.Parameter(_t([p.delay_residual for p in scene.primitives]))
        self.gain_raw = nn.Parameter(_t([p.gain_raw for p in scene.primitives]))
        self.los_gain_raw = nn.Parameter(_t(scene.los_gain_raw))
        net = nn.Sequential(
            nn.Linear(DEFORMER_WIDTHS[0], DEFORMER_WIDTHS[1]),
            nn.Tanh(),
            nn.Linear(DEFORMER_WIDTHS[1], DEFORMER_WIDTHS[2]),
            nn.Tanh(),
            nn.Linear(DEFORMER_WIDTHS[2], DEFORMER_WIDTHS[3]),
        ).to(DTYPE)
        with torch.no_grad():
            for i, layer in enumerate(net[::2]):
                layer.weight.copy_(_t(params.weights[2 * i]))
                layer.bias.copy_(_t(params.weights[2 * i + 1]))
        self.net = net
        self.register_buffer("center", _t(params.center))
        self.register_buffer("extent", _t(params.extent))
        self.register_buffer("etas", _t([params.eta_opacity, params.eta_delay, params.eta_gain]))
        self.register_buffer("bs", _t(scene.bs_position))

    @property
    def n_primitives(self) -> int:
        return self.mu.shape[0]

    def deformer_groups(self) -> list[nn.Parameter]:
        return list(self.net.parameters())

    def deform(self, ue: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Effective (opacity, delay residual, gain), each (K, G)."""
        k = ue.shape[0]
        mu_n = (self.mu - self.center) / self.extent
        ue_n = (ue - self.center) / self.extent
        inp = torch.cat(
            [
                mu_n.unsqueeze(0).expand(k, -1, -1),
                ue_n.unsqueeze(1).expand(-1, self.n_primitives, -1),
            ],
            dim=-1,
        )
        out = self.net(inp)
        opac = torch.sigmoid(self.opacity_logit + self.etas[0] * torch.tanh(out[..., 0]))
        opac = opac.clamp(1e-15, 1.0 - 1e-15)  # keep the open-interval invariant
        tau = self.delay_residual + self.etas[1] * torch.tanh(out[..., 1])
        gain = nn.functional.softplus(self.gain_raw + self.etas[2] * torch.tanh(out[..., 2]))
        return opac, tau, gain

    def to_scene(self) -> tuple[SceneMap, DeformerParams]:
        """Detach back into the plain dataclasses, bit-exact."""
        prims = []
        for i in range(self.n_primitives):
            prims.append(
                GaussianPrimitive(
                    mu=self.mu[i].detach().numpy().copy(),
                    scale=float(self.scale[i].detach()),
                    opacity_logit=float(self.opacity_logit[i].detach()),
                    delay_residual=float(self.delay_residual[i].detach()),
                    gain_raw=float(self.gain_raw[i].detach()),
                )
            )
        scene = SceneMap(
            primitives=prims,
            los_gain_raw=float(self.los_gain_raw.detach()),
            bs_position=self.bs.numpy().copy(),
        )
        weights = []
        for layer in self.net[::2]:
            weights.append(layer.weight.detach().numpy().copy())
            weights.append(layer.bias.detach().numpy().copy())
        params = DeformerParams(
            weights=weights,
            eta_opacity=float(self.etas[0]),
            eta_delay=float(self.etas[1]),
            eta_gain=float(self.etas[2]),
            center=self.center.numpy().copy(),
            extent=float(self.extent),
        )
        return scene, params


class RenderContext:
    """Static per-geometry tensors shared across render calls."""

    def __init__(self, grid: OfdmGrid, window: DelayWindow, array: ArrayGeometry):
        self.taps = _t(window.tap_delays(grid))
        self.nus = _t(beam_grid(array))
        self.axis = _t(array.axis)
        self.df = grid.subcarrier_spacing_hz
        self.n_sub = grid.n_subcarriers
        self.n_ant = array.n_antennas
        self.spacing_ratio = array.spacing_wavelengths / 0.5
        self.delta_nu = 2.0 / array.n_antennas
        offsets = torch.tensor(CONV_OFFSETS)
        u = torch.arange(array.n_antennas)
        self.conv_idx = (u.unsqueeze(0) - offsets.unsqueeze(1)) % array.n_antennas

    def delay_kernels(self, tau: torch.Tensor, one_hot: bool) -> torch.Tensor:
        """(..., L) leakage of delays tau (...,) onto the window taps."""
        if one_hot:
            nearest = torch.argmin((self.taps - tau.unsqueeze(-1)).abs(), dim=-1)
            return nn.functional.one_hot(nearest, self.taps.shape[0]).to(DTYPE)
        theta = self.df * (self.taps - tau.unsqueeze(-1))
        return dirichlet_power_t(theta, self.n_sub)

    def beam_kernels(self, nu: torch.Tensor, one_hot: bool) -> torch.Tensor:
        """(..., M) leakage of beam coordinates nu (...,) onto the grid."""
        delta = nu.unsqueeze(-1) - self.nus
        if one_hot:
            wrapped = (delta + 1.0) % 2.0 - 1.0
            nearest = torch.argmin(wrapped.abs(), dim=-1)
            return nn.functional.one_hot(nearest, self.nus.shape[0]).to(DTYPE)
        theta = self.spacing_ratio * delta / 2.0
        return dirichlet_power_t(theta, self.n_ant)

    def widen_beam(self, kb: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        """5-point circular Gaussian smoothing along the beam axis.

        kb is (G, M), sigma (G,); sigma is already clipped to [~0, 2/M],
        so tiny widths collapse the stencil onto the center tap.
        """
        offs = _t(CONV_OFFSETS) * self.delta_nu
        logits = -0.5 * (offs.unsqueeze(0) / sigma.unsqueeze(1)) ** 2
        w = torch.exp(logits)
        w = w / w.sum(dim=1, keepdim=True)
        shifted = kb[:, self.conv_idx]  # (G, 5, M)
        return (w.unsqueeze(-1) * shifted).sum(dim=1)


def render_batch(
    module: PriorModule,
    ue: torch.Tensor,
    ctx: RenderContext,
    include_los: bool = True,
    one_hot: bool = False,
    widen: bool = True,
    active_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Render (total, nlos_only) power spectra, each (K, L, M)."""
    opac, tau_res, gain = module.deform(ue)
    diff = module.mu - module.bs
    dist = torch.linalg.norm(diff, dim=1).clamp_min(1e-9)  # (G,)
    # both legs of the scattered path so delay follows the UE geometrically
    leg_ue = torch.linalg.norm(
        ue.unsqueeze(1) - module.mu.unsqueeze(0), dim=-1
    ).clamp_min(1e-9)  # (K, G)
    tau = (dist.unsqueeze(0) + leg_ue) / C_LIGHT + tau_res  # (K, G)
    nu = (diff / dist.unsqueeze(1)) @ ctx.axis  # (G,)
    w = opac * gain
    if active_mask is not None:
        w = w * active_mask.to(DTYPE)

    kt = ctx.delay_kernels(tau, one_hot)  # (K, G, L)
    kb = ctx.beam_kernels(nu, one_hot)  # (G, M)
    if widen and not one_hot:
        sigma = (module.scale / dist).clamp(min=1e-9, max=ctx.delta_nu)
        kb = ctx.widen_beam(kb, sigma)
    nlos = torch.einsum("kgl,gm,kg->klm", kt, kb, w)

    if include_los:
        diff_ue = ue - module.bs
        d_ue = torch.linalg.norm(diff_ue, dim=1).clamp_min(1e-9)  # (K,)
        tau_los = d_ue / C_LIGHT
        nu_los = (diff_ue / d_ue.unsqueeze(1)) @ ctx.axis
        kt_los = ctx.delay_kernels(tau_los, one_hot)  # (K, L)
        kb_los = ctx.beam_kernels(nu_los, one_hot)  # (K, M)
        w_los = nn.functional.softplus(module.los_gain_raw)
        total = nlos + w_los * kt_los.unsqueeze(-1) * kb_los.unsqueeze(1)
    else:
        total = nlos
    return total, nlos


# ---------------------------------------------------------------------------
# batched losses (numpy contracts live in losses.py)


def normalize_unit_sum_t(q: torch.Tensor) -> torch.Tensor:
    """Per-sample unit-sum normalization; all-zero inputs stay zero."""
    s = q.sum(dim=(-2, -1), keepdim=True)
    return q / s.clamp_min(1e-300)


def loss_spec_t(q_hat: torch.Tensor, q_gt: torch.Tensor) -> torch.Tensor:
    qh = normalize_unit_sum_t(q_hat)
    qg = normalize_unit_sum_t(q_gt)
    return ((qh - qg) ** 2).mean(dim=(-2, -1)).mean()


def loss_marginal_t(
    q_hat: torch.Tensor, q_gt: torch.Tensor, lambda_delay: float, lambda_beam: float
) -> torch.Tensor:
    def marg(q, dim):
        m = q.sum(dim=dim)
        return m / m.sum(dim=-1, keepdim=True).clamp_min(1e-300)

    d = ((marg(q_hat, -1) - marg(q_gt, -1)) ** 2).sum(dim=-1)
    b = ((marg(q_hat, -2) - marg(q_gt, -2)) ** 2).sum(dim=-1)
    return (lambda_delay * d + lambda_beam * b).mean()


def loss_support_t(
    q_total: torch.Tensor,
    q_nlos: torch.Tensor,
    q_gt: torch.Tensor,
    support_mask: torch.Tensor,
    los_mask: torch.Tensor,
    lambda_false: float,
    lambda_recall: float,
    lambda_los: float,
) -> torch.Tensor:
    qh = normalize_unit_sum_t(q_total)
    qg = normalize_unit_sum_t(q_gt)
    off = (~support_mask).to(DTYPE)
    on = support_mask.to(DTYPE)
    n_off = off.sum(dim=(-2, -1))
    n_on = on.sum(dim=(-2, -1))
    l_false = (qh * off).sum(dim=(-2, -1)) / n_off.clamp_min(1.0)
    l_recall = (torch.relu(qg - qh) * on).sum(dim=(-2, -1)) / n_on.clamp_min(1.0)
    nlos_sum = q_nlos.sum(dim=(-2, -1))
    l_los = (q_nlos * los_mask.to(DTYPE)).sum(dim=(-2, -1)) / nlos_sum.clamp_min(1e-300)
    total = lambda_false * l_false + lambda_recall * l_recall + lambda_los * l_los
    return total.mean()


def total_loss_t(
    q_total: torch.Tensor,
    q_nlos: torch.Tensor,
    q_gt: torch.Tensor,
    support_mask: torch.Tensor,
    los_mask: torch.Tensor,
    weights,
    spec_scale: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Composite objective; spec_scale < 1 implements the marginal warmup.

    Returns (objective, parts) where parts carries the unscaled spec term
    and the full-weight total for bookkeeping.
    """
    l_spec = loss_spec_t(q_total, q_gt)
    l_marg = loss_marginal_t(q_total, q_gt, weights.lambda_delay, weights.lambda_beam)
    l_sup = loss_support_t(
        q_total,
        q_nlos,
        q_gt,
        support_mask,
        los_mask,
        weights.lambda_false,
        weights.lambda_recall,
        weights.lambda_los,
    )
    objective = spec_scale * weights.lambda_spec * l_spec + weights.lambda_marg * l_marg + l_sup
    full = weights.lambda_spec * l_spec + weights.lambda_marg * l_marg + l_sup
    parts = {
        "spec": float(l_spec.detach()),
        "marg": float(l_marg.detach()),
        "support": float(l_sup.detach()),
        "total": float(full.detach()),
    }
    return objective, parts
