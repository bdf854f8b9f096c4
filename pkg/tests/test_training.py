"""Training loop and gradient-check harness."""

import numpy as np
import pytest

from ggce.errors import TrainingDivergence
from ggce.gaussmap import DeformerParams, GaussianPrimitive, SceneMap
from ggce.losses import LossWeights
from ggce.radio import ArrayGeometry, DelayWindow, OfdmGrid
from ggce.render import SelectionConfig, render
from ggce.training import GradientReport, TrainConfig, gradient_check, train_prior

BS = np.array([0.0, 30.0, 10.0])


@pytest.fixture(scope="module")
def grid():
    return OfdmGrid(
        n_subcarriers=128,
        subcarrier_spacing_hz=30e3,
        n_symbols=14,
        symbol_duration_s=0.5e-3 / 14,
        carrier_freq_hz=3.5e9,
    )


@pytest.fixture(scope="module")
def array():
    return ArrayGeometry(
        n_antennas=16,
        spacing_wavelengths=0.5,
        bs_position=BS.copy(),
        broadside=np.array([0.0, -1.0, 0.0]),
    )


@pytest.fixture(scope="module")
def window():
    return DelayWindow(n_taps=32, guard_taps=4)


@pytest.fixture(scope="module")
def params(grid):
    return DeformerParams.initialize(
        eta_delay=2 * grid.delay_resolution_s, center=[50.0, 0.0, 5.0], extent=100.0
    )


def true_scene():
    prims = [
        GaussianPrimitive(
            mu=np.array([120.0, -40.0, 5.0]), scale=1.0, opacity_logit=2.0,
            delay_residual=0.0, gain_raw=0.5,
        ),
        GaussianPrimitive(
            mu=np.array([-30.0, 60.0, 8.0]), scale=1.0, opacity_logit=2.0,
            delay_residual=0.0, gain_raw=-0.3,
        ),
    ]
    return SceneMap(primitives=prims, los_gain_raw=0.6, bs_position=BS.copy())


def perturbed_scene(seed=11):
    rng = np.random.default_rng(seed)
    base = true_scene()
    prims = [
        GaussianPrimitive(
            mu=p.mu + 2.0 * rng.standard_normal(3), scale=2.0, opacity_logit=1.0,
            delay_residual=0.0, gain_raw=p.gain_raw + 0.8 * (1 if i == 0 else -1),
        )
        for i, p in enumerate(base.primitives)
    ]
    return SceneMap(primitives=prims, los_gain_raw=-0.5, bs_position=BS.copy())


@pytest.fixture(scope="module")
def overfit_data(grid, array, window, params):
    pos = np.array([40.0, 0.0, 2.0])
    target = render(
        true_scene(), params, pos, grid, array, window, SelectionConfig(0.0, 8)
    ).total
    return np.tile(pos, (10, 1)), np.tile(target, (10, 1, 1))


SHAPE_WEIGHTS = LossWeights(lambda_false=0.0, lambda_recall=0.0, lambda_los=0.0)


def scenes_equal(a, b):
    return (
        all(
            np.array_equal(x.mu, y.mu)
            and x.scale == y.scale
            and x.opacity_logit == y.opacity_logit
            and x.delay_residual == y.delay_residual
            and x.gain_raw == y.gain_raw
            for x, y in zip(a.primitives, b.primitives)
        )
        and a.los_gain_raw == b.los_gain_raw
    )


class TestTrainConfigValidation:
    def test_epoch_count(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)

    def test_decay_range(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, lr_decay=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, lr_decay=1.5)

    def test_negative_lr(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, lr_gain=-0.1)


class TestTrainPrior:
    def test_zero_learning_rate_is_bit_exact(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        init = perturbed_scene()
        cfg = TrainConfig(
            epochs=3, warmup_epochs=0, lr_position=0, lr_scale=0, lr_opacity=0,
            lr_delay_bins=0, lr_gain=0, lr_los=0, lr_deformer=0,
        )
        res = train_prior(positions, targets, init, params, grid, window, array, cfg,
                          SHAPE_WEIGHTS)
        assert scenes_equal(res.scene, init)
        assert all(np.array_equal(a, b) for a, b in zip(res.params.weights, params.weights))

    def test_same_seed_same_history(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        cfg = TrainConfig(epochs=4, warmup_epochs=1, seed=7, batch_size=3)
        runs = [
            train_prior(positions, targets, perturbed_scene(), params, grid, window,
                        array, cfg, SHAPE_WEIGHTS).history
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_overfit_repeated_samples(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        cfg = TrainConfig(epochs=120, warmup_epochs=0, seed=0)
        res = train_prior(positions, targets, perturbed_scene(), params, grid, window,
                          array, cfg, SHAPE_WEIGHTS)
        first = res.history[0]["total"]
        final = res.history[-1]["total"]
        assert final < 1e-3 * first
        assert final <= 0.5 * first

    def test_history_rows_carry_components(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        res = train_prior(positions, targets, perturbed_scene(), params, grid, window,
                          array, TrainConfig(epochs=2, warmup_epochs=0), SHAPE_WEIGHTS)
        assert len(res.history) == 2
        row = res.history[0]
        assert set(row) == {"epoch", "spec", "marg", "support", "total"}
        assert row["epoch"] == 0
        assert row["total"] == pytest.approx(
            row["spec"] + SHAPE_WEIGHTS.lambda_marg * row["marg"] + row["support"], rel=1e-12
        )

    def test_warmup_changes_trajectory_not_bookkeeping(
        self, grid, array, window, params, overfit_data
    ):
        positions, targets = overfit_data
        kw = dict(epochs=3, seed=0)
        plain = train_prior(positions, targets, perturbed_scene(), params, grid, window,
                            array, TrainConfig(warmup_epochs=0, **kw), SHAPE_WEIGHTS)
        warm = train_prior(positions, targets, perturbed_scene(), params, grid, window,
                           array, TrainConfig(warmup_epochs=2, **kw), SHAPE_WEIGHTS)
        # epoch 0 is evaluated at the same initial parameters either way
        assert plain.history[0]["total"] == pytest.approx(warm.history[0]["total"], rel=1e-12)
        assert plain.history[2]["total"] != warm.history[2]["total"]

    def test_divergence_reports_epoch(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        targets = targets.copy()
        targets[0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergence, match="epoch 0"):
            train_prior(positions, targets, perturbed_scene(), params, grid, window,
                        array, TrainConfig(epochs=2), SHAPE_WEIGHTS)

    def test_scale_floor_enforced(self, grid, array, window, params, overfit_data):
        positions, targets = overfit_data
        res = train_prior(positions, targets, perturbed_scene(), params, grid, window,
                          array, TrainConfig(epochs=30, warmup_epochs=0, lr_scale=5.0),
                          SHAPE_WEIGHTS)
        assert all(p.scale >= 1e-3 for p in res.scene.primitives)

    def test_shape_validation(self, grid, array, window, params):
        with pytest.raises(ValueError, match="positions"):
            train_prior(np.zeros((3, 2)), np.zeros((3, 32, 16)), true_scene(), params,
                        grid, window, array, TrainConfig(epochs=1))
        with pytest.raises(ValueError, match="targets"):
            train_prior(np.zeros((3, 3)), np.zeros((2, 32, 16)), true_scene(), params,
                        grid, window, array, TrainConfig(epochs=1))


class TestGradientCheck:
    def nonzero_params(self, grid, seed=5):
        rng = np.random.default_rng(seed)
        base = DeformerParams.initialize(
            eta_delay=2 * grid.delay_resolution_s, center=[50, 0, 5], extent=100.0
        )
        weights = [w.copy() for w in base.weights]
        weights[4] = rng.normal(scale=0.1, size=weights[4].shape)
        return DeformerParams(
            weights=weights, eta_opacity=2.0, eta_delay=base.eta_delay, eta_gain=1.0,
            center=base.center, extent=base.extent,
        )

    def test_random_configuration_passes(self, grid, array, window, overfit_data):
        _, targets = overfit_data
        report = gradient_check(
            perturbed_scene(), self.nonzero_params(grid), [40.0, 0.0, 2.0], targets[0],
            grid, window, array, LossWeights(),
        )
        assert report.passed, str(report)
        assert set(report.errors) == {
            "mu", "scale", "opacity_logit", "delay_residual", "gain_raw",
            "los_gain_raw", "deformer",
        }

    def test_constant_loss_region_passes(self, grid, array, window, overfit_data):
        _, targets = overfit_data
        flat = LossWeights(
            lambda_spec=0.0, lambda_marg=0.0, lambda_false=0.0,
            lambda_recall=0.0, lambda_los=0.0,
        )
        report = gradient_check(
            perturbed_scene(), self.nonzero_params(grid), [40.0, 0.0, 2.0], targets[0],
            grid, window, array, flat,
        )
        assert report.passed
        assert all(err == 0.0 for err in report.errors.values())

    def test_corrupted_gradient_fails(self, grid, array, window, overfit_data):
        _, targets = overfit_data

        def corrupt(scene, params):
            n = len(scene.primitives)
            return {
                "mu": np.full((n, 3), 0.123),
                "scale": np.zeros(n),
                "opacity_logit": np.zeros(n),
                "delay_residual": np.zeros(n),
                "gain_raw": np.zeros(n),
                "los_gain_raw": np.zeros(()),
                "deformer": np.zeros(sum(w.size for w in params.weights)),
            }

        report = gradient_check(
            perturbed_scene(), self.nonzero_params(grid), [40.0, 0.0, 2.0], targets[0],
            grid, window, array, LossWeights(), grad_fn=corrupt,
        )
        assert not report.passed
        assert report.errors["mu"] > 1e-4

    def test_report_renders_verdict(self, grid, array, window, overfit_data):
        _, targets = overfit_data
        report = gradient_check(
            perturbed_scene(), self.nonzero_params(grid), [40.0, 0.0, 2.0], targets[0],
            grid, window, array, LossWeights(),
        )
        text = str(report)
        assert "PASS" in text and "deformer" in text

    def test_report_dataclass_fields(self):
        rep = GradientReport(errors={"mu": 1.0}, tolerance=1e-4, passed=False)
        assert "FAIL" in str(rep)
