"""Scene-prior regressor behind a fit/predict surface.

GaussianChannelPrior bundles map initialization, training, and rendering
into the familiar estimator idiom: construct with hyperparameters, fit
on (positions, spectra) pairs, then predict power spectra at arbitrary
positions. Fitted state lives in trailing-underscore attributes so a
constructed-but-unfit instance stays cheap and picklable.
"""

from __future__ import annotations

import numpy as np

from .errors import NotFittedError
from .gaussmap import DeformerParams, init_from_measurements, random_scene
from .losses import LossWeights, loss_spec
from .radio import ArrayGeometry, DelayWindow, OfdmGrid
from .render import SelectionConfig, render
from .training import TrainConfig, train_prior


class GaussianChannelPrior:
    """Geometry-conditioned delay-beam power prior.

    Parameters mirror the training entry points: `train_config` and
    `loss_weights` default to the stock settings, `random_init` skips
    measurement-driven seeding (the map must then discover geometry on
    its own), and `one_hot` disables distance-dependent beam widening.
    """

    def __init__(
        self,
        grid: OfdmGrid,
        array: ArrayGeometry,
        window: DelayWindow,
        train_config: TrainConfig | None = None,
        loss_weights: LossWeights | None = None,
        include_los: bool = True,
        one_hot: bool = False,
        random_init: bool = False,
        k_init: int = 8,
        eta_delay_bins: float = 2.0,
        deformer_extent: float | None = None,
        selection: SelectionConfig | None = None,
        seed: int = 0,
    ):
        self.grid = grid
        self.array = array
        self.window = window
        self.train_config = train_config
        self.loss_weights = loss_weights
        self.include_los = include_los
        self.one_hot = one_hot
        self.random_init = random_init
        self.k_init = k_init
        self.eta_delay_bins = eta_delay_bins
        self.deformer_extent = deformer_extent
        self.selection = selection
        self.seed = seed

    _param_names = (
        "grid",
        "array",
        "window",
        "train_config",
        "loss_weights",
        "include_los",
        "one_hot",
        "random_init",
        "k_init",
        "eta_delay_bins",
        "deformer_extent",
        "selection",
        "seed",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "GaussianChannelPrior":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(
                    f"invalid parameter {name!r} for GaussianChannelPrior"
                )
            setattr(self, name, value)
        return self

    def fit(self, positions, spectra) -> "GaussianChannelPrior":
        """Initialize a scene map from the samples and train it."""
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        spectra = np.asarray(spectra, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must be an (n, 3) array")
        if spectra.ndim != 3 or spectra.shape[0] != positions.shape[0]:
            raise ValueError("spectra must be (n, delay, beam) aligned with positions")

        config = self.train_config if self.train_config is not None else TrainConfig(
            epochs=200, seed=self.seed
        )
        if self.random_init:
            scene = random_scene(positions, self.array, k=self.k_init, seed=self.seed)
        else:
            scene = init_from_measurements(
                positions,
                spectra,
                self.grid,
                self.window,
                self.array,
                k_init=self.k_init,
                seed=self.seed,
            )
        extent = self.deformer_extent
        if extent is None:
            span = np.concatenate([positions, [self.array.bs_position]])
            extent = max(float(np.ptp(span, axis=0).max()), 50.0)
        params = DeformerParams.initialize(
            eta_delay=self.eta_delay_bins * self.grid.delay_resolution_s,
            center=positions.mean(axis=0),
            extent=extent,
            seed=self.seed,
        )
        result = train_prior(
            positions,
            spectra,
            scene,
            params,
            self.grid,
            self.window,
            self.array,
            config,
            weights=self.loss_weights,
            include_los=self.include_los,
            one_hot=self.one_hot,
        )
        self.scene_ = result.scene
        self.params_ = result.params
        self.history_ = result.history
        return self

    def predict(self, positions) -> np.ndarray:
        """Rendered power spectra, one (delay, beam) image per position."""
        self._check_fitted()
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must be an (n, 3) array")
        return np.stack(
            [
                render(
                    self.scene_,
                    self.params_,
                    p,
                    self.grid,
                    self.array,
                    self.window,
                    self.selection,
                    include_los=self.include_los,
                    nearest_bin=self.one_hot,
                ).total
                for p in positions
            ]
        )

    def score(self, positions, spectra) -> float:
        """Negative mean squared distance between unit-sum spectra.

        Follows the greater-is-better convention so the wrapper can sit
        in standard model-selection loops.
        """
        self._check_fitted()
        predicted = self.predict(positions)
        spectra = np.asarray(spectra, dtype=float)
        if spectra.shape != predicted.shape:
            raise ValueError("spectra shape does not match the rendered grid")
        return -float(
            np.mean([loss_spec(p, q) for p, q in zip(predicted, spectra)])
        )

    def _check_fitted(self):
        if not hasattr(self, "scene_"):
            raise NotFittedError(
                "this GaussianChannelPrior instance is not fitted yet; "
                "call fit before predict"
            )
