"""Sectioned key = value experiment configuration.

One INI-style text describes a full experiment: radio numerology,
array geometry, pilot placement, corridor scenario, training
hyperparameters, estimator settings, and run bookkeeping. The raw text
travels inside every output container so results stay self-describing,
and two configs compare equal when their parsed content matches even if
formatting differs.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .radio import ArrayGeometry, DelayWindow, OfdmGrid, PilotPattern
from .scene import Scatterer, ScenarioConfig, Trajectory
from .training import TrainConfig

KNOWN_METHOD_NAMES = ("geogs", "trained", "genie", "zero", "omp")

KMH_TO_MPS = 1000.0 / 3600.0


@dataclass(eq=False)
class EstimatorSettings:
    """Knobs for the online loop that are not radio geometry."""

    eps_fraction: float = 1e-6
    alpha_window: int = 4
    omp_max_iters: int = 16
    omp_tol: float = 0.1
    selection_threshold: float = 0.05
    max_paths: int = 64

    def __post_init__(self):
        if self.eps_fraction <= 0:
            raise ConfigError("eps_fraction must be positive")
        if int(self.alpha_window) < 2:
            raise ConfigError("alpha_window must be at least 2")
        if int(self.omp_max_iters) < 1:
            raise ConfigError("omp_max_iters must be at least 1")
        if self.omp_tol < 0:
            raise ConfigError("omp_tol must be nonnegative")
        if not 0.0 <= self.selection_threshold <= 1.0:
            raise ConfigError("selection_threshold must lie in [0, 1]")
        if int(self.max_paths) < 0:
            raise ConfigError("max_paths must be nonnegative")
        self.alpha_window = int(self.alpha_window)
        self.omp_max_iters = int(self.omp_max_iters)
        self.max_paths = int(self.max_paths)


@dataclass(eq=False)
class RunSettings:
    """Seed, output location, method list, and the train/test slot split.

    The first train_slots slots of a run are the training positions; the
    remaining slots are held out for evaluation, so evaluation always
    extrapolates beyond the fitted stretch of track. 0 means half the
    run (rounded up).
    """

    seed: int = 0
    out_dir: str = "out"
    methods: tuple[str, ...] = ("geogs", "genie", "zero", "omp")
    train_slots: int = 0

    def __post_init__(self):
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.out_dir:
            raise ConfigError("out_dir must be nonempty")
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        for m in self.methods:
            if m not in KNOWN_METHOD_NAMES:
                raise ConfigError(
                    f"unknown method {m!r}; choose from {KNOWN_METHOD_NAMES}"
                )
        self.train_slots = int(self.train_slots)
        if self.train_slots < 0:
            raise ConfigError("train_slots must be nonnegative")


@dataclass(eq=False)
class ExperimentConfig:
    grid: OfdmGrid
    array: ArrayGeometry
    pattern: PilotPattern
    window: DelayWindow
    scenario: ScenarioConfig
    train: TrainConfig
    k_init: int
    estimator: EstimatorSettings
    run: RunSettings
    raw_text: str = ""

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return config_digest(self) == config_digest(other)

    def __hash__(self):
        return hash(config_digest(self))


def config_digest(cfg: ExperimentConfig) -> tuple:
    """Canonical tuple of all semantic content; formatting-independent."""
    g, a, p, w, s = cfg.grid, cfg.array, cfg.pattern, cfg.window, cfg.scenario
    return (
        (g.n_subcarriers, g.subcarrier_spacing_hz, g.n_symbols,
         g.symbol_duration_s, g.carrier_freq_hz),
        (a.n_antennas, a.spacing_wavelengths, tuple(a.bs_position), tuple(a.broadside)),
        (p.pilot_symbols, tuple(p.pilot_subcarriers), p.tx_power, p.noise_var),
        (w.n_taps, w.guard_taps),
        (tuple(s.trajectory.start), tuple(s.trajectory.direction),
         s.trajectory.speed, s.trajectory.length,
         tuple(
             (tuple(sc.position), sc.reflectivity, sc.active_range)
             for sc in s.scatterers
         ),
         s.n_slots, s.scatterer_aperture_m, s.snr_db),
        dataclasses.astuple(cfg.train),
        cfg.k_init,
        dataclasses.astuple(cfg.estimator),
        (cfg.run.seed, cfg.run.out_dir, cfg.run.methods, cfg.run.train_slots),
    )


# ---------------------------------------------------------------------------
# parsing


def _section(cp: configparser.ConfigParser, name: str):
    if not cp.has_section(name):
        raise ConfigError(f"missing section [{name}]")
    return cp[name]


def _require(section, section_name: str, key: str) -> str:
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in section [{section_name}]")
    return section[key]


def _parse(kind, raw: str, where: str):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r} ({exc})") from exc


def _floats(raw: str, where: str, n: int | None = None) -> list[float]:
    out = [_parse(float, tok.strip(), where) for tok in raw.split(",") if tok.strip()]
    if n is not None and len(out) != n:
        raise ConfigError(f"{where} needs {n} comma-separated values, got {len(out)}")
    return out


def _ints(raw: str, where: str) -> list[int]:
    return [_parse(int, tok.strip(), where) for tok in raw.split(",") if tok.strip()]


def _fields_from(section, section_name: str, cls, extra_skip=()):
    """Pull every field of a numeric dataclass out of an INI section."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in extra_skip:
            continue
        raw = _require(section, section_name, f.name)
        kind = int if f.type in ("int", int) else float
        kwargs[f.name] = _parse(kind, raw, f"[{section_name}] {f.name}")
    return kwargs


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None
    )
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    sec = _section(cp, "grid")
    grid = _build(OfdmGrid, _fields_from(sec, "grid", OfdmGrid), "grid")

    sec = _section(cp, "array")
    array = _build(
        ArrayGeometry,
        dict(
            n_antennas=_parse(int, _require(sec, "array", "n_antennas"), "[array] n_antennas"),
            spacing_wavelengths=_parse(
                float, _require(sec, "array", "spacing_wavelengths"),
                "[array] spacing_wavelengths",
            ),
            bs_position=np.array(_floats(_require(sec, "array", "bs_position"), "[array] bs_position", 3)),
            broadside=np.array(_floats(_require(sec, "array", "broadside"), "[array] broadside", 3)),
        ),
        "array",
    )

    sec = _section(cp, "pilots")
    stride = _parse(int, _require(sec, "pilots", "subcarrier_stride"), "[pilots] subcarrier_stride")
    offset = _parse(int, sec.get("subcarrier_offset", "0"), "[pilots] subcarrier_offset")
    if stride < 1:
        raise ConfigError("[pilots] subcarrier_stride must be at least 1")
    if not 0 <= offset < stride:
        raise ConfigError("[pilots] subcarrier_offset must lie in [0, stride)")
    pattern = _build(
        PilotPattern,
        dict(
            pilot_symbols=tuple(_ints(_require(sec, "pilots", "symbols"), "[pilots] symbols")),
            pilot_subcarriers=np.arange(offset, grid.n_subcarriers, stride),
            tx_power=_parse(float, _require(sec, "pilots", "tx_power"), "[pilots] tx_power"),
            noise_var=_parse(float, sec.get("noise_var", "0.0"), "[pilots] noise_var"),
        ),
        "pilots",
    )

    sec = _section(cp, "window")
    window = _build(DelayWindow, _fields_from(sec, "window", DelayWindow), "window")

    sec = _section(cp, "scenario")
    snr_raw = sec.get("snr_db", "none").strip()
    snr_db = None if snr_raw.lower() == "none" else _parse(float, snr_raw, "[scenario] snr_db")
    trajectory = _build(
        Trajectory,
        dict(
            start=np.array(_floats(_require(sec, "scenario", "track_start"), "[scenario] track_start", 3)),
            direction=np.array(
                _floats(_require(sec, "scenario", "track_direction"), "[scenario] track_direction", 3)
            ),
            speed=KMH_TO_MPS
            * _parse(float, _require(sec, "scenario", "speed_kmh"), "[scenario] speed_kmh"),
            length=_parse(
                float, _require(sec, "scenario", "track_length_m"), "[scenario] track_length_m"
            ),
        ),
        "scenario",
    )
    scatterers = []
    if cp.has_section("scatterers"):
        for key, raw in cp["scatterers"].items():
            vals = _floats(raw, f"[scatterers] {key}", 7)
            scatterers.append(
                _build(
                    Scatterer,
                    dict(
                        position=np.array(vals[0:3]),
                        reflectivity=complex(vals[3], vals[4]),
                        active_range=(vals[5], vals[6]),
                    ),
                    "scatterers",
                )
            )
    scenario = _build(
        ScenarioConfig,
        dict(
            trajectory=trajectory,
            scatterers=scatterers,
            n_slots=_parse(int, _require(sec, "scenario", "n_slots"), "[scenario] n_slots"),
            scatterer_aperture_m=_parse(
                float, sec.get("scatterer_aperture_m", "50.0"), "[scenario] scatterer_aperture_m"
            ),
            snr_db=snr_db,
        ),
        "scenario",
    )

    sec = _section(cp, "train")
    train_kwargs = _fields_from(sec, "train", TrainConfig, extra_skip=("seed",))
    k_init = _parse(int, sec.get("k_init", "8"), "[train] k_init")

    sec = _section(cp, "estimator")
    estimator = _build(
        EstimatorSettings, _fields_from(sec, "estimator", EstimatorSettings), "estimator"
    )

    sec = _section(cp, "run")
    run = _build(
        RunSettings,
        dict(
            seed=_parse(int, _require(sec, "run", "seed"), "[run] seed"),
            out_dir=_require(sec, "run", "out_dir").strip(),
            methods=tuple(
                tok.strip()
                for tok in _require(sec, "run", "methods").split(",")
                if tok.strip()
            ),
            train_slots=_parse(int, sec.get("train_slots", "0"), "[run] train_slots"),
        ),
        "run",
    )
    # the one seed that governs simulation noise, init, and minibatching
    train = _build(TrainConfig, dict(train_kwargs, seed=run.seed), "train")

    return ExperimentConfig(
        grid=grid,
        array=array,
        pattern=pattern,
        window=window,
        scenario=scenario,
        train=train,
        k_init=k_init,
        estimator=estimator,
        run=run,
        raw_text=text,
    )


def _build(cls, kwargs: dict, section_name: str):
    try:
        return cls(**kwargs)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"invalid [{section_name}] settings: {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
