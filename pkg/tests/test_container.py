"""Binary container: record layer, dataset and checkpoint round-trips."""

import struct

import numpy as np
import pytest

from ggce.container import (
    MAGIC,
    Checkpoint,
    CheckpointMeta,
    read_checkpoint,
    read_dataset,
    read_records,
    write_checkpoint,
    write_dataset,
    write_records,
)
from ggce.errors import DataFormatError
from ggce.gaussmap import DeformerParams, GaussianPrimitive, SceneMap
from ggce.radio import ArrayGeometry, DelayWindow, OfdmGrid, PilotPattern
from ggce.scene import ScenarioConfig, Trajectory, generate_dataset


@pytest.fixture
def small_dataset():
    grid = OfdmGrid(32, 30e3, 14, 0.5e-3 / 14, 3.5e9)
    array = ArrayGeometry(4, 0.5, [0.0, 30.0, 10.0], [0.0, -1.0, 0.0])
    window = DelayWindow(8, 2)
    pattern = PilotPattern((2, 9), np.arange(0, 32, 4), 1.0, 0.0)
    traj = Trajectory([0.0, 0.0, 2.0], [1.0, 0.0, 0.0], 97.2, 10.0)
    scenario = ScenarioConfig(trajectory=traj, scatterers=[], n_slots=2, snr_db=15.0)
    return generate_dataset(grid, array, window, pattern, scenario, config_text="[grid]\nx = 1\n")


@pytest.fixture
def checkpoint_parts():
    scene = SceneMap(
        primitives=[
            GaussianPrimitive([40.0, -15.0, 5.0], 2.0, 1.2, 0.0, -0.7),
            GaussianPrimitive([-3.0, 8.0, 1.0], 0.5, -0.4, 1.7e-8, 0.9),
        ],
        los_gain_raw=0.31,
        bs_position=[0.0, 30.0, 10.0],
    )
    params = DeformerParams.initialize(
        eta_delay=5.2e-7, center=[5.0, 0.0, 2.0], extent=120.0, seed=3
    )
    grid = OfdmGrid(32, 30e3, 14, 0.5e-3 / 14, 3.5e9)
    window = DelayWindow(8, 2)
    array = ArrayGeometry(4, 0.5, [0.0, 30.0, 10.0], [0.0, -1.0, 0.0])
    return scene, params, grid, window, array


class TestRecordLayer:
    def test_round_trip(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        records = [(b"AAAA", b"hello"), (b"BBBB", b""), (b"AAAA", bytes(range(256)))]
        write_records(p, records)
        assert read_records(p) == records

    def test_magic_written(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        write_records(p, [])
        with open(p, "rb") as f:
            assert f.read(4) == MAGIC == b"GGCE"

    def test_bad_magic(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        with open(p, "wb") as f:
            f.write(b"NOPE" + struct.pack("<I", 1))
        with pytest.raises(DataFormatError) as e:
            read_records(p)
        assert e.value.offset == 0

    def test_truncated_record_reports_offset(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        write_records(p, [(b"AAAA", b"12345678")])
        with open(p, "rb") as f:
            data = f.read()
        with open(p, "wb") as f:
            f.write(data[:-3])
        with pytest.raises(DataFormatError) as e:
            read_records(p)
        assert e.value.offset == 8  # record starts right after the header

    def test_bad_version(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        with open(p, "wb") as f:
            f.write(MAGIC + struct.pack("<I", 999))
        with pytest.raises(DataFormatError):
            read_records(p)

    def test_nonascii_tag_rejected(self, tmp_path):
        p = str(tmp_path / "x.ggce")
        with open(p, "wb") as f:
            f.write(MAGIC + struct.pack("<I", 1) + b"\x00\x01\x02\x03" + struct.pack("<Q", 0))
        with pytest.raises(DataFormatError) as e:
            read_records(p)
        assert e.value.offset == 8

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError):
            read_records(str(tmp_path / "absent.ggce"))


class TestDatasetFile:
    def test_round_trip_bit_exact(self, tmp_path, small_dataset):
        p = str(tmp_path / "d.ggce")
        write_dataset(p, small_dataset)
        back = read_dataset(p)
        assert len(back.snapshots) == len(small_dataset.snapshots)
        for a, b in zip(back.snapshots, small_dataset.snapshots):
            assert (a.slot, a.symbol) == (b.slot, b.symbol)
            np.testing.assert_array_equal(a.cfr, b.cfr)
            np.testing.assert_array_equal(a.ue_position, b.ue_position)
        for pa, pb in zip(back.paths, small_dataset.paths):
            assert len(pa) == len(pb)
            for x, y in zip(pa, pb):
                assert x.kind == y.kind
                assert x.delay == y.delay
                assert x.complex_gain == y.complex_gain
                assert x.doppler == y.doppler
                assert x.beam_coord == y.beam_coord
        assert back.config_text == small_dataset.config_text
        assert back.grid == small_dataset.grid
        assert back.window == small_dataset.window
        assert back.pattern.noise_var == small_dataset.pattern.noise_var
        np.testing.assert_array_equal(
            back.pattern.pilot_subcarriers, small_dataset.pattern.pilot_subcarriers
        )

    def test_rewrite_is_byte_identical(self, tmp_path, small_dataset):
        p1, p2 = str(tmp_path / "a.ggce"), str(tmp_path / "b.ggce")
        write_dataset(p1, small_dataset)
        write_dataset(p2, small_dataset)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_unknown_records_skipped(self, tmp_path, small_dataset):
        p = str(tmp_path / "d.ggce")
        write_dataset(p, small_dataset)
        with open(p, "rb") as f:
            data = f.read()
        extra = b"ZZZZ" + struct.pack("<Q", 3) + b"abc"
        with open(p, "wb") as f:
            f.write(data + extra)
        back = read_dataset(p)
        assert len(back.snapshots) == len(small_dataset.snapshots)


class TestCheckpointFile:
    def test_round_trip_bit_exact(self, tmp_path, checkpoint_parts):
        scene, params, grid, window, array = checkpoint_parts
        p = str(tmp_path / "c.ggce")
        write_checkpoint(
            p, scene, params, grid, window, array,
            meta=CheckpointMeta(epochs_completed=17, seed=5),
            config_text="[train]\nepochs = 17\n",
        )
        back = read_checkpoint(p)
        assert isinstance(back, Checkpoint)
        assert back.meta.epochs_completed == 17
        assert back.meta.seed == 5
        assert back.scene.size == scene.size
        assert back.scene.los_gain_raw == scene.los_gain_raw
        for a, b in zip(back.scene.primitives, scene.primitives):
            np.testing.assert_array_equal(a.mu, b.mu)
            assert (a.scale, a.opacity_logit, a.delay_residual, a.gain_raw) == (
                b.scale, b.opacity_logit, b.delay_residual, b.gain_raw,
            )
        for wa, wb in zip(back.params.weights, params.weights):
            np.testing.assert_array_equal(wa, wb)
        assert back.params.eta_delay == params.eta_delay
        np.testing.assert_array_equal(back.params.center, params.center)
        assert back.params.extent == params.extent
        assert back.config_text == "[train]\nepochs = 17\n"
        assert back.grid == grid
        assert back.window == window

    def test_rewrite_is_byte_identical(self, tmp_path, checkpoint_parts):
        scene, params, grid, window, array = checkpoint_parts
        p1, p2 = str(tmp_path / "a.ggce"), str(tmp_path / "b.ggce")
        for p in (p1, p2):
            write_checkpoint(p, scene, params, grid, window, array)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_missing_record_reported(self, tmp_path, checkpoint_parts):
        scene, params, grid, window, array = checkpoint_parts
        p = str(tmp_path / "c.ggce")
        write_checkpoint(p, scene, params, grid, window, array)
        records = [(t, pl) for t, pl in read_records(p) if t != b"GMAP"]
        write_records(p, records)
        with pytest.raises(DataFormatError):
            read_checkpoint(p)
