"""Binary containers, window sampling, splits and normalisation."""

import csv
import json
import struct

import numpy as np
import pytest
from scipy.stats import chisquare

from slt import data as io
from slt.errors import BadMagic, ConfigError, FormatError, TruncatedPayload, UnsupportedVersion


def record(T=50, n=8, trajectories=1, seed=0, t0=0.0):
    r = np.random.default_rng(seed)
    return io.ZonalData(r.standard_normal((trajectories, T, n)), t0 + np.arange(T, dtype=float),
                        {"record_interval": 1.0, "seed": seed})


class TestContainer:
    """Fixed header, JSON header, payload."""

    def test_round_trip_bit_identical(self, tmp_path):
        p = tmp_path / "r.sltd"
        d = record()
        io.write_record(p, d)
        back = io.read_record(p)
        assert back.U.tobytes() == d.U.tobytes()
        assert back.times.tobytes() == d.times.tobytes()
        assert back.meta["seed"] == 0
        q = tmp_path / "again.sltd"
        io.write_record(q, back)
        assert p.read_bytes() == q.read_bytes()

    def test_header_layout(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record(T=3, n=4))
        raw = p.read_bytes()
        magic, version, reserved, hlen, plen = struct.unpack("<4sHHIQ", raw[:20])
        assert (magic, version, reserved) == (b"SLTD", 1, 0)
        header = json.loads(raw[20 : 20 + hlen])
        assert header["kind"] == "zonal-record"
        assert [a["name"] for a in header["arrays"]] == ["times", "U"]
        assert header["arrays"][1]["dtype"] == "<f8"
        assert plen == 3 * 8 + 3 * 4 * 8 == len(raw) - 20 - hlen

    def test_f32_widens_losslessly(self, tmp_path):
        p = tmp_path / "r.sltd"
        d = record()
        io.write_record(p, d, dtype="f4")
        back = io.read_record(p)
        assert back.U.dtype == np.float64
        assert np.array_equal(back.U, d.U.astype(np.float32).astype(np.float64))

    def test_truncated(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record())
        raw = p.read_bytes()
        for cut in (len(raw) - 1, 30, 10):
            p.write_bytes(raw[:cut])
            with pytest.raises(TruncatedPayload):
                io.read_record(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record())
        p.write_bytes(b"NOPE" + p.read_bytes()[4:])
        with pytest.raises(BadMagic):
            io.read_record(p)

    def test_unsupported_version(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record())
        raw = bytearray(p.read_bytes())
        raw[4:6] = struct.pack("<H", 2)
        p.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersion):
            io.read_record(p)

    def test_corrupt_header(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record())
        raw = bytearray(p.read_bytes())
        raw[20] = ord("!")
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            io.read_record(p)

    def test_wrong_kind(self, tmp_path):
        p = tmp_path / "f.sltd"
        io.write_forecast(p, np.zeros((2, 3, 4)), {"t0": 1.0})
        with pytest.raises(FormatError):
            io.read_record(p)
        U, meta = io.read_forecast(p)
        assert U.shape == (2, 3, 4) and meta["t0"] == 1.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            io.read_record(tmp_path / "absent.sltd")

    def test_error_classes_distinct(self):
        assert len({BadMagic, UnsupportedVersion, TruncatedPayload}) == 3
        assert all(issubclass(c, FormatError) for c in (BadMagic, UnsupportedVersion, TruncatedPayload))

    def test_model_checkpoint(self, tmp_path):
        from slt.model import ModelConfig, SLTModel

        m = SLTModel(ModelConfig(n_y=16, latent_dim=8, seq_len=2, channels=2, n_heads=2, n_blocks=1),
                     norm_mean=0.5, norm_std=3.0)
        io.save_model(tmp_path / "m.sltd", m, {"epoch": 4})
        back, meta = io.load_model(tmp_path / "m.sltd")
        assert meta["epoch"] == 4 and back.norm_std == 3.0
        for k, v in m.state_dict().items():
            assert np.array_equal(v, back.state_dict()[k])

    def test_csv_export(self, tmp_path):
        p = tmp_path / "r.sltd"
        io.write_record(p, record(T=3, n=2))
        io.container_to_csv(p, tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0] == ["name", "i0", "i1", "i2", "value"]
        assert len(rows) == 1 + 3 + 3 * 2

    def test_csv_columns(self, tmp_path):
        io.export_csv(tmp_path / "c.csv", {"a": np.arange(3), "b": np.array([0.5, 1.5, 2.5])})
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows == [["a", "b"], ["0", "0.5"], ["1", "1.5"], ["2", "2.5"]]


class TestSampler:
    """Uniform valid windows."""

    def test_enumeration_small_record(self):
        d = record(T=12)
        s = io.WindowSampler(d, 10, np.random.default_rng(0))
        _, starts = s.starts(1000)
        assert set(starts.tolist()) == {0, 1}
        hist, target = s.gather(np.array([0, 0]), np.array([0, 1]))
        assert np.array_equal(hist[1], d.U[0, 1:11]) and np.array_equal(target[1], d.U[0, 11])

    def test_uniform_chi_square(self):
        d = record(T=30, trajectories=2)
        s = io.WindowSampler(d, 5, np.random.default_rng(1))
        traj, start = s.starts(100_000)
        counts = np.bincount(traj * 25 + start, minlength=50)
        assert chisquare(counts).pvalue > 1e-3

    def test_spinup_rows_excluded(self):
        d = record(T=40, t0=50.0)
        s = io.WindowSampler(d, 4, np.random.default_rng(2), min_time=62.5)
        _, start = s.starts(5000)
        assert d.times[start].min() >= 62.5
        assert set(start.tolist()) == set(range(13, 36))

    def test_same_seed_same_batches(self):
        d = record()
        a = io.WindowSampler(d, 4, np.random.default_rng(3))
        b = io.WindowSampler(d, 4, np.random.default_rng(3))
        for _ in range(3):
            ha, ta = a.sample(8)
            hb, tb = b.sample(8)
            assert np.array_equal(ha, hb) and np.array_equal(ta, tb)
        assert np.array_equal(io.sample_windows(a, 2)[0], io.sample_windows(b, 2)[0])

    def test_too_short(self):
        with pytest.raises(ConfigError):
            io.WindowSampler(record(T=10), 10, np.random.default_rng(0))


class TestSplit:
    """Contiguous validation tail."""

    def test_lengths_and_tail(self):
        d = record(T=50)
        tr, va = io.split(d, 12)
        assert len(tr) + len(va) == 50
        assert np.array_equal(va.U, d.U[:, -12:])
        assert np.array_equal(va.times, d.times[-12:])

    def test_no_window_crosses(self):
        d = record(T=60)
        d.U = np.broadcast_to(np.arange(60.0)[None, :, None], d.U.shape).copy()
        tr, va = io.split(d, 15)
        ht, tt = io.WindowSampler(tr, 5, np.random.default_rng(0)).sample(100_000)
        hv, tv = io.WindowSampler(va, 5, np.random.default_rng(1)).sample(100_000)
        train_rows = np.union1d(np.unique(ht), np.unique(tt))
        val_rows = np.union1d(np.unique(hv), np.unique(tv))
        assert train_rows.max() < 45 <= val_rows.min()
        assert np.intersect1d(train_rows, val_rows).size == 0

    def test_val_too_long(self):
        with pytest.raises(ConfigError):
            io.split(record(T=10), 10)


class TestNormalization:
    """Global z-score statistics."""

    def test_constant_record(self):
        d = io.ZonalData(np.full((1, 5, 4), 2.0), np.arange(5.0))
        mean, std = io.normalization_stats(d)
        assert std == 1e-12
        assert np.all(io.normalize(d.U, mean, std) == 0)

    def test_z_score(self):
        d = record(T=200)
        d.U = 3.0 + 2.0 * d.U
        mean, std = io.normalization_stats(d)
        z = io.normalize(d.U, mean, std)
        assert abs(z.mean()) <= 1e-12 and z.std() == pytest.approx(1.0, abs=1e-12)

    def test_train_split_only(self):
        from slt.pipeline import default_config, make_dataset

        d = record(T=100)
        d.U[:, 90:] += 100.0
        cfg = default_config()
        cfg["train"].update(seq_len=4, val_fraction=0.1)
        ds = make_dataset(d, cfg)
        tr, _ = io.split(d, 10)
        assert ds.meta["norm"]["mean"] == pytest.approx(tr.U.mean())
        assert ds.meta["split"] == {"train_len": 90, "val_len": 10}

    def test_empty(self):
        with pytest.raises(ConfigError):
            io.normalization_stats(np.zeros((0,)))
