import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frwkv import data as D
from frwkv.errors import ProtocolError

DATA_DIR = Path(os.environ.get("FRWKV_DATA_DIR", "data"))


def write(tmp_path, text, name="x.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_small_fixture(self, tmp_path):
        t = D.load_csv(write(tmp_path, "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n"))
        assert t.values.shape == (3, 2) and t.columns == ["a", "b"] and t.n_vars == 2
        assert t.timestamps[0] == "2020-01-01" and t.total_len == 3

    def test_no_date_column(self, tmp_path):
        t = D.load_csv(write(tmp_path, "a,b,c\n1,2,3\n4,5,6\n"))
        assert t.values.shape == (2, 3) and t.timestamps is None

    def test_header_only(self, tmp_path):
        with pytest.raises(ProtocolError):
            D.load_csv(write(tmp_path, "date,a,b\n"))

    def test_empty(self, tmp_path):
        with pytest.raises(ProtocolError):
            D.load_csv(write(tmp_path, ""))

    def test_unparseable_cell_reports_position(self, tmp_path):
        with pytest.raises(ProtocolError) as exc:
            D.load_csv(write(tmp_path, "date,a,b\nd1,1,2\nd2,3,oops\n"))
        assert "row 2" in str(exc.value) and "column 2" in str(exc.value)

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(ProtocolError) as exc:
            D.load_csv(write(tmp_path, "date,a\nd1,1\nd2,nan\n"))
        assert "row 2" in str(exc.value)

    def test_roundtrip(self, tmp_path):
        t = D.synth_periodic(3, 50, 7, seed=1)
        D.write_csv(t, tmp_path / "s.csv")
        back = D.load_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.values, t.values)
        assert back.columns == t.columns and back.timestamps == t.timestamps

    @pytest.mark.skipif(not (DATA_DIR / "ETTh1.csv").exists(), reason="ETTh1.csv not available")
    def test_etth1_shape(self):
        t = D.load_csv(DATA_DIR / "ETTh1.csv")
        assert (t.total_len, t.n_vars) == (17420, 7)
        assert D.split(t, "ETTh", 96, 96).sizes["train"] == 8640


def table(n, n_vars=2, seed=0):
    return D.SeriesTable(np.random.default_rng(seed).normal(size=(n, n_vars)), [f"v{i}" for i in range(n_vars)])


class TestSplit:
    def test_etth_convention(self):
        spec = D.split(table(17420, 7), "ETTh", 96, 96)
        assert spec.sizes == {"train": 8640, "val": 2880, "test": 2880}
        assert spec.bounds == {"train": (0, 8640), "val": (8544, 11520), "test": (11424, 14400)}

    def test_ettm_convention(self):
        spec = D.split(table(69680, 1), "ETTm", 96, 96)
        assert spec.sizes == {"train": 34560, "val": 11520, "test": 11520}

    def test_ratio(self):
        spec = D.split(table(100), "ratio", 4, 2)
        assert spec.sizes == {"train": 70, "val": 10, "test": 20}
        assert spec.bounds["val"] == (66, 80) and spec.bounds["test"] == (76, 100)

    def test_too_short(self):
        with pytest.raises(ProtocolError):
            D.split(table(30), "ratio", 8, 4)
        with pytest.raises(ProtocolError):
            D.split(table(1000), "ETTh", 96, 96)
        with pytest.raises(ProtocolError):
            D.split(table(100), "bogus", 4, 2)

    def test_train_only_statistics(self):
        t = table(200)
        t.values[150:] += 100.0  # shift outside the training slice
        spec = D.split(t, "ratio", 10, 5)
        np.testing.assert_allclose(spec.mean, t.values[:140].mean(axis=0))
        np.testing.assert_allclose(spec.std, t.values[:140].std(axis=0))
        assert spec.stats_source == "train"

    def test_infer_kind(self):
        assert D.infer_kind("data/ETTh2.csv") == "ETTh"
        assert D.infer_kind("ETTm1") == "ETTm"
        assert D.infer_kind("weather.csv") == "ratio"


class TestWindows:
    def test_count(self):
        assert len(D.windows(np.arange(10.0), 4, 2)) == 5

    def test_exact_fit(self):
        ws = D.windows(np.arange(6.0), 4, 2)
        assert len(ws) == 1
        np.testing.assert_array_equal(ws.inputs[0, :, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(ws.targets[0, :, 0], [4, 5])

    def test_too_short(self):
        with pytest.raises(ProtocolError):
            D.windows(np.arange(5.0), 4, 2)

    @settings(max_examples=30)
    @given(st.integers(10, 60), st.integers(1, 5), st.integers(1, 5))
    def test_count_formula_and_contiguity(self, length, t, h):
        seg = np.arange(length * 2.0).reshape(length, 2)
        ws = D.windows(seg, t, h)
        assert len(ws) == length - t - h + 1
        for i in (0, len(ws) - 1):
            np.testing.assert_array_equal(np.concatenate([ws.inputs[i], ws.targets[i]]), seg[i:i + t + h])


def test_prepare_windows_stay_in_segments():
    t = D.SeriesTable(np.arange(300.0)[:, None], ["t"])
    prep = D.prepare(t, "ratio", 12, 6)
    spec = prep.spec
    for name, (a, b) in spec.bounds.items():
        ws = prep[name]
        raw = ws.targets * spec.std + spec.mean
        assert raw.min() >= a + 12 - 1e-9 and raw.max() <= b - 1 + 1e-9
        assert len(ws) == (b - a) - 12 - 6 + 1
    # targets of val begin exactly where training data ends
    first_val_target = prep["val"].targets[0, 0, 0] * spec.std[0] + spec.mean[0]
    assert first_val_target == pytest.approx(spec.sizes["train"])


def test_prepare_deterministic():
    t = D.synth_periodic(2, 400, 24, seed=3)
    a, b = D.prepare(t, "ratio", 48, 12), D.prepare(t, "ratio", 48, 12)
    np.testing.assert_array_equal(a["test"].inputs, b["test"].inputs)


def test_iterate_batches():
    seq = list(D.iterate_batches(10, 4))
    assert [len(b) for b in seq] == [4, 4, 2] and np.array_equal(np.concatenate(seq), np.arange(10))
    shuffled = np.concatenate(list(D.iterate_batches(10, 4, seed=1)))
    assert sorted(shuffled) == list(range(10))
    assert np.array_equal(shuffled, np.concatenate(list(D.iterate_batches(10, 4, seed=1))))


class TestSynth:
    def test_exactly_periodic_net_of_trend(self):
        t = D.synth_periodic(3, 200, 12, noise_std=0.0, trend=0.0, seed=1)
        np.testing.assert_allclose(t.values[12:], t.values[:-12], atol=1e-9)
        with_trend = D.synth_periodic(3, 200, 12, noise_std=0.0, seed=1)
        diff = with_trend.values[12:] - with_trend.values[:-12]
        np.testing.assert_allclose(diff, np.broadcast_to(diff[0], diff.shape), atol=1e-9)

    def test_seeded(self):
        a, b = D.synth_periodic(2, 100, 24, seed=5), D.synth_periodic(2, 100, 24, seed=5)
        np.testing.assert_array_equal(a.values, b.values)

    def test_variance_grows_with_noise(self):
        for seed in range(3):
            var = [D.synth_periodic(2, 2000, 24, noise_std=s, seed=seed).values.var() for s in (0.1, 0.5, 1.0)]
            assert var[0] < var[1] < var[2]

    def test_invalid(self):
        with pytest.raises(ProtocolError):
            D.synth_periodic(0, 10, 4)

    def test_etth_length_fixture(self):
        t = D.synth_periodic(7, 17420, 24, seed=0)
        assert D.split(t, "ETTh", 96, 96).sizes["train"] == 8640


def test_protocols():
    assert D.PROTOCOLS["ILI"] == (36, (24, 36, 48, 60), 16)
    assert D.PROTOCOLS["ETTh2"][2] == 32
