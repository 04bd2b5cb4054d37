import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qs4d.data import Dataset, delayed_recall_label, gen_delayed_recall, gen_two_tone, load_raw, write_raw


def test_recall_rule_and_shapes():
    ds = gen_delayed_recall(50, 20, 5, seed=1)
    assert ds.u.shape == (50, 20, 1)
    for u, y in zip(ds.u, ds.labels):
        assert y == int(u[20 - 1 - 5, 0] > 0) == delayed_recall_label(u, 5)


def test_recall_delay_zero_uses_last_element():
    ds = gen_delayed_recall(20, 8, 0, seed=2)
    np.testing.assert_array_equal(ds.labels, (ds.u[:, -1, 0] > 0).astype(int))


def test_label_of_hand_sample():
    u = np.zeros(10)
    u[10 - 1 - 3] = 0.73
    assert delayed_recall_label(u, 3) == 1


def test_invalid_delay():
    with pytest.raises(ValueError):
        gen_delayed_recall(4, 8, 8, 0)


@settings(max_examples=20, deadline=None)
@given(count=st.integers(1, 60).map(lambda n: 2 * n), seed=st.integers(0, 1000))
def test_balanced_and_deterministic(count, seed):
    a = gen_delayed_recall(count, 16, 3, seed)
    b = gen_delayed_recall(count, 16, 3, seed)
    assert a.u.tobytes() == b.u.tobytes() and np.array_equal(a.labels, b.labels)
    assert a.labels.sum() == count // 2
    t = gen_two_tone(count, 32, seed=seed)
    assert t.labels.sum() == count // 2
    assert t.u.tobytes() == gen_two_tone(count, 32, seed=seed).u.tobytes()


def test_two_tone_clean_matched_filter():
    ds = gen_two_tone(100, 256, 0.05, 0.08, snr_db=np.inf, seed=3)
    t = np.arange(256)
    power = [np.abs(np.sum(ds.u[:, :, 0] * np.exp(-2j * np.pi * f * t), axis=1)) for f in (0.05, 0.08)]
    pred = (power[1] > power[0]).astype(int)
    assert np.mean(pred == ds.labels) == 1.0


def test_two_tone_noise_level():
    ds = gen_two_tone(200, 1024, snr_db=10.0, seed=0)
    clean = gen_two_tone(200, 1024, snr_db=np.inf, seed=0)
    noise = ds.u - clean.u
    # signal power 1/2 at 10 dB -> noise variance 0.05
    assert np.var(noise) == pytest.approx(0.05, rel=0.02)


def test_two_tone_equal_frequencies_indistinguishable():
    ds = gen_two_tone(10, 64, 0.1, 0.1, snr_db=np.inf, seed=0)
    assert ds.u.shape == (10, 64, 1)


def test_two_tone_bad_frequency():
    with pytest.raises(ValueError):
        gen_two_tone(4, 16, f0=0.6)
    with pytest.raises(ValueError):
        gen_two_tone(4, 16, f1=0.0)


def test_split():
    ds = gen_delayed_recall(10, 4, 1, 0)
    a, b, c = ds.split(0.6, 0.2)
    assert (len(a), len(b), len(c)) == (6, 2, 2)


def test_raw_roundtrip(tmp_path):
    ds = gen_two_tone(6, 32, seed=1)
    ds = Dataset(ds.u.astype(np.float32), ds.labels)
    manifest = write_raw(tmp_path, ds)
    back = load_raw(manifest)
    assert back.u.tobytes() == ds.u.tobytes() and np.array_equal(back.labels, ds.labels)


def test_raw_hand_encoded(tmp_path):
    (tmp_path / "x.f32").write_bytes(struct.pack("<2f", 1.0, -2.0))
    (tmp_path / "m.csv").write_text("file,length,channels,label\nx.f32,2,1,1\n")
    ds = load_raw(tmp_path / "m.csv")
    np.testing.assert_array_equal(ds.u[0, :, 0], [1.0, -2.0])
    assert ds.labels.tolist() == [1]


def test_raw_wrong_size_names_file(tmp_path):
    (tmp_path / "bad.f32").write_bytes(b"\0" * 12)
    (tmp_path / "m.csv").write_text("file,length,channels,label\nbad.f32,2,1,0\n")
    with pytest.raises(ValueError, match="bad.f32"):
        load_raw(tmp_path / "m.csv")


def test_raw_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("name,len\n")
    with pytest.raises(ValueError):
        load_raw(tmp_path / "m.csv")
