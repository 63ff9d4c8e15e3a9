import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from planer_aad.dataset import (
    MANIFEST_HEADER,
    AudioClip,
    ClipLabel,
    DatasetError,
    Manifest,
    load_clip,
    load_manifest,
    split_train_val,
    write_clip,
    write_manifest,
)


def _write_manifest_text(path, rows):
    path.write_text("\n".join([",".join(MANIFEST_HEADER)] + rows) + "\n")


def _train_manifest(n, root="."):
    return Manifest([ClipLabel(f"c{i:05d}", f"c{i:05d}.wav", "train", False) for i in range(n)], root)


# -- load_clip --------------------------------------------------------------

def test_ten_second_clip_has_200000_samples(tmp_path):
    path = tmp_path / "a.wav"
    wavfile.write(path, 20000, np.zeros(200000, dtype=np.int16))
    clip = load_clip(path)
    assert clip.samples.shape == (200000,)
    assert clip.sample_rate == 20000
    assert clip.clip_id == "a"
    assert clip.duration == 10.0


def test_silent_clip_is_all_zero(tmp_path):
    path = tmp_path / "z.wav"
    wavfile.write(path, 20000, np.zeros(20000, dtype=np.int16))
    clip = load_clip(path, "zero")
    assert clip.clip_id == "zero"
    assert clip.samples.size == 20000 and not clip.samples.any()


def test_pcm16_is_scaled_by_32768(tmp_path):
    path = tmp_path / "p.wav"
    wavfile.write(path, 20000, np.array([-32768, 0, 16384, 32767], dtype=np.int16))
    np.testing.assert_array_equal(load_clip(path).samples, [-1.0, 0.0, 0.5, 32767 / 32768])


def test_float32_accepted_unscaled(tmp_path):
    path = tmp_path / "f.wav"
    x = np.array([0.25, -0.75, 0.1], dtype=np.float32)
    wavfile.write(path, 20000, x)
    np.testing.assert_array_equal(load_clip(path).samples, x.astype(np.float64))


def test_stereo_44k_rejected(tmp_path):
    path = tmp_path / "s.wav"
    wavfile.write(path, 44100, np.zeros((441, 2), dtype=np.int16))
    with pytest.raises(DatasetError):
        load_clip(path)


def test_wrong_rate_rejected(tmp_path):
    path = tmp_path / "r.wav"
    wavfile.write(path, 16000, np.zeros(1600, dtype=np.int16))
    with pytest.raises(DatasetError, match="16000"):
        load_clip(path)


def test_unsupported_format_rejected(tmp_path):
    path = tmp_path / "u.wav"
    wavfile.write(path, 20000, np.zeros(10, dtype=np.int32))
    with pytest.raises(DatasetError, match="format"):
        load_clip(path)


def test_unreadable_file_rejected(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a wav file")
    with pytest.raises(DatasetError):
        load_clip(path)
    with pytest.raises(DatasetError):
        load_clip(tmp_path / "missing.wav")


def test_load_is_pure(tmp_path):
    path = tmp_path / "n.wav"
    write_clip(path, AudioClip("n", np.random.default_rng(0).uniform(-0.5, 0.5, 3000)))
    np.testing.assert_array_equal(load_clip(path).samples, load_clip(path).samples)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=1, max_size=400))
def test_pcm16_round_trip_within_one_lsb(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    x = np.array(values)
    write_clip(path, AudioClip("x", x))
    y = load_clip(path).samples
    assert np.max(np.abs(y - x)) <= 1 / 32768


def test_float32_round_trip(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, 500)
    write_clip(tmp_path / "f.wav", AudioClip("f", x), fmt="float32")
    np.testing.assert_allclose(load_clip(tmp_path / "f.wav").samples, x, atol=1e-7)


# -- manifest ---------------------------------------------------------------

def test_minimal_manifest(tmp_path):
    _write_manifest_text(tmp_path / "m.csv", [
        "a,train/a.wav,train,0,none,2x4",
        "b,eval/b.wav,eval,1,board_stuck,unknown",
    ])
    m = load_manifest(tmp_path / "m.csv", check_files=False)
    assert len(m) == 2
    assert m["b"].anomaly_type == "board_stuck" and m["b"].is_anomaly
    assert m.ids("train") == ["a"] and m.ids("eval") == ["b"]
    assert m.path_of("a") == tmp_path / "train/a.wav"


def test_anomalous_train_row_rejected_with_line_number(tmp_path):
    _write_manifest_text(tmp_path / "m.csv", [
        "a,a.wav,train,0,none,2x4",
        "b,b.wav,train,1,broken_board,2x4",
    ])
    with pytest.raises(DatasetError, match="line 3"):
        load_manifest(tmp_path / "m.csv", check_files=False)


def test_duplicate_id_rejected(tmp_path):
    _write_manifest_text(tmp_path / "m.csv", ["a,a.wav,train,0,none,2x4", "a,b.wav,eval,0,none,2x4"])
    with pytest.raises(DatasetError, match="duplicate"):
        load_manifest(tmp_path / "m.csv", check_files=False)


@pytest.mark.parametrize("row, fragment", [
    ("a,a.wav,test,0,none,2x4", "split"),
    ("a,a.wav,eval,2,none,2x4", "is_anomaly"),
    ("a,a.wav,eval,1,cracked,2x4", "anomaly_type"),
    ("a,a.wav,eval,0,none,2x8", "board_type"),
    ("a,a.wav,eval,1,none,2x4", "inconsistent"),
    ("a,a.wav,eval,0,none", "fields"),
    (",a.wav,eval,0,none,2x4", "empty"),
])
def test_malformed_rows(tmp_path, row, fragment):
    _write_manifest_text(tmp_path / "m.csv", [row])
    with pytest.raises(DatasetError, match=fragment):
        load_manifest(tmp_path / "m.csv", check_files=False)


def test_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("id,path\n")
    with pytest.raises(DatasetError, match="header"):
        load_manifest(tmp_path / "m.csv")


def test_missing_audio_detected(tmp_path):
    _write_manifest_text(tmp_path / "m.csv", ["a,a.wav,train,0,none,2x4"])
    with pytest.raises(DatasetError, match="missing"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_write_read_round_trip(tmp_path):
    labels = [ClipLabel("a", "a.wav", "train", False, "none", "2x3"),
              ClipLabel("b", "b.wav", "eval", True, "uneven_or_thick", "2x6")]
    write_manifest(tmp_path / "m.csv", labels)
    assert load_manifest(tmp_path / "m.csv", check_files=False).entries == labels


# -- split ------------------------------------------------------------------

def test_split_full_dataset_size():
    train, val = split_train_val(_train_manifest(4327), 0.1, 0)
    assert (len(val), len(train)) == (432, 3895)


def test_split_ten_clips():
    train, val = split_train_val(_train_manifest(10), 0.1, 0)
    assert (len(val), len(train)) == (1, 9)


def test_split_deterministic_and_order_free():
    m = _train_manifest(50)
    shuffled = Manifest(list(reversed(m.entries)), ".")
    assert split_train_val(m, 0.2, 3) == split_train_val(m, 0.2, 3) == split_train_val(shuffled, 0.2, 3)
    assert split_train_val(m, 0.2, 3) != split_train_val(m, 0.2, 4)


def test_split_errors():
    with pytest.raises(DatasetError):
        split_train_val(Manifest([ClipLabel("e", "e.wav", "eval", False)], "."), 0.1)
    with pytest.raises(DatasetError):
        split_train_val(_train_manifest(1), 0.1)
    with pytest.raises(ValueError):
        split_train_val(_train_manifest(10), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_split_partition_property(n, fraction, seed):
    m = _train_manifest(n)
    train, val = split_train_val(m, fraction, seed)
    assert not set(train) & set(val)
    assert sorted(train + val) == sorted(m.ids("train"))
    assert len(val) == int(np.floor(round(fraction * n, 9)))
