import numpy as np
import pytest
from scipy.io import wavfile

from whar.errors import FormatError, ParseError, RateError, ValidationError
from whar.harness.sessions import LabeledSession, LabelInterval, load_session, save_session


def write_triple(tmp_path, name="s", imu_rows=None, labels_rows=None, wav=None,
                 rate=1000):
    imu_path = tmp_path / f"{name}.imu.csv"
    wav_path = tmp_path / f"{name}.wav"
    labels_path = tmp_path / f"{name}.labels.csv"
    if imu_rows is None:
        imu_rows = [f"{i * 20.0},0,0,0,0,0,0" for i in range(100)]
    imu_path.write_text("t_ms,ax,ay,az,gx,gy,gz\n" + "\n".join(imu_rows) + "\n")
    if wav is None:
        wav = np.zeros(2000, dtype=np.int16)
    wavfile.write(wav_path, rate, wav)
    if labels_rows is None:
        labels_rows = ["500,900,chop,kitchen"]
    labels_path.write_text("start_ms,end_ms,class,context\n" + "\n".join(labels_rows) + "\n")
    return imu_path, wav_path, labels_path


class TestLoadSession:
    def test_well_formed_triple(self, tmp_path):
        paths = write_triple(tmp_path)
        s = load_session(*paths)
        assert s.name == "s"
        assert s.imu.shape == (100, 6)
        assert s.audio.shape == (2000,)
        assert s.audio_rate == 1000
        assert s.labels[0].class_name == "chop"

    def test_overlapping_labels_rejected(self, tmp_path):
        paths = write_triple(tmp_path, labels_rows=["100,500,a,k", "400,800,b,k"])
        with pytest.raises(ValidationError, match="overlap"):
            load_session(*paths)

    def test_end_before_start_rejected(self, tmp_path):
        paths = write_triple(tmp_path, labels_rows=["500,400,a,k"])
        with pytest.raises(ValidationError):
            load_session(*paths)

    def test_stereo_wav_rejected(self, tmp_path):
        stereo = np.zeros((100, 2), dtype=np.int16)
        paths = write_triple(tmp_path, wav=stereo)
        with pytest.raises(FormatError, match="mono"):
            load_session(*paths)

    def test_non_pcm16_rejected(self, tmp_path):
        paths = write_triple(tmp_path, wav=np.zeros(100, dtype=np.float32))
        with pytest.raises(FormatError, match="PCM16"):
            load_session(*paths)

    def test_malformed_imu_row_names_line(self, tmp_path):
        rows = ["0,0,0,0,0,0,0", "20,not_a_number,0,0,0,0,0"]
        paths = write_triple(tmp_path, imu_rows=rows)
        with pytest.raises(ParseError, match="line 3"):
            load_session(*paths)

    def test_wrong_header_rejected(self, tmp_path):
        paths = write_triple(tmp_path)
        paths[0].write_text("time,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0,0\n")
        with pytest.raises(ParseError, match="header"):
            load_session(*paths)

    def test_field_count_mismatch(self, tmp_path):
        paths = write_triple(tmp_path, labels_rows=["100,200,a"])
        with pytest.raises(ParseError, match="line 2"):
            load_session(*paths)

    def test_rate_checked_against_preset(self, tmp_path):
        paths = write_triple(tmp_path, rate=16000)
        with pytest.raises(RateError):
            load_session(*paths, expected_audio_rate=1000)

    def test_unknown_class_rejected_when_vocabulary_given(self, tmp_path):
        paths = write_triple(tmp_path, labels_rows=["100,200,mystery,k"])
        with pytest.raises(ValidationError, match="mystery"):
            load_session(*paths, class_names=["chop", "saw"])


class TestSaveRoundTrip:
    def test_save_then_load(self, tmp_path):
        rng = np.random.default_rng(0)
        session = LabeledSession(
            name="fix", imu_t=np.arange(50) * 20.0,
            imu=rng.normal(size=(50, 6)).astype(np.float32),
            audio=(0.25 * rng.normal(size=1000)).clip(-1, 1).astype(np.float32),
            audio_rate=1000.0,
            labels=[LabelInterval(100.0, 400.0, "chop", "kitchen")])
        save_session(session, tmp_path)
        loaded = load_session(tmp_path / "fix.imu.csv", tmp_path / "fix.wav",
                              tmp_path / "fix.labels.csv")
        assert loaded.name == "fix"
        np.testing.assert_allclose(loaded.imu_t, session.imu_t)
        np.testing.assert_allclose(loaded.imu, session.imu, atol=1e-5)
        np.testing.assert_allclose(loaded.audio, session.audio, atol=1.0 / 32000)
        assert loaded.labels == session.labels


class TestHopMembership:
    def test_trailing_edge_semantics(self):
        lab = LabelInterval(1000.0, 2000.0, "a", "k")
        assert not lab.contains_hop(1000.0)   # window ends exactly at onset
        assert lab.contains_hop(1020.0)
        assert lab.contains_hop(2000.0)       # window ends exactly at offset
        assert not lab.contains_hop(2020.0)

    def test_context_lookup(self):
        session = LabeledSession(
            name="x", imu_t=np.arange(10) * 20.0, imu=np.zeros((10, 6)),
            audio=np.zeros(100), audio_rate=1000.0,
            labels=[LabelInterval(0.0, 100.0, "a", "kitchen"),
                    LabelInterval(150.0, 200.0, "b", "workshop")])
        assert session.context_at(50.0) == "kitchen"
        assert session.context_at(120.0) is None
        assert session.context_at(180.0) == "workshop"
