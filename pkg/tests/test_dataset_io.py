"""WAV decoding, canonicalization, label parsing, corpus scanning and splits."""
import json
import struct
import wave as stdlib_wave
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serboost.dataset_io import (
    CANONICAL_RATE,
    LABEL_SETS,
    CorpusKind,
    Waveform,
    allocate,
    load_wav,
    parse_label,
    parse_speaker,
    resample,
    scan_corpus,
    stratified_indices,
    stratified_split,
    to_canonical,
    write_wav,
)
from serboost.errors import (
    ClassTooSmall,
    EmptyAudio,
    EmptyCorpus,
    MalformedContainer,
    UnknownCode,
    UnrecognizedConvention,
    UnsupportedEncoding,
)


def _write_pcm16(path, frames, rate, channels=1):
    """Reference writer using the standard-library wave module."""
    data = np.asarray(frames, dtype="<i2")
    with stdlib_wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(data.tobytes())


def _riff(fmt_tag, channels, rate, bits, payload, extra_fmt=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits) + extra_fmt
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestLoadWav:
    def test_pcm16_endpoints(self, tmp_path):
        path = tmp_path / "two.wav"
        _write_pcm16(path, [32767, -32768], 16000)
        w = load_wav(path)
        np.testing.assert_allclose(w.samples, [32767 / 32768, -1.0], rtol=0, atol=0)
        assert w.sample_rate == 16000 and w.channels == 1

    def test_stereo_identical_channels_downmix(self, tmp_path):
        rng = np.random.default_rng(0)
        mono = rng.integers(-20000, 20000, 400)
        path = tmp_path / "st.wav"
        _write_pcm16(path, np.repeat(mono, 2), 16000, channels=2)
        w = load_wav(path)
        assert w.channels == 2 and w.samples.shape == (400, 2)
        canon = to_canonical(Waveform(w.samples, 16000, 2))
        np.testing.assert_array_equal(canon.samples, mono / 32768.0)

    def test_sine_44100(self, tmp_path):
        t = np.arange(44100) / 44100
        x = np.round(0.5 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16)
        path = tmp_path / "sine.wav"
        _write_pcm16(path, x, 44100)
        w = load_wav(path)
        assert len(w) == 44100 and w.sample_rate == 44100
        assert abs(w.samples.max() - 0.5) < 1e-3

    def test_float32(self, tmp_path):
        vals = np.array([0.25, -0.5, 1.0], dtype="<f4")
        path = tmp_path / "f.wav"
        path.write_bytes(_riff(3, 1, 8000, 32, vals.tobytes()))
        np.testing.assert_array_equal(load_wav(path).samples, vals.astype(np.float64))

    def test_extensible_pcm(self, tmp_path):
        guid = struct.pack("<I", 1) + b"\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
        extra = struct.pack("<HHI", 22, 16, 0) + guid
        payload = np.array([16384], dtype="<i2").tobytes()
        path = tmp_path / "ext.wav"
        path.write_bytes(_riff(0xFFFE, 1, 16000, 16, payload, extra))
        np.testing.assert_array_equal(load_wav(path).samples, [0.5])

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFX0000WAVE")
        with pytest.raises(MalformedContainer):
            load_wav(path)
        path.write_bytes(b"RIFF\x04\x00\x00\x00WAVE")
        with pytest.raises(MalformedContainer):
            load_wav(path)

    def test_compressed_codec_rejected(self, tmp_path):
        path = tmp_path / "mu.wav"
        path.write_bytes(_riff(7, 1, 8000, 8, b"\x00\x01"))
        with pytest.raises(UnsupportedEncoding):
            load_wav(path)

    def test_empty_audio(self, tmp_path):
        path = tmp_path / "empty.wav"
        path.write_bytes(_riff(1, 1, 16000, 16, b""))
        with pytest.raises(EmptyAudio):
            load_wav(path)

    def test_round_trip_within_one_lsb(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 5000)
        path = tmp_path / "rt.wav"
        write_wav(path, Waveform(x, 16000))
        np.testing.assert_allclose(load_wav(path).samples, x, atol=1 / 32768)

    def test_round_trip_float32(self, tmp_path):
        x = np.linspace(-1, 1, 101)
        path = tmp_path / "rt32.wav"
        write_wav(path, Waveform(x, 22050), encoding="float32")
        np.testing.assert_array_equal(load_wav(path).samples, x.astype(np.float32).astype(np.float64))


class TestCanonical:
    def test_identity_for_16k_mono(self):
        w = Waveform(np.linspace(-0.5, 0.5, 1000), 16000)
        out = to_canonical(w)
        assert out.sample_rate == CANONICAL_RATE
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_dc_preserved(self):
        out = to_canonical(Waveform(np.full(32000, 0.5), 32000))
        assert out.sample_rate == 16000
        np.testing.assert_allclose(out.samples[100:-100], 0.5, atol=1e-3)

    def test_sine_peak_after_decimation(self):
        t = np.arange(48000) / 48000
        out = to_canonical(Waveform(0.8 * np.sin(2 * np.pi * 1000 * t), 48000))
        seg = out.samples[4000:5024]
        spec = np.abs(np.fft.rfft(seg * np.hanning(1024)))
        peak_hz = np.argmax(spec) * 16000 / 1024
        assert abs(peak_hz - 1000) <= 16000 / 1024

    @pytest.mark.parametrize("rate", [8000, 11025, 22050, 44100, 48000])
    def test_duration_within_one_sample(self, rate):
        w = Waveform(np.zeros(rate // 3 + 7), rate)
        out = to_canonical(w)
        assert abs(len(out) - w.duration * 16000) <= 1

    def test_resample_matches_band_limited_reference(self):
        # low-frequency content should survive 22.05 -> 16 kHz essentially unchanged
        t_in = np.arange(22050) / 22050
        y = resample(np.sin(2 * np.pi * 300 * t_in), 22050, 16000)
        t_out = np.arange(len(y)) / 16000
        np.testing.assert_allclose(y[200:-200], np.sin(2 * np.pi * 300 * t_out)[200:-200], atol=5e-3)


class TestParseLabel:
    def test_emodb(self):
        assert parse_label("03a01Wa.wav", "emodb").name == "anger"
        assert parse_speaker("03a01Wa.wav", "emodb") == "03"

    def test_ravdess(self):
        assert parse_label("03-01-05-01-01-01-12.wav", "ravdess").name == "anger"
        assert parse_speaker("03-01-05-01-01-01-12.wav", "ravdess") == "12"

    def test_savee(self):
        assert parse_label("DC_sa03.wav", "savee").name == "sadness"
        assert parse_label("JK/su11.wav", "savee").name == "surprise"
        assert parse_speaker("JK/su11.wav", "savee") == "JK"

    def test_tess(self):
        assert parse_label("OAF_back_angry.wav", "tess").name == "anger"
        assert parse_label("YAF_bite_ps.wav", "tess").name == "surprise"

    def test_generic(self):
        assert parse_label("happy/clip1.wav", "generic").name == "happy"

    def test_errors(self):
        with pytest.raises(UnrecognizedConvention):
            parse_label("readme.wav", "emodb")
        with pytest.raises(UnknownCode):
            parse_label("03a01Xa.wav", "emodb")
        with pytest.raises(UnknownCode):
            parse_label("03-01-09-01-01-01-12.wav", "ravdess")

    def test_index_bijective(self):
        for kind, names in LABEL_SETS.items():
            assert len(set(names)) == len(names)
        assert parse_label("03-01-01-01-01-01-01.wav", "ravdess").index == 0

    @settings(max_examples=200, deadline=None)
    @given(spk=st.integers(3, 16), text=st.sampled_from("abcdefgh"), num=st.integers(1, 10),
           emo=st.sampled_from("WLEAFTN"), version=st.sampled_from("abcd"))
    def test_emodb_grammar_total(self, spk, text, num, emo, version):
        name = f"{spk:02d}{text}{num:02d}{emo}{version}.wav"
        assert parse_label(name, CorpusKind.EMODB).name in LABEL_SETS[CorpusKind.EMODB]

    @settings(max_examples=200, deadline=None)
    @given(fields=st.tuples(st.sampled_from(["01", "02", "03"]), st.sampled_from(["01", "02"]),
                            st.integers(1, 8), st.sampled_from(["01", "02"]), st.sampled_from(["01", "02"]),
                            st.sampled_from(["01", "02"]), st.integers(1, 24)))
    def test_ravdess_grammar_total(self, fields):
        a, b, emo, c, d, e, actor = fields
        label = parse_label(f"{a}-{b}-{emo:02d}-{c}-{d}-{e}-{actor:02d}.wav", "ravdess")
        assert label.index == emo - 1

    @settings(max_examples=100, deadline=None)
    @given(spk=st.sampled_from(["DC", "JE", "JK", "KL"]), code=st.sampled_from(["a", "d", "f", "h", "n", "sa", "su"]),
           num=st.integers(1, 30))
    def test_savee_grammar_total(self, spk, code, num):
        assert parse_label(f"{spk}_{code}{num:02d}.wav", "savee").name in LABEL_SETS[CorpusKind.SAVEE]

    @settings(max_examples=100, deadline=None)
    @given(spk=st.sampled_from(["OAF", "YAF"]), word=st.from_regex(r"[a-z]{2,8}", fullmatch=True),
           emo=st.sampled_from(["angry", "disgust", "fear", "happy", "neutral", "ps", "sad"]))
    def test_tess_grammar_total(self, spk, word, emo):
        assert parse_label(f"{spk}_{word}_{emo}.wav", "tess").name in LABEL_SETS[CorpusKind.TESS]


def _touch_wav(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(path, Waveform(np.zeros(160), 16000))


class TestScanCorpus:
    def test_counts_and_skip_report(self, tmp_path):
        for name in ["03a01Wa.wav", "03a02Ta.wav", "08b01Nb.wav"]:
            _touch_wav(tmp_path / name)
        _touch_wav(tmp_path / "weird.wav")
        c = scan_corpus(tmp_path, "emodb")
        assert c.total == 3
        assert [s[0] for s in c.skipped] == ["weird.wav"]
        assert sum(c.class_counts.values()) == c.total

    def test_generic_labels_from_directories(self, tmp_path):
        for lab in ["sad", "angry", "calm"]:
            _touch_wav(tmp_path / lab / "a.wav")
        (tmp_path / "README.txt").write_text("x")
        c = scan_corpus(tmp_path, "generic")
        assert c.labels == ("angry", "calm", "sad")
        assert [it.label.index for it in c.items] == [0, 1, 2]
        assert c.skipped[0][0] == "README.txt"

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyCorpus):
            scan_corpus(tmp_path, "generic")

    def test_order_independent_of_creation_order(self, tmp_path):
        names = [f"{lab}/c{i}.wav" for lab in ("x", "y") for i in range(4)]
        for order, sub in ((names, "a"), (names[::-1], "b")):
            for n in order:
                _touch_wav(tmp_path / sub / n)
        a = scan_corpus(tmp_path / "a", "generic")
        b = scan_corpus(tmp_path / "b", "generic")
        rel_a = [Path(it.path).relative_to(tmp_path / "a").as_posix() for it in a.items]
        rel_b = [Path(it.path).relative_to(tmp_path / "b").as_posix() for it in b.items]
        assert rel_a == rel_b == sorted(names)


class TestSplit:
    def test_allocate_examples(self):
        assert allocate(10) == [8, 1, 1]
        assert allocate(9) == [7, 1, 1]
        assert allocate(3) == [1, 1, 1]

    @given(n=st.integers(3, 500))
    def test_allocate_sums(self, n):
        counts = allocate(n)
        assert sum(counts) == n and min(counts) >= 1
        for c, f in zip(counts, (0.8, 0.1, 0.1)):
            assert abs(c - n * f) < 2

    def test_partition_property_and_determinism(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 5, 237)
        a = stratified_indices(labels, seed=4)
        b = stratified_indices(labels, seed=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        allidx = np.concatenate(a)
        assert len(allidx) == len(set(allidx.tolist())) == len(labels)
        for cls in range(5):
            n = int((labels == cls).sum())
            got = [int((labels[p] == cls).sum()) for p in a]
            assert got == allocate(n)

    def test_different_seed_different_split(self):
        labels = np.repeat(np.arange(3), 30)
        assert not np.array_equal(stratified_indices(labels, 0)[1], stratified_indices(labels, 1)[1])

    def test_class_too_small(self):
        with pytest.raises(ClassTooSmall):
            stratified_indices(np.array([0, 0, 0, 1, 1]), 0)

    def test_manifest_json(self, tmp_path):
        for lab in ["a", "b"]:
            for i in range(10):
                _touch_wav(tmp_path / lab / f"{i}.wav")
        split = stratified_split(scan_corpus(tmp_path, "generic"), seed=7)
        assert (split.train.total, split.validation.total, split.test.total) == (16, 2, 2)
        obj = json.loads(split.manifest_json())
        assert list(obj) == ["seed", "fractions", "items"]
        assert list(obj["items"][0]) == ["path", "label", "partition"]
        assert split.manifest_json() == stratified_split(scan_corpus(tmp_path, "generic"), seed=7).manifest_json()
