"""WAV decoding, canonical 16 kHz mono conversion, corpus scanning and splits."""
from __future__ import annotations

import enum
import json
import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ClassTooSmall,
    EmptyAudio,
    EmptyCorpus,
    MalformedContainer,
    UnknownCode,
    UnrecognizedConvention,
    UnsupportedEncoding,
)

CANONICAL_RATE = 16000
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
PARTITIONS = ("train", "validation", "test")

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class Waveform:
    """Decoded audio.

    ``samples`` is 1-D for mono and ``(frames, channels)`` otherwise; values
    are floats in [-1, 1]. The array is made read-only on construction.
    """

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if self.channels == 1 and samples.ndim == 2 and samples.shape[1] == 1:
            samples = samples[:, 0]
        expected_ndim = 1 if self.channels == 1 else 2
        if samples.ndim != expected_ndim:
            raise ValueError(f"samples shape {samples.shape} does not match {self.channels} channel(s)")
        if samples.shape[0] == 0:
            raise EmptyAudio("waveform has zero frames")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        samples = samples.copy() if samples.flags.writeable else samples
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


# --------------------------------------------------------------------------
# WAV container
# --------------------------------------------------------------------------

def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise MalformedContainer(f"truncated {cid!r} chunk")
        yield cid, body
        pos += 8 + size + (size & 1)


def load_wav(path) -> Waveform:
    """Decode a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedContainer(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedContainer(f"{path}: extensible fmt chunk too short")
                sub_format = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub_format,) + fmt[1:]
        elif cid == b"data":
            payload = body
            break
    if fmt is None or payload is None:
        raise MalformedContainer(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or channels > 2:
        raise UnsupportedEncoding(f"{path}: {channels} channels (1 or 2 supported)")
    if rate <= 0:
        raise MalformedContainer(f"{path}: sample rate {rate}")
    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"{path}: format tag {tag:#06x} with {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise MalformedContainer(f"{path}: block align {block_align} inconsistent with format")

    n_frames = len(payload) // block_align
    if n_frames == 0:
        raise EmptyAudio(f"{path}: no audio frames")
    raw = np.frombuffer(payload[: n_frames * block_align], dtype=dtype).astype(np.float64)
    samples = raw / scale
    if not np.all(np.isfinite(samples)):
        raise MalformedContainer(f"{path}: non-finite float samples")
    samples = np.clip(samples, -1.0, 1.0)
    if channels > 1:
        samples = samples.reshape(n_frames, channels)
    return Waveform(samples, int(rate), int(channels))


def write_wav(path, wave: Waveform, encoding: str = "pcm16") -> None:
    """Write ``wave`` as PCM16 (default) or float32 RIFF/WAVE."""
    samples = np.asarray(wave.samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    channels = samples.shape[1]
    if encoding == "pcm16":
        tag, width = _FORMAT_PCM, 2
        pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    elif encoding == "float32":
        tag, width = _FORMAT_FLOAT, 4
        pcm = samples.astype("<f4")
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    body = pcm.tobytes()
    block_align = channels * width
    fmt = struct.pack(
        "<HHIIHH", tag, channels, wave.sample_rate, wave.sample_rate * block_align, block_align, width * 8
    )
    riff_size = 4 + (8 + len(fmt)) + (8 + len(body)) + (len(body) & 1)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(body)) + body)
        if len(body) & 1:
            fh.write(b"\x00")


# --------------------------------------------------------------------------
# Canonical format
# --------------------------------------------------------------------------

RESAMPLER_TAPS = 64
RESAMPLER_BETA = 8.6


def _polyphase_bank(up: int, down: int, taps: int = RESAMPLER_TAPS, beta: float = RESAMPLER_BETA):
    """One row of ``taps`` windowed-sinc weights per output phase.

    Output sample ``n`` sits at input position ``n * down / up``; its phase is
    ``(n * down) % up``. Rows are normalized to unit sum so DC passes exactly.
    """
    half = taps // 2
    cutoff = min(1.0, up / down)
    phases = np.arange(up)[:, None] / up
    offsets = np.arange(-half + 1, half + 1)[None, :]
    dist = phases - offsets
    window = np.i0(beta * np.sqrt(np.clip(1.0 - (dist / half) ** 2, 0.0, None))) / np.i0(beta)
    bank = cutoff * np.sinc(cutoff * dist) * window
    bank /= bank.sum(axis=1, keepdims=True)
    return bank, offsets[0]


def resample(signal: np.ndarray, rate_in: int, rate_out: int, chunk: int = 1 << 15) -> np.ndarray:
    """Rational-ratio resampling with a 64-tap Kaiser windowed-sinc polyphase filter."""
    if rate_in == rate_out:
        return np.asarray(signal, dtype=np.float64)
    g = math.gcd(rate_in, rate_out)
    up, down = rate_out // g, rate_in // g
    bank, offsets = _polyphase_bank(up, down)
    n_in = len(signal)
    n_out = max(1, (n_in * up + down // 2) // down)
    pad = RESAMPLER_TAPS
    padded = np.concatenate([np.zeros(pad), np.asarray(signal, dtype=np.float64), np.zeros(pad)])
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(n_out, start + chunk), dtype=np.int64)
        pos = n * down
        base = pos // up
        phase = pos % up
        idx = base[:, None] + offsets[None, :] + pad
        out[start : start + len(n)] = np.einsum("ij,ij->i", padded[idx], bank[phase])
    return out


def to_canonical(wave: Waveform) -> Waveform:
    """Downmix to mono by channel mean and resample to 16 kHz."""
    if wave.channels == 1 and wave.sample_rate == CANONICAL_RATE:
        return wave
    mono = wave.samples if wave.channels == 1 else wave.samples.mean(axis=1)
    out = resample(mono, wave.sample_rate, CANONICAL_RATE)
    return Waveform(np.clip(out, -1.0, 1.0), CANONICAL_RATE, 1)


# --------------------------------------------------------------------------
# Labels
# --------------------------------------------------------------------------

class CorpusKind(str, enum.Enum):
    TESS = "tess"
    EMODB = "emodb"
    RAVDESS = "ravdess"
    SAVEE = "savee"
    GENERIC = "generic"

    @classmethod
    def parse(cls, value) -> "CorpusKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown corpus kind {value!r}; expected one of {[k.value for k in cls]}")


LABEL_SETS: dict[CorpusKind, tuple[str, ...]] = {
    CorpusKind.EMODB: ("anger", "boredom", "disgust", "fear", "happiness", "sadness", "neutral"),
    CorpusKind.TESS: ("anger", "disgust", "fear", "happiness", "neutral", "surprise", "sadness"),
    CorpusKind.RAVDESS: ("neutral", "calm", "happiness", "sadness", "anger", "fear", "disgust", "surprise"),
    CorpusKind.SAVEE: ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise"),
}

# EMO-DB letters follow the German emotion names.
_EMODB_CODES = {"W": "anger", "L": "boredom", "E": "disgust", "A": "fear", "F": "happiness", "T": "sadness", "N": "neutral"}
_RAVDESS_CODES = {f"{i + 1:02d}": name for i, name in enumerate(LABEL_SETS[CorpusKind.RAVDESS])}
_SAVEE_CODES = {"a": "anger", "d": "disgust", "f": "fear", "h": "happiness", "n": "neutral", "sa": "sadness", "su": "surprise"}
_TESS_CODES = {
    "angry": "anger", "disgust": "disgust", "fear": "fear", "happy": "happiness",
    "neutral": "neutral", "ps": "surprise", "sad": "sadness",
}

_EMODB_RE = re.compile(r"^(\d{2})([a-z]\d{2})([A-Za-z])([a-z]?)\.wav$", re.IGNORECASE)
_RAVDESS_RE = re.compile(r"^(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})\.wav$", re.IGNORECASE)
_SAVEE_RE = re.compile(r"^(?:([A-Za-z]{2})_)?([a-z]{1,2})(\d{2})\.wav$", re.IGNORECASE)
_TESS_RE = re.compile(r"^([A-Za-z]+)_(.+)_([A-Za-z]+)\.wav$", re.IGNORECASE)


@dataclass(frozen=True)
class EmotionLabel:
    """Emotion name plus its index in the corpus kind's closed label set.

    GENERIC labels are indexed by the scanned corpus; until then index is -1.
    """

    name: str
    index: int


def _parse(path: Path, kind: CorpusKind) -> tuple[str, str | None]:
    name = path.name
    if kind is CorpusKind.GENERIC:
        parent = path.parent.name
        if not parent or not name.lower().endswith(".wav"):
            raise UnrecognizedConvention(f"{path}: GENERIC files must be <label>/<clip>.wav")
        return parent, None
    if kind is CorpusKind.EMODB:
        m = _EMODB_RE.match(name)
        if not m:
            raise UnrecognizedConvention(f"{name}: not an EMO-DB filename")
        code = m.group(3).upper()
        if code not in _EMODB_CODES:
            raise UnknownCode(f"{name}: EMO-DB emotion letter {code!r}")
        return _EMODB_CODES[code], m.group(1)
    if kind is CorpusKind.RAVDESS:
        m = _RAVDESS_RE.match(name)
        if not m:
            raise UnrecognizedConvention(f"{name}: not a RAVDESS filename")
        code = m.group(3)
        if code not in _RAVDESS_CODES:
            raise UnknownCode(f"{name}: RAVDESS emotion code {code!r}")
        return _RAVDESS_CODES[code], m.group(7)
    if kind is CorpusKind.SAVEE:
        m = _SAVEE_RE.match(name)
        if not m:
            raise UnrecognizedConvention(f"{name}: not a SAVEE filename")
        code = m.group(2).lower()
        if code not in _SAVEE_CODES:
            raise UnknownCode(f"{name}: SAVEE emotion code {code!r}")
        speaker = m.group(1) or path.parent.name or None
        return _SAVEE_CODES[code], speaker
    if kind is CorpusKind.TESS:
        m = _TESS_RE.match(name)
        if not m:
            raise UnrecognizedConvention(f"{name}: not a TESS filename")
        code = m.group(3).lower()
        if code not in _TESS_CODES:
            raise UnknownCode(f"{name}: TESS emotion word {code!r}")
        return _TESS_CODES[code], m.group(1).upper()
    raise ValueError(kind)


def parse_label(path, kind) -> EmotionLabel:
    kind = CorpusKind.parse(kind)
    name, _ = _parse(Path(path), kind)
    index = LABEL_SETS[kind].index(name) if kind in LABEL_SETS else -1
    return EmotionLabel(name, index)


def parse_speaker(path, kind) -> str | None:
    return _parse(Path(path), CorpusKind.parse(kind))[1]


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusItem:
    path: str
    label: EmotionLabel
    speaker: str | None = None


@dataclass(frozen=True)
class Corpus:
    kind: CorpusKind
    items: tuple[CorpusItem, ...]
    labels: tuple[str, ...]
    skipped: tuple[tuple[str, str], ...] = ()
    root: str | None = None

    @property
    def total(self) -> int:
        return len(self.items)

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.labels}
        for item in self.items:
            counts[item.label.name] += 1
        return {k: v for k, v in counts.items() if v}

    def label_indices(self) -> np.ndarray:
        return np.array([item.label.index for item in self.items], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(self.kind, tuple(self.items[i] for i in indices), self.labels, (), self.root)

    def summary(self) -> dict:
        return {
            "kind": self.kind.value,
            "root": self.root,
            "total": self.total,
            "classes": len(self.class_counts),
            "class_counts": self.class_counts,
            "skipped": [{"path": p, "reason": r} for p, r in self.skipped],
        }


def scan_corpus(root, kind) -> Corpus:
    """Recursively collect labeled clips under ``root``.

    Files that do not follow the naming convention end up in ``skipped``
    together with the reason. Items are ordered by their path relative to
    ``root`` so the result does not depend on directory enumeration order.
    """
    kind = CorpusKind.parse(kind)
    root = Path(root)
    if not root.is_dir():
        raise EmptyCorpus(f"{root}: not a readable directory")
    found: list[tuple[str, Path]] = []
    for dirpath, _, filenames in os.walk(root):
        for fname in filenames:
            full = Path(dirpath) / fname
            found.append((full.relative_to(root).as_posix(), full))
    found.sort(key=lambda t: t[0])

    parsed: list[tuple[str, str, str | None]] = []
    skipped: list[tuple[str, str]] = []
    for rel, full in found:
        if not fname_is_wav(rel):
            skipped.append((rel, "not a .wav file"))
            continue
        try:
            name, speaker = _parse(full, kind)
        except (UnrecognizedConvention, UnknownCode) as exc:
            skipped.append((rel, str(exc)))
            continue
        if kind is CorpusKind.GENERIC and full.parent == root:
            skipped.append((rel, "GENERIC clips must sit in a label directory"))
            continue
        parsed.append((str(full), name, speaker))

    if not parsed:
        raise EmptyCorpus(f"{root}: no parseable {kind.value} recordings")
    if kind is CorpusKind.GENERIC:
        label_set = tuple(sorted({name for _, name, _ in parsed}))
    else:
        label_set = LABEL_SETS[kind]
    items = tuple(
        CorpusItem(path, EmotionLabel(name, label_set.index(name)), speaker) for path, name, speaker in parsed
    )
    return Corpus(kind, items, label_set, tuple(skipped), str(root))


def fname_is_wav(name: str) -> bool:
    return name.lower().endswith(".wav")


# --------------------------------------------------------------------------
# Stratified split
# --------------------------------------------------------------------------

def allocate(n: int, fractions: Sequence[float] = SPLIT_FRACTIONS) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to earlier partitions.

    With three or more items every partition receives at least one.
    """
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    if n >= len(fractions):
        for i in range(1, len(counts)):
            if counts[i] == 0:
                counts[i] = 1
                counts[0] -= 1
    return counts


def stratified_indices(labels, seed: int, fractions: Sequence[float] = SPLIT_FRACTIONS, min_per_class: int = 3):
    """Per-class seeded shuffle followed by largest-remainder partitioning.

    Returns one sorted index array per fraction.
    """
    labels = np.asarray(labels)
    parts: list[list[int]] = [[] for _ in fractions]
    for ci, cls in enumerate(np.unique(labels)):
        members = np.flatnonzero(labels == cls)
        if len(members) < min_per_class:
            raise ClassTooSmall(f"class {cls!r} has {len(members)} items; need at least {min_per_class}")
        rng = np.random.default_rng([int(seed), ci])
        members = members[rng.permutation(len(members))]
        start = 0
        for part, count in zip(parts, allocate(len(members), fractions)):
            part.extend(members[start : start + count].tolist())
            start += count
    return tuple(np.array(sorted(p), dtype=np.int64) for p in parts)


@dataclass(frozen=True)
class SplitCorpus:
    train: Corpus
    validation: Corpus
    test: Corpus
    seed: int
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    indices: tuple[np.ndarray, np.ndarray, np.ndarray] = field(default=None, repr=False)

    def manifest(self) -> dict:
        rows = []
        for part, corpus in zip(PARTITIONS, (self.train, self.validation, self.test)):
            rows.extend({"path": it.path, "label": it.label.name, "partition": part} for it in corpus.items)
        rows.sort(key=lambda r: r["path"])
        return {"seed": self.seed, "fractions": list(self.fractions), "items": rows}

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2)


def stratified_split(corpus: Corpus, seed: int) -> SplitCorpus:
    idx = stratified_indices(corpus.label_indices(), seed)
    train, val, test = (corpus.subset(i) for i in idx)
    return SplitCorpus(train, val, test, seed, SPLIT_FRACTIONS, idx)
