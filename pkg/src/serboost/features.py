"""The 90-dimensional per-recording acoustic feature set."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp
from .dataset_io import CANONICAL_RATE, Corpus, Waveform, load_wav, to_canonical
from .errors import DataError, ManifestMismatch, SignalTooShort

log = logging.getLogger(__name__)

MANIFEST_VERSION = "serboost-features/1"
MIN_DURATION_S = 0.2

SERIES = (
    ("fft", "per-frame mean FFT magnitude"),
    ("pitch", "autocorrelation F0 of voiced frames (Hz)"),
    ("energy", "per-frame mean-square energy"),
    ("zcr", "per-frame zero-crossing rate"),
    ("centroid", "spectral centroid (Hz)"),
    ("rolloff", "85% spectral rolloff frequency (Hz)"),
    ("mff", "mel frequency flux"),
    ("mfcc", "MFCC values pooled over frames and coefficients"),
    ("dmfcc", "first-order MFCC deltas pooled"),
)
SCALARS = (
    ("shimmer", "local amplitude perturbation of consecutive cycles"),
    ("jitter", "local period perturbation of consecutive cycles"),
    ("duration_s", "recording length in seconds"),
    ("voiced_ratio", "fraction of voiced pitch frames"),
    ("speech_rate_proxy", "energy peaks per second (rhythm stand-in)"),
    ("pause_ratio", "fraction of frames below 1% of peak energy (rhythm stand-in)"),
    ("hnr_proxy", "mean autocorrelation peak of voiced frames"),
    ("peak_amplitude", "maximum absolute sample"),
    ("dynamic_range_db", "frame energy range in dB"),
)


def feature_name(stat: str, series: str) -> str:
    # the flux mean keeps the bare "mff" name used in the literature
    if series == "mff" and stat == "mean":
        return "mff"
    return f"{stat}_{series}"


@dataclass(frozen=True)
class FeatureManifest:
    entries: tuple[tuple[str, str, str], ...]
    version: str = MANIFEST_VERSION
    notes: str = "speech_rate_proxy and pause_ratio stand in for rhythm descriptors"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e[0] for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "notes": self.notes,
                "entries": [{"name": n, "descriptor": d, "statistic": s} for n, d, s in self.entries],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureManifest":
        obj = json.loads(text)
        entries = tuple((e["name"], e["descriptor"], e["statistic"]) for e in obj["entries"])
        return cls(entries, obj["version"], obj.get("notes", ""))


def default_manifest() -> FeatureManifest:
    entries = [(feature_name(stat, series), desc, stat) for series, desc in SERIES for stat in dsp.STATISTICS]
    entries += [(name, desc, "scalar") for name, desc in SCALARS]
    return FeatureManifest(tuple(entries))


MANIFEST = default_manifest()


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    path: str | None = None
    label: str | None = None


def _speech_rate(energy: np.ndarray, duration: float) -> float:
    if energy.max() <= 0 or len(energy) < 3:
        return 0.0
    smooth = np.convolve(energy, np.ones(5) / 5, mode="same")
    mid = smooth[1:-1]
    peaks = (mid > smooth[:-2]) & (mid >= smooth[2:]) & (mid > 0.1 * smooth.max())
    return float(np.count_nonzero(peaks) / duration)


def descriptor_series(samples: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Frame-level series and scalar descriptors of a canonical signal."""
    frames = dsp.frame_signal(samples)
    mags = dsp.spectrum(frames)
    freqs = np.arange(mags.shape[1]) * CANONICAL_RATE / dsp.NFFT
    lm = dsp.log_mel(frames)
    coeffs = dsp.cepstrum(lm)
    energy = np.mean(frames ** 2, axis=1)

    total_mag = mags.sum(axis=1)
    safe = np.where(total_mag > 0, total_mag, 1.0)
    centroid = np.where(total_mag > 0, mags @ freqs / safe, 0.0)
    power = mags ** 2
    cum = np.cumsum(power, axis=1)
    has_power = cum[:, -1] > 0
    roll_bin = np.argmax(cum >= dsp.ROLLOFF * cum[:, -1:], axis=1)
    rolloff = np.where(has_power, freqs[roll_bin], 0.0)
    signs = np.signbit(frames)
    zcr = np.mean(signs[:, 1:] != signs[:, :-1], axis=1)
    zcr = np.where(energy > 0, zcr, 0.0)

    pitch = dsp.pitch_track(samples)
    voiced = pitch.voiced
    duration = len(samples) / CANONICAL_RATE
    emax = energy.max()
    series = {
        "fft": mags.mean(axis=1),
        "pitch": pitch.f0[voiced] if voiced.any() else np.zeros(1),
        "energy": energy,
        "zcr": zcr,
        "centroid": centroid,
        "rolloff": rolloff,
        "mff": dsp.mel_flux(lm).values,
        "mfcc": coeffs.ravel(),
        "dmfcc": dsp.deltas(coeffs).ravel(),
    }
    scalars = {
        "shimmer": dsp.shimmer(samples, pitch),
        "jitter": dsp.jitter(samples, pitch),
        "duration_s": duration,
        "voiced_ratio": float(voiced.mean()) if len(voiced) else 0.0,
        "speech_rate_proxy": _speech_rate(energy, duration),
        "pause_ratio": float(np.mean(energy < 0.01 * emax)) if emax > 0 else 1.0,
        "hnr_proxy": float(pitch.strength[voiced].mean()) if voiced.any() else 0.0,
        "peak_amplitude": float(np.max(np.abs(samples))),
        "dynamic_range_db": float(10.0 * np.log10((emax + 1e-10) / (energy.min() + 1e-10))),
    }
    return series, scalars


def extract_feature_vector(wave: Waveform, manifest: FeatureManifest = MANIFEST,
                           path: str | None = None, label: str | None = None) -> FeatureVector:
    wave = to_canonical(wave)
    if wave.duration < MIN_DURATION_S:
        raise SignalTooShort(f"{wave.duration:.3f} s recording; need at least {MIN_DURATION_S} s")
    series, scalars = descriptor_series(np.asarray(wave.samples))
    stats = {name: dsp.summarize(values) for name, values in series.items()}
    flat = dict(scalars)
    for name, _ in SERIES:
        for stat, value in stats[name].items():
            flat[feature_name(stat, name)] = value
    values = np.array([flat[name] for name in manifest.names], dtype=np.float64)
    values = np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0)
    return FeatureVector(values, path, label)


# --------------------------------------------------------------------------
# Matrix, persistence and normalization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZScoreParams:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    labels: tuple[str, ...]
    names: tuple[str, ...]
    paths: tuple[str, ...] | None = None
    params: ZScoreParams | None = field(default=None, repr=False)
    version: str = MANIFEST_VERSION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ValueError(f"matrix shape {values.shape} does not match {len(self.names)} names")
        if len(self.labels) != values.shape[0]:
            raise ValueError("labels are not aligned to rows")
        if self.paths is not None and len(self.paths) != values.shape[0]:
            raise ValueError("paths are not aligned to rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return self.values.shape[0]

    def rows(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        paths = None if self.paths is None else tuple(self.paths[i] for i in idx)
        return replace(self, values=self.values[idx], labels=tuple(self.labels[i] for i in idx), paths=paths)

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(self.names) + ["label", "path"])
        paths = self.paths or ("",) * len(self)
        for row, label, path in zip(self.values, self.labels, paths):
            writer.writerow([format(float(v), ".17g") for v in row] + [label, path])
        return buf.getvalue()

    def write(self, path, manifest: FeatureManifest | None = None) -> None:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8", newline="")
        if manifest is not None:
            Path(str(path) + ".manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path, manifest: FeatureManifest | None = None) -> "FeatureMatrix":
        path = Path(path)
        side = Path(str(path) + ".manifest.json")
        if manifest is None and side.exists():
            manifest = FeatureManifest.from_json(side.read_text(encoding="utf-8"))
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-2:] != ["label", "path"]:
                raise DataError(f"{path}: header must end with label,path")
            names = tuple(header[:-2])
            rows, labels, paths = [], [], []
            for rec in reader:
                if not rec:
                    continue
                rows.append([float(v) for v in rec[:-2]])
                labels.append(rec[-2])
                paths.append(rec[-1])
        if manifest is not None:
            if side.exists():
                stored = FeatureManifest.from_json(side.read_text(encoding="utf-8"))
                if stored.version != manifest.version:
                    raise ManifestMismatch(f"{path}: manifest version {stored.version} != {manifest.version}")
            if names != manifest.names:
                raise ManifestMismatch(f"{path}: columns do not match manifest {manifest.version}")
        values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
        return cls(values, tuple(labels), names, tuple(paths),
                   version=manifest.version if manifest else MANIFEST_VERSION)


def zscore_fit(train) -> ZScoreParams:
    """Column means and population standard deviations; flat columns divide by 1."""
    values = train.values if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=np.float64)
    if len(values) == 0:
        raise DataError("cannot fit normalization on an empty matrix")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return ZScoreParams(mean, std)


def zscore_apply(params: ZScoreParams, matrix):
    if isinstance(matrix, FeatureMatrix):
        return replace(matrix, values=params.apply(matrix.values), params=params)
    return params.apply(matrix)


# --------------------------------------------------------------------------
# Corpus-level extraction
# --------------------------------------------------------------------------

def _extract_item(item):
    wave = load_wav(item.path)
    return extract_feature_vector(wave, MANIFEST, item.path, item.label.name)


def extract_corpus(corpus: Corpus, threads: int = 1, max_skip: int | None = None):
    """Feature rows for every decodable clip, in corpus order.

    Returns ``(matrix, skipped)``; ``skipped`` lists ``(path, reason)`` for
    clips that failed to decode. More than ``max_skip`` failures raise.
    """
    def safe(item):
        try:
            return _extract_item(item)
        except DataError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(safe, corpus.items))
    else:
        results = [safe(item) for item in corpus.items]
    rows, skipped = [], []
    for item, res in zip(corpus.items, results):
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", item.path, res)
            skipped.append((item.path, str(res)))
        else:
            rows.append(res)
    if max_skip is not None and len(skipped) > max_skip:
        raise DataError(f"{len(skipped)} clips failed to decode (max-skip {max_skip})")
    if not rows:
        raise DataError("no clip could be decoded")
    values = np.vstack([r.values for r in rows])
    return FeatureMatrix(values, tuple(r.label for r in rows), MANIFEST.names, tuple(r.path for r in rows)), skipped


def relative_paths(matrix: FeatureMatrix, root) -> FeatureMatrix:
    if matrix.paths is None:
        return matrix
    root = Path(root)
    rel = tuple(Path(p).relative_to(root).as_posix() if Path(p).is_relative_to(root) else p for p in matrix.paths)
    return replace(matrix, paths=rel)


# Descriptors commonly reported as most discriminative for emotion; each
# must resolve to exactly one manifest entry.
KEY_FEATURES = ("q1_fft", "mff", "median_fft", "q1_pitch", "q3_pitch", "mean_fft",
                "minv_mfcc", "shimmer", "mean_pitch", "skew_mfcc")
