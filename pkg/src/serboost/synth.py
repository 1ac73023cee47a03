"""Seeded synthetic data with known ground truth: planted-signal tables and vowel-timbre audio."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import Waveform, write_wav
from .features import FeatureMatrix

# first two formant frequencies (Hz) of three well-separated vowels
VOWELS = {"ah": (730.0, 1090.0), "ee": (270.0, 2290.0), "oo": (300.0, 870.0)}


@dataclass(frozen=True)
class PlantedData:
    matrix: FeatureMatrix
    informative: tuple[str, ...]


def make_planted(n: int = 600, n_features: int = 30, n_informative: int = 5, n_classes: int = 3,
                 seed: int = 0, separation: float = 1.5, extra_noise: int = 0) -> PlantedData:
    """Gaussian classes whose means differ only on ``n_informative`` columns.

    Informative column ``j`` places class ``c`` at ``separation * ((c + j) % E - (E-1)/2)``,
    so each one alone separates every class pair.  All other columns are
    standard normal noise; ``extra_noise`` appends more noise columns.
    Column positions of the informative features are shuffled.
    """
    rng = np.random.default_rng([int(seed), 1])
    total = n_features + extra_noise
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    x = rng.standard_normal((n, total))
    where = np.sort(rng.choice(total - extra_noise, size=n_informative, replace=False))
    for j, col in enumerate(where):
        level = (labels + j) % n_classes - (n_classes - 1) / 2
        x[:, col] += separation * level
    names = tuple(f"f{i:02d}" for i in range(total))
    matrix = FeatureMatrix(x, tuple(f"c{c}" for c in labels), names,
                           paths=tuple(f"row{i:04d}" for i in range(n)))
    return PlantedData(matrix, tuple(names[i] for i in where))


def vowel(formants, f0: float, duration: float, sample_rate: int, rng) -> np.ndarray:
    """Harmonic source with slight vibrato shaped by two formant resonances."""
    t = np.arange(int(duration * sample_rate)) / sample_rate
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    out = np.zeros_like(t)
    for h in range(1, int(0.45 * sample_rate / f0)):
        fh = h * f0
        gain = sum(1.0 / (1.0 + ((fh - fm) / 90.0) ** 2) for fm in formants) / h ** 0.5
        out += gain * np.sin(h * phase)
    envelope = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.03)
    out = out * envelope + 0.002 * rng.standard_normal(len(t))
    return 0.6 * out / np.max(np.abs(out))


def write_vowel_corpus(root, clips_per_class: int = 20, seed: int = 0, sample_rates=(16000, 22050)) -> Path:
    """Write ``root/<vowel>/clip_XX.wav`` for each vowel class; rates alternate between ``sample_rates``."""
    root = Path(root)
    rng = np.random.default_rng([int(seed), 2])
    for name, formants in VOWELS.items():
        (root / name).mkdir(parents=True, exist_ok=True)
        for i in range(clips_per_class):
            rate = sample_rates[i % len(sample_rates)]
            f0 = rng.uniform(100.0, 220.0)
            duration = rng.uniform(0.5, 0.8)
            shifted = tuple(f * rng.uniform(0.95, 1.05) for f in formants)
            samples = vowel(shifted, f0, duration, rate, rng)
            write_wav(root / name / f"clip_{i:02d}.wav", Waveform(samples, rate))
    return root
