"""Short-time analysis primitives for 16 kHz mono speech."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import EmptySeries, SignalTooShort

SAMPLE_RATE = 16000
FRAME_MS = 25
HOP_MS = 10
PITCH_FRAME_MS = 40
PREEMPHASIS = 0.97
NFFT = 512
N_MELS = 26
N_MFCC = 13
LOG_FLOOR = 1e-10
PITCH_FMIN = 50.0
PITCH_FMAX = 400.0
VOICING_THRESHOLD = 0.3
OCTAVE_GUARD = 0.9
ROLLOFF = 0.85

STATISTICS = ("mean", "median", "std", "minv", "maxv", "q1", "q3", "skew", "kurt")


@dataclass(frozen=True)
class FrameSeries:
    name: str
    values: np.ndarray
    frame_len: int
    hop: int


def n_frames(length: int, frame_len: int, hop: int) -> int:
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


def _frame_view(signal: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    count = n_frames(len(signal), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(count)[:, None]
    return signal[idx]


def frame_signal(samples, sample_rate: int = SAMPLE_RATE, frame_ms: float = FRAME_MS, hop_ms: float = HOP_MS,
                 preemphasis: float = PREEMPHASIS) -> np.ndarray:
    """Pre-emphasize, slice into overlapping frames and apply a Hamming window."""
    x = np.asarray(samples, dtype=np.float64)
    frame_len = int(round(sample_rate * frame_ms / 1000))
    hop = int(round(sample_rate * hop_ms / 1000))
    if len(x) < frame_len:
        raise SignalTooShort(f"{len(x)} samples is shorter than one {frame_len}-sample frame")
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - preemphasis * x[:-1]
    return _frame_view(emphasized, frame_len, hop) * np.hamming(frame_len)


def spectrum(frames, nfft: int = NFFT) -> np.ndarray:
    """Magnitudes of the zero-padded real FFT, bins 0..nfft/2."""
    return np.abs(np.fft.rfft(frames, n=nfft, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, nfft: int = NFFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters evaluated at bin frequencies, each row summing to 1.

    Unit-sum rows mean a flat power spectrum yields equal band energies.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    bank = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank / bank.sum(axis=1, keepdims=True)


def log_mel(frames, sample_rate: int = SAMPLE_RATE, nfft: int = NFFT, n_mels: int = N_MELS) -> np.ndarray:
    power = spectrum(frames, nfft) ** 2 / nfft
    energies = power @ mel_filterbank(n_mels, nfft, sample_rate).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def cepstrum(log_mel_frames, n_mfcc: int = N_MFCC) -> np.ndarray:
    return dct(log_mel_frames, type=2, axis=-1, norm="ortho")[..., :n_mfcc]


def mfcc(frames, sample_rate: int = SAMPLE_RATE, n_mfcc: int = N_MFCC) -> np.ndarray:
    """13 cepstral coefficients per frame from a 26-band log-mel spectrum."""
    return cepstrum(log_mel(frames, sample_rate), n_mfcc)


def deltas(coefficients: np.ndarray) -> np.ndarray:
    """First-order frame differences; a single frame yields a zero row."""
    if len(coefficients) < 2:
        return np.zeros_like(coefficients)
    return np.diff(coefficients, axis=0)


def mel_flux(log_mel_frames) -> FrameSeries:
    lm = np.asarray(log_mel_frames, dtype=np.float64)
    if len(lm) < 2:
        raise SignalTooShort("mel flux needs at least two frames")
    flux = np.zeros(len(lm))
    flux[1:] = np.sqrt(np.sum(np.diff(lm, axis=0) ** 2, axis=1))
    return FrameSeries("mff", flux, 0, 0)


# --------------------------------------------------------------------------
# Pitch
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PitchTrack:
    f0: np.ndarray          # Hz, 0 for unvoiced frames
    strength: np.ndarray    # normalized autocorrelation at the chosen lag
    frame_len: int
    hop: int

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def series(self) -> FrameSeries:
        return FrameSeries("pitch", self.f0[self.voiced], self.frame_len, self.hop)


def normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """r(lag) / sqrt(E_head * E_tail) for lags 0..max_lag, per frame."""
    length = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * length)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, : max_lag + 1]
    sq = np.cumsum(frames ** 2, axis=1)
    total = sq[:, -1:]
    lags = np.arange(max_lag + 1)
    head = sq[:, length - 1 - lags]
    tail = total - np.concatenate([np.zeros((len(frames), 1)), sq[:, lags[1:] - 1]], axis=1)
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, acf / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def pitch_track(samples, sample_rate: int = SAMPLE_RATE, frame_ms: float = PITCH_FRAME_MS,
                hop_ms: float = HOP_MS, fmin: float = PITCH_FMIN, fmax: float = PITCH_FMAX,
                threshold: float = VOICING_THRESHOLD) -> PitchTrack:
    """Autocorrelation F0 tracker over un-windowed frames.

    The smallest-lag local peak within ``OCTAVE_GUARD`` of the best peak is
    taken, which avoids reporting sub-octaves of strongly periodic input.
    """
    x = np.asarray(samples, dtype=np.float64)
    frame_len = int(round(sample_rate * frame_ms / 1000))
    hop = int(round(sample_rate * hop_ms / 1000))
    frames = _frame_view(x, frame_len, hop)
    count = len(frames)
    f0 = np.zeros(count)
    strength = np.zeros(count)
    if count == 0:
        return PitchTrack(f0, strength, frame_len, hop)
    lag_min = int(np.floor(sample_rate / fmax))
    lag_max = min(int(np.ceil(sample_rate / fmin)), frame_len - 2)
    acf = normalized_autocorrelation(frames, lag_max + 1)
    energy = np.sum(frames ** 2, axis=1)
    for i in range(count):
        if energy[i] <= 1e-10:
            continue
        r = acf[i]
        window = r[lag_min : lag_max + 1]
        best = window.max()
        if best < threshold:
            continue
        lags = np.arange(lag_min, lag_max + 1)
        left = r[lags - 1]
        right = r[lags + 1]
        peaks = (window >= left) & (window >= right) & (window >= OCTAVE_GUARD * best)
        cand = lags[peaks]
        lag = int(cand[0]) if len(cand) else int(lags[np.argmax(window)])
        a, b, c = r[lag - 1], r[lag], r[lag + 1]
        curv = a - 2 * b + c
        shift = 0.5 * (a - c) / curv if curv < 0 else 0.0
        f0[i] = sample_rate / (lag + shift)
        strength[i] = b
    return PitchTrack(f0, strength, frame_len, hop)


# --------------------------------------------------------------------------
# Cycle perturbation
# --------------------------------------------------------------------------

def _voiced_runs(voiced: np.ndarray):
    start = None
    for i, v in enumerate(np.append(voiced, False)):
        if v and start is None:
            start = i
        elif not v and start is not None:
            yield start, i
            start = None


def cycle_peaks(samples, pitch: PitchTrack) -> list[np.ndarray]:
    """Positive peak positions of consecutive pitch cycles, one array per voiced run.

    Each next peak is searched within a quarter period of where the local
    period predicts it.
    """
    x = np.asarray(samples, dtype=np.float64)
    runs = []
    for a, b in _voiced_runs(pitch.voiced):
        lo = a * pitch.hop
        hi = min(len(x), (b - 1) * pitch.hop + pitch.frame_len)
        period = int(round(SAMPLE_RATE / np.median(pitch.f0[a:b])))
        if period < 2 or hi - lo < 2 * period:
            continue
        quarter = max(1, period // 4)
        pos = lo + int(np.argmax(x[lo : lo + period]))
        peaks = [pos]
        while True:
            s = pos + period - quarter
            e = min(hi, pos + period + quarter + 1)
            if s >= e or s >= hi:
                break
            pos = s + int(np.argmax(x[s:e]))
            if x[pos] <= 0:
                break
            peaks.append(pos)
        if x[peaks[0]] > 0 and len(peaks) >= 2:
            runs.append(np.asarray(peaks))
    return runs


def _perturbation(runs_values: list[np.ndarray]) -> float:
    diffs = [np.abs(np.diff(v)) for v in runs_values if len(v) >= 2]
    if not diffs:
        return 0.0
    level = np.mean(np.concatenate(runs_values))
    if level <= 0:
        return 0.0
    return float(np.mean(np.concatenate(diffs)) / level)


def shimmer(samples, pitch: PitchTrack) -> float:
    """Local shimmer: mean |A[t+1] - A[t]| / mean A[t] over cycle peak amplitudes."""
    x = np.asarray(samples, dtype=np.float64)
    return _perturbation([x[p] for p in cycle_peaks(x, pitch)])


def jitter(samples, pitch: PitchTrack) -> float:
    """Local jitter: the same ratio over consecutive cycle lengths."""
    periods = [np.diff(p).astype(np.float64) for p in cycle_peaks(samples, pitch)]
    return _perturbation([p for p in periods if len(p)])


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------

def summarize(values) -> dict[str, float]:
    """Nine summary statistics; skew and excess kurtosis are 0 for flat series."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptySeries("cannot summarize an empty series")
    mean = v.mean()
    centered = v - mean
    m2 = np.mean(centered ** 2)
    std = np.sqrt(m2)
    if std < 1e-12:
        skew = kurt = 0.0
    else:
        skew = np.mean(centered ** 3) / m2 ** 1.5
        kurt = np.mean(centered ** 4) / m2 ** 2 - 3.0
    q1, median, q3 = np.percentile(v, [25, 50, 75])
    return {
        "mean": float(mean), "median": float(median), "std": float(std),
        "minv": float(v.min()), "maxv": float(v.max()), "q1": float(q1), "q3": float(q3),
        "skew": float(skew), "kurt": float(kurt),
    }
