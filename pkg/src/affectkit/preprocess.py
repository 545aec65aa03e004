"""Input-side numerics: facial landmark alignment, intensity
normalization, and audio spectrogram framing.

Alignment fits a full 6-DOF affine map from 5 detected landmarks (eyes,
nose, mouth corners) to a canonical frontal template by least squares.
Spectrograms use millisecond window/overlap settings converted to sample
counts at the configured rate, a zero-padded power-of-two DFT, magnitude
only, and per-spectrogram min-max normalization into [-1, 1] so audio
features share the visual features' range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import (
    BadRange,
    DegenerateLandmarks,
    SignalTooShort,
    ValueOutOfRange,
)

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")


@dataclass(frozen=True)
class LandmarkSet:
    """Five (x, y) pixel points ordered left eye, right eye, nose, left
    mouth corner, right mouth corner."""

    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) != 5:
            raise ValueOutOfRange(f"expected 5 landmarks, got {len(self.points)}")
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValueOutOfRange("landmarks must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


# Default frontal template for a 96x96 crop; real canonical coordinates
# are a config choice, this one is symmetric and well-conditioned.
CANONICAL_LANDMARKS = LandmarkSet(
    points=(
        (32.0, 36.0),
        (64.0, 36.0),
        (48.0, 56.0),
        (35.0, 72.0),
        (61.0, 72.0),
    )
)


@dataclass(frozen=True)
class AffineFit:
    """Fitted 2x3 affine matrix and the RMS point residual of the fit."""

    matrix: np.ndarray
    residual: float


def fit_alignment(source: LandmarkSet, canonical: LandmarkSet) -> AffineFit:
    """Least-squares affine A with A @ [x, y, 1] ~= canonical point.

    Collinear source points leave the affine underdetermined and are
    rejected.
    """
    src = source.as_array()
    dst = canonical.as_array()
    design = np.hstack([src, np.ones((5, 1))])
    if np.linalg.matrix_rank(design, tol=1e-9) < 3:
        raise DegenerateLandmarks("source landmarks are collinear")
    solution, _, _, _ = np.linalg.lstsq(design, dst, rcond=None)
    matrix = solution.T  # (2,3)
    mapped = design @ solution
    residual = float(np.sqrt(np.mean(np.sum((mapped - dst) ** 2, axis=1))))
    return AffineFit(matrix=matrix, residual=residual)


def apply_alignment(affine, points) -> np.ndarray:
    """Apply a 2x3 affine (or an AffineFit) to an (N,2) point array."""
    matrix = affine.matrix if isinstance(affine, AffineFit) else np.asarray(affine)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return pts @ matrix[:, :2].T + matrix[:, 2]


def normalize_intensity(values, lo: float, hi: float) -> np.ndarray:
    """Linear map of [lo, hi] onto [-1, 1], clamped outside."""
    if not hi > lo:
        raise BadRange(f"need hi > lo, got [{lo}, {hi}]")
    x = np.asarray(values, dtype=np.float64)
    return np.clip(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate_hz: int = 44100
    window_ms: float = 33.0
    overlap_ms: float = 11.0
    hop_ms: Optional[float] = None  # None: hop = window - overlap

    def __post_init__(self):
        if not self.window_ms > self.overlap_ms > 0:
            raise BadRange(
                f"need window_ms > overlap_ms > 0, got {self.window_ms}/{self.overlap_ms}"
            )
        if self.hop_ms is not None and self.hop_ms <= 0:
            raise BadRange(f"hop_ms must be positive, got {self.hop_ms}")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms / 1000.0 * self.sample_rate_hz))

    @property
    def hop_samples(self) -> int:
        if self.hop_ms is not None:
            return int(round(self.hop_ms / 1000.0 * self.sample_rate_hz))
        return self.window_samples - int(
            round(self.overlap_ms / 1000.0 * self.sample_rate_hz)
        )

    @property
    def fft_size(self) -> int:
        return 1 << (self.window_samples - 1).bit_length()


def frame_count(n_samples: int, config: SpectrogramConfig) -> int:
    """floor((N - window) / hop) + 1."""
    return (n_samples - config.window_samples) // config.hop_samples + 1


def spectrogram(signal, config: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """(frames, bins) DFT magnitudes, min-max normalized to [-1, 1].

    Frames are window_samples long, hop_samples apart; each frame is
    zero-padded to the next power of two before the transform. A constant
    magnitude matrix (e.g. silence) normalizes to all zeros.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise BadRange(f"signal must be 1-d, got shape {x.shape}")
    window = config.window_samples
    hop = config.hop_samples
    if x.size < window:
        raise SignalTooShort(f"{x.size} samples < window of {window}")
    n_frames = frame_count(x.size, config)
    frames = np.stack([x[i * hop : i * hop + window] for i in range(n_frames)])
    mags = np.abs(np.fft.rfft(frames, n=config.fft_size, axis=1))
    lo = mags.min()
    hi = mags.max()
    if hi == lo:
        return np.zeros_like(mags)
    return normalize_intensity(mags, lo, hi)


# ---------------------------------------------------------------------------
# file formats


def write_audio(path, rate: int, samples) -> None:
    """Single-channel audio: two ASCII header lines (rate, length) then the
    raw little-endian 64-bit samples."""
    arr = np.asarray(samples, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(f"rate {int(rate)}\n".encode("ascii"))
        fh.write(f"length {arr.size}\n".encode("ascii"))
        fh.write(arr.astype("<f8", copy=False).tobytes())


def read_audio(path) -> Tuple[int, np.ndarray]:
    with open(path, "rb") as fh:
        header = [fh.readline().decode("ascii").strip() for _ in range(2)]
        fields = dict(line.split() for line in header)
        rate = int(fields["rate"])
        length = int(fields["length"])
        raw = fh.read(8 * length)
        if len(raw) != 8 * length:
            raise SignalTooShort(f"audio body has {len(raw)} bytes, expected {8 * length}")
        samples = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return rate, samples


def read_landmarks(path) -> Dict[int, LandmarkSet]:
    """CSV with header ``frame,x1,y1,...,x5,y5`` -> per-frame LandmarkSet."""
    import csv

    out: Dict[int, LandmarkSet] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for row in reader:
            if not row:
                continue
            frame = int(row[0])
            coords = [float(c) for c in row[1:11]]
            pts = tuple((coords[2 * i], coords[2 * i + 1]) for i in range(5))
            out[frame] = LandmarkSet(points=pts)
    return out


def write_landmarks(path, landmarks: Dict[int, LandmarkSet]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["frame"]
        for i in range(1, 6):
            header += [f"x{i}", f"y{i}"]
        writer.writerow(header)
        for frame in sorted(landmarks):
            row = [frame]
            for x, y in landmarks[frame].points:
                row += [repr(float(x)), repr(float(y))]
            writer.writerow(row)
