"""Orthogonal wavelet filter banks, Mallat decomposition and level-j reconstruction.

All transforms work along axis 0, so a ``(length, features)`` window is
transformed column by column in one vectorised pass.

Boundary handling is half-sample symmetric extension. Analysis keeps the
samples ``1 + 2m`` of the full filtering of the extended signal, which gives
``(n + L - 1) // 2`` coefficients per band for a length-``n`` input and a
length-``L`` filter; synthesis is exact for every ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)

# Low-pass (scaling) coefficients, normalised so that sum(h) == sqrt(2).
_LOW_PASS = {
    "haar": [1.0 / SQRT2, 1.0 / SQRT2],
    "db2": [
        (1 + math.sqrt(3)) / (4 * SQRT2),
        (3 + math.sqrt(3)) / (4 * SQRT2),
        (3 - math.sqrt(3)) / (4 * SQRT2),
        (1 - math.sqrt(3)) / (4 * SQRT2),
    ],
    "db3": [
        0.33267055295008263,
        0.80689150931109260,
        0.45987750211849154,
        -0.13501102001025458,
        -0.08544127388202666,
        0.03522629188570953,
    ],
}

SUPPORTED_FILTERS = tuple(_LOW_PASS)
PADDING = "symmetric"


class WaveletError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletFilter:
    name: str
    low_pass: np.ndarray
    high_pass: np.ndarray

    def __len__(self) -> int:
        return len(self.low_pass)


@dataclass
class WaveletCoefficients:
    """Coefficient list ``[approx_k, detail_k, ..., detail_1]`` for one signal."""

    levels: int
    approx: np.ndarray
    details: list[np.ndarray]  # ordered coarse to fine: details[0] is level k
    filter_name: str
    original_length: int
    padding: str = PADDING
    lengths: list[int] = field(default_factory=list)  # input length at each level, finest first

    def detail(self, level: int) -> np.ndarray:
        """Detail band at decomposition ``level`` (1 = finest)."""
        return self.details[self.levels - level]

    def as_list(self) -> list[np.ndarray]:
        return [self.approx, *self.details]


def make_filter(name: str = "db3") -> WaveletFilter:
    key = name.lower()
    if key not in _LOW_PASS:
        raise WaveletError(
            f"unsupported wavelet filter {name!r}; supported: {', '.join(SUPPORTED_FILTERS)}"
        )
    h = np.asarray(_LOW_PASS[key], dtype=float)
    L = len(h)
    g = np.array([(-1) ** n * h[L - 1 - n] for n in range(L)])
    return WaveletFilter(key, h, g)


def _as_filter(filt: WaveletFilter | str) -> WaveletFilter:
    return make_filter(filt) if isinstance(filt, str) else filt


def max_level(length: int) -> int:
    """Largest admissible decomposition depth, ``floor(log2(length))``."""
    if length < 2:
        return 0
    return int(length).bit_length() - 1


def check_level(k: int, length: int) -> None:
    bound = max_level(length)
    if not 1 <= k <= bound:
        raise WaveletError(
            f"decomposition level k={k} out of range: need 1 <= k <= floor(log2({length})) = {bound}"
        )


def _band(ext: np.ndarray, taps: np.ndarray, count: int) -> np.ndarray:
    out = np.zeros((count,) + ext.shape[1:])
    stop = 2 * count
    for i, c in enumerate(taps):
        out += c * ext[1 + i : 1 + i + stop : 2]
    return out


def dwt_step(signal, filt: WaveletFilter | str = "db3", padding: str = PADDING):
    """One analysis step: ``(approx, detail)`` of ``signal`` along axis 0."""
    if padding != PADDING:
        raise WaveletError(f"unsupported padding {padding!r}; only {PADDING!r} is implemented")
    filt = _as_filter(filt)
    x = np.asarray(signal, dtype=float)
    if x.shape[0] < 1:
        raise WaveletError("signal too short: need at least 1 sample")
    L = len(filt)
    count = (x.shape[0] + L - 1) // 2
    pad = [(L - 1, L - 1)] + [(0, 0)] * (x.ndim - 1)
    ext = np.pad(x, pad, mode="symmetric")
    return _band(ext, filt.low_pass, count), _band(ext, filt.high_pass, count)


def _upsample_filter(c: np.ndarray, taps: np.ndarray) -> np.ndarray:
    L = len(taps)
    out = np.zeros((2 * c.shape[0] + L - 1,) + c.shape[1:])
    for i, t in enumerate(taps):
        out[i : i + 2 * c.shape[0] : 2] += t * c
    return out


def idwt_step(approx, detail, filt: WaveletFilter | str, length: int) -> np.ndarray:
    """Synthesis step inverting :func:`dwt_step` for an input of ``length`` samples."""
    filt = _as_filter(filt)
    a = np.asarray(approx, dtype=float)
    d = np.asarray(detail, dtype=float)
    if a.shape != d.shape:
        raise WaveletError(f"approx/detail shape mismatch: {a.shape} vs {d.shape}")
    L = len(filt)
    if length > 2 * a.shape[0] + 1:
        raise WaveletError(f"cannot synthesise {length} samples from {a.shape[0]} coefficients")
    full = _upsample_filter(a, filt.low_pass) + _upsample_filter(d, filt.high_pass)
    return full[L - 2 : L - 2 + length]


def decompose(signal, filt: WaveletFilter | str = "db3", k: int = 1) -> WaveletCoefficients:
    filt = _as_filter(filt)
    x = np.asarray(signal, dtype=float)
    n = x.shape[0]
    check_level(k, n)
    details = []
    lengths = []
    approx = x
    for _ in range(k):
        lengths.append(approx.shape[0])
        approx, det = dwt_step(approx, filt)
        details.append(det)
    return WaveletCoefficients(
        levels=k,
        approx=approx,
        details=details[::-1],
        filter_name=filt.name,
        original_length=n,
        lengths=lengths,
    )


def reconstruct_level(coeffs: WaveletCoefficients, j: int = 1) -> np.ndarray:
    """R_j: inverse transform keeping details ``j..k`` and the level-k approximation.

    Details at levels ``1..j-1`` are treated as zero, so ``j=1`` returns the
    original signal and larger ``j`` returns progressively smoother versions.
    """
    k = coeffs.levels
    if not 1 <= j <= k:
        raise WaveletError(f"reconstruction level j={j} out of range [1, {k}]")
    filt = make_filter(coeffs.filter_name)
    approx = coeffs.approx
    for level in range(k, 0, -1):
        det = coeffs.detail(level)
        if level < j:
            det = np.zeros_like(det)
        approx = idwt_step(approx, det, filt, coeffs.lengths[level - 1])
    return approx


def multiscale(signal, filt: WaveletFilter | str = "db3", k: int = 1) -> np.ndarray:
    """Stack ``R_1..R_k`` of ``signal`` into an array of shape ``(k,) + signal.shape``.

    Shares the synthesis of the coarse levels between successive ``R_j``.
    """
    coeffs = decompose(signal, filt, k)
    filt = make_filter(coeffs.filter_name)
    out = np.empty((k,) + np.shape(signal))
    # R_j is the level-(j-1) approximation rebuilt from coarse bands only,
    # then pushed through the remaining fine levels with zero detail.
    partial = coeffs.approx
    for level in range(k, 0, -1):
        partial = idwt_step(partial, coeffs.detail(level), filt, coeffs.lengths[level - 1])
        rec = partial
        for finer in range(level - 1, 0, -1):
            rec = idwt_step(rec, np.zeros_like(rec), filt, coeffs.lengths[finer - 1])
        out[level - 1] = rec
    return out


@dataclass
class MultiScaleWindow:
    window_start: int
    sw: int
    reconstructions: np.ndarray  # (k, sw, d)
    labels: np.ndarray  # (sw,)

    @property
    def k(self) -> int:
        return self.reconstructions.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.window_start, self.window_start + self.sw)


def window_starts(n: int, sw: int, stride: int | None = None) -> list[int]:
    stride = sw if stride is None else stride
    if sw < 1 or stride < 1:
        raise WaveletError(f"window size and stride must be positive (sw={sw}, stride={stride})")
    if sw > n:
        raise WaveletError(f"window size sw={sw} exceeds record count N={n}")
    return list(range(0, n - sw + 1, stride))


def window_multiscale(matrix, sw: int, stride: int | None = None, k: int = 6,
                      filt: WaveletFilter | str = "db3") -> list[MultiScaleWindow]:
    """Slide a length-``sw`` window over the records and build ``R_1..R_k`` per window.

    ``matrix`` is a :class:`msrc.ingest.FeatureMatrix` or anything exposing
    ``rows`` and ``labels``. Each feature column is transformed independently.
    Trailing records that do not fill a whole window are dropped.
    """
    rows = np.asarray(matrix.rows, dtype=float)
    labels = np.asarray(matrix.labels)
    n = rows.shape[0]
    starts = window_starts(n, sw, stride)
    check_level(k, sw)
    filt = _as_filter(filt)
    return [
        MultiScaleWindow(s, sw, multiscale(rows[s : s + sw], filt, k), labels[s : s + sw].copy())
        for s in starts
    ]
