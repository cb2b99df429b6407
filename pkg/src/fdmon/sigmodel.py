"""Synthetic sources, the two-port linear mixing model, and DFT helpers.

The observation model is instantaneous and linear::

    r(n) = A x(n) + v(n),    v(n) ~ CN(0, sigma2 I)

where ``x`` stacks the transmitted source (row 0) and the incident source
(row 1), and ``A`` is a 2x2 complex coupler matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import ParameterError

SIGNAL_KINDS = ("CW", "BPSK", "OFDM")

RRC_ROLLOFF = 0.35
RRC_SPAN_SYMBOLS = 8
OFDM_DEFAULT_FFT = 1024
OFDM_FILTER_TAPS = 1025
OFDM_FILTER_KAISER_BETA = 8.0  # ~80 dB stopband

# Coupler magnitudes used when no mixing matrix is supplied.
COUPLER_DIAG_DB = 0.01
COUPLER_TX_TO_PORT1_DB = -19.29
COUPLER_INC_TO_PORT0_DB = -7.10


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class IQBlock:
    """Two-port complex baseband capture."""

    samples: np.ndarray
    sample_rate_hz: float
    center_freq_hz: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 2 or s.shape[0] != 2:
            raise ParameterError(f"IQBlock needs a 2xN array, got shape {s.shape}")
        if s.shape[1] < 2:
            raise ParameterError("IQBlock needs at least 2 samples per port")
        if not np.all(np.isfinite(s)):
            raise ParameterError("IQBlock samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        if self.center_freq_hz < 0:
            raise ParameterError("center_freq_hz must be non-negative")
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def meta(self) -> dict:
        return {
            "sample_rate_hz": float(self.sample_rate_hz),
            "center_freq_hz": float(self.center_freq_hz),
            "num_samples": self.n,
        }


@dataclass(frozen=True)
class SpectrumFrame:
    """Per-port DFT bins in natural (unshifted) order.

    ``bin_freqs_hz[k]`` is the absolute frequency of bin ``k``; it becomes
    strictly increasing after ``np.fft.fftshift``.
    """

    bins: np.ndarray
    bin_freqs_hz: np.ndarray
    source_block_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 2:
            raise ParameterError(f"SpectrumFrame bins must be 2-D, got {b.shape}")
        f = np.asarray(self.bin_freqs_hz, dtype=float)
        if f.shape != (b.shape[1],):
            raise ParameterError("bin_freqs_hz length must match the bin count")
        object.__setattr__(self, "bins", _frozen(b))
        object.__setattr__(self, "bin_freqs_hz", _frozen(f))
        object.__setattr__(self, "source_block_meta", dict(self.source_block_meta))

    @property
    def n(self) -> int:
        return self.bins.shape[1]

    @property
    def sample_rate_hz(self) -> float:
        return float(self.source_block_meta.get("sample_rate_hz", 0.0))

    @property
    def center_freq_hz(self) -> float:
        return float(self.source_block_meta.get("center_freq_hz", 0.0))


@dataclass(frozen=True)
class SignalSpec:
    """Declarative description of one synthetic source.

    ``power_db`` is mean sample power relative to 1.0; ``-inf`` yields an
    all-zero (silent) source.
    """

    kind: str
    offset_hz: float = 0.0
    bandwidth_hz: float = 1e6
    power_db: float = 0.0
    seed: int = 0
    symbol_rate_hz: float | None = None
    subcarrier_count: int | None = None
    cyclic_prefix_fraction: float = 0.125

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in SIGNAL_KINDS:
            raise ParameterError(f"unknown signal kind {self.kind!r}; expected one of {SIGNAL_KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind != "CW" and not self.bandwidth_hz > 0:
            raise ParameterError("bandwidth_hz must be positive")
        if self.symbol_rate_hz is not None and not self.symbol_rate_hz > 0:
            raise ParameterError("symbol_rate_hz must be positive")
        if self.subcarrier_count is not None and self.subcarrier_count < 1:
            raise ParameterError("subcarrier_count must be >= 1")
        if not 0 <= self.cyclic_prefix_fraction < 1:
            raise ParameterError("cyclic_prefix_fraction must lie in [0, 1)")

    @property
    def occupied_bw_hz(self) -> float:
        return 0.0 if self.kind == "CW" else float(self.bandwidth_hz)

    def band_edges_hz(self) -> tuple[float, float]:
        half = self.occupied_bw_hz / 2
        return self.offset_hz - half, self.offset_hz + half


@dataclass(frozen=True)
class MixingMatrix:
    """2x2 complex mixing (or unmixing-side) matrix.

    Singular matrices are representable so that degenerate mixtures can be
    simulated; use :meth:`require_nonsingular` where inversion is needed.
    """

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.complex128)
        if a.shape != (2, 2):
            raise ParameterError(f"mixing matrix must be 2x2, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParameterError("mixing matrix entries must be finite")
        object.__setattr__(self, "a", _frozen(a))

    @property
    def is_nonsingular(self) -> bool:
        scale = np.max(np.abs(self.a)) ** 2
        return bool(scale > 0 and abs(np.linalg.det(self.a)) > 1e-12 * scale)

    def require_nonsingular(self) -> "MixingMatrix":
        if not self.is_nonsingular:
            raise ParameterError("mixing matrix is singular")
        return self

    @classmethod
    def identity(cls) -> "MixingMatrix":
        return cls(np.eye(2))

    @classmethod
    def exchange(cls) -> "MixingMatrix":
        return cls(np.array([[0, 1], [1, 0]]))

    @classmethod
    def from_db(cls, mag_db, phases_rad=None) -> "MixingMatrix":
        mag = 10 ** (np.asarray(mag_db, dtype=float) / 20)
        ph = np.zeros((2, 2)) if phases_rad is None else np.asarray(phases_rad, dtype=float)
        return cls(mag * np.exp(1j * ph))


@dataclass(frozen=True)
class NoiseSpec:
    sigma2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise ParameterError("sigma2 must be a finite non-negative number")

    @classmethod
    def from_snr(cls, snr_db: float, seed: int = 0, signal_power_db: float = 0.0) -> "NoiseSpec":
        return cls(10 ** ((signal_power_db - snr_db) / 10), seed)


def default_coupler(seed: int = 0) -> MixingMatrix:
    """Coupler matrix with the measured magnitudes and seeded random phases.

    Row ``i`` is port ``i``; column 0 is the transmitted source and column 1
    the incident source.
    """
    rng = np.random.default_rng([seed, 0xC0])
    mag_db = np.array(
        [
            [COUPLER_DIAG_DB, COUPLER_INC_TO_PORT0_DB],
            [COUPLER_TX_TO_PORT1_DB, COUPLER_DIAG_DB],
        ]
    )
    return MixingMatrix.from_db(mag_db, rng.uniform(0, 2 * np.pi, size=(2, 2)))


def _check_nyquist(spec: SignalSpec, sample_rate_hz: float):
    if not sample_rate_hz > 0:
        raise ParameterError("sample_rate_hz must be positive")
    if abs(spec.offset_hz) + spec.occupied_bw_hz / 2 > sample_rate_hz / 2 + 1e-9:
        raise ParameterError(
            f"{spec.kind} at offset {spec.offset_hz:g} Hz with bandwidth "
            f"{spec.occupied_bw_hz:g} Hz exceeds the Nyquist band of {sample_rate_hz:g} S/s"
        )


def rrc_pulse(t, symbol_period, rolloff=RRC_ROLLOFF):
    """Root-raised-cosine impulse response evaluated at times ``t``."""
    x = np.asarray(t, dtype=float) / symbol_period
    b = rolloff
    out = np.empty_like(x)
    at_zero = np.isclose(x, 0.0)
    at_sing = np.isclose(np.abs(x), 1 / (4 * b))
    rest = ~(at_zero | at_sing)
    xr = x[rest]
    out[rest] = (np.sin(np.pi * xr * (1 - b)) + 4 * b * xr * np.cos(np.pi * xr * (1 + b))) / (
        np.pi * xr * (1 - (4 * b * xr) ** 2)
    )
    out[at_zero] = 1 - b + 4 * b / np.pi
    out[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


def _bpsk(spec, n, fs, rng):
    rs = spec.symbol_rate_hz or spec.bandwidth_hz / (1 + RRC_ROLLOFF)
    period = 1.0 / rs
    t = np.arange(n) / fs
    span = RRC_SPAN_SYMBOLS
    n_sym = int(np.floor(t[-1] / period)) + 2 * span + 2
    symbols = rng.choice(np.array([-1.0, 1.0]), size=n_sym)
    m0 = np.floor(t / period).astype(np.int64)
    x = np.zeros(n)
    for d in range(-span, span + 1):
        m = m0 + d
        x += symbols[m + span] * rrc_pulse(t - m * period, period)
    return x.astype(np.complex128)


def _ofdm(spec, n, fs, rng):
    if spec.subcarrier_count is None:
        nfft = OFDM_DEFAULT_FFT
        n_active = max(1, int(round(spec.bandwidth_hz / (fs / nfft))))
    else:
        n_active = int(spec.subcarrier_count)
        nfft = max(n_active, int(round(fs * n_active / spec.bandwidth_hz)))
    n_cp = int(round(spec.cyclic_prefix_fraction * nfft))
    sym_len = nfft + n_cp
    half = OFDM_FILTER_TAPS // 2
    n_sym = -(-(n + 2 * half) // sym_len)
    qpsk = (rng.choice([-1.0, 1.0], size=(n_sym, n_active))
            + 1j * rng.choice([-1.0, 1.0], size=(n_sym, n_active))) / np.sqrt(2)
    grid = np.zeros((n_sym, nfft), dtype=np.complex128)
    sc = np.arange(n_active) - n_active // 2
    grid[:, sc % nfft] = qpsk
    body = np.fft.ifft(grid, axis=1)
    with_cp = np.concatenate([body[:, nfft - n_cp:], body], axis=1) if n_cp else body
    raw = with_cp.reshape(-1)[: n + 2 * half]
    # band-limit the sinc skirts of the rectangular symbol window; the
    # stopband starts at the nominal band edge
    transition = (80 - 7.95) * fs / (2.285 * 2 * np.pi * (OFDM_FILTER_TAPS - 1))
    edge = min(max(0.5 * spec.bandwidth_hz - 0.5 * transition, 0.25 * spec.bandwidth_hz), 0.499 * fs)
    taps = signal.firwin(OFDM_FILTER_TAPS, edge, window=("kaiser", OFDM_FILTER_KAISER_BETA), fs=fs)
    return signal.oaconvolve(raw, taps, mode="valid")[:n]


def generate(spec: SignalSpec, n: int, sample_rate_hz: float) -> np.ndarray:
    """Generate ``n`` complex baseband samples of the source described by ``spec``.

    The output is deterministic for a fixed ``spec.seed`` and its mean power
    equals ``spec.power_db``.
    """
    _check_nyquist(spec, sample_rate_hz)
    n = int(n)
    if n < 2:
        raise ParameterError("n must be >= 2")
    if spec.power_db == -math.inf:
        return np.zeros(n, dtype=np.complex128)
    rng = np.random.default_rng(spec.seed)
    phase0 = rng.uniform(0, 2 * np.pi)
    if spec.kind == "CW":
        base = np.ones(n, dtype=np.complex128)
    elif spec.kind == "BPSK":
        base = _bpsk(spec, n, sample_rate_hz, rng)
    else:
        base = _ofdm(spec, n, sample_rate_hz, rng)
    # exact rational tone phase keeps integer-bin CW free of leakage
    k = np.arange(n)
    carrier = np.exp(1j * (2 * np.pi * np.mod(spec.offset_hz / sample_rate_hz * k, 1.0) + phase0))
    x = base * carrier
    p = np.mean(np.abs(x) ** 2)
    if p == 0:
        return x
    return x * np.sqrt(10 ** (spec.power_db / 10) / p)


def mix(x, a: MixingMatrix, noise: NoiseSpec | None = None,
        sample_rate_hz: float = 1.0, center_freq_hz: float = 0.0) -> IQBlock:
    """Apply ``r(n) = A x(n) + v(n)`` and wrap the result in an :class:`IQBlock`."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2 or x.shape[0] != 2:
        raise ParameterError(f"sources must be a 2xN array, got shape {x.shape}")
    if not isinstance(a, MixingMatrix):
        a = MixingMatrix(a)
    r = a.a @ x
    if noise is not None and noise.sigma2 > 0:
        rng = np.random.default_rng([noise.seed, 0x5EED])
        scale = np.sqrt(noise.sigma2 / 2)
        r = r + scale * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
    return IQBlock(r, sample_rate_hz, center_freq_hz)


def bin_frequencies(n: int, sample_rate_hz: float, center_freq_hz: float = 0.0) -> np.ndarray:
    return center_freq_hz + np.fft.fftfreq(n, d=1.0 / sample_rate_hz)


def dft(block: IQBlock) -> SpectrumFrame:
    """Unnormalized forward DFT of each port."""
    bins = np.fft.fft(block.samples, axis=1)
    return SpectrumFrame(bins, bin_frequencies(block.n, block.sample_rate_hz, block.center_freq_hz),
                         block.meta())


def idft(frame: SpectrumFrame) -> IQBlock:
    """Inverse of :func:`dft` (carries the 1/N factor)."""
    samples = np.fft.ifft(frame.bins, axis=1)
    meta = frame.source_block_meta
    return IQBlock(samples, meta.get("sample_rate_hz", 1.0), meta.get("center_freq_hz", 0.0))


def build_scenario(tx: SignalSpec | Sequence[SignalSpec], incident: SignalSpec | Sequence[SignalSpec],
                   a: MixingMatrix | None, noise: NoiseSpec, n: int,
                   sample_rate_hz: float, center_freq_hz: float = 0.0):
    """Simulate one channel capture.

    ``tx`` and ``incident`` may each be a list of specs; a list is summed
    into the single source on that port. Returns ``(block, truth)`` where ``truth`` is the 2xN
    array of unmixed sources.
    """
    txs = [tx] if isinstance(tx, SignalSpec) else list(tx)
    incidents = [incident] if isinstance(incident, SignalSpec) else list(incident)
    if not txs or not incidents:
        raise ParameterError("tx and incident need at least one spec each")
    if a is None:
        a = default_coupler(txs[0].seed)
    truth = np.zeros((2, int(n)), dtype=np.complex128)
    for row, specs in enumerate((txs, incidents)):
        for spec in specs:
            truth[row] += generate(spec, n, sample_rate_hz)
    block = mix(truth, a, noise, sample_rate_hz, center_freq_hz)
    return block, _frozen(truth)
