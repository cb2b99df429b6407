"""Band powers, PSDs and the TTR/IIR isolation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .sigmodel import SignalSpec

EPS = 1e-20
RATIO_CAP_DB = 120.0
CW_HALF_WIDTH_BINS = 2


@dataclass(frozen=True)
class BandSet:
    bins: np.ndarray
    label: str = "Tx"

    def __post_init__(self):
        b = np.unique(np.asarray(self.bins, dtype=np.int64).reshape(-1))
        if b.size == 0:
            raise ParameterError(f"band {self.label!r} is empty")
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    def validate(self, n: int) -> "BandSet":
        if self.bins[0] < 0 or self.bins[-1] >= n:
            raise ParameterError(f"band {self.label!r} has bins outside [0, {n})")
        return self

    def overlaps(self, other: "BandSet") -> bool:
        return bool(np.intersect1d(self.bins, other.bins).size)


@dataclass(frozen=True)
class IsolationReport:
    p: np.ndarray
    ttr_db: float
    iir_db: float
    reference_ttr_db: float
    reference_iir_db: float

    @property
    def ttr_gain_db(self) -> float:
        return self.ttr_db - self.reference_ttr_db

    @property
    def iir_gain_db(self) -> float:
        return self.iir_db - self.reference_iir_db

    CSV_HEADER = ("scenario", "ref_ttr_db", "ref_iir_db", "ttr_db", "iir_db",
                  "ttr_gain_db", "iir_gain_db")

    def csv_row(self, scenario_id: str) -> list:
        vals = (self.reference_ttr_db, self.reference_iir_db, self.ttr_db, self.iir_db,
                self.ttr_gain_db, self.iir_gain_db)
        return [scenario_id, *(f"{v:.4f}" for v in vals)]


def band_from_range(lo_hz: float, hi_hz: float, n: int, sample_rate_hz: float,
                    label: str = "Tx") -> BandSet:
    """Bins whose baseband frequency lies in ``[lo_hz, hi_hz]``.

    Falls back to the single nearest bin when the range is narrower than one bin.
    """
    f = np.fft.fftfreq(n, d=1.0 / sample_rate_hz)
    sel = np.flatnonzero((f >= lo_hz) & (f <= hi_hz))
    if sel.size == 0:
        centre = 0.5 * (lo_hz + hi_hz)
        sel = np.array([int(np.round(centre / sample_rate_hz * n)) % n])
    return BandSet(sel, label)


def band_from_spec(spec: SignalSpec, n: int, sample_rate_hz: float, label: str = "Tx") -> BandSet:
    """Bins occupied by ``spec``: ``offset +- bandwidth/2``, or a few bins around a CW tone."""
    if spec.kind == "CW":
        k0 = int(np.round(spec.offset_hz / sample_rate_hz * n))
        return BandSet(np.arange(k0 - CW_HALF_WIDTH_BINS, k0 + CW_HALF_WIDTH_BINS + 1) % n, label)
    lo, hi = spec.band_edges_hz()
    return band_from_range(lo, hi, n, sample_rate_hz, label)


def band_power(x, band: BandSet) -> float:
    """Mean of ``|X(k)|^2`` over the band's bins."""
    x = np.asarray(x).reshape(-1)
    band.validate(x.size)
    return float(np.mean(np.abs(x[band.bins]) ** 2))


def ratio_db(num: float, den: float) -> float:
    val = 10 * np.log10(max(num, EPS) / max(den, EPS))
    return float(np.clip(val, -RATIO_CAP_DB, RATIO_CAP_DB))


def _ttr_iir(x, b_tx, b_in):
    p = np.array([[band_power(x[i], b_tx), band_power(x[i], b_in)] for i in range(2)])
    return p, ratio_db(p[0, 0], p[1, 0]), ratio_db(p[1, 1], p[0, 1])


def isolation(x_hat, raw, b_tx: BandSet, b_in: BandSet, allow_overlap: bool = False) -> IsolationReport:
    """TTR (port/row 0 over 1 on the Tx band) and IIR (1 over 0 on the incident band).

    Computed for the estimates ``x_hat`` and, as reference, for the raw port
    bins ``raw``.
    """
    x_hat = np.asarray(x_hat)
    raw = np.asarray(raw)
    if x_hat.shape != raw.shape or x_hat.shape[0] != 2:
        raise ParameterError("x_hat and raw must both be 2xN with the same N")
    if not allow_overlap and b_tx.overlaps(b_in):
        raise ParameterError("Tx and incident bands overlap; pass allow_overlap=True")
    p, ttr, iir = _ttr_iir(x_hat, b_tx, b_in)
    _, rttr, riir = _ttr_iir(raw, b_tx, b_in)
    return IsolationReport(p, ttr, iir, rttr, riir)


def psd_db(x, offset_db: float = 0.0, eps: float = EPS) -> np.ndarray:
    """Per-bin ``10 log10(|X(k)|^2 + eps)`` plus a calibration offset."""
    return 10 * np.log10(np.abs(np.asarray(x)) ** 2 + eps) + offset_db


def write_psd_csv(path, bin_freqs_hz, traces: dict, offset_db: float = 0.0):
    """Dump PSD traces in increasing-frequency order, one column per trace."""
    order = np.argsort(np.asarray(bin_freqs_hz), kind="stable")
    names = list(traces)
    cols = [psd_db(traces[k], offset_db)[order] for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", *[f"{k}_psd_db" for k in names]])
        freqs = np.asarray(bin_freqs_hz)[order]
        for idx in range(freqs.size):
            w.writerow([f"{freqs[idx]:.3f}", *[f"{c[idx]:.4f}" for c in cols]])
