"""Channel sweep, noise gating, PSD-limit checks and alerting.

One sweep cycle visits every channel of a :class:`ChannelPlan`: the block
provider supplies a two-port capture, the gate decides whether anything is
above the noise floor, the block is separated, and the transmitted-signal
PSD is compared bin by bin with the user's limit profile.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import bss, iqio
from .errors import FdmonError, ParameterError
from .metrics import psd_db
from .sigmodel import IQBlock, MixingMatrix, NoiseSpec, SignalSpec, build_scenario, default_coupler, dft

log = logging.getLogger(__name__)

DEFAULT_START_HZ = 100e6
DEFAULT_STOP_HZ = 6000e6
DEFAULT_CHANNEL_BW_HZ = 27.65e6
EDGE_EXCLUDE_FRACTION = 0.02


@dataclass(frozen=True)
class ChannelPlan:
    channels: tuple
    channel_bw_hz: float
    span: tuple

    def __len__(self):
        return len(self.channels)

    def interval(self, index: int) -> tuple[float, float]:
        c = self.channels[index]
        return c - self.channel_bw_hz / 2, c + self.channel_bw_hz / 2


def build_channel_plan(start_hz: float = DEFAULT_START_HZ, stop_hz: float = DEFAULT_STOP_HZ,
                       channel_bw_hz: float = DEFAULT_CHANNEL_BW_HZ) -> ChannelPlan:
    """Contiguous channels of width ``channel_bw_hz`` from ``start_hz`` upward.

    The last channel may extend past ``stop_hz``.
    """
    if not stop_hz > start_hz:
        raise ParameterError("stop_hz must exceed start_hz")
    if not channel_bw_hz > 0:
        raise ParameterError("channel_bw_hz must be positive")
    count = math.ceil((stop_hz - start_hz) / channel_bw_hz - 1e-9)
    centers = tuple(start_hz + (k + 0.5) * channel_bw_hz for k in range(count))
    return ChannelPlan(centers, float(channel_bw_hz), (float(start_hz), float(stop_hz)))


@dataclass(frozen=True)
class PSDLimitProfile:
    """Piecewise-constant PSD limits; ``default_db`` applies outside all entries.

    Where entries overlap, the lower (stricter) limit wins.
    """

    entries: tuple = ()
    default_db: float = 0.0

    def __post_init__(self):
        norm = []
        for e in self.entries:
            lo, hi, lim = (float(v) for v in e)
            if not lo < hi:
                raise ParameterError(f"limit entry needs f_start < f_stop, got {lo} >= {hi}")
            norm.append((lo, hi, lim))
        object.__setattr__(self, "entries", tuple(sorted(norm)))

    def normalized(self) -> list[tuple[float, float, float]]:
        """Non-overlapping segments equivalent to the entries."""
        edges = sorted({x for lo, hi, _ in self.entries for x in (lo, hi)})
        segs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            vals = [lim for a, b, lim in self.entries if a <= mid < b]
            if vals:
                if segs and segs[-1][1] == lo and segs[-1][2] == min(vals):
                    segs[-1] = (segs[-1][0], hi, min(vals))
                else:
                    segs.append((lo, hi, min(vals)))
        return segs

    def limit_at(self, freqs_hz) -> np.ndarray:
        f = np.asarray(freqs_hz, dtype=float)
        out = np.full(f.shape, float(self.default_db))
        for lo, hi, lim in self.normalized():
            out[(f >= lo) & (f < hi)] = lim
        return out

    @classmethod
    def from_mapping(cls, doc: dict) -> "PSDLimitProfile":
        items = doc.get("limits", doc.get("limit", []))
        entries = []
        for i, item in enumerate(items):
            unknown = set(item) - {"f_start_hz", "f_stop_hz", "max_psd_db"}
            if unknown:
                raise ParameterError(f"limits[{i}]: unknown field(s) {sorted(unknown)}")
            try:
                entries.append((item["f_start_hz"], item["f_stop_hz"], item["max_psd_db"]))
            except KeyError as exc:
                raise ParameterError(f"limits[{i}]: missing field {exc.args[0]!r}") from None
        return cls(tuple(entries), float(doc.get("default_db", 0.0)))

    def to_mapping(self) -> dict:
        return {"default_db": self.default_db,
                "limits": [{"f_start_hz": lo, "f_stop_hz": hi, "max_psd_db": lim}
                           for lo, hi, lim in self.entries]}


@dataclass(frozen=True)
class GateConfig:
    noise_floor_db: float | None = None  # None: estimate from the data
    margin_db: float = 6.0

    def __post_init__(self):
        if not self.margin_db >= 0:
            raise ParameterError("margin_db must be >= 0")


@dataclass
class Alert:
    timestamp: float
    channel_center_hz: float
    offending_bins: list
    psd_snapshot: str | None = None
    user_id: str = ""
    cycle: int = 0
    channel_index: int = -1

    def __post_init__(self):
        if not self.offending_bins:
            raise ParameterError("an alert needs at least one offending bin")
        for f, measured, limit in self.offending_bins:
            if not measured > limit:
                raise ParameterError(f"bin at {f} Hz is not above its limit")

    def to_json(self) -> str:
        d = asdict(self)
        d["offending_bins"] = [
            {"freq_hz": float(f), "measured_db": float(m), "limit_db": float(lim)}
            for f, m, lim in self.offending_bins]
        return json.dumps(d)


@dataclass(frozen=True)
class ChannelRequest:
    index: int
    center_hz: float
    cycle: int
    slot: int


@dataclass
class ChannelResult:
    index: int
    center_hz: float
    slot: int
    status: str  # "separated", "gated" or "failed"
    latency_s: float
    freqs_hz: np.ndarray | None = None
    tx_psd_db: np.ndarray | None = None
    incident_psd_db: np.ndarray | None = None
    offending: list = field(default_factory=list)
    reliable: bool = True
    error: str | None = None


@dataclass
class SweepReport:
    cycle: int
    order: list
    channels: list
    alerts: list

    @property
    def n_alerts(self) -> int:
        return len(self.alerts)

    def count(self, status: str) -> int:
        return sum(1 for c in self.channels if c.status == status)

    @property
    def median_latency_s(self) -> float:
        lat = [c.latency_s for c in self.channels]
        return float(np.median(lat)) if lat else 0.0

    def spectrum(self):
        """Concatenated ``(freq_hz, tx_psd_db, incident_psd_db)`` over the plan, sorted by frequency."""
        parts = [c for c in self.channels if c.freqs_hz is not None]
        if not parts:
            empty = np.zeros(0)
            return empty, empty, empty
        f = np.concatenate([c.freqs_hz for c in parts])
        tx = np.concatenate([c.tx_psd_db for c in parts])
        inc = np.concatenate([c.incident_psd_db for c in parts])
        order = np.argsort(f, kind="stable")
        return f[order], tx[order], inc[order]

    def summary(self) -> dict:
        return {
            "cycle": self.cycle,
            "channels": len(self.channels),
            "separated": self.count("separated"),
            "gated": self.count("gated"),
            "failed": self.count("failed"),
            "alerts": self.n_alerts,
            "median_latency_s": self.median_latency_s,
        }


def port_powers_db(block: IQBlock, offset_db: float = 0.0):
    """Per-port mean bin power and per-port median bin PSD, both in PSD dB units."""
    p = np.abs(np.fft.fft(block.samples, axis=1)) ** 2
    mean_db = 10 * np.log10(np.mean(p, axis=1) + 1e-300) + offset_db
    median_db = 10 * np.log10(np.median(p, axis=1) + 1e-300) + offset_db
    return mean_db, median_db


def gate(block: IQBlock, cfg: GateConfig = GateConfig(), offset_db: float = 0.0) -> bool:
    """True iff either port's mean power exceeds ``floor + margin`` (strictly)."""
    mean_db, median_db = port_powers_db(block, offset_db)
    floor = cfg.noise_floor_db
    if floor is None:
        floor = float(median_db[np.argmin(mean_db)])
    return bool(np.any(mean_db > floor + cfg.margin_db))


def _process(block: IQBlock, req: ChannelRequest, plan: ChannelPlan, limits: PSDLimitProfile,
             gate_cfg: GateConfig, offset_db: float, edge_fraction: float) -> ChannelResult:
    t0 = time.perf_counter()
    n = block.n
    freqs = np.fft.fftshift(req.center_hz + np.fft.fftfreq(n, d=1.0 / block.sample_rate_hz))
    lo, hi = plan.interval(req.index)
    keep = (freqs >= lo) & (freqs < hi)
    edge = int(math.ceil(edge_fraction * n))
    checkable = np.zeros(n, dtype=bool)
    checkable[edge:n - edge] = True
    if gate(block, gate_cfg, offset_db):
        res = bss.separate(dft(block))
        tx = np.fft.fftshift(psd_db(res.x_hat[0], offset_db))
        inc = np.fft.fftshift(psd_db(res.x_hat[1], offset_db))
        lim = limits.limit_at(freqs)
        bad = np.flatnonzero(checkable & keep & (tx > lim))
        offending = [(float(freqs[k]), float(tx[k]), float(lim[k])) for k in bad]
        status, reliable = "separated", res.reliable
    else:
        raw = np.fft.fftshift(np.fft.fft(block.samples, axis=1), axes=1)
        tx, inc = psd_db(raw[0], offset_db), psd_db(raw[1], offset_db)
        offending, status, reliable = [], "gated", True
    return ChannelResult(req.index, req.center_hz, req.slot, status, time.perf_counter() - t0,
                         freqs[keep], tx[keep], inc[keep], offending, reliable)


def _write_snapshot(path: Path, ch: ChannelResult, limits: PSDLimitProfile):
    lim = limits.limit_at(ch.freqs_hz)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "tx_psd_db", "incident_psd_db", "limit_db"])
        for row in zip(ch.freqs_hz, ch.tx_psd_db, ch.incident_psd_db, lim):
            w.writerow([f"{row[0]:.3f}", f"{row[1]:.4f}", f"{row[2]:.4f}", f"{row[3]:.4f}"])


def sweep_once(plan: ChannelPlan, source: Callable[[ChannelRequest], IQBlock],
               limits: PSDLimitProfile, sink: Callable[[Alert], None] | None = None, *,
               order: Sequence[int] | None = None, cycle: int = 0,
               gate_cfg: GateConfig = GateConfig(), offset_db: float = 0.0,
               edge_fraction: float = EDGE_EXCLUDE_FRACTION, workers: int = 1,
               clock: Callable[[ChannelRequest], float] | None = None, user_id: str = "",
               snapshot_dir: Path | None = None) -> SweepReport:
    """Run one cycle over ``plan`` (in ``order``, default plan order).

    A provider exception skips that channel and is recorded in the report.
    Channels may be processed on ``workers`` threads; alerts are emitted to
    ``sink`` afterwards, one per offending channel, in visiting order.
    """
    order = list(range(len(plan))) if order is None else [int(i) for i in order]
    requests = [ChannelRequest(i, plan.channels[i], cycle, slot) for slot, i in enumerate(order)]

    def work(req):
        t0 = time.perf_counter()
        try:
            block = source(req)
            return _process(block, req, plan, limits, gate_cfg, offset_db, edge_fraction)
        except (FdmonError, OSError, ValueError) as exc:
            log.warning("channel %d (%.0f Hz) skipped: %s", req.index, req.center_hz, exc)
            return ChannelResult(req.index, req.center_hz, req.slot, "failed",
                                 time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, requests))
    else:
        results = [work(r) for r in requests]

    alerts = []
    for req, ch in zip(requests, results):
        if not ch.offending:
            continue
        ts = clock(req) if clock is not None else time.time()
        ref = f"cycle{cycle}/ch{req.index}"
        if snapshot_dir is not None:
            snapshot_dir = Path(snapshot_dir)
            snapshot_dir.mkdir(parents=True, exist_ok=True)
            path = snapshot_dir / f"cycle{cycle:04d}_ch{req.index:04d}.csv"
            _write_snapshot(path, ch, limits)
            ref = str(path)
        alert = Alert(ts, req.center_hz, ch.offending, ref, user_id, cycle, req.index)
        alerts.append(alert)
        if sink is not None:
            sink(alert)
    return SweepReport(cycle, order, results, alerts)


def run_monitor(plan: ChannelPlan, source, limits, sink=None, schedule: str = "sequential",
                cycles: int | None = 1, seed: int = 0, **kwargs) -> Iterator[SweepReport]:
    """Repeat :func:`sweep_once`; ``cycles=None`` runs forever.

    ``schedule`` is ``"sequential"`` (plan order) or ``"random"`` (a fresh
    seeded permutation each cycle). ``limits`` may be a callable returning
    the profile for the next cycle, so updates take effect between cycles.
    """
    if schedule not in ("sequential", "random"):
        raise ParameterError(f"unknown schedule {schedule!r}")
    if cycles is not None and cycles < 1:
        raise ParameterError("cycles must be >= 1 or None")
    rng = np.random.default_rng(seed)
    cycle = 0
    while cycles is None or cycle < cycles:
        order = rng.permutation(len(plan)) if schedule == "random" else np.arange(len(plan))
        profile = limits() if callable(limits) else limits
        yield sweep_once(plan, source, profile, sink, order=order, cycle=cycle, **kwargs)
        cycle += 1


class JsonlAlertSink:
    """Append alerts to a JSONL file, optionally POSTing each to a webhook."""

    def __init__(self, path, webhook_url: str | None = None, timeout_s: float = 5.0):
        self.path = Path(path)
        self.webhook_url = webhook_url
        self.timeout_s = timeout_s
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch()

    def __call__(self, alert: Alert):
        line = alert.to_json()
        with open(self.path, "a") as fh:
            fh.write(line + "\n")
        if self.webhook_url:
            req = urllib.request.Request(self.webhook_url, data=line.encode(),
                                         headers={"Content-Type": "application/json"})
            try:
                urllib.request.urlopen(req, timeout=self.timeout_s).close()
            except OSError as exc:
                log.warning("webhook delivery failed: %s", exc)


class DebouncedSink:
    """Drop alerts for a channel that alerted less than ``min_interval_s`` ago."""

    def __init__(self, sink, min_interval_s: float):
        self.sink = sink
        self.min_interval_s = min_interval_s
        self._last = {}

    def __call__(self, alert: Alert):
        last = self._last.get(alert.channel_center_hz)
        if last is not None and alert.timestamp - last < self.min_interval_s:
            return
        self._last[alert.channel_center_hz] = alert.timestamp
        self.sink(alert)


@dataclass(frozen=True)
class ChannelContent:
    tx: tuple = ()
    incident: tuple = ()


class ScenarioProvider:
    """Simulated captures: each channel holds zero or more tx/incident sources.

    Channels absent from ``contents`` contain receiver noise only. The noise
    and coupler phases are seeded from ``(seed, channel, cycle)``.
    """

    def __init__(self, contents: dict, n: int = 20000, sample_rate_hz: float = DEFAULT_CHANNEL_BW_HZ,
                 sigma2: float = 1e-3, seed: int = 0, mixing: MixingMatrix | None = None):
        self.contents = dict(contents)
        self.n = int(n)
        self.sample_rate_hz = float(sample_rate_hz)
        self.sigma2 = float(sigma2)
        self.seed = int(seed)
        self.mixing = mixing

    def _reseed(self, spec: SignalSpec, req: ChannelRequest, k: int) -> SignalSpec:
        s = int(np.random.default_rng([self.seed, spec.seed, req.index, req.cycle, k]).integers(2**31))
        return SignalSpec(spec.kind, spec.offset_hz, spec.bandwidth_hz, spec.power_db, s,
                          spec.symbol_rate_hz, spec.subcarrier_count, spec.cyclic_prefix_fraction)

    def __call__(self, req: ChannelRequest) -> IQBlock:
        content = self.contents.get(req.index, ChannelContent())
        silent = SignalSpec("CW", 0.0, 0.0, -math.inf)
        txs = [self._reseed(s, req, k) for k, s in enumerate(content.tx)] or [silent]
        incs = [self._reseed(s, req, 100 + k) for k, s in enumerate(content.incident)] or [silent]
        mixing = self.mixing or default_coupler(self.seed * 7919 + req.index)
        noise = NoiseSpec(self.sigma2, int(np.random.default_rng([self.seed, req.index, req.cycle]).integers(2**31)))
        block, _ = build_scenario(txs, incs, mixing, noise, self.n, self.sample_rate_hz, req.center_hz)
        return block


class RecordingProvider:
    """Captures read from ``<directory>/ch<index:04d>.iq`` files."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, req: ChannelRequest) -> IQBlock:
        block = iqio.read_iq(self.directory / f"ch{req.index:04d}.iq")
        return IQBlock(block.samples, block.sample_rate_hz, req.center_hz)


def psd_to_power_db(psd_level_db: float, bandwidth_hz: float, n: int, sample_rate_hz: float) -> float:
    """Source mean power whose in-band per-bin PSD sits at ``psd_level_db``."""
    return psd_level_db - 10 * math.log10(n * sample_rate_hz / bandwidth_hz)
