"""Declarative scenario files and the canonical simulated experiments.

Scenario files are TOML (JSON accepted, chosen by the ``.json`` suffix)::

    n = 20000
    sample_rate_hz = 27.65e6
    center_freq_hz = 3.665e9
    seed = 1

    [tx]
    kind = "OFDM"
    offset_hz = 5e6
    bandwidth_hz = 4e6

    [[incident]]
    kind = "BPSK"
    offset_hz = -6e6
    bandwidth_hz = 4e6

    [mixing]                 # optional; default is the reference coupler
    magnitudes_db = [[0.01, -7.10], [-19.29, 0.01]]
    phases = "random"        # or phases_deg = [[0, 90], [45, 0]]

    [noise]
    snr_db = 30              # or sigma2 = 1e-3
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from .errors import ParameterError
from .monitor import (ChannelContent, ChannelPlan, PSDLimitProfile, ScenarioProvider,
                      build_channel_plan, psd_to_power_db)
from .sigmodel import (IQBlock, MixingMatrix, NoiseSpec, SignalSpec, build_scenario,
                       default_coupler)

DEFAULT_N = 20000
DEFAULT_FS = 27.65e6
DEFAULT_SNR_DB = 30.0

SIGNAL_PAIRINGS = (("CW", "OFDM"), ("OFDM", "CW"), ("CW", "BPSK"),
                   ("BPSK", "CW"), ("OFDM", "BPSK"), ("BPSK", "OFDM"))


class ConfigError(ParameterError):
    """A configuration document failed to parse or validate."""


def load_document(path) -> dict:
    """Parse a TOML or JSON file into a dict, with line/column on syntax errors."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    else:
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return doc


def _derive(seed: int, *tags: int) -> int:
    return int(np.random.default_rng([seed, *tags]).integers(2**31))


def _at(where: str, key: str) -> str:
    return f"{where}.{key}" if where else key


def _check_keys(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'top level'}: expected a table")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where or 'top level'}: unknown field(s) {unknown}")


_SIGNAL_KEYS = ("kind", "offset_hz", "bandwidth_hz", "power_db", "seed", "symbol_rate_hz",
                "subcarrier_count", "cyclic_prefix_fraction")


def _signal(doc, where, default_seed) -> SignalSpec:
    _check_keys(doc, _SIGNAL_KEYS, where)
    if "kind" not in doc:
        raise ConfigError(f"{where}: missing field 'kind'")
    kw = dict(doc)
    kw.setdefault("seed", default_seed)
    try:
        return SignalSpec(**kw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ScenarioFile:
    tx: tuple
    incident: tuple
    mixing: MixingMatrix
    noise: NoiseSpec
    n: int = DEFAULT_N
    sample_rate_hz: float = DEFAULT_FS
    center_freq_hz: float = 0.0
    seed: int = 0

    @classmethod
    def from_mapping(cls, doc: dict, where: str = "") -> "ScenarioFile":
        _check_keys(doc, ("tx", "incident", "mixing", "noise", "n", "sample_rate_hz",
                          "center_freq_hz", "seed"), where)
        seed = int(doc.get("seed", 0))
        if "tx" not in doc or "incident" not in doc:
            raise ConfigError(f"{where or 'top level'}: 'tx' and 'incident' are required")
        txs = doc["tx"] if isinstance(doc["tx"], list) else [doc["tx"]]
        incs = doc["incident"] if isinstance(doc["incident"], list) else [doc["incident"]]
        tx = tuple(_signal(d, _at(where, f"tx[{k}]"), _derive(seed, 1, k)) for k, d in enumerate(txs))
        inc = tuple(_signal(d, _at(where, f"incident[{k}]"), _derive(seed, 2, k))
                    for k, d in enumerate(incs))
        mixing = default_coupler(seed)
        if "mixing" in doc:
            m = doc["mixing"]
            _check_keys(m, ("magnitudes_db", "phases", "phases_deg"), _at(where, "mixing"))
            mag = np.asarray(m.get("magnitudes_db", default_mag_db()), dtype=float)
            if mag.shape != (2, 2):
                raise ConfigError(f"{_at(where, 'mixing.magnitudes_db')}: expected a 2x2 array")
            if "phases_deg" in m:
                ph = np.deg2rad(np.asarray(m["phases_deg"], dtype=float))
                if ph.shape != (2, 2):
                    raise ConfigError(f"{_at(where, 'mixing.phases_deg')}: expected a 2x2 array")
            elif m.get("phases", "random") == "random":
                ph = np.random.default_rng([seed, 0xC0]).uniform(0, 2 * np.pi, size=(2, 2))
            elif m["phases"] == "zero":
                ph = np.zeros((2, 2))
            else:
                raise ConfigError(f"{_at(where, 'mixing.phases')}: expected 'random' or 'zero'")
            mixing = MixingMatrix.from_db(mag, ph)
        noise_doc = doc.get("noise", {"snr_db": DEFAULT_SNR_DB})
        _check_keys(noise_doc, ("snr_db", "sigma2", "seed"), _at(where, "noise"))
        nseed = int(noise_doc.get("seed", _derive(seed, 3)))
        if "sigma2" in noise_doc:
            noise = NoiseSpec(float(noise_doc["sigma2"]), nseed)
        else:
            noise = NoiseSpec.from_snr(float(noise_doc.get("snr_db", DEFAULT_SNR_DB)), nseed)
        try:
            return cls(tx, inc, mixing, noise, int(doc.get("n", DEFAULT_N)),
                       float(doc.get("sample_rate_hz", DEFAULT_FS)),
                       float(doc.get("center_freq_hz", 0.0)), seed)
        except (ParameterError, ValueError) as exc:
            raise ConfigError(f"{where or 'top level'}: {exc}") from None

    @classmethod
    def load(cls, path) -> "ScenarioFile":
        doc = load_document(path)
        try:
            return cls.from_mapping(doc)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def build(self):
        """``(IQBlock, ground_truth)`` for this scenario."""
        return build_scenario(self.tx, self.incident, self.mixing, self.noise, self.n,
                              self.sample_rate_hz, self.center_freq_hz)


def default_mag_db():
    mags = np.abs(default_coupler(0).a)
    return (20 * np.log10(mags)).tolist()


def make_scenario(tx, incident, seed: int = 0, snr_db: float = DEFAULT_SNR_DB, n: int = DEFAULT_N,
                  sample_rate_hz: float = DEFAULT_FS, center_freq_hz: float = 0.0,
                  mixing: MixingMatrix | None = None) -> ScenarioFile:
    tx = (tx,) if isinstance(tx, SignalSpec) else tuple(tx)
    incident = (incident,) if isinstance(incident, SignalSpec) else tuple(incident)
    return ScenarioFile(tx, incident, mixing or default_coupler(seed),
                        NoiseSpec.from_snr(snr_db, _derive(seed, 3)), n, sample_rate_hz,
                        center_freq_hz, seed)


def pairing_scenario(tx_kind: str, incident_kind: str, seed: int = 0,
                     snr_db: float = DEFAULT_SNR_DB) -> ScenarioFile:
    """Disjoint-band pairing: tx at +3 MHz, incident at -8 MHz, 4 MHz wide, equal power."""
    tx = SignalSpec(tx_kind, 3e6, 4e6, 0.0, _derive(seed, 1, 0))
    inc = SignalSpec(incident_kind, -8e6, 4e6, 0.0, _derive(seed, 2, 0))
    return make_scenario(tx, inc, seed, snr_db, center_freq_hz=3.665e9)


def types_scenario(seed: int = 0) -> ScenarioFile:
    """OFDM transmission beside a BPSK incident signal, 4 MHz each, 11 MHz apart."""
    tx = SignalSpec("OFDM", 5.5e6, 4e6, 0.0, _derive(seed, 1, 0))
    inc = SignalSpec("BPSK", -5.5e6, 4e6, 0.0, _derive(seed, 2, 0))
    return make_scenario(tx, inc, seed, center_freq_hz=3.6645e9)


def overlap_scenario(seed: int = 0) -> ScenarioFile:
    """Two 4 MHz OFDM signals sharing 2 MHz: tx at -1 MHz, incident at +1 MHz."""
    tx = SignalSpec("OFDM", -1e6, 4e6, 0.0, _derive(seed, 1, 0))
    inc = SignalSpec("OFDM", 1e6, 4e6, 0.0, _derive(seed, 2, 0))
    return make_scenario(tx, inc, seed, center_freq_hz=5.759e9)


OVERLAP_TX_ONLY_HZ = (-3e6, -1e6)
OVERLAP_INCIDENT_ONLY_HZ = (1e6, 3e6)


def bandwidth_scenario(bandwidth_hz: float, seed: int = 0) -> ScenarioFile:
    """OFDM tx of varying width at +6 MHz beside a 4 MHz OFDM incident at -6 MHz.

    The tx power scales with its bandwidth so the in-band PSD stays fixed.
    """
    tx = SignalSpec("OFDM", 6e6, bandwidth_hz, 10 * math.log10(bandwidth_hz / 4e6),
                    _derive(seed, 1, 0))
    inc = SignalSpec("OFDM", -6e6, 4e6, 0.0, _derive(seed, 2, 0))
    return make_scenario(tx, inc, seed, center_freq_hz=2.448e9)


def stale_matrix(a: MixingMatrix, drift_db: float = 3.0) -> MixingMatrix:
    """Cross-coupling terms drifted by ``+drift_db`` (a[0,1]) and ``-drift_db`` (a[1,0])."""
    m = a.a.copy()
    m[0, 1] *= 10 ** (drift_db / 20)
    m[1, 0] *= 10 ** (-drift_db / 20)
    return MixingMatrix(m)


def calibration_captures(sc: ScenarioFile, a: MixingMatrix, seed: int = 0):
    """Single-source captures through ``a`` for SMC calibration.

    Returns ``(known_tx, measured_tx, known_incident, measured_incident)``
    as DFT bins (references) and spectrum frames (captures), ready for
    :func:`fdmon.bss.smc_calibrate`. The references are the scenario's own
    first tx and incident specs with fresh seeds.
    """
    from .sigmodel import dft, generate, mix

    tx = sc.tx[0]
    inc = sc.incident[0]
    tx = SignalSpec(tx.kind, tx.offset_hz, tx.bandwidth_hz, tx.power_db, _derive(seed, 7, 0))
    inc = SignalSpec(inc.kind, inc.offset_hz, inc.bandwidth_hz, inc.power_db, _derive(seed, 7, 1))
    k0 = generate(tx, sc.n, sc.sample_rate_hz)
    k1 = generate(inc, sc.n, sc.sample_rate_hz)
    zero = np.zeros_like(k0)
    noise = lambda t: NoiseSpec(sc.noise.sigma2, _derive(seed, 8, t))  # noqa: E731
    m0 = mix(np.vstack([k0, zero]), a, noise(0), sc.sample_rate_hz, sc.center_freq_hz)
    m1 = mix(np.vstack([zero, k1]), a, noise(1), sc.sample_rate_hz, sc.center_freq_hz)
    return np.fft.fft(k0), dft(m0), np.fft.fft(k1), dft(m1)


# --- monitor test plan -------------------------------------------------------

MONITOR_SIGMA2 = 1e-3
MONITOR_LIMIT_ABOVE_FLOOR_DB = 20.0


@dataclass(frozen=True)
class MonitorScenario:
    plan: ChannelPlan
    provider: ScenarioProvider
    limits: PSDLimitProfile
    violating_channels: tuple
    incident_only_channels: tuple
    declared_channels: tuple
    noise_floor_db: float


def monitor_scenario(seed: int = 0, n_channels: int = 20, n_violations: int = 3,
                     n_incident_only: int = 2, n_declared: int = 2, violation_db: float = 15.0,
                     incident_db: float = 25.0, n: int = 8192,
                     limit_above_floor_db: float = MONITOR_LIMIT_ABOVE_FLOOR_DB) -> MonitorScenario:
    """A synthetic sweep plan with known violations.

    * declared channels: the user's transmission sits inside a declared band
      whose limit it respects;
    * violating channels: a 2 MHz harmonic-like emission outside any declared
      band, ``violation_db`` above the default limit;
    * incident-only channels: a strong external signal, ``incident_db``
      above the default limit at port 1, with the transmitter silent.
    """
    rng = np.random.default_rng([seed, 0x5CE])
    fs = DEFAULT_FS
    plan = build_channel_plan(1000e6, 1000e6 + n_channels * fs, fs)
    picks = rng.permutation(n_channels)
    viol = tuple(sorted(int(i) for i in picks[:n_violations]))
    inc_only = tuple(sorted(int(i) for i in picks[n_violations:n_violations + n_incident_only]))
    declared = tuple(sorted(int(i) for i in picks[n_violations + n_incident_only:
                                                    n_violations + n_incident_only + n_declared]))
    floor_db = 10 * math.log10(n * MONITOR_SIGMA2)
    limit_db = floor_db + limit_above_floor_db
    kinds = ("BPSK", "OFDM")
    contents, entries = {}, []
    for i in viol:
        bw = 2e6
        off = float(rng.uniform(-8e6, 8e6))
        p = psd_to_power_db(limit_db + violation_db, bw, n, fs)
        contents[i] = ChannelContent(tx=(SignalSpec(kinds[rng.integers(2)], off, bw, p, 0),))
    for i in inc_only:
        bw = 4e6
        off = float(rng.uniform(-7e6, 7e6))
        p = psd_to_power_db(limit_db + incident_db, bw, n, fs)
        contents[i] = ChannelContent(incident=(SignalSpec(kinds[rng.integers(2)], off, bw, p, 0),))
    for i in declared:
        bw = 4e6
        off = float(rng.uniform(-7e6, 7e6))
        p = psd_to_power_db(limit_db + 10.0, bw, n, fs)
        contents[i] = ChannelContent(tx=(SignalSpec(kinds[rng.integers(2)], off, bw, p, 0),))
        c = plan.channels[i]
        entries.append((c + off - 3e6, c + off + 3e6, limit_db + 30.0))
    provider = ScenarioProvider(contents, n=n, sample_rate_hz=fs, sigma2=MONITOR_SIGMA2, seed=seed)
    return MonitorScenario(plan, provider, PSDLimitProfile(tuple(entries), limit_db), viol,
                           inc_only, declared, floor_db)


def scenario_block(sc: ScenarioFile) -> IQBlock:
    return sc.build()[0]


def sweep_provider_from_mapping(doc: dict, plan: ChannelPlan, where: str = "") -> ScenarioProvider:
    """Build a simulated block provider from a sweep scenario document::

        [capture]
        n = 8192
        sigma2 = 1e-3
        seed = 0

        [[channel]]
        index = 3                       # position in the channel plan
        tx = [{ kind = "BPSK", offset_hz = 2e6, bandwidth_hz = 2e6, power_db = -20 }]
        incident = []
    """
    _check_keys(doc, ("capture", "channel"), where)
    cap = doc.get("capture", {})
    _check_keys(cap, ("n", "sigma2", "seed"), _at(where, "capture"))
    seed = int(cap.get("seed", 0))
    contents = {}
    for k, ch in enumerate(doc.get("channel", [])):
        loc = _at(where, f"channel[{k}]")
        _check_keys(ch, ("index", "tx", "incident"), loc)
        if "index" not in ch:
            raise ConfigError(f"{loc}: missing field 'index'")
        idx = int(ch["index"])
        if not 0 <= idx < len(plan):
            raise ConfigError(f"{loc}.index: {idx} outside the {len(plan)}-channel plan")
        tx = tuple(_signal(d, f"{loc}.tx[{j}]", _derive(seed, 4, idx, j))
                   for j, d in enumerate(ch.get("tx", [])))
        inc = tuple(_signal(d, f"{loc}.incident[{j}]", _derive(seed, 5, idx, j))
                    for j, d in enumerate(ch.get("incident", [])))
        contents[idx] = ChannelContent(tx, inc)
    try:
        return ScenarioProvider(contents, n=int(cap.get("n", 8192)), sample_rate_hz=plan.channel_bw_hz,
                                sigma2=float(cap.get("sigma2", MONITOR_SIGMA2)), seed=seed)
    except ValueError as exc:
        raise ConfigError(f"{_at(where, 'capture')}: {exc}") from None
