"""``fdmon`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical or convergence failure, 4 gate declined (nothing above the
noise floor to separate).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, adversary, bss, iqio, metrics, monitor, scenarios
from .errors import (CalibrationError, ConvergenceError, DegenerateInputError, FdmonError,
                     ParameterError, ScalingDegenerateError)
from .sigmodel import IQBlock, SpectrumFrame, dft, idft

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_GATED = 4

log = logging.getLogger("fdmon")


class UsageError(FdmonError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- manifest ----------------------------------------------------------------

class RunManifest:
    """Provenance record written next to every command's outputs."""

    def __init__(self, command: str, args: dict):
        self.command = command
        self.args = {k: (str(v) if isinstance(v, Path) else v)
                     for k, v in args.items() if not callable(v)}
        self.inputs: dict = {}
        self.outputs: list = []
        self.seeds: dict = {}
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def add_input(self, path):
        path = Path(path)
        h = hashlib.sha256()
        targets = [path] + ([iqio.sidecar_path(path)] if iqio.sidecar_path(path).exists() else [])
        for p in targets:
            h.update(p.read_bytes())
        self.inputs[str(path)] = h.hexdigest()

    def config_hash(self) -> str:
        doc = {"command": self.command, "args": self.args, "inputs": self.inputs}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def write(self, out_dir: Path, name: str = "manifest.json"):
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "config_hash": self.config_hash(),
            "args": self.args,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "wall_clock_s": time.perf_counter() - self._t0,
            **self.extra,
        }
        iqio.atomic_write_text(Path(out_dir) / name, json.dumps(doc, indent=2) + "\n")


def _out(out_dir: Path, manifest: RunManifest, name: str) -> Path:
    manifest.outputs.append(name)
    return out_dir / name


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    iqio.atomic_write_text(path, buf.getvalue())


def _psd_csv(path: Path, freqs, traces: dict, offset_db: float = 0.0):
    order = np.argsort(np.asarray(freqs), kind="stable")
    cols = {k: metrics.psd_db(v, offset_db)[order] for k, v in traces.items()}
    rows = []
    for i, f in enumerate(np.asarray(freqs)[order]):
        rows.append([f"{f:.3f}", *(f"{c[i]:.4f}" for c in cols.values())])
    _write_csv(path, ["freq_hz", *(f"{k}_psd_db" for k in cols)], rows)


# --- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    sc = scenarios.ScenarioFile.load(args.scenario)
    out = Path(args.out)
    man = RunManifest("generate", vars(args))
    man.add_input(args.scenario)
    man.seeds = {"scenario": sc.seed, "noise": sc.noise.seed,
                 "tx": [s.seed for s in sc.tx], "incident": [s.seed for s in sc.incident]}
    block, truth = sc.build()
    iqio.write_iq(_out(out, man, "capture.iq"), block)
    iqio.write_iq(_out(out, man, "truth.iq"), IQBlock(truth, block.sample_rate_hz, block.center_freq_hz))
    man.outputs += ["capture.iq.json", "truth.iq.json"]
    man.extra["mixing_matrix"] = bss.matrix_to_json(sc.mixing.a)
    man.write(out)
    print(f"wrote {out / 'capture.iq'} ({block.n} samples x 2 ports) and ground truth")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    sc = scenarios.ScenarioFile.load(args.scenario)
    a = scenarios.stale_matrix(sc.mixing, args.drift_db) if args.drift_db else sc.mixing
    k0, m0, k1, m1 = scenarios.calibration_captures(sc, a, args.seed)
    cal = bss.smc_calibrate(k0, m0, k1, m1,
                            meta={"scenario": str(args.scenario), "drift_db": args.drift_db,
                                  "seed": args.seed, "center_freq_hz": sc.center_freq_hz})
    out = Path(args.out)
    man = RunManifest("calibrate", vars(args))
    man.add_input(args.scenario)
    man.seeds = {"calibration": args.seed}
    man.outputs.append(out.name)
    iqio.atomic_write_text(out, cal.to_json() + "\n")
    man.write(out.parent, out.name + ".manifest.json")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_separate(args) -> int:
    if args.method == "smc" and not args.cal:
        raise UsageError("--method smc requires --cal")
    block = iqio.read_iq(args.iq)
    out = Path(args.out)
    man = RunManifest("separate", vars(args))
    man.add_input(args.iq)
    gate_cfg = monitor.GateConfig(args.noise_floor_db, args.margin_db)
    if not args.no_gate and not monitor.gate(block, gate_cfg, args.psd_offset_db):
        man.extra["status"] = "gate-declined"
        out.mkdir(parents=True, exist_ok=True)
        man.write(out)
        print("gate declined: no port is above the noise floor + margin", file=sys.stderr)
        return EXIT_GATED
    frame = dft(block)
    if args.method == "smc":
        man.add_input(args.cal)
        cal = bss.SmcCalibration.from_json(Path(args.cal).read_text())
        res = bss.smc_separate(frame, cal)
    else:
        res = bss.separate(frame)
    est = SpectrumFrame(res.x_hat, frame.bin_freqs_hz, frame.source_block_meta)
    iqio.write_iq(_out(out, man, "estimates.iq"), idft(est))
    man.outputs.append("estimates.iq.json")
    iqio.atomic_write_text(_out(out, man, "result.json"), json.dumps(res.to_dict(), indent=2) + "\n")
    _psd_csv(_out(out, man, "psd.csv"), frame.bin_freqs_hz,
             {"r0": frame.bins[0], "r1": frame.bins[1], "x0": res.x_hat[0], "x1": res.x_hat[1]},
             args.psd_offset_db)
    man.extra["status"] = "separated"
    man.write(out)
    print(f"{res.method}: permutation_applied={res.permutation_applied} "
          f"alignment={res.alignment_method} reliable={res.reliable}")
    return EXIT_OK


def _parse_band(text: str, label: str, n: int, fs: float) -> metrics.BandSet:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"band {text!r} must look like LO_HZ:HI_HZ") from None
    return metrics.band_from_range(lo, hi, n, fs, label)


def cmd_metrics(args) -> int:
    if args.campaign:
        return _metrics_campaign(args)
    if not args.estimates or not args.raw:
        raise UsageError("--estimates and --raw are required (or use --campaign)")
    est = iqio.read_iq(args.estimates)
    raw = iqio.read_iq(args.raw)
    if est.n != raw.n:
        raise ParameterError("estimates and raw capture differ in length")
    n, fs = raw.n, raw.sample_rate_hz
    if args.scenario:
        sc = scenarios.ScenarioFile.load(args.scenario)
        b_tx = metrics.band_from_spec(sc.tx[0], n, fs, "Tx")
        b_in = metrics.band_from_spec(sc.incident[0], n, fs, "In")
    elif args.tx_band and args.incident_band:
        b_tx = _parse_band(args.tx_band, "Tx", n, fs)
        b_in = _parse_band(args.incident_band, "In", n, fs)
    else:
        raise ParameterError("band definition missing: pass --scenario or both --tx-band and --incident-band")
    rep = metrics.isolation(dft(est).bins, dft(raw).bins, b_tx, b_in, args.allow_overlap)
    text = _csv_text(metrics.IsolationReport.CSV_HEADER, [rep.csv_row(args.id)])
    inputs = [args.estimates, args.raw] + ([args.scenario] if args.scenario else [])
    _emit_table(args, "metrics", text, inputs)
    return EXIT_OK


def _emit_table(args, command, text, inputs=()):
    if args.out:
        out = Path(args.out)
        man = RunManifest(command, vars(args))
        for p in inputs:
            man.add_input(p)
        man.outputs.append(out.name)
        iqio.atomic_write_text(out, text)
        man.write(out.parent, out.name + ".manifest.json")
    sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


CAMPAIGN_HEADER = ("tx_type", "incident_type", "ref_ttr_db", "ref_iir_db", "smc_ttr_db",
                   "smc_iir_db", "fdm_ttr_db", "fdm_iir_db")


def campaign_rows(seed: int = 0, drift_db: float = 3.0) -> list:
    """Six signal-type pairings: reference, stale-SMC and blind-separation isolation."""
    rows = []
    for tk, ik in scenarios.SIGNAL_PAIRINGS:
        sc = scenarios.pairing_scenario(tk, ik, seed)
        block, _ = sc.build()
        frame = dft(block)
        b_tx = metrics.band_from_spec(sc.tx[0], sc.n, sc.sample_rate_hz, "Tx")
        b_in = metrics.band_from_spec(sc.incident[0], sc.n, sc.sample_rate_hz, "In")
        k0, m0, k1, m1 = scenarios.calibration_captures(
            sc, scenarios.stale_matrix(sc.mixing, drift_db), seed)
        cal = bss.smc_calibrate(k0, m0, k1, m1)
        smc = metrics.isolation(bss.smc_separate(frame, cal).x_hat, frame.bins, b_tx, b_in)
        fdm = metrics.isolation(bss.separate(frame).x_hat, frame.bins, b_tx, b_in)
        rows.append([tk, ik, *(f"{v:.4f}" for v in (fdm.reference_ttr_db, fdm.reference_iir_db,
                                                      smc.ttr_db, smc.iir_db, fdm.ttr_db, fdm.iir_db))])
    return rows


def _metrics_campaign(args) -> int:
    text = _csv_text(CAMPAIGN_HEADER, campaign_rows(args.seed, args.drift_db))
    _emit_table(args, "metrics", text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = monitor.build_channel_plan(args.start, args.stop, args.channel_bw)
    out = Path(args.out)
    man = RunManifest("sweep", vars(args))
    if args.recordings:
        source = monitor.RecordingProvider(args.recordings)
        man.inputs[str(args.recordings)] = "directory"
    elif args.scenario:
        man.add_input(args.scenario)
        doc = scenarios.load_document(args.scenario)
        try:
            source = scenarios.sweep_provider_from_mapping(doc, plan)
        except scenarios.ConfigError as exc:
            raise scenarios.ConfigError(f"{args.scenario}: {exc}") from None
    else:
        raise UsageError("one of --scenario or --recordings is required")
    if args.limits:
        man.add_input(args.limits)
        doc = scenarios.load_document(args.limits)
        try:
            limits = monitor.PSDLimitProfile.from_mapping(doc)
        except ParameterError as exc:
            raise scenarios.ConfigError(f"{args.limits}: {exc}") from None
    else:
        limits = monitor.PSDLimitProfile((), args.default_limit_db)
    out.mkdir(parents=True, exist_ok=True)
    alerts_path = _out(out, man, "alerts.jsonl")
    alerts_path.write_text("")
    sink = monitor.JsonlAlertSink(alerts_path, args.webhook)
    if args.min_alert_interval:
        sink = monitor.DebouncedSink(sink, args.min_alert_interval)
    n_ch = len(plan)
    dwell = args.dwell_s

    def clock(req):
        return (req.cycle * n_ch + req.slot) * dwell

    gate_cfg = monitor.GateConfig(args.noise_floor_db, args.margin_db)
    man.seeds = {"schedule": args.seed}
    cycles = []
    last = None
    for rep in monitor.run_monitor(plan, source, limits, sink, schedule=args.policy,
                                   cycles=args.cycles, seed=args.seed, gate_cfg=gate_cfg,
                                   offset_db=args.psd_offset_db, workers=args.workers,
                                   clock=clock, user_id=args.user_id):
        cycles.append({**rep.summary(), "order_head": [int(i) for i in rep.order[:10]],
                       "failures": [{"channel": c.index, "error": c.error}
                                    for c in rep.channels if c.status == "failed"]})
        last = rep
    f, tx, inc = last.spectrum()
    _write_csv(_out(out, man, "spectrum.csv"), ["freq_hz", "tx_psd_db", "incident_psd_db"],
               [[f"{a:.3f}", f"{b:.4f}", f"{c:.4f}"] for a, b, c in zip(f, tx, inc)])
    man.extra.update({"channels": n_ch, "channel_bw_hz": plan.channel_bw_hz,
                      "span_hz": list(plan.span), "cycles": cycles})
    man.write(out)
    total = sum(c["alerts"] for c in cycles)
    print(f"{n_ch} channels, {len(cycles)} cycle(s), {total} alert(s); "
          f"median latency {np.median([c['median_latency_s'] for c in cycles]):.4f} s/channel")
    return EXIT_OK


def cmd_adversary(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.cycles < 1:
        raise UsageError("--cycles must be >= 1")
    out = Path(args.out) if args.out else None
    man = RunManifest("adversary", vars(args))
    man.seeds = {"simulation": args.seed}
    all_rows = []
    for n in args.n_channels:
        sc = adversary.AttackScenario(n, args.attacker, args.dwell, args.seed)
        st = adversary.simulate(sc, args.cycles, args.trials)
        all_rows += adversary.rows(n, st)
        print(f"N_C={n}: P_D(1) formula={adversary.pd_closed_form(n, 1):.6f} "
              f"empirical={st.p_first_detect_by_cycle[0]:.6f} "
              f"mean cycles formula={adversary.mean_detection_cycles(n):.4f} "
              f"empirical={st.mean_cycles:.4f} ({args.trials} trials, {args.attacker} attacker)")
    print(f"asymptote 1 - 1/e = {adversary.pd_asymptote():.6f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        adversary.write_csv(buf, all_rows)
        iqio.atomic_write_text(_out(out, man, "adversary.csv"), buf.getvalue())
        man.write(out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdmon", description="Full-duplex spectrum monitor toolkit.")
    p.add_argument("--version", action="version", version=f"fdmon {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a two-port capture from a scenario file")
    g.add_argument("--scenario", required=True, type=Path)
    g.add_argument("--out", required=True, type=Path)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("calibrate", help="simulate SMC calibration captures and write a calibration")
    c.add_argument("--scenario", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--drift-db", type=float, default=0.0,
                   help="calibrate against a coupler whose cross terms differ by this much")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("separate", help="separate a capture into transmitted and incident estimates")
    s.add_argument("--iq", required=True, type=Path)
    s.add_argument("--method", choices=("fdm", "smc"), default="fdm")
    s.add_argument("--cal", type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--noise-floor-db", type=float, default=None)
    s.add_argument("--margin-db", type=float, default=6.0)
    s.add_argument("--psd-offset-db", type=float, default=0.0)
    s.add_argument("--no-gate", action="store_true", help="separate even if the gate declines")
    s.set_defaults(func=cmd_separate)

    m = sub.add_parser("metrics", help="TTR/IIR isolation report")
    m.add_argument("--estimates", type=Path)
    m.add_argument("--raw", type=Path)
    m.add_argument("--scenario", type=Path, help="derive bands from the scenario's tx/incident specs")
    m.add_argument("--tx-band", help="LO_HZ:HI_HZ, baseband")
    m.add_argument("--incident-band", help="LO_HZ:HI_HZ, baseband (use --incident-band=LO:HI for negative LO)")
    m.add_argument("--allow-overlap", action="store_true")
    m.add_argument("--id", default="scenario")
    m.add_argument("--campaign", action="store_true", help="run the six signal-type pairings")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--drift-db", type=float, default=3.0)
    m.add_argument("--out", type=Path)
    m.set_defaults(func=cmd_metrics)

    w = sub.add_parser("sweep", help="run the channel-sweep monitor")
    w.add_argument("--start", type=float, default=monitor.DEFAULT_START_HZ)
    w.add_argument("--stop", type=float, default=monitor.DEFAULT_STOP_HZ)
    w.add_argument("--channel-bw", type=float, default=monitor.DEFAULT_CHANNEL_BW_HZ)
    w.add_argument("--scenario", type=Path)
    w.add_argument("--recordings", type=Path)
    w.add_argument("--limits", type=Path)
    w.add_argument("--default-limit-db", type=float, default=60.0)
    w.add_argument("--policy", choices=("sequential", "random"), default="sequential")
    w.add_argument("--cycles", type=int, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--noise-floor-db", type=float, default=None)
    w.add_argument("--margin-db", type=float, default=6.0)
    w.add_argument("--psd-offset-db", type=float, default=0.0)
    w.add_argument("--dwell-s", type=float, default=0.17, help="logical time per channel visit")
    w.add_argument("--user-id", default="")
    w.add_argument("--webhook")
    w.add_argument("--min-alert-interval", type=float, default=0.0)
    w.add_argument("--out", required=True, type=Path)
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("adversary", help="detection probability of a hopping attacker")
    a.add_argument("--n-channels", type=int, nargs="+", default=[214])
    a.add_argument("--cycles", type=int, default=10)
    a.add_argument("--trials", type=int, default=10000)
    a.add_argument("--attacker", choices=adversary.POLICIES, default="uniform")
    a.add_argument("--dwell", type=int, default=1)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", type=Path)
    a.set_defaults(func=cmd_adversary)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"fdmon {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fdmon {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceError, DegenerateInputError, ScalingDegenerateError,
            CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"fdmon {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
