"""Command-line entry point for the simulator and recognition pipeline.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Output artifacts land in --out (default: $NFCPAD_OUT or the
current directory); a lock file guards each output directory against
concurrent runs.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import circuit, coil, features, harness, iso15693, recognition, synth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def _output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".nfcpad.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if that run is dead)", EXIT_CONFIG)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("NFCPAD_OUT", ".")
    return Path(root)


def _emit(payload: dict):
    json.dump(payload, sys.stdout, indent=1, default=str)
    sys.stdout.write("\n")


# -- subcommands -------------------------------------------------------------

def _cmd_encode_frame(args):
    mask = bytes.fromhex(args.mask) if args.mask else b""
    req = iso15693.InventoryRequest(
        flags=int(args.flags, 16), command=int(args.cmd, 16),
        afi=int(args.afi, 16) if args.afi else None,
        mask_len=int(args.mask_len, 16), mask=mask)
    frame = iso15693.encode_inventory(req)
    fields = [("SOF", "-", "marker"),
              ("flags", 8, f"0x{req.flags:02X}"),
              ("command", 8, f"0x{req.command:02X}")]
    if req.afi is not None:
        fields.append(("afi", 8, f"0x{req.afi:02X}"))
    fields.append(("mask_len", 8, f"0x{req.mask_len:02X}"))
    if req.mask:
        fields.append(("mask", req.mask_len, "0x" + req.mask.hex().upper()))
    fields.append(("crc", 16, f"0x{req.crc:04X} (wire "
                   + iso15693.crc16_bytes(req.payload_bytes()).hex() + ")"))
    fields.append(("EOF", "-", "marker"))
    for name, bits, value in fields:
        print(f"{name:>9}  {str(bits):>3}  {value}")
    _emit({"hex": frame.to_hex(), "payload_bits": frame.n_bits,
           "crc": f"0x{req.crc:04X}"})
    return EXIT_OK


def _cmd_simulate_dataset(args):
    cfg_kw = {}
    if args.config:
        cfg_kw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.cards is not None:
        cfg_kw["n_cards"] = args.cards
    if args.presses is not None:
        cfg_kw["n_presses"] = args.presses
    if args.orientations is not None:
        cfg_kw["n_orientations"] = args.orientations
    if args.seed is not None:
        cfg_kw["master_seed"] = args.seed
    if args.snr is not None:
        cfg_kw["snr_db"] = args.snr
    try:
        cfg = harness.DatasetConfig(**cfg_kw)
    except TypeError as exc:
        raise CliError(f"unknown dataset config key: {exc}", EXIT_CONFIG)
    out = _out_dir(args) / "dataset"
    with _output_lock(out):
        man = harness.generate_dataset(
            out, cfg, progress=lambda m: print(m, file=sys.stderr))
    _emit({"dataset": str(out), "entries": man.n_entries,
           "calibration": len(man.by_role(harness.ROLE_CALIBRATION)),
           "target_eval": len(man.by_role(harness.ROLE_TARGET))})
    return EXIT_OK


def _pipeline_for(man: harness.DatasetManifest) -> harness.PressPipeline:
    return harness.PressPipeline(man.config.synth)


def _cmd_calibrate(args):
    man = harness.load_manifest(Path(args.dataset))
    pipe = _pipeline_for(man)
    stats, tables = harness.calibrate(man, pipe, alpha=args.alpha)
    out = _out_dir(args)
    with _output_lock(out):
        recognition.save_calibration(out / "calibration", stats, tables)
    _emit({"calibration": str(out / "calibration"),
           "classes": list(stats.classes),
           "samples": stats.total, "alpha": args.alpha})
    return EXIT_OK


def _cmd_evaluate(args):
    man = harness.load_manifest(Path(args.dataset))
    stats, tables = recognition.load_calibration(Path(args.calibration))
    pipe = _pipeline_for(man)
    Ze, ye = harness.eval_embeddings(man, pipe)
    out = _out_dir(args)
    reports = {}
    with _output_lock(out):
        for m in args.methods:
            table = tables[m].at_alpha(args.alpha)
            rep = harness.evaluate(m, stats, table, Ze, ye)
            reports[m] = harness.report_to_json(rep)
            harness.decisions_to_csv(out / f"decisions_{m}.csv", stats,
                                     table, Ze, ye, m)
        (out / "eval_report.json").write_text(
            json.dumps(reports, indent=1), encoding="utf-8")
    _emit(reports)
    return EXIT_OK


def _cmd_sweep_alpha(args):
    man = harness.load_manifest(Path(args.dataset))
    stats, tables = recognition.load_calibration(Path(args.calibration))
    pipe = _pipeline_for(man)
    Ze, ye = harness.eval_embeddings(man, pipe)
    reports = harness.sweep_alpha(stats, tables, Ze, ye, args.alphas,
                                  methods=args.methods)
    out = _out_dir(args)
    with _output_lock(out):
        payload = [harness.report_to_json(r) for r in reports]
        (out / "alpha_sweep.json").write_text(json.dumps(payload, indent=1),
                                              encoding="utf-8")
        rows = [{"x": r.alpha, "far": r.far_pct, "frr": r.frr_pct,
                 "method": r.method} for r in reports]
        _write_rate_plotdata(out / "alpha_sweep_plot.json", rows, "alpha",
                             "rate (%)", "acceptance-risk sweep")
    _emit({"reports": len(reports), "out": str(out / "alpha_sweep.json")})
    return EXIT_OK


def _cmd_sweep_snr(args):
    man = harness.load_manifest(Path(args.dataset))
    pipe = _pipeline_for(man)
    reports = harness.sweep_snr(man, args.snrs, methods=args.methods,
                                seeds=tuple(range(args.seeds)),
                                alpha=args.alpha, pipeline=pipe,
                                progress=lambda m: print(m, file=sys.stderr))
    out = _out_dir(args)
    with _output_lock(out):
        payload = [harness.report_to_json(r) for r in reports]
        (out / "snr_sweep.json").write_text(json.dumps(payload, indent=1),
                                            encoding="utf-8")
        rows = [{"x": r.snr_db, "ar": r.ar_pct, "method": r.method}
                for r in reports]
        series = {}
        for r in rows:
            series.setdefault(r["method"], {}).setdefault(r["x"], []).append(r["ar"])
        plot = {"kind": "lines", "title": "recognition vs noise",
                "xlabel": "SNR (dB)", "ylabel": "AR (%)",
                "series": [{"label": m,
                            "x": sorted(v),
                            "y": [float(np.mean(v[s])) for s in sorted(v)]}
                           for m, v in series.items()]}
        (out / "snr_sweep_plot.json").write_text(json.dumps(plot, indent=1),
                                                 encoding="utf-8")
    _emit({"reports": len(reports), "out": str(out / "snr_sweep.json")})
    return EXIT_OK


def _cmd_sweep_s11(args):
    reader = circuit.table_reader()
    card = circuit.table_card()
    button = circuit.table_button()
    couplings = circuit.bench_couplings(reader, card, button,
                                        dz_card=args.dz_card)
    sweeps = {}
    for idx in [None] + list(range(9)):
        sweeps[idx] = circuit.reflection_sweep(
            reader, card, button if idx is not None else None, couplings,
            args.f_lo, args.f_hi, args.points, idx)
    out = _out_dir(args)
    with _output_lock(out):
        circuit.sweep_to_csv(out / "s11_sweep.csv", sweeps)
        circuit.save_plotdata(out / "s11_sweep_plot.json",
                              circuit.sweep_to_plotdata(
                                  sweeps, "reflection coefficient", "|S11|"))
    _emit({"csv": str(out / "s11_sweep.csv"),
           "plot": str(out / "s11_sweep_plot.json")})
    return EXIT_OK


def _cmd_sweep_current(args):
    reader = circuit.table_reader()
    card = circuit.table_card()
    button = circuit.table_button()
    couplings = circuit.bench_couplings(reader, card, button,
                                        dz_card=args.dz_card)
    f_grid = np.linspace(args.f_lo, args.f_hi, args.points)
    curves = circuit.reader_current_per_button(reader, card, button,
                                               couplings, f_grid)
    out = _out_dir(args)
    with _output_lock(out):
        import csv as _csv
        with open(out / "reader_current.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["f_Hz"] + list(curves))
            for i, f in enumerate(f_grid):
                writer.writerow([f"{f:.1f}"]
                                + [f"{curves[k][i]:.9e}" for k in curves])
        base = curves["card_only"]
        plot = {"kind": "lines", "title": "reader current deviation",
                "xlabel": "frequency (Hz)", "ylabel": "| |i1| - baseline |",
                "series": [{"label": k, "x": list(map(float, f_grid)),
                            "y": [abs(v) for v in (curves[k] - base)]}
                           for k in curves if k != "card_only"]}
        (out / "reader_current_plot.json").write_text(
            json.dumps(plot, indent=1), encoding="utf-8")
    _emit({"csv": str(out / "reader_current.csv")})
    return EXIT_OK


def _cmd_infer(args):
    stats, tables = recognition.load_calibration(Path(args.calibration))
    pipe = harness.PressPipeline()
    trace = synth.read_trace(Path(args.trace))
    z = pipe.embed(trace)
    table = tables[args.method].at_alpha(args.alpha)
    decider = {"mahalanobis": recognition.decide,
               "euclidean": recognition.decide_euclidean,
               "distribution": recognition.decide_distribution}[args.method]
    decision = decider(z, stats, table)
    _emit({"predicted_class": decision.predicted_class,
           "distance": decision.distance,
           "threshold": decision.threshold,
           "accepted": bool(decision.accepted),
           "action": "accept" if decision.accepted else "re-enter"})
    return EXIT_OK


def _cmd_plot(args):
    import matplotlib
    matplotlib.use("SVG")
    import matplotlib.pyplot as plt

    payload = json.loads(Path(args.plotdata).read_text(encoding="utf-8"))
    if payload.get("kind") != "lines":
        raise CliError(f"unsupported plot kind {payload.get('kind')!r}",
                       EXIT_DATA)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for series in payload["series"]:
        ax.plot(series["x"], series["y"], label=series["label"], lw=1.2)
    ax.set_xlabel(payload.get("xlabel", ""))
    ax.set_ylabel(payload.get("ylabel", ""))
    ax.set_title(payload.get("title", ""))
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    out = Path(args.svg) if args.svg else Path(args.plotdata).with_suffix(".svg")
    fig.savefig(out, format="svg")
    plt.close(fig)
    _emit({"svg": str(out)})
    return EXIT_OK


def _write_rate_plotdata(path, rows, xlabel, ylabel, title):
    series = {}
    for r in rows:
        for key in ("far", "frr"):
            series.setdefault(f"{r['method']} {key.upper()}", []).append(
                (r["x"], r[key]))
    payload = {"kind": "lines", "title": title, "xlabel": xlabel,
               "ylabel": ylabel,
               "series": [{"label": k, "x": [p[0] for p in sorted(v)],
                           "y": [p[1] for p in sorted(v)]}
                          for k, v in series.items()]}
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfcpad",
        description="virtual PIN pad simulator and press recognition")
    parser.add_argument("--out", help="output directory "
                        "(default: $NFCPAD_OUT or cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode-frame", help="build an inventory frame")
    p.add_argument("--flags", default="02")
    p.add_argument("--cmd", default="21")
    p.add_argument("--afi", default=None)
    p.add_argument("--mask-len", dest="mask_len", default="08")
    p.add_argument("--mask", default="00")
    p.set_defaults(func=_cmd_encode_frame)

    p = sub.add_parser("simulate-dataset", help="synthesize a press dataset")
    p.add_argument("--config", help="JSON file of DatasetConfig overrides")
    p.add_argument("--cards", type=int)
    p.add_argument("--presses", type=int)
    p.add_argument("--orientations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=float)
    p.set_defaults(func=_cmd_simulate_dataset)

    p = sub.add_parser("calibrate", help="fit stats and thresholds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float, default=harness.DEFAULT_ALPHA)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("evaluate", help="score the target split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--alpha", type=float, default=harness.DEFAULT_ALPHA)
    p.add_argument("--methods", nargs="+", default=list(recognition.METHODS),
                   choices=recognition.METHODS)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep-alpha", help="risk-level sweep")
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--alphas", nargs="+", type=float,
                   default=[0.01, 0.02, 0.04, 0.06, 0.08, 0.10])
    p.add_argument("--methods", nargs="+", default=["mahalanobis"],
                   choices=recognition.METHODS)
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("sweep-snr", help="noise-robustness sweep")
    p.add_argument("--dataset", required=True)
    p.add_argument("--snrs", nargs="+", type=float,
                   default=[0.0, 5.0, 10.0, 15.0, 20.0, 30.0])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--alpha", type=float, default=harness.DEFAULT_ALPHA)
    p.add_argument("--methods", nargs="+", default=list(recognition.METHODS),
                   choices=recognition.METHODS)
    p.set_defaults(func=_cmd_sweep_snr)

    p = sub.add_parser("sweep-s11", help="reflection-coefficient sweep")
    p.add_argument("--f-lo", type=float, default=13.06e6)
    p.add_argument("--f-hi", type=float, default=14.06e6)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--dz-card", type=float, default=5e-3)
    p.set_defaults(func=_cmd_sweep_s11)

    p = sub.add_parser("sweep-current", help="reader-current sweep")
    p.add_argument("--f-lo", type=float, default=13.06e6)
    p.add_argument("--f-hi", type=float, default=14.06e6)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--dz-card", type=float, default=5e-3)
    p.set_defaults(func=_cmd_sweep_current)

    p = sub.add_parser("infer", help="decide one trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--alpha", type=float, default=harness.DEFAULT_ALPHA)
    p.add_argument("--method", default="mahalanobis",
                   choices=recognition.METHODS)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("plot", help="render plot-data JSON to SVG")
    p.add_argument("--plotdata", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=_cmd_plot)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc!r}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, iso15693.FrameError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (recognition.CalibrationError, circuit.SingularSystemError,
            coil.QuadratureError, synth.TriggerError,
            iso15693.DecodeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
