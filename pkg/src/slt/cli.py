"""Command-line interface: ``slt {simulate,dataset,train,emulate,evaluate,events}``.

Every command takes ``--config`` (a JSON run configuration or the name of a
bundled preset such as ``desk.json``) and any number of ``--set
section.key=value`` overrides.  Outputs are first written with a
``.partial`` suffix and renamed on success; the fully resolved
configuration is written next to each output as ``<output>.config.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 file-format or I/O error.  Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

STOCHASTIC = ("simulate", "train", "emulate", "events")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, 2)


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    sys.exit(code)


def build_parser():
    p = _Parser(prog="slt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_required):
        sp.add_argument("--config", help="run configuration JSON or preset name")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override, e.g. solver.t_max=200")
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--threads", type=int, default=None,
                        help="thread count for numerical libraries (wall time only)")
        sp.add_argument("--out", required=True, help="output path")

    sp = sub.add_parser("simulate", help="run the solver and record U(y, t)")
    common(sp, True)
    sp.add_argument("--members", type=int, default=1)
    sp.add_argument("--format", choices=("f8", "f4"), default="f8")

    sp = sub.add_parser("dataset", help="split a record and attach normalisation")
    common(sp, False)
    sp.add_argument("--input", required=True)

    sp = sub.add_parser("train", help="train the emulator on a dataset")
    common(sp, True)
    sp.add_argument("--dataset", required=True)

    for name, helptext in (("emulate", "ensemble forecast from a recorded history"),
                           ("events", "time-to-event statistics of an ensemble")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, True)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--record", required=True)
        sp.add_argument("--t0", type=float, default=None)
        sp.add_argument("--members", type=int, default=None)
        sp.add_argument("--horizon", type=int, default=None)
        if name == "events":
            sp.add_argument("--event", choices=("coalescence", "nucleation"), required=True)
            sp.add_argument("--lead", type=int, default=None)

    sp = sub.add_parser("evaluate", help="diagnostics of a forecast against the record")
    common(sp, False)
    sp.add_argument("--forecast", required=True)
    sp.add_argument("--record", required=True)
    return p


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _resolve(args):
    from .pipeline import apply_override, load_config, validate

    cfg = load_config(args.config)
    for item in args.set:
        apply_override(cfg, item)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return validate(cfg)


class _Output:
    """Write to ``path.partial`` and move into place on success."""

    def __init__(self, path):
        self.path = path
        self.partial = path + ".partial"

    def __enter__(self):
        d = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(d, exist_ok=True)
        if os.path.exists(self.path):
            os.remove(self.path)
        return self.partial

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            os.replace(self.partial, self.path)
        return False


def _write_config(out, cfg, args):
    resolved = dict(cfg)
    resolved["command"] = args.command
    resolved["arguments"] = {k: v for k, v in vars(args).items() if k not in ("set", "command")}
    with open(out + ".config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args, cfg):
    from .data import ZonalData, write_record
    from .errors import SolverBlowup
    from .pipeline import simulate

    with _Output(args.out) as tmp:
        try:
            data = simulate(cfg, cfg["seed"], members=args.members)
        except SolverBlowup as exc:
            if exc.partial:
                write_record(tmp, ZonalData.from_records(exc.partial, cfg["seed"]), args.format)
            raise
        write_record(tmp, data, args.format)
    _write_config(args.out, cfg, args)


def cmd_dataset(args, cfg):
    from .data import read_record, write_record
    from .pipeline import make_dataset

    ds = make_dataset(read_record(args.input), cfg)
    with _Output(args.out) as tmp:
        write_record(tmp, ds)
    _write_config(args.out, cfg, args)


def cmd_train(args, cfg):
    from .data import read_record, save_model
    from .pipeline import train_model

    ds = read_record(args.dataset)
    with _Output(args.out) as tmp:
        def checkpoint(model, epoch, val):
            save_model(tmp, model, {"epoch": epoch, "val_total": val, "seed": cfg["seed"]})

        train_model(ds, cfg, cfg["seed"], log_path=args.out + ".metrics.csv", checkpoint=checkpoint)
    _write_config(args.out, cfg, args)


def _forecast_inputs(args, cfg):
    from .data import load_model, read_record

    model, _ = load_model(args.checkpoint)
    data = read_record(args.record)
    diag = cfg["diagnostics"]
    members = args.members or diag["members"]
    horizon = args.horizon or diag["horizon"]
    return model, data, members, horizon


def cmd_emulate(args, cfg):
    from .data import write_forecast
    from .pipeline import emulate

    model, data, members, horizon = _forecast_inputs(args, cfg)
    t0 = args.t0 if args.t0 is not None else float(data.times[model.config.seq_len - 1])
    U, idx = emulate(model, data, t0, members, horizon, cfg["seed"])
    with _Output(args.out) as tmp:
        write_forecast(tmp, U, {
            "t0": t0, "t0_index": idx, "seed": cfg["seed"], "members": members,
            "horizon": horizon, "record_interval": data.record_interval,
            "checkpoint": os.path.abspath(args.checkpoint),
            "record": os.path.abspath(args.record),
        })
    _write_config(args.out, cfg, args)


def cmd_evaluate(args, cfg):
    import numpy as np

    from . import data as io
    from .errors import ConfigError
    from .pipeline import evaluate

    U, meta = io.read_forecast(args.forecast)
    rec = io.read_record(args.record)
    i0 = int(meta["t0_index"])
    T = U.shape[1]
    if i0 + 1 + T > len(rec):
        raise ConfigError("record does not cover the forecast horizon")
    truth = rec.U[0, i0 + 1 : i0 + 1 + T]
    res = evaluate(U, truth, rec.U, rec.record_interval, cfg["diagnostics"]["bins"])
    os.makedirs(args.out + ".partial", exist_ok=True)
    d = args.out + ".partial"
    io.export_csv(os.path.join(d, "crps.csv"), res["crps"])
    io.export_csv(os.path.join(d, "hellinger.csv"), {
        "observable": np.array(list(res["hellinger"])), "hellinger": np.array(list(res["hellinger"].values()))
    })
    io.export_csv(os.path.join(d, "psd.csv"), {
        "mode": np.arange(1, len(res["psd"]["truth"]) + 1), "truth": res["psd"]["truth"],
        "forecast": res["psd"]["forecast"],
    })
    for who in ("truth", "forecast"):
        for name in ("U", "dyU", "dtU"):
            p = res["pdfs"][who][name]
            e = p.edges[0]
            io.export_csv(os.path.join(d, f"pdf_{name}_{who}.csv"), {
                "left": e[:-1], "right": e[1:], "density": p.density,
            })
        tp = res["transitions"][who]
        io.export_csv(os.path.join(d, f"transitions_{who}.csv"), {
            "count": tp.counts, "decrease": tp.freq[:, 0], "same": tp.freq[:, 1], "increase": tp.freq[:, 2],
        })
    if os.path.exists(args.out):
        import shutil

        shutil.rmtree(args.out)
    os.replace(d, args.out)
    _write_config(os.path.join(args.out, "evaluate"), cfg, args)


def cmd_events(args, cfg):
    import numpy as np

    from . import diagnostics as dg
    from .data import export_csv
    from .pipeline import emulate, reference_event

    model, data, members, horizon = _forecast_inputs(args, cfg)
    diag = cfg["diagnostics"]
    lead = args.lead if args.lead is not None else diag["lead"]
    ref = None
    if args.t0 is None:
        ref = reference_event(data, args.event, lead, model.config.seq_len, diag["persistence"])
        t0 = float(data.times[ref - lead])
    else:
        t0 = args.t0
    U, idx = emulate(model, data, t0, members, horizon, cfg["seed"])
    pdf = dg.time_to_event_pdf(U, args.event, data.record_interval, diag["persistence"])
    with _Output(args.out) as tmp:
        rows = {
            "quantity": np.array(["q5", "q25", "q75", "q95", "censored", "members", "t0", "lead"]),
            "value": np.array([pdf.quantiles[5], pdf.quantiles[25], pdf.quantiles[75],
                               pdf.quantiles[95], pdf.censored, members, t0,
                               float(lead) if ref is not None else float("nan")]),
        }
        export_csv(tmp, rows)
    export_csv(args.out + ".pdf.csv", {"left": pdf.edges[:-1], "right": pdf.edges[1:], "density": pdf.density})
    _write_config(args.out, cfg, args)


COMMANDS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "emulate": cmd_emulate,
    "evaluate": cmd_evaluate,
    "events": cmd_events,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    from .errors import SLTError

    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except SLTError as exc:
        _fail(type(exc).__name__, exc, exc.exit_code)
    except OSError as exc:
        _fail(type(exc).__name__, exc, 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
