"""Command-line entry point: ``gazesynth <command> [--config FILE] [--seed N] [--out DIR] ...``.

Every command writes into ``--out`` (default ``.``) and drops a
``provenance.json`` next to its outputs recording the resolved settings,
their hash, the seed, the package version and sha256 digests of inputs and
outputs. Exit codes: 0 success, 1 error, 2 usage error, 3 partial sweep.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import data as gdata
from . import gan, markov, metrics, plots
from .io import atomic_write_text, digest, read_checksummed, write_checksummed, write_json

log = logging.getLogger("gazesynth")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

GAN_FIELDS = {f.name: f.default for f in fields(gan.GanConfig)}

# flags whose default is None still need a parse type
OPTIONAL_TYPES = {"stride": int, "sample_interval": float, "seq_len": int, "max_lag": int, "meta": str}


class UsageError(ValueError):
    pass


# option plumbing ---------------------------------------------------------------------

def _flag(name):
    return "--" + name.replace("_", "-")


def _add_options(parser, defaults, helps=None):
    """One flag per setting; every flag defaults to None so config-file values can show through."""
    helps = helps or {}
    for name, default in defaults.items():
        kind = type(default) if default is not None else OPTIONAL_TYPES[name]
        if kind is bool:
            parser.add_argument(_flag(name), dest=name, action="store_const", const=True, default=None,
                                help=helps.get(name))
        else:
            parser.add_argument(_flag(name), dest=name, type=kind, default=None,
                                help=helps.get(name, f"default: {default}"))


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _resolve(args, defaults):
    """Flag value, else config-file value, else built-in default."""
    config = _load_config(args.config)
    unknown = set(config) - set(defaults) - {"seed"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name, default in defaults.items():
        value = getattr(args, name, None)
        if value is None:
            value = config.get(name, default)
        out[name] = value
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise UsageError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return out, seed


def _file_sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_distinct(inputs, outputs):
    resolved = {Path(p).resolve() for p in inputs if p is not None}
    for out in outputs:
        if Path(out).resolve() in resolved:
            raise UsageError(f"output {out} would overwrite an input file")


def _provenance(out_dir, command, settings, seed, inputs, outputs):
    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "settings": settings,
        "settings_sha256": digest(settings),
        "inputs": {str(p): _file_sha(p) for p in inputs if p is not None},
        "outputs": {Path(p).name: _file_sha(p) for p in outputs if Path(p).exists()},
    }
    write_json(Path(out_dir) / "provenance.json", record)


def _meta_path(dataset):
    p = Path(dataset)
    return p.with_name(p.stem + ".meta.json")


def _read_normalizer(meta_path):
    doc = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    norm = doc.get("normalizer")
    return None if norm is None else gdata.Normalizer(float(norm["min"]), float(norm["max"]))


def _read_series_any(path):
    """A ``t_ms,v`` velocity file gives one series; a sequence dataset gives one per row."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if first.replace(" ", "").startswith("t_ms,v"):
        return [gdata.read_velocity(path).values]
    rows = gdata.read_sequences(path)
    return [row for row in rows]


# commands ----------------------------------------------------------------------------

INGEST_DEFAULTS = {"eye": "left", "length": 200, "stride": None, "sample_interval": None}


def cmd_ingest(args):
    opts, seed = _resolve(args, INGEST_DEFAULTS)
    if opts["eye"] not in ("left", "right", "both"):
        raise UsageError("--eye must be left, right or both")
    out = Path(args.out)
    dataset_path = out / "dataset.csv"
    eyes = ("left", "right") if opts["eye"] == "both" else (opts["eye"],)
    velocity_paths = [out / f"velocity_{e}.csv" for e in eyes]
    _check_distinct([args.recording], [dataset_path, *velocity_paths])

    rec = gdata.load_recording(args.recording, opts["sample_interval"])
    series = [gdata.compute_velocity(rec.eye(e), rec.sample_interval, e) for e in eyes]
    norm = gdata.fit_normalizer(np.concatenate([s.values for s in series]))
    stride = opts["stride"] or opts["length"]
    segments = [gdata.segment(norm.normalize(s.values), opts["length"], stride) for s in series]
    dataset = np.concatenate(segments) if segments else np.empty((0, opts["length"]))
    if len(dataset) == 0:
        log.warning("ingest: velocity series of length %d is shorter than one segment (%d); dataset is empty",
                    len(series[0]), opts["length"])
        dataset = np.empty((0, opts["length"]))

    for s, p in zip(series, velocity_paths):
        gdata.write_velocity(p, s)
    gdata.write_sequences(dataset_path, dataset)
    meta = {
        "normalizer": norm.to_dict(),
        "eye": opts["eye"],
        "sample_interval_ms": rec.sample_interval,
        "n_samples": len(rec),
        "n_velocity": [len(s) for s in series],
        "n_sequences": int(len(dataset)),
        "length": opts["length"],
        "stride": stride,
    }
    meta_path = _meta_path(dataset_path)
    write_json(meta_path, meta)
    _provenance(out, "ingest", opts, seed, [args.recording], [dataset_path, meta_path, *velocity_paths])
    print(f"wrote {len(dataset)} sequences to {dataset_path}")
    return EXIT_OK


def _gan_config(opts, seed, width):
    values = {k: opts.get(k, default) for k, default in GAN_FIELDS.items() if k != "seed"}
    if values["seq_len"] is None:
        values["seq_len"] = width
    return gan.GanConfig(seed=seed, **values)


def _load_dataset(path):
    data = gdata.read_sequences(path)
    if data.size == 0:
        raise gdata.DataError(f"{path}: dataset is empty")
    return data


TRAIN_DEFAULTS = {**{k: v for k, v in GAN_FIELDS.items() if k not in ("seed", "window_start")}, "seq_len": None,
                  "meta": None}


def cmd_train(args):
    opts, seed = _resolve(args, TRAIN_DEFAULTS)
    out = Path(args.out)
    outputs = [out / "model.json", out / "history.csv", out / "timing.csv"]
    _check_distinct([args.dataset], outputs)
    data = _load_dataset(args.dataset)
    config = _gan_config(opts, seed, data.shape[1]).validate()
    meta = opts["meta"] or _meta_path(args.dataset)
    normalizer = _read_normalizer(meta) if Path(meta).exists() else None
    if normalizer is None:
        log.warning("train: no normalizer metadata at %s; the model will only generate normalised values", meta)

    records = []

    def progress(record):
        records.append(record)
        log.info("epoch %d  l_g=%.4f  l_d=%.4f  l_spectral=%.4f  d_js=%.4f",
                 record.epoch, record.l_g, record.l_d, record.l_spectral, record.d_js)

    def flush_history():
        history = gan.TrainingHistory(records)
        atomic_write_text(outputs[1], history.to_csv())
        timing = "epoch,seconds\n" + "".join(f"{r.epoch},{r.seconds!r}\n" for r in records)
        atomic_write_text(outputs[2], timing)

    try:
        model, _ = gan.train(data, config, normalizer, callback=progress)
    except gan.TrainingError:
        flush_history()
        raise
    flush_history()
    write_checksummed(outputs[0], model.to_payload())
    settings = {k: v for k, v in opts.items() if k != "meta"}
    _provenance(out, "train", settings, seed, [args.dataset], outputs)
    print(f"trained {config.pairing} for {config.epochs} epochs; final D_JS {records[-1].d_js:.4g}")
    return EXIT_OK


GENERATE_DEFAULTS = {"count": 128, "normalized": False}


def cmd_generate(args):
    opts, seed = _resolve(args, GENERATE_DEFAULTS)
    if opts["count"] < 0:
        raise UsageError("--count must be >= 0")
    out = Path(args.out)
    target = out / "sequences.csv"
    _check_distinct([args.model], [target])
    model = gan.GanModel.from_payload(read_checksummed(args.model))
    values = gan.generate(model, opts["count"], seed, normalized=opts["normalized"])
    gdata.write_sequences(target, values)
    _provenance(out, "generate", opts, seed, [args.model], [target])
    print(f"wrote {len(values)} sequences to {target}")
    return EXIT_OK


EVALUATE_DEFAULTS = {"bins": metrics.DEFAULT_BINS, "eps_h": metrics.DEFAULT_EPS_H, "max_lag": None,
                     "eps_spec": gan.EPS_SPEC, "denormalize_real": False, "plots": False}


def cmd_evaluate(args):
    opts, seed = _resolve(args, EVALUATE_DEFAULTS)
    out = Path(args.out)
    report_path = out / "report.json"
    plot_paths = [out / "histogram.svg", out / "acf.svg"] if opts["plots"] else []
    _check_distinct([args.real, args.synthetic], [report_path, *plot_paths])
    real = _load_dataset(args.real)
    synthetic = _load_dataset(args.synthetic)
    if opts["denormalize_real"]:
        meta = _meta_path(args.real)
        if not meta.exists():
            raise UsageError(f"--denormalize-real needs the metadata file {meta}")
        real = _read_normalizer(meta).denormalize(real)
    report = metrics.evaluation_report(real, synthetic, opts["bins"], opts["eps_h"], opts["max_lag"], opts["eps_spec"])
    write_json(report_path, report.to_dict())
    if plot_paths:
        atomic_write_text(plot_paths[0], plots.histogram_chart(real, synthetic, opts["bins"]))
        atomic_write_text(plot_paths[1], plots.line_chart(
            {"real": (report.lags, report.acf_real), "synthetic": (report.lags, report.acf_synthetic)},
            "mean autocorrelation", "lag", "ACF"))
    _provenance(out, "evaluate", opts, seed, [args.real, args.synthetic], [report_path, *plot_paths])
    print(f"D_JS {report.d_js:.6g}  spectral score {report.spectral_score:.6g}")
    return EXIT_OK


SWEEP_DEFAULTS = {**{k: v for k, v in GAN_FIELDS.items() if k not in ("seed", "generator", "discriminator")},
                  "seq_len": None, "ranking": "product", "pairings": "cnn-cnn,lstm-cnn,cnn-lstm,lstm-lstm"}


def _parse_pairings(text):
    pairs = []
    for item in text.split(","):
        parts = item.strip().lower().split("-")
        if len(parts) != 2 or any(p not in gan.KINDS for p in parts):
            raise UsageError(f"bad pairing {item!r}; expected e.g. lstm-cnn")
        pairs.append(tuple(parts))
    return tuple(pairs)


def cmd_sweep(args):
    opts, seed = _resolve(args, SWEEP_DEFAULTS)
    out = Path(args.out)
    pairings = _parse_pairings(opts["pairings"])
    data = _load_dataset(args.dataset)
    base = _gan_config({**opts, "generator": "lstm", "discriminator": "lstm"}, seed, data.shape[1])
    meta = _meta_path(args.dataset)
    normalizer = _read_normalizer(meta) if meta.exists() else None
    report = gan.architecture_sweep(data, base, pairings, opts["ranking"], continue_on_error=True,
                                    normalizer=normalizer)
    outputs = [out / "sweep.json"]
    _check_distinct([args.dataset], outputs)
    for name, entry in report.entries.items():
        stem = name.lower()
        atomic_write_text(out / f"history_{stem}.csv", entry.history.to_csv())
        timing = "epoch,seconds\n" + "".join(f"{r.epoch},{r.seconds!r}\n" for r in entry.history.records)
        atomic_write_text(out / f"timing_{stem}.csv", timing)
        outputs += [out / f"history_{stem}.csv", out / f"timing_{stem}.csv"]
    write_json(outputs[0], report.to_dict())
    _provenance(out, "sweep", opts, seed, [args.dataset], outputs)
    for name, reason in report.failures.items():
        log.warning("sweep: %s failed: %s", name, reason)
    print(f"winner: {report.winner}" + (f" ({len(report.failures)} pairing(s) failed)" if report.partial else ""))
    return EXIT_PARTIAL if report.partial else EXIT_OK


HMM_DEFAULTS = {"states": "2..5", "tol": 1e-6, "max_iter": 500, "bins": metrics.DEFAULT_BINS,
                "eps_h": metrics.DEFAULT_EPS_H}


def _parse_states(text):
    text = str(text).strip()
    for sep in ("..", "-", ":"):
        if sep in text:
            lo, hi = (int(v) for v in text.split(sep, 1))
            if lo < 1 or hi < lo:
                raise UsageError(f"bad state range {text!r}")
            return list(range(lo, hi + 1)), True
    n = int(text)
    if n < 1:
        raise UsageError("state count must be >= 1")
    return [n], False


def _hmm_record(fit, n_states):
    return {**fit.model.to_dict(), "n_states": n_states, "log_likelihood": fit.log_likelihood,
            "converged": fit.converged, "n_iter": fit.n_iter, "reseeds": [list(r) for r in fit.reseeds]}


def cmd_hmm(args):
    opts, seed = _resolve(args, HMM_DEFAULTS)
    out = Path(args.out)
    counts, is_range = _parse_states(opts["states"])
    outputs = [out / "model.json"] + ([out / "selection.csv"] if is_range else [])
    _check_distinct([args.series], outputs)
    seqs = _read_series_any(args.series)
    if not seqs or sum(len(s) for s in seqs) == 0:
        raise gdata.DataError(f"{args.series}: series is empty")
    if is_range:
        sel = markov.hmm_state_selection(seqs, counts, opts["tol"], opts["max_iter"], opts["bins"], opts["eps_h"], seed)
        table = "states,d_js\n" + "".join(f"{n},{d!r}\n" for n, d in sel.rows())
        atomic_write_text(outputs[1], table)
        record = {**_hmm_record(sel.fits[sel.selected], sel.selected), "selection": {str(n): d for n, d in sel.rows()}}
        message = f"selected {sel.selected} states"
    else:
        try:
            fit = markov.hmm_baum_welch(seqs, counts[0], tol=opts["tol"], max_iter=opts["max_iter"], seed=seed)
        except Exception as exc:
            raise markov.FittingError(f"{counts[0]} states: {exc}") from exc
        record = _hmm_record(fit, counts[0])
        message = f"fitted {counts[0]} states; log-likelihood {fit.log_likelihood:.6g}"
    write_json(outputs[0], record)
    _provenance(out, "hmm", opts, seed, [args.series], outputs)
    print(message)
    return EXIT_OK


KDE_DEFAULTS = {"order": 1, "length": 1000, "bandwidth": 0.0}


def cmd_kde(args):
    opts, seed = _resolve(args, KDE_DEFAULTS)
    if opts["length"] < 0:
        raise UsageError("--length must be >= 0")
    out = Path(args.out)
    outputs = [out / "kde.json", out / "sample.csv"]
    _check_distinct([args.series], outputs)
    series = np.concatenate(_read_series_any(args.series))
    model = markov.fit_kde_markov(series, opts["order"], opts["bandwidth"] or None)
    if opts["length"] == 0:
        values, fallbacks = np.empty(0), []
    else:
        sample = markov.kde_markov_sample(model, opts["length"], seed)
        values, fallbacks = sample.values, sample.fallback_steps
    gdata.write_velocity(outputs[1], values)
    write_json(outputs[0], {**model.summary(), "length": opts["length"], "fallback_steps": list(map(int, fallbacks))})
    _provenance(out, "kde", opts, seed, [args.series], outputs)
    print(f"bandwidth {model.bandwidth:.6g}; wrote {len(values)} samples")
    return EXIT_OK


# parser ------------------------------------------------------------------------------

COMMANDS = {
    "ingest": (cmd_ingest, INGEST_DEFAULTS, ["recording"], "recording CSV -> velocity series and sequence dataset"),
    "train": (cmd_train, TRAIN_DEFAULTS, ["dataset"], "train a GAN on a sequence dataset"),
    "generate": (cmd_generate, GENERATE_DEFAULTS, ["model"], "sample sequences from a trained model"),
    "evaluate": (cmd_evaluate, EVALUATE_DEFAULTS, ["real", "synthetic"], "compare real and synthetic datasets"),
    "sweep": (cmd_sweep, SWEEP_DEFAULTS, ["dataset"], "train every architecture pairing and rank them"),
    "hmm": (cmd_hmm, HMM_DEFAULTS, ["series"], "fit a Gaussian HMM or select its state count"),
    "kde": (cmd_kde, KDE_DEFAULTS, ["series"], "fit a KDE Markov model and sample from it"),
}

POSITIONAL_HELP = {
    "recording": "CSV with t_ms,left_x,left_y,right_x,right_y columns",
    "dataset": "sequence dataset CSV (one sequence per row)",
    "model": "model.json written by train",
    "series": "velocity CSV (t_ms,v) or a sequence dataset, whose rows are concatenated",
}

HELP = {
    "eye": "left, right or both",
    "stride": "segment stride (default: segment length)",
    "sample_interval": "ms between samples (default: inferred from timestamps)",
    "seq_len": "sequence length (default: dataset width)",
    "meta": "normalizer metadata (default: <dataset>.meta.json)",
    "normalized": "emit values in [0, 1] instead of velocity units",
    "denormalize_real": "map the real dataset back to velocity units via its metadata file",
    "plots": "also write histogram.svg and acf.svg",
    "max_lag": "largest ACF lag (default: min(50, length - 1))",
    "states": "a count (3) or an inclusive range (2..5)",
    "bandwidth": "kernel bandwidth (default 0: Silverman's rule)",
    "pairings": "comma-separated generator-discriminator pairs",
    "ranking": f"one of {', '.join(gan.RANKINGS)}",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gazesynth", description="Synthetic eye-movement velocity series.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults, positionals, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for pos in positionals:
            p.add_argument(pos, help=POSITIONAL_HELP.get(pos))
        p.add_argument("--config", help="JSON file whose keys mirror the flag names")
        p.add_argument("--seed", type=int, default=None, help="random seed (default: 0)")
        p.add_argument("--out", default=".", help="output directory")
        _add_options(p, defaults, HELP)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"gazesynth {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"gazesynth {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
