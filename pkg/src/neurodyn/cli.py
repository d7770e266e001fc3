"""``neurodyn`` command line: synthetic data, denoising, PLRNN fitting, Lyapunov
spectra, entropy tagging, the multitask model, and an end-to-end pipeline.

Exit codes: 0 success, 1 data or training error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from neurodyn import __version__
from neurodyn import io as nio
from neurodyn.errors import NeurodynError

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
SEED_ENV = "NEURODYN_SEED"


class UsageError(Exception):
    """Bad invocation detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neurodyn", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"neurodyn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="JSON config for this subcommand")
        if seed:
            sp.add_argument("--seed", type=int, help=f"seed override (fallback: ${SEED_ENV}, then config)")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic recording or labeled corpus"), config=False)
    s.add_argument("--kind", choices=["sine", "sum_of_sines", "logistic_map", "henon", "noisy_sine"], default="sine")
    s.add_argument("--out", type=Path, required=True, help="output file, or directory with --corpus")
    s.add_argument("--channels", type=int, help="default 1, or 4 with --corpus")
    s.add_argument("--samples", type=int, default=320)
    s.add_argument("--rate", type=float, default=160.0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--params", type=json.loads, default={}, help="kind-specific parameters as JSON")
    s.add_argument("--corpus", type=int, metavar="N_PER_CLASS", help="write a labeled corpus instead")

    d = sub.add_parser("denoise", help="denoising autoencoder").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    dt = common(d.add_parser("train"))
    dt.add_argument("--input", type=Path, nargs="+", required=True)
    dt.add_argument("--out", type=Path, required=True, help="checkpoint path")
    dt.add_argument("--window", type=int, default=320)
    dt.add_argument("--rate", type=float, help="sample rate for CSV input")
    da = d.add_parser("apply")
    da.add_argument("--model", type=Path, required=True)
    da.add_argument("--input", type=Path, required=True)
    da.add_argument("--out", type=Path, required=True)
    da.add_argument("--rate", type=float)
    dm = d.add_parser("metrics")
    dm.add_argument("--raw", type=Path, nargs="+", required=True)
    dm.add_argument("--recon", type=Path, nargs="+", required=True)
    dm.add_argument("--out", type=Path, required=True)
    dm.add_argument("--rate", type=float)

    pl = sub.add_parser("plrnn", help="PLRNN reconstruction").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    pt = common(pl.add_parser("train"))
    pt.add_argument("--input", type=Path, nargs="+", required=True)
    pt.add_argument("--out", type=Path, required=True, help="checkpoint path")
    pt.add_argument("--report", type=Path, help="training report JSON")
    pt.add_argument("--rate", type=float)

    ly = sub.add_parser("lyapunov", help="Lyapunov spectrum of a fitted PLRNN")
    ly.add_argument("--model", type=Path, required=True)
    ly.add_argument("--input", type=Path, help="recording whose first sample seeds the trajectory")
    ly.add_argument("--steps", type=int, default=10_000)
    ly.add_argument("--burn-in", type=int)
    ly.add_argument("--qr-interval", type=int, default=1)
    ly.add_argument("--epsilon", type=float, default=0.01)
    ly.add_argument("--out", type=Path, required=True)
    ly.add_argument("--rate", type=float)

    t = sub.add_parser("tag", help="entropy tagging and agreement").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    te = t.add_parser("entropy")
    te.add_argument("--input", type=Path, nargs="+", required=True)
    te.add_argument("--out", type=Path, required=True)
    te.add_argument("--epoch-seconds", type=float, default=3.0)
    te.add_argument("--order", type=int, default=4)
    te.add_argument("--delay", type=int, default=1)
    te.add_argument("--invert", action="store_true", help="call the high-entropy cluster chaotic")
    te.add_argument("--rate", type=float)
    ta = t.add_parser("agree")
    ta.add_argument("--a", type=Path, required=True, help="reference labels JSON")
    ta.add_argument("--b", type=Path, required=True, help="predicted labels JSON")
    ta.add_argument("--out", type=Path)

    m = sub.add_parser("mtl", help="multitask model").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    mt = common(m.add_parser("train"))
    mt.add_argument("--corpus", type=Path, required=True, help="corpus directory with manifest.json")
    mt.add_argument("--out", type=Path, required=True)
    mt.add_argument("--report", type=Path)
    mt.add_argument("--preset", choices=["toy", "paper"], default="toy")
    for name in ("eval", "probe"):
        me = m.add_parser(name)
        me.add_argument("--model", type=Path, required=True)
        me.add_argument("--corpus", type=Path, required=True)
        me.add_argument("--out", type=Path)
        if name == "probe":
            me.add_argument("--seed", type=int)

    pp = common(sub.add_parser("pipeline", help="synth -> denoise -> plrnn -> lyapunov -> tag -> mtl"))
    pp.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


# -- helpers -------------------------------------------------------------------------

def resolve_seed(args, config=None) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int((config or {}).get("seed", 0))


def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    cfg = nio.read_json(path)
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _require_files(*paths):
    missing = [str(p) for p in paths if p is not None and not Path(p).is_file()]
    if missing:
        raise FileNotFoundError(f"missing input: {', '.join(missing)}")


def _emit(obj, out):
    if out is None:
        sys.stdout.write(nio.dumps_json(obj))
    else:
        nio.atomic_write_json(out, obj)


def write_corpus(out_dir, trials, seed) -> dict:
    from neurodyn.synth import corpus_manifest
    out_dir = Path(out_dir)
    entries = corpus_manifest(trials)
    for entry, tr in zip(entries, trials):
        entry["file"] = f"trial_{tr.index:04d}.ndts"
        nio.write_recording(out_dir / entry["file"], tr.recording)
    manifest = {"seed": seed, "n_trials": len(trials), "trials": entries}
    nio.atomic_write_json(out_dir / "manifest.json", manifest)
    return manifest


def read_corpus(corpus_dir):
    """``(X, y_mi, y_chaos, recordings, manifest)`` from a corpus directory."""
    from neurodyn.synth import MI_CLASSES
    corpus_dir = Path(corpus_dir)
    _require_files(corpus_dir / "manifest.json")
    manifest = nio.read_json(corpus_dir / "manifest.json")
    recs = [nio.read_recording(corpus_dir / e["file"]) for e in manifest["trials"]]
    X = np.stack([r.data for r in recs])
    y_mi = np.array([MI_CLASSES.index(e["mi_label"]) for e in manifest["trials"]], dtype=np.int64)
    y_ch = np.array([e["chaos_label"] == "chaotic" for e in manifest["trials"]], dtype=np.int64)
    return X, y_mi, y_ch, recs, manifest


def _labels_from_json(obj):
    """Label mapping from a tag report, a ``{name: label}`` map or a plain list."""
    if isinstance(obj, list):
        return {i: v for i, v in enumerate(obj)}
    if isinstance(obj, dict) and "files" in obj:
        obj = obj["files"]
    if isinstance(obj, dict):
        return {k: (v["file_label"] if isinstance(v, dict) else v) for k, v in obj.items()}
    raise ValueError("unrecognized label file layout")


def _mtl_cfg(config, seed, preset="toy"):
    from neurodyn.multitask import MtlConfig
    base = MtlConfig.toy() if preset == "toy" else MtlConfig.paper()
    merged = {**base.to_dict(), **config, "seed": seed}
    return MtlConfig.from_dict(merged)


def _dae_windows(recs, window):
    from neurodyn.sigproc import WindowSpec, segment_windows
    out = []
    for r in recs:
        w = min(window, r.n_samples)
        out.extend(segment_windows(r, WindowSpec(w, 0.0)))
    lengths = {w.n_samples for w in out}
    if len(lengths) != 1:
        raise ValueError(f"inputs give windows of differing lengths {sorted(lengths)}")
    return out


# -- commands ---------------------------------------------------------------------

def cmd_synth(args):
    from neurodyn.synth import SynthSpec, gen_corpus, gen_signal
    seed = resolve_seed(args)
    if args.corpus is not None:
        trials = gen_corpus(args.corpus, seed=seed, channels=args.channels or 4, sample_rate_hz=args.rate)
        manifest = write_corpus(args.out, trials, seed)
        _emit({"out": args.out, "n_trials": manifest["n_trials"], "seed": seed}, None)
        return EXIT_OK
    spec = SynthSpec(args.kind, args.params, args.channels or 1, args.samples, args.rate, args.noise, seed)
    rec = gen_signal(spec)
    nio.save_recording(args.out, rec)
    _emit({"out": args.out, "kind": args.kind, "seed": seed, "shape": list(rec.data.shape),
           "bound": spec.bound()}, None)
    return EXIT_OK


def cmd_denoise(args):
    from neurodyn.denoise import DaeConfig, dae_train, denoise_recording, recording_metrics
    if args.action == "train":
        _require_files(*args.input)
        config = _load_config(args)
        seed = resolve_seed(args, config)
        cfg = DaeConfig.from_dict({**config, "seed": seed})
        recs = [nio.load_recording(p, args.rate) for p in args.input]
        params, report = dae_train(_dae_windows(recs, args.window), cfg)
        nio.save_dae(args.out, params, {"config": cfg.to_dict(), "seed": seed, "report": report.to_dict()})
        _emit({"checkpoint": args.out, "final_loss": report.losses[-1] if report.losses else None,
               "seed": seed}, None)
    elif args.action == "apply":
        _require_files(args.model, args.input)
        params, _ = nio.load_dae(args.model)
        rec = nio.load_recording(args.input, args.rate)
        nio.save_recording(args.out, denoise_recording(params, rec))
        _emit({"out": args.out}, None)
    else:
        if len(args.raw) != len(args.recon):
            raise UsageError("--raw and --recon need the same number of files")
        _require_files(*args.raw, *args.recon)

        def one(pair):
            raw, rec = pair
            m = recording_metrics(nio.load_recording(raw, args.rate), nio.load_recording(rec, args.rate))
            return str(raw), {k: v.to_dict() for k, v in m.items()}

        with ThreadPoolExecutor() as pool:
            results = dict(pool.map(one, zip(args.raw, args.recon)))
        _emit(results[str(args.raw[0])] if len(results) == 1 else results, args.out)
    return EXIT_OK


def cmd_plrnn(args):
    from neurodyn.plrnn import GtfConfig, gtf_train
    _require_files(*args.input)
    config = _load_config(args)
    seed = resolve_seed(args, config)
    cfg = GtfConfig.from_dict({**config, "seed": seed})
    recs = [nio.load_recording(p, args.rate) for p in args.input]
    params, report = gtf_train(recs if len(recs) > 1 else recs[0], cfg)
    cfg_dict = dataclasses.asdict(cfg)
    nio.save_plrnn(args.out, params, {"config": cfg_dict, "seed": seed})
    summary = {**report.to_dict(), "config": cfg_dict, "checkpoint": args.out}
    _emit(summary, args.report)
    return EXIT_OK


def cmd_lyapunov(args):
    from neurodyn.lyapunov import plrnn_spectrum, report
    _require_files(args.model, args.input)
    params, meta = nio.load_plrnn(args.model)
    x0 = nio.load_recording(args.input, args.rate).data[:, 0] if args.input else None
    spec = plrnn_spectrum(params, x0=x0, T=args.steps, burn_in=args.burn_in, qr_interval=args.qr_interval)
    out = report(spec, args.epsilon)
    out.update({"steps_used": spec.steps_used, "burn_in": spec.burn_in, "qr_interval": spec.qr_interval,
                "model": args.model})
    _emit(out, args.out)
    return EXIT_OK


def cmd_tag(args):
    from neurodyn.tagging import agreement, tag_recordings
    if args.action == "entropy":
        _require_files(*args.input)
        with ThreadPoolExecutor() as pool:
            recs = list(pool.map(lambda p: nio.load_recording(p, args.rate), args.input))
        names = [str(p) for p in args.input]
        reports = tag_recordings(dict(zip(names, recs)), args.epoch_seconds, args.order, args.delay, args.invert)
        _emit({"files": {k: v.to_dict() for k, v in reports.items()},
               "config": {"epoch_seconds": args.epoch_seconds, "order": args.order, "delay": args.delay,
                          "invert": args.invert}}, args.out)
        return EXIT_OK
    _require_files(args.a, args.b)
    a, b = _labels_from_json(nio.read_json(args.a)), _labels_from_json(nio.read_json(args.b))
    keys = sorted(set(a) & set(b), key=str)
    if not keys:
        raise ValueError("the two label files share no entries")
    rep = agreement([a[k] for k in keys], [b[k] for k in keys])
    _emit({**rep.to_dict(), "entries": [str(k) for k in keys]}, args.out)
    return EXIT_OK


def cmd_mtl(args):
    from neurodyn.multitask import embed, evaluate, linear_probe, mtl_train
    if args.action == "train":
        config = _load_config(args)
        seed = resolve_seed(args, config)
        cfg = _mtl_cfg(config, seed, args.preset)
        X, y_mi, y_ch, _, _ = read_corpus(args.corpus)
        params, report = mtl_train((X, y_mi, y_ch), cfg)
        nio.save_mtl(args.out, params, {"config": cfg.to_dict(), "seed": seed})
        _emit({**report.to_dict(), "checkpoint": args.out, "config": cfg.to_dict()}, args.report)
        return EXIT_OK
    _require_files(args.model)
    params, meta = nio.load_mtl(args.model)
    from neurodyn.multitask import MtlConfig
    cfg = MtlConfig.from_dict(meta["config"])
    X, y_mi, y_ch, _, _ = read_corpus(args.corpus)
    if args.action == "eval":
        _emit(evaluate(params, (X, y_mi, y_ch), cfg), args.out)
    else:
        seed = resolve_seed(args, meta)
        E = embed(params, X, cfg)
        _emit({"probe_acc_mi": linear_probe(E, y_mi, seed=seed),
               "probe_acc_chaos": linear_probe(E, y_ch, seed=seed), "seed": seed}, args.out)
    return EXIT_OK


PIPELINE_DEFAULTS = {
    "n_per_class": 32,
    "dae": {"epochs": 50, "batch_size": 16},
    "plrnn": {"epochs": 50, "batches_per_epoch": 20, "seq_len": 40, "hidden_dim": 64},
    "lyapunov": {"steps": 3000, "burn_in": 300},
    "tag": {"epoch_seconds": 0.5, "invert": True},  # synthetic chaotic trials carry the higher entropy
    "mtl": {"epochs": 30},
}


def run_pipeline(out_dir, config: dict, seed: int) -> dict:
    """Synthetic corpus through every stage; returns the PipelineReport dict."""
    from neurodyn.denoise import DaeConfig, dae_train, denoise_recording, recording_metrics
    from neurodyn.lyapunov import plrnn_spectrum, report as ly_report
    from neurodyn.multitask import evaluate, mtl_train
    from neurodyn.plrnn import GtfConfig, gtf_train
    from neurodyn.synth import gen_corpus
    from neurodyn.tagging import agreement, tag_recordings

    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in PIPELINE_DEFAULTS.items()}
    for k, v in config.items():
        cfg[k] = {**cfg[k], **v} if isinstance(cfg.get(k), dict) and isinstance(v, dict) else v
    out_dir = Path(out_dir)
    timings, outputs, metrics = {}, {}, {}

    @contextmanager
    def stage(name):
        t0 = time.perf_counter()
        yield
        timings[name] = time.perf_counter() - t0

    with stage("synth"):
        trials = gen_corpus(int(cfg["n_per_class"]), seed=seed)
        write_corpus(out_dir / "corpus", trials, seed)
        outputs["synth"] = str(out_dir / "corpus" / "manifest.json")
        metrics["synth"] = {"n_trials": len(trials)}

    with stage("denoise"):
        dcfg = DaeConfig.from_dict({**cfg["dae"], "seed": seed})
        raw = [tr.recording for tr in trials]
        dae, drep = dae_train(raw, dcfg)
        nio.save_dae(out_dir / "dae.ndck", dae, {"config": dcfg.to_dict(), "seed": seed})
        clean = [denoise_recording(dae, r) for r in raw]
        ch0 = recording_metrics(raw[0], clean[0])
        outputs["denoise"] = str(out_dir / "dae.ndck")
        metrics["denoise"] = {"final_loss": drep.losses[-1] if drep.losses else None,
                              "trial0_metrics": {k: v.to_dict() for k, v in ch0.items()}}

    with stage("plrnn"):
        gcfg = GtfConfig.from_dict({**cfg["plrnn"], "seed": seed})
        params, prep = gtf_train(clean[0], gcfg)
        nio.save_plrnn(out_dir / "plrnn.ndck", params, {"config": dataclasses.asdict(gcfg), "seed": seed})
        outputs["plrnn"] = str(out_dir / "plrnn.ndck")
        metrics["plrnn"] = {"final_loss": prep.losses[-1] if prep.losses else None, "trial": 0}

    with stage("lyapunov"):
        ly = cfg["lyapunov"]
        spec = plrnn_spectrum(params, x0=clean[0].data[:, 0], T=int(ly["steps"]), burn_in=ly.get("burn_in"))
        lrep = ly_report(spec, ly.get("epsilon", 0.01))
        nio.atomic_write_json(out_dir / "lyapunov.json", lrep)
        outputs["lyapunov"] = str(out_dir / "lyapunov.json")
        metrics["lyapunov"] = {"lambda_max": lrep["lambda_max"], "regime": lrep["regime"]}

    with stage("tag"):
        names = [f"trial_{tr.index:04d}" for tr in trials]
        tags = tag_recordings(dict(zip(names, clean)), float(cfg["tag"]["epoch_seconds"]),
                              invert=bool(cfg["tag"].get("invert", False)))
        nio.atomic_write_json(out_dir / "tags.json", {"files": {k: v.to_dict() for k, v in tags.items()}})
        agree = agreement([tr.chaos_label for tr in trials], [tags[n].file_label for n in names])
        outputs["tag"] = str(out_dir / "tags.json")
        metrics["tag"] = {"agreement_with_construction": agree.to_dict()}

    with stage("mtl"):
        mcfg = _mtl_cfg(cfg["mtl"], seed)
        corpus = (np.stack([r.data for r in clean]), np.array([tr.mi_class for tr in trials]),
                  np.array([tr.chaos_class for tr in trials]))
        mparams, mrep = mtl_train(corpus, mcfg)
        nio.save_mtl(out_dir / "mtl.ndck", mparams, {"config": mcfg.to_dict(), "seed": seed})
        outputs["mtl"] = str(out_dir / "mtl.ndck")
        metrics["mtl"] = evaluate(mparams, corpus, mcfg)

    report = {"version": __version__, "seed": seed, "config": cfg, "timings_s": timings,
              "outputs": outputs, "metrics": metrics, "total_time_s": sum(timings.values())}
    nio.atomic_write_json(out_dir / "pipeline_report.json", report)
    return report


def cmd_pipeline(args):
    config = _load_config(args)
    seed = resolve_seed(args, config)
    config.pop("seed", None)
    unknown = set(config) - set(PIPELINE_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown pipeline config keys: {sorted(unknown)}")
    report = run_pipeline(args.out, config, seed)
    _emit({"report": str(Path(args.out) / "pipeline_report.json"), "timings_s": report["timings_s"],
           "seed": seed}, None)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "denoise": cmd_denoise, "plrnn": cmd_plrnn, "lyapunov": cmd_lyapunov,
            "tag": cmd_tag, "mtl": cmd_mtl, "pipeline": cmd_pipeline}


def run(args) -> int:
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"neurodyn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NeurodynError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"neurodyn: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
