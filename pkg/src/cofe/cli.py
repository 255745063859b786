"""Command-line interface.

Verbs: synth, train {gan|encoder|predictor|all}, predict, cf, eval, serve.
Errors exit nonzero with a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .ecg.corpus import CorpusSpec, build_corpus, load_corpus
from .ecg.records import read_record, write_record
from .ecg.synth import SynthParams, synth_ecg
from .errors import CofeError, ValidationError
from .nets.checkpoint import (
    G_SOURCE_AUTOENCODER,
    LoadedBundle,
    bundle_from_parts,
    load_checkpoint,
    save_checkpoint,
)
from .nets.models import TASKS, Discriminator, Encoder, Generator, Predictor
from .nets.pipeline import INVERSION_GATE, train_bundles
from .nets.train import (
    TrainConfig,
    inversion_quality,
    train_autoencoder,
    train_encoder,
    train_gan,
    train_predictor,
)


def _say(msg):
    print(msg, file=sys.stderr)


def _data_dir(args):
    return args.data_dir or os.environ.get("COFE_DATA_DIR") or "./cofe-data"


def _train_config(args):
    cfg = TrainConfig(seed=args.seed)
    if getattr(args, "lr", None):
        cfg.lr = args.lr
    if getattr(args, "epochs", None):
        cfg.max_epochs = args.epochs
    if getattr(args, "batch_size", None):
        cfg.batch_size = args.batch_size
    if getattr(args, "patience", None):
        cfg.early_stop_patience = args.patience
    return cfg


def cmd_synth(args):
    if args.n_records > 1:
        mix = {"af": args.af_fraction, "non_af": 1.0 - args.af_fraction}
        spec = CorpusSpec(n_records=args.n_records, class_mix=mix,
                          seed=args.seed)
        handle = build_corpus(spec, args.out)
        sizes = handle.split_sizes()
        print(json.dumps({"corpus": args.out, "n_records": args.n_records,
                          "splits": sizes, "spec_hash": handle.spec_hash}))
        return 0
    params = SynthParams(
        heart_rate_bpm=args.heart_rate, rr_sigma_ms=args.rr_sigma,
        p_amp_mv=args.p_amp, qrs_amp_mv=args.qrs_amp,
        qrs_duration_ms=args.qrs_duration, t_amp_mv=args.t_amp,
        noise_sigma_mv=args.noise, seed=args.seed)
    record = synth_ecg(params)
    write_record(record, args.out)
    print(json.dumps({"record_id": record.record_id, "path": args.out}))
    return 0


def _load_parts(path):
    bundle = load_checkpoint(path)
    parts = {"generator": Generator.from_state(bundle.model("generator"))}
    if "encoder" in bundle.models:
        parts["encoder"] = Encoder.from_state(bundle.model("encoder"))
    if "discriminator" in bundle.models:
        parts["discriminator"] = Discriminator.from_state(
            bundle.model("discriminator"))
    if "predictor" in bundle.models:
        parts["predictor"] = Predictor.from_state(bundle.model("predictor"))
    parts["meta"] = bundle.meta
    return parts


def cmd_train(args):
    corpus = load_corpus(args.corpus)
    config = _train_config(args)
    if args.stage == "all":
        bundles = train_bundles(corpus, config, tasks=tuple(args.task or TASKS),
                                g_mode=args.g_mode, out_dir=args.out, log=_say)
        summary = {task: {"checksum": b.checksum, "meta": b.meta}
                   for task, b in bundles.items()}
        print(json.dumps({"bundles": summary}, sort_keys=True))
        return 0

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    if args.stage == "gan":
        generator, discriminator, history = train_gan(corpus, config)
        models = {"generator": generator.state(),
                  "discriminator": discriminator.state()}
        from .nets.checkpoint import ModelBundle
        save_checkpoint(ModelBundle(models, meta={
            "latent_dim": float(generator.latent_dim),
            "n_leads": float(generator.n_leads), "g_source": 0.0}), args.out)
        print(json.dumps({"checkpoint": args.out,
                          "epochs": len(history.epochs),
                          "final": history.epochs[-1]}))
        return 0
    if args.stage == "encoder":
        parts = _load_parts(args.init_from)
        generator = parts["generator"]
        encoder, history = train_encoder(corpus, generator, config)
        median, _ = inversion_quality(generator, encoder, seed=config.seed + 11)
        g_source = parts["meta"].get("g_source", 0.0)
        if median > INVERSION_GATE and args.fallback == "auto":
            _say(f"inversion median {median:.3f} above gate {INVERSION_GATE}; "
                 "retraining generator as autoencoder decoder")
            generator, warm, _ = train_autoencoder(corpus, config)
            encoder, history = train_encoder(corpus, generator, config,
                                             init_encoder=warm)
            median, _ = inversion_quality(generator, encoder,
                                          seed=config.seed + 11)
            g_source = G_SOURCE_AUTOENCODER
        from .nets.checkpoint import ModelBundle
        models = {"generator": generator.state(), "encoder": encoder.state()}
        save_checkpoint(ModelBundle(models, meta={
            "latent_dim": float(generator.latent_dim),
            "n_leads": float(generator.n_leads), "g_source": g_source,
            "inversion_median": median}), args.out)
        print(json.dumps({"checkpoint": args.out,
                          "inversion_median": median}))
        return 0
    if args.stage == "predictor":
        if not args.task:
            raise ValidationError("task", "train predictor needs --task")
        task = args.task[0]
        predictor, history = train_predictor(corpus, task, config)
        if args.init_from:
            parts = _load_parts(args.init_from)
            bundle = bundle_from_parts(
                parts["generator"], parts["encoder"], predictor, task,
                parts["meta"].get("g_source", 0.0),
                extra_meta={k: v for k, v in history.metadata.items()
                            if isinstance(v, float)})
        else:
            from .nets.checkpoint import ModelBundle
            bundle = ModelBundle({"predictor": predictor.state()},
                                 meta={"task_code": float(TASKS.index(task))})
        save_checkpoint(bundle, args.out)
        print(json.dumps({"checkpoint": args.out, "metrics": history.metadata}))
        return 0
    raise ValidationError("stage", f"unknown train stage '{args.stage}'")


def cmd_predict(args):
    from .cf import predict_record
    bundle = LoadedBundle.from_path(args.bundle)
    record = read_record(args.record)
    output = predict_record(record, bundle)
    if bundle.task == "af_classification":
        result = {"record_id": record.record_id, "task": bundle.task,
                  "class_probs": [float(p) for p in output],
                  "predicted_class": int(np.argmax(output))}
    else:
        result = {"record_id": record.record_id, "task": bundle.task,
                  "value": float(output)}
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_cf(args):
    from .cf import CfRequest, Direction, optimize_latent
    from .evaluate import positive_direction
    bundle = LoadedBundle.from_path(args.bundle)
    record = read_record(args.record)
    if args.direction is not None:
        direction = Direction.toward_class(int(args.direction)) \
            if bundle.task == "af_classification" \
            else Direction.toward_value(float(args.direction))
    else:
        direction = positive_direction(bundle.task)
    request = CfRequest(record_id=record.record_id, task=bundle.task,
                        direction=direction, severity=args.severity,
                        max_iters=args.max_iters, step_size=args.step_size,
                        target_tolerance=args.tolerance)
    result = optimize_latent(record, bundle, request)
    write_record(result.counterfactual, args.out)
    if args.recon_out:
        write_record(result.reconstruction, args.recon_out)
    if args.trajectory_out:
        with open(args.trajectory_out, "w") as fh:
            json.dump(result.trajectory_json(args.include_latents), fh)
    print(json.dumps({
        "counterfactual": args.out,
        "stop_reason": result.stop_reason,
        "original_prediction": result.original_prediction.tolist()
        if hasattr(result.original_prediction, "tolist")
        else result.original_prediction,
        "final_prediction": result.final_prediction,
        "target": result.target,
        "accepted_steps": len(result.trajectory) - 1,
        "recon_rel_rmse": result.recon_rel_rmse,
        "morph_rel_rmse": result.morph_rel_rmse,
    }, sort_keys=True))
    return 0


def cmd_eval(args):
    from .evaluate import evaluation_report
    bundle = LoadedBundle.from_path(args.bundle)
    corpus = load_corpus(args.corpus)
    report = evaluation_report(
        bundle, corpus, task=args.task or bundle.task, n=args.n,
        severity=args.severity, max_iters=args.max_iters,
        step_size=args.step_size, target_tolerance=args.tolerance,
        progress=(lambda i, n: _say(f"  {i}/{n}")) if args.verbose else None)
    out = args.out or f"eval-{report.task}.json"
    with open(out, "w") as fh:
        fh.write(report.to_json())
    text = report.to_text()
    with open(out.replace(".json", ".txt"), "w") as fh:
        fh.write(text)
    print(text)
    return 0


def cmd_serve(args):
    import uvicorn

    from .service.app import ServiceConfig, create_app
    bundle_paths = {}
    for spec in args.bundle or []:
        task, _, path = spec.partition("=")
        if not path:
            raise ValidationError("bundle", "--bundle expects task=path")
        bundle_paths[task] = path
    config = ServiceConfig(
        data_dir=_data_dir(args), bundle_paths=bundle_paths,
        host=args.host, port=args.port,
        cors_origins=args.cors_origin or
        ["http://localhost:5173", "http://localhost:3000"],
        static_dir=args.static_dir)
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, value in overrides.items():
            setattr(config, key, value)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cofe")
    parser.add_argument("--data-dir", default=None,
                        help="artifact directory (or env COFE_DATA_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic record or corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-records", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--af-fraction", type=float, default=0.5)
    p.add_argument("--heart-rate", type=float, default=70.0)
    p.add_argument("--rr-sigma", type=float, default=40.0)
    p.add_argument("--p-amp", type=float, default=0.1)
    p.add_argument("--qrs-amp", type=float, default=1.1)
    p.add_argument("--qrs-duration", type=float, default=95.0)
    p.add_argument("--t-amp", type=float, default=0.25)
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train models")
    p.add_argument("stage", choices=["gan", "encoder", "predictor", "all"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", action="append", choices=list(TASKS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--g-mode", choices=["auto", "gan", "ae"], default="auto")
    p.add_argument("--fallback", choices=["auto", "off"], default="auto")
    p.add_argument("--init-from", help="checkpoint with earlier stages")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a predictor on a record file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--record", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cf", help="generate a counterfactual for a record")
    p.add_argument("--bundle", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recon-out")
    p.add_argument("--trajectory-out")
    p.add_argument("--include-latents", action="store_true")
    p.add_argument("--severity", type=float, required=True)
    p.add_argument("--direction", help="class index or target value")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.set_defaults(func=cmd_cf)

    p = sub.add_parser("eval", help="population counterfactual evaluation")
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=list(TASKS))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--severity", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--bundle", action="append",
                   help="task=path (repeatable)")
    p.add_argument("--cors-origin", action="append")
    p.add_argument("--config", help="JSON file with ServiceConfig overrides")
    p.add_argument("--static-dir", help="serve a built UI from this directory")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CofeError as exc:
        print(json.dumps({"error": exc.code, "message": exc.message}),
              file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FILE_NOT_FOUND", "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
