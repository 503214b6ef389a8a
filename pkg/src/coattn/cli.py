"""Command-line interface: ``coattn {gen-synth,train,eval,gradcheck}``.

Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from coattn.cascade import VARIANTS, CascadeConfig
from coattn.checkpoint import load_checkpoint, save_checkpoint
from coattn.config import DEFAULTS, load_config, resolve
from coattn.data_io import generate_synthetic, read_bundle, read_pair_manifest, write_bundle
from coattn.errors import CoAttnError, ConfigurationError, TrainingAborted, ValidationError
from coattn.model import CoAttentionModel
from coattn.numerics import kernels
from coattn.objective import DENOMINATOR_MODES, LossConfig
from coattn.retrieval import evaluate_scores
from coattn.trainer import TrainConfig, model_from_checkpoint, train

log = logging.getLogger("coattn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _d(key):
    return f"(default: {DEFAULTS[key]})"


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--variant", choices=VARIANTS, help=f"cascade variant {_d('variant')}")
    g.add_argument("--depth", type=int, help=f"number of co-attention layers, 1-8 {_d('depth')}")
    g.add_argument("--heads", type=int, help=f"attention heads, must divide the dimension {_d('heads')}")
    g.add_argument("--joint-dim", type=int, dest="joint_dim",
                   help="joint-space dimension (default: the embedding dimension)")
    g.add_argument("--no-residual", dest="residual", action="store_const", const=False,
                   help="drop the residual add inside attention blocks (default: residual on)")
    g.add_argument("--seed", type=int, help=f"initialisation and shuffling seed {_d('seed')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic EMB1 bundle",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g.add_argument("--items", type=int, default=20, help="number of audio items (>= 2)")
    g.add_argument("--dim", type=int, default=16, help="embedding dimension")
    g.add_argument("--frames", type=int, default=4, help="frames per audio item")
    g.add_argument("--captions", type=int, default=1, help="captions per audio item")
    g.add_argument("--noise", type=float, default=0.05, help="Gaussian noise scale around each anchor")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--out", required=True, help="output bundle path")

    t = sub.add_parser("train", help="train a model on a bundle")
    t.add_argument("--config", help="key = value configuration file; flags override it")
    t.add_argument("--bundle", help="EMB1 bundle to train on")
    t.add_argument("--pairs", help="TSV manifest replacing the bundle's pairs")
    t.add_argument("--out", help="checkpoint path to write")
    t.add_argument("--log", help="also write the epoch loss lines to this file")
    t.add_argument("--resume", help="continue training from this checkpoint")
    _add_model_flags(t)
    o = t.add_argument_group("optimisation")
    o.add_argument("--batch", "--batch-size", type=int, dest="batch_size", help=f"batch size {_d('batch_size')}")
    o.add_argument("--epochs", type=int, help=f"training epochs {_d('epochs')}")
    o.add_argument("--lr", "--learning-rate", type=float, dest="learning_rate",
                   help=f"learning rate {_d('learning_rate')}")
    o.add_argument("--optimizer", choices=("adam", "sgd"), help=f"{_d('optimizer')}")
    o.add_argument("--temperature", type=float, help=f"contrastive temperature {_d('temperature')}")
    o.add_argument("--lambda", type=float, dest="lambda",
                   help=f"weight of the audio-to-text loss {_d('lambda')}")
    o.add_argument("--denominator", choices=DENOMINATOR_MODES, help=f"NT-Xent denominator {_d('denominator')}")

    e = sub.add_parser("eval", help="retrieval metrics of a checkpoint on a bundle")
    e.add_argument("--checkpoint", help="CKP1 checkpoint to evaluate")
    e.add_argument("--untrained", action="store_true",
                   help="evaluate a freshly initialised model (uses the model flags) instead of a checkpoint")
    e.add_argument("--bundle", required=True, help="EMB1 bundle to evaluate on")
    e.add_argument("--pairs", help="TSV manifest replacing the bundle's pairs")
    e.add_argument("--direction", choices=("t2a", "a2t"), default="t2a",
                   help="t2a ranks audio for each caption, a2t ranks captions for each audio (default: t2a)")
    e.add_argument("--binary-recall", action="store_true",
                   help="R@k counts a query as 1 if any relevant item is in the top k (default: fractional)")
    e.add_argument("--json", help="also write the report as JSON to this path")
    e.add_argument("--workers", type=int, default=1, help="scoring threads (default: 1)")
    _add_model_flags(e)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter group",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    c.add_argument("--variant", choices=VARIANTS, default="iterating", help="cascade variant")
    c.add_argument("--depth", type=int, default=1, help="cascade depth")
    c.add_argument("--dim", type=int, default=8, help="embedding dimension")
    c.add_argument("--frames", type=int, default=3, help="audio frames per item")
    c.add_argument("--batch", type=int, default=4, help="batch size")
    c.add_argument("--heads", type=int, default=2, help="attention heads")
    c.add_argument("--seed", type=int, default=0, help="random seed")
    c.add_argument("--temperature", type=float, default=0.07, help="contrastive temperature")
    c.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    c.add_argument("--break-me", action="store_true", help=argparse.SUPPRESS)
    return parser


def cmd_gen_synth(args) -> int:
    if args.items < 2:
        raise UsageError(f"--items must be >= 2, got {args.items}")
    if args.dim < 1 or args.frames < 1 or args.captions < 1 or args.noise < 0:
        raise UsageError("--dim, --frames and --captions must be positive and --noise non-negative")
    bundle = generate_synthetic(args.items, args.dim, args.frames, args.noise, args.seed, args.captions)
    write_bundle(bundle, args.out)
    print(f"audio={len(bundle.audio)} text={len(bundle.text)} pairs={len(bundle.pairs)} dim={bundle.dim}")
    return EXIT_OK


def _load_bundle(path, pairs=None):
    if path is None:
        raise UsageError("a bundle path is required (--bundle or 'bundle' in the config)")
    if not Path(path).is_file():
        raise UsageError(f"bundle not found: {path}")
    bundle = read_bundle(path)
    if pairs:
        bundle = bundle.with_pairs(read_pair_manifest(pairs))
    return bundle


def _overrides(args) -> dict:
    keys = ("bundle", "pairs", "out", "log", "variant", "depth", "heads", "joint_dim", "residual",
            "temperature", "lambda", "denominator", "batch_size", "epochs", "learning_rate", "seed",
            "optimizer")
    return {k: getattr(args, k, None) for k in keys}


def cmd_train(args) -> int:
    file_values = load_config(args.config) if args.config else {}
    merged = {**file_values, **{k: v for k, v in _overrides(args).items() if v is not None}}
    bundle = _load_bundle(merged.get("bundle"), merged.get("pairs"))
    run = resolve(file_values, _overrides(args), bundle.dim)
    if run.out is None:
        raise UsageError("an output checkpoint path is required (--out or 'out' in the config)")
    resume = load_checkpoint(args.resume) if args.resume else None
    lines = []

    def on_epoch(epoch, loss):
        line = f"epoch={epoch} loss={loss!r}"
        lines.append(line)
        print(line, flush=True)

    if resume is not None:
        for i, loss in enumerate(resume.loss_history, start=1):
            lines.append(f"epoch={i} loss={loss!r}")
    cp = train(bundle, run.train, resume=resume, on_epoch=on_epoch)
    save_checkpoint(cp, run.out)
    if run.log:
        Path(run.log).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"checkpoint={run.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.untrained == bool(args.checkpoint):
        raise UsageError("give exactly one of --checkpoint or --untrained")
    if args.checkpoint and not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    bundle = _load_bundle(args.bundle, args.pairs)
    if args.checkpoint:
        cp = load_checkpoint(args.checkpoint)
        model = model_from_checkpoint(cp)
    else:
        run = resolve({}, _overrides(args), bundle.dim)
        model = CoAttentionModel.init(run.train.cascade, run.train.joint_dim, run.train.seed)
    if model.dim != bundle.dim:
        raise ValidationError(f"checkpoint dimension {model.dim} does not match bundle dimension {bundle.dim}")
    text_ids, audio_ids = list(bundle.text), list(bundle.audio)
    scores = model.score_matrix([bundle.text[t] for t in text_ids], [bundle.audio[a] for a in audio_ids],
                                workers=args.workers)
    if args.direction == "t2a":
        queried = {t for t, _ in bundle.pairs}
        rows = [i for i, t in enumerate(text_ids) if t in queried]
        report = evaluate_scores([text_ids[i] for i in rows], audio_ids, scores[rows],
                                 bundle.relevance_t2a(), args.binary_recall)
    else:
        queried = {a for _, a in bundle.pairs}
        cols = [j for j, a in enumerate(audio_ids) if a in queried]
        report = evaluate_scores([audio_ids[j] for j in cols], text_ids, scores[:, cols].T,
                                 bundle.relevance_a2t(), args.binary_recall)
    sys.stdout.write(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from coattn.diagnostics import model_gradcheck

    CascadeConfig(args.variant, args.depth, args.dim, args.heads)  # validate before the slow part
    loss = LossConfig(temperature=args.temperature)
    corrupt = None
    if args.break_me:
        corrupt = CoAttentionModel.init(CascadeConfig(args.variant, args.depth, args.dim, args.heads),
                                        seed=args.seed).parameters()[0].name
    results = model_gradcheck(args.variant, args.depth, args.dim, args.frames, args.batch, args.heads,
                              args.seed, loss, corrupt=corrupt)
    failed = [r for r in results if not r.max_rel_error < args.tol]
    for r in results:
        status = "ok" if r.max_rel_error < args.tol else "FAIL"
        print(f"group={r.name} max_rel_error={r.max_rel_error:.3e} entries={r.entries} status={status}")
    print(f"kernels={kernels.backend.NAME} groups={len(results)} failed={len(failed)}")
    if failed:
        print("gradient check failed for: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"coattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"coattn {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigurationError, ValidationError, CoAttnError) as exc:
        print(f"coattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"coattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
