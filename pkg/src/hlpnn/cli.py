"""``hlpnn`` command line: synth, build-vocab, build-graph, embed-graph, train,
eval, sweep-alpha, ablate.

Results go to ``--out`` (or stdout as JSON), logs to stderr. Exit codes: 0 on
success, 1 on runtime errors (a JSON error object is printed), 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunManifest, load_manifest
from .geo import CityRegistry

log = logging.getLogger("hlpnn")


class UsageError(Exception):
    """Bad invocation; maps to exit status 2."""


def _common(p):
    p.add_argument("--config", help="JSON run manifest (model/train/world/graph/paths sections)")
    p.add_argument("--seed", type=int, help="override the manifest seed")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
    p.add_argument("--out", help="output file or directory")


def _command(sub, name, text):
    p = sub.add_parser(name, help=text, description=text)
    _common(p)
    return p


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hlpnn",
        description="Hierarchical home-location prediction for social media users.",
        epilog="exit status: 0 success, 1 runtime error (JSON error object), 2 usage error",
    )
    parser.add_argument("--version", action="version", version=f"hlpnn {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    _command(sub, "synth", "generate a synthetic world")

    p = _command(sub, "build-vocab", "word/char vocabularies from a training split")
    p.add_argument("--data", help="training JSONL")

    p = _command(sub, "build-graph", "mention graph edge list")
    p.add_argument("--data", action="append", help="dataset JSONL (repeatable)")
    p.add_argument("--mode", choices=["wnut", "comention"], help="construction rule")
    p.add_argument("--celebrity-threshold", type=int, help="drop users with more mentioners")

    p = _command(sub, "embed-graph", "second-order LINE embeddings")
    p.add_argument("--graph", help="edge list TSV")
    p.add_argument("--dim", type=int, help="embedding width (default 600)")
    p.add_argument("--samples", type=int, help="number of sampled edges")
    p.add_argument("--lr0", type=float, help="initial learning rate (default 0.025)")
    p.add_argument("--negatives", type=int, help="noise samples per edge (default 5)")

    for name, text in (("train", "train a model"), ("sweep-alpha", "relative country error vs alpha"),
                       ("ablate", "component ablations")):
        p = _command(sub, name, text)
        p.add_argument("--train", help="training JSONL")
        p.add_argument("--dev", help="development JSONL")
        p.add_argument("--registry", help="cities TSV")
        p.add_argument("--embeddings", help="network embedding file")
        if name == "train":
            p.add_argument("--pretrained", help="word vector text file")
        else:
            p.add_argument("--test", help="evaluation JSONL (defaults to --dev)")
            p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
        if name == "sweep-alpha":
            p.add_argument("--alphas", type=_float_list, help="comma-separated alphas")
        if name == "ablate":
            p.add_argument("--variants", help="comma-separated variant names")

    p = _command(sub, "eval", "evaluate a checkpoint")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--data", help="dataset JSONL")
    p.add_argument("--registry", help="cities TSV")
    p.add_argument("--embeddings", help="network embedding file")
    return parser


def _path(args, manifest, name, required=True):
    value = getattr(args, name, None) or manifest.paths.get(name)
    if required and not value:
        raise UsageError(f"--{name} is required (or paths.{name} in --config)")
    return value


def _emit(result, out):
    text = json.dumps(result, indent=2, sort_keys=True)
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _users(path):
    from .text import load_dataset

    return list(load_dataset(path))


def _embeddings(path):
    from .graph import NetworkEmbeddings

    return NetworkEmbeddings.load(path) if path else None


def cmd_synth(args, m):
    from .synth import WorldSpec, generate, write_world

    world = dict(m.world)
    if args.seed is not None:
        world["seed"] = args.seed
    out = _path(args, m, "out")
    w = generate(WorldSpec(**world))
    write_world(w, out)
    return {"out": out, "cities": w.registry.n_cities, "countries": w.registry.n_countries,
            "train": len(w.train), "dev": len(w.dev), "test": len(w.test),
            "edges": len(w.edges)}, None


def cmd_build_vocab(args, m):
    from .text import build_vocab, save_vocab

    data = _path(args, m, "data") if args.data else _path(args, m, "train")
    out = _path(args, m, "out")
    vocab = build_vocab(_users(data), m.model.word_min_count, m.model.char_min_count)
    os.makedirs(out, exist_ok=True)
    save_vocab(vocab, os.path.join(out, "words.tsv"), os.path.join(out, "chars.tsv"))
    return {"words": vocab.n_words, "chars": vocab.n_chars, "out": out}, None


def cmd_build_graph(args, m):
    from .graph import build_graph, remove_celebrities

    paths = args.data or [p for p in (m.paths.get("train"), m.paths.get("dev"),
                                      m.paths.get("test")) if p]
    if not paths:
        raise UsageError("--data is required")
    out = _path(args, m, "out")
    mode = args.mode or m.graph.get("mode", "wnut")
    threshold = args.celebrity_threshold
    if threshold is None:
        threshold = m.graph.get("celebrity_threshold", 10)
    users = [u for p in paths for u in _users(p)]
    g = remove_celebrities(build_graph(users, mode, celebrity_threshold=threshold), threshold)
    g.to_tsv(out)
    return {"nodes": len(g.nodes), "edges": len(g.edges), "removed": len(g.removed),
            "out": out}, None


def cmd_embed_graph(args, m):
    from .graph import MentionGraph, train_line

    graph_path = args.graph or m.paths.get("graph")
    if not graph_path:
        raise UsageError("--graph is required")
    out = _path(args, m, "out")
    g = m.graph
    emb = train_line(
        MentionGraph.from_tsv(graph_path),
        dim=args.dim or g.get("dim", 600),
        lr0=args.lr0 or g.get("lr0", 0.025),
        negatives=args.negatives or g.get("negatives", 5),
        samples=args.samples if args.samples is not None else g.get("samples", 1_000_000),
        seed=m.resolved_seed(),
        batch_size=g.get("batch_size", 64),
    )
    emb.save(out)
    return {"vertices": len(emb.ids), "dim": emb.dim, "out": out}, None


def _training_inputs(args, m):
    train_path = _path(args, m, "train")
    dev_path = _path(args, m, "dev")
    registry_path = _path(args, m, "registry")
    return (_users(train_path), _users(dev_path), CityRegistry.from_tsv(registry_path),
            _embeddings(_path(args, m, "embeddings", required=False)))


def cmd_train(args, m):
    from .checkpoint import save_checkpoint
    from .training import train

    out = _path(args, m, "out")
    train_users, dev_users, registry, emb = _training_inputs(args, m)
    tcfg = replace(m.train, seed=m.resolved_seed())
    clf, record = train(m.model, tcfg, train_users, dev_users, registry, emb,
                        _path(args, m, "pretrained", required=False))
    os.makedirs(out, exist_ok=True)
    save_checkpoint(clf, os.path.join(out, "model.ckpt"))
    record.to_jsonl(os.path.join(out, "run.jsonl"))
    result = {
        "checkpoint": os.path.join(out, "model.ckpt"),
        "best_epoch": record.best_epoch,
        "epochs": len(record.epochs),
        "dev": clf.evaluate(dev_users).to_dict(),
    }
    _emit(result, os.path.join(out, "result.json"))
    return result, None


def cmd_eval(args, m):
    from .checkpoint import CheckpointError, load_checkpoint

    ckpt = _path(args, m, "checkpoint")
    data = _path(args, m, "data")
    clf = load_checkpoint(ckpt)
    registry_path = _path(args, m, "registry", required=False)
    if registry_path:
        given = CityRegistry.from_tsv(registry_path)
        if [c.city_id for c in given.cities] != list(clf.classes_):
            raise CheckpointError("registry does not match the checkpoint's city list")
    emb = _embeddings(_path(args, m, "embeddings", required=False))
    if emb is not None:
        clf.network_embeddings = emb
    return clf.evaluate(_users(data)).to_dict(), args.out


def _eval_users(args, m, dev_users):
    path = getattr(args, "test", None) or m.paths.get("test")
    return _users(path) if path else dev_users


def cmd_sweep_alpha(args, m):
    from .training import run_alpha_sweep, write_sweep_csv

    out = _path(args, m, "out")
    train_users, dev_users, registry, emb = _training_inputs(args, m)
    rows = run_alpha_sweep(m.model, m.train, train_users, dev_users,
                           _eval_users(args, m, dev_users), registry,
                           alphas=args.alphas or (0.0, 1.0, 5.0, 20.0),
                           seeds=args.seeds or (0, 1, 2, 3, 4), embeddings=emb)
    write_sweep_csv(rows, out)
    return {"rows": len(rows), "out": out}, None


def cmd_ablate(args, m):
    from .training import ABLATIONS, ablation_table, run_ablation

    out = _path(args, m, "out")
    variants = args.variants.split(",") if args.variants else list(ABLATIONS)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {sorted(ABLATIONS)}")
    train_users, dev_users, registry, emb = _training_inputs(args, m)
    results = run_ablation(m.model, m.train, train_users, dev_users,
                           _eval_users(args, m, dev_users), registry, variants,
                           seeds=args.seeds or (0, 1, 2), embeddings=emb)
    table = ablation_table(results)
    return {"variants": table}, out


COMMANDS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "build-graph": cmd_build_graph,
    "embed-graph": cmd_embed_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-alpha": cmd_sweep_alpha,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        manifest = load_manifest(args.config) if args.config else RunManifest()
        if args.seed is not None:
            manifest.seed = args.seed
        manifest.version = __version__
        with threadpool_limits(limits=max(1, args.threads)):
            result, out = COMMANDS[args.command](args, manifest)
        if args.command in ("eval", "ablate"):
            _emit(result, out)
        else:
            print(json.dumps(result, sort_keys=True))
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hlpnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a JSON error object
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
