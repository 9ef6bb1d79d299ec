"""Command line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on data or contract errors.
"""
import argparse
import hashlib
import json
import logging
import os
import platform
import re
import sys
import time

import numpy as np

from . import encoder as enc_mod
from . import graph as graph_mod
from . import kge as kge_mod
from .encoder import QaTrainConfig, encode_question, parse_qa_file, question_tokens, train_qa
from .evaluation import run_pipeline
from .exceptions import KGPathQAError
from .graph import load_kb, subsample_half
from .kge import KgeTrainConfig, link_prediction_eval, load_model, save_model, train_kge
from .paths import render_chain
from .scoring import AnswerConfig, PathMode, rank_candidates
from .synthetic import generate_synthetic, write_synthetic

log = logging.getLogger("kgpathqa")

COMMANDS = ("kg-stats", "train-kge", "eval-kge", "train-qa", "answer", "eval-qa", "ablate",
            "synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_common(p, *names):
    options = {
        "kb": dict(help="knowledge base file (head|relation|tail lines)"),
        "qa-train": dict(action="append", help="training questions; prefix 'N:' for hop class"),
        "qa-valid": dict(action="append", help="validation questions; prefix 'N:' for hop class"),
        "qa-test": dict(action="append", help="test questions; prefix 'N:' for hop class"),
        "family": dict(choices=["additive", "multiplicative", "rotation"],
                       default="multiplicative"),
        "dim": dict(type=int, default=200),
        "epochs": dict(type=int, default=None),
        "batch-size": dict(type=int, default=128),
        "lr": dict(type=float, default=0.0005),
        "alpha": dict(type=float, default=0.1),
        "max-hops": dict(type=int, default=3),
        "path-cap": dict(type=int, default=16),
        "path-policy": dict(choices=["lexicographic", "max-correlation"],
                            default="lexicographic"),
        "mode": dict(choices=[m.value for m in PathMode], default="full"),
        "kg-half": dict(action="store_true", help="drop half of the triples (seeded)"),
        "seed": dict(type=int, default=42, help="root seed for every random stage"),
        "threads": dict(type=int, default=os.cpu_count() or 1),
        "out": dict(help="output path (file or directory, per command)"),
        "model": dict(help="KGE checkpoint"),
        "encoder": dict(help="encoder checkpoint"),
    }
    for name in names:
        p.add_argument(f"--{name}", **options[name])


def build_parser():
    parser = _Parser(prog="kgpathqa", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("kg-stats", help="print entity/relation/triple counts")
    _add_common(p, "kb", "kg-half", "seed")

    p = sub.add_parser("train-kge", help="pre-train embeddings, write a checkpoint")
    _add_common(p, "kb", "family", "dim", "epochs", "batch-size", "lr", "kg-half", "seed", "out")
    p.add_argument("--space", choices=["real", "complex"])
    p.add_argument("--negatives", type=int, default=10)
    p.add_argument("--margin", type=float, default=6.0)

    p = sub.add_parser("eval-kge", help="filtered link prediction metrics")
    _add_common(p, "kb", "model", "kg-half", "seed")
    p.add_argument("--test", help="held-out triples in KB format (default: all KB triples)")

    p = sub.add_parser("train-qa", help="train the question encoder, write a checkpoint")
    _add_common(p, "kb", "model", "qa-train", "qa-valid", "epochs", "batch-size", "lr",
                "kg-half", "seed", "out")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--word-dim", type=int, default=256)
    p.add_argument("--label-smoothing", type=float, default=0.05)

    p = sub.add_parser("answer", help="rank answers to one question with explanations")
    _add_common(p, "kb", "model", "encoder", "alpha", "max-hops", "path-cap", "path-policy",
                "mode", "kg-half", "seed")
    p.add_argument("--question", required=True, help="question text with the [topic] bracketed")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--json", action="store_true", help="one JSON record per candidate")

    for name, helptext in (("eval-qa", "train and evaluate Hits@1 in one mode"),
                           ("ablate", "train once, evaluate full / no-path / sigmoid-path")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, "kb", "model", "qa-train", "qa-valid", "qa-test", "family", "dim",
                    "epochs", "batch-size", "lr", "alpha", "max-hops", "path-cap",
                    "path-policy", "kg-half", "seed", "threads", "out")
        if name == "eval-qa":
            _add_common(p, "mode")
        p.add_argument("--qa-epochs", type=int, default=20)
        p.add_argument("--qa-lr", type=float, default=0.0005)
        p.add_argument("--hidden", type=int, default=256)
        p.add_argument("--word-dim", type=int, default=256)

    p = sub.add_parser("synth", help="generate a synthetic KB and question splits")
    _add_common(p, "seed", "out")
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--relations", type=int, default=6)
    p.add_argument("--hops", type=int, nargs="+", default=[1, 2])
    return parser


def parse_args(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        values = read_config(known.config)
        command = next((a for a in argv if a in COMMANDS), None)
        target = parser._subparsers._group_actions[0].choices.get(command)
        if target is not None:
            dests = {a.dest: a for a in target._actions}
            defaults = {}
            for key, raw in values.items():
                action = dests.get(key)
                if action is None:
                    raise UsageError(f"unknown config key {key!r} for {command}")
                defaults[key] = _convert(action, raw)
            target.set_defaults(**defaults)
    return parser.parse_args(argv)


def _convert(action, raw):
    if isinstance(action, argparse._StoreTrueAction):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(action, argparse._AppendAction):
        return [v.strip() for v in raw.split(",") if v.strip()]
    if action.nargs in ("+", "*"):
        return [action.type(v) if action.type else v for v in raw.split()]
    return action.type(raw) if action.type else raw


# ---------------------------------------------------------------------------
# manifest


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, args, argv, artifacts, timings):
    config = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seeds": {"root": getattr(args, "seed", None)},
        "artifacts": {p: _sha256(p) for p in artifacts if os.path.isfile(p)},
        "timings": timings,
        "format_versions": {"graph": graph_mod.GRAPH_FORMAT_VERSION,
                            "kge_checkpoint": kge_mod.MODEL_FORMAT_VERSION,
                            "encoder_checkpoint": enc_mod.ENCODER_FORMAT_VERSION},
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest


def replay_manifest(path):
    """Re-run the command recorded in a manifest; returns its exit status."""
    with open(path, encoding="utf-8") as fh:
        return main(json.load(fh)["argv"])


# ---------------------------------------------------------------------------
# commands


def _need(args, *names):
    for name in names:
        if not getattr(args, name.replace("-", "_")):
            raise UsageError(f"{args.command}: --{name} is required")


def _graph(args):
    _need(args, "kb")
    kg = load_kb(args.kb)
    if getattr(args, "kg_half", False):
        kg = subsample_half(kg, args.seed)
    return kg


def _hop_paths(values):
    out = {}
    for value in values or ():
        m = re.match(r"^([123]):(.+)$", value)
        hop, path = (int(m.group(1)), m.group(2)) if m else (1, value)
        out.setdefault(hop, []).append(path)
    return out


def _load_questions(paths, kg):
    records = []
    for p in paths:
        records.extend(parse_qa_file(p, kg))
    return records


def cmd_kg_stats(args, out):
    kg = _graph(args)
    out.write(f"entities:  {kg.n_entities}\n")
    out.write(f"relations: {kg.n_relations} ({len(kg.relation_names)} original + inverses)\n")
    out.write(f"triples:   {kg.n_triples}\n")
    return {}


def cmd_train_kge(args, out):
    _need(args, "out")
    kg = _graph(args)
    cfg = KgeTrainConfig(dim=args.dim, epochs=100 if args.epochs is None else args.epochs,
                         batch_size=args.batch_size, learning_rate=args.lr,
                         negatives_per_positive=args.negatives, margin=args.margin,
                         space=args.space, seed=args.seed)
    model = train_kge(kg, args.family, cfg,
                      callback=lambda e, l: log.info("epoch %d loss %.5f", e, l))
    save_model(model, args.out, kg.entities, kg.relations)
    out.write(f"wrote {args.out} ({model.family.value}, {model.space.kind.value}, "
              f"dim={model.space.dim})\n")
    return {"artifacts": [args.out, args.out + ".vocab"]}


def _model_for(args, kg):
    _need(args, "model")
    model = load_model(args.model)
    if model.n_entities != kg.n_entities or model.n_relations != kg.n_relations:
        raise KGPathQAError("checkpoint vocabulary does not match the knowledge base")
    return model


def cmd_eval_kge(args, out):
    kg = _graph(args)
    model = _model_for(args, kg)
    if args.test:
        test = load_kb(args.test)
        idx = [(kg.entity_index[test.entities[h]], kg.relation_index[test.relations[r]],
                kg.entity_index[test.entities[t]]) for h, r, t in test.triples.tolist()]
        test_triples = np.array(idx, dtype=np.int64)
        all_triples = np.concatenate([kg.augmented_triples(), test_triples])
    else:
        test_triples = all_triples = kg.augmented_triples()
    metrics = link_prediction_eval(model, test_triples, all_triples)
    out.write(f"filtered Hits@1:  {metrics['hits@1']:.4f}\n")
    out.write(f"filtered Hits@10: {metrics['hits@10']:.4f}\n")
    out.write(f"filtered MRR:     {metrics['mrr']:.4f}\n")
    return {}


def cmd_train_qa(args, out):
    _need(args, "out", "qa-train")
    kg = _graph(args)
    model = _model_for(args, kg)
    train = _load_questions(args.qa_train, kg)
    valid = _load_questions(args.qa_valid or (), kg)
    cfg = QaTrainConfig(epochs=20 if args.epochs is None else args.epochs,
                        batch_size=args.batch_size, learning_rate=args.lr,
                        label_smoothing=args.label_smoothing, embedding_dim=args.word_dim,
                        hidden_dim=args.hidden, seed=args.seed)
    params = train_qa(kg, model, train, valid, cfg,
                      callback=lambda e, l, h: log.info("epoch %d loss %.5f valid %s", e, l, h))
    enc_mod.save_encoder(params, args.out)
    out.write(f"wrote {args.out} (vocab={len(params.vocab)})\n")
    return {"artifacts": [args.out]}


def cmd_answer(args, out):
    _need(args, "encoder")
    kg = _graph(args)
    model = _model_for(args, kg)
    params = enc_mod.load_encoder(args.encoder)
    try:
        tokens, mention = question_tokens(args.question)
    except KGPathQAError as exc:
        raise UsageError(str(exc)) from None
    if mention not in kg.entity_index:
        raise KGPathQAError(f"unknown topic entity {mention!r}")
    topic = kg.entity_index[mention]
    config = AnswerConfig(alpha=args.alpha, max_hops=args.max_hops, path_cap=args.path_cap,
                          path_policy=args.path_policy, mode=args.mode)
    q = encode_question(params, tokens)
    ranked = rank_candidates(kg, model, topic, q, config)[:args.top_k]
    for i, c in enumerate(ranked, 1):
        if args.json:
            out.write(json.dumps({
                "rank": i, "entity": kg.entities[c.entity], "entity_id": c.entity,
                "triple_score": c.triple_score, "path_term": c.path_term, "total": c.total,
                "path": list(c.explanation.relations) if c.explanation else None,
            }) + "\n")
            continue
        out.write(f"{i}. {kg.entities[c.entity]}  total={c.total:.4f} "
                  f"triple={c.triple_score:.4f} path={c.path_term:+.4f}\n")
        if c.explanation is not None:
            out.write(f"   {render_chain(kg, c.explanation)}\n")
    return {}


def _run_eval(args, out, modes):
    _need(args, "kb", "qa-train", "qa-test")
    kg = load_kb(args.kb)
    train, valid, test = (_hop_paths(v) for v in (args.qa_train, args.qa_valid, args.qa_test))
    splits = {hop: {"train": _load_questions(train.get(hop, ()), kg),
                    "valid": _load_questions(valid.get(hop, ()), kg),
                    "test": _load_questions(test[hop], kg)} for hop in sorted(test)}
    kge_cfg = KgeTrainConfig(dim=args.dim, epochs=100 if args.epochs is None else args.epochs,
                             batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed)
    qa_cfg = QaTrainConfig(epochs=args.qa_epochs, batch_size=args.batch_size,
                           learning_rate=args.qa_lr, embedding_dim=args.word_dim,
                           hidden_dim=args.hidden, seed=args.seed)
    ans_cfg = AnswerConfig(alpha=args.alpha, max_hops=args.max_hops, path_cap=args.path_cap,
                           path_policy=args.path_policy)
    model = _model_for(args, kg) if args.model else None
    report, used_kg, _ = run_pipeline(kg, splits, args.family, kge_cfg, qa_cfg, ans_cfg,
                                      args.seed if args.kg_half else None, modes,
                                      args.threads, model)
    out.write(report.table() + "\n")
    artifacts = []
    if args.out:
        report.write(args.out, used_kg)
        artifacts = [os.path.join(args.out, f) for f in sorted(os.listdir(args.out))
                     if f != "manifest.json"]
    return {"artifacts": artifacts, "timings": report.timings}


def cmd_eval_qa(args, out):
    return _run_eval(args, out, (PathMode(args.mode),))


def cmd_ablate(args, out):
    return _run_eval(args, out, tuple(PathMode))


def cmd_synth(args, out):
    _need(args, "out")
    kg, splits = generate_synthetic(args.entities, args.relations, args.hops, args.seed)
    paths = write_synthetic(kg, splits, args.out)
    counts = ", ".join(f"{h}-hop {sum(len(v) for v in s.values())}" for h, s in splits.items())
    out.write(f"wrote {len(paths)} files to {args.out} ({kg.n_triples} triples; {counts})\n")
    return {"artifacts": list(paths.values())}


HANDLERS = {"kg-stats": cmd_kg_stats, "train-kge": cmd_train_kge, "eval-kge": cmd_eval_kge,
            "train-qa": cmd_train_qa, "answer": cmd_answer, "eval-qa": cmd_eval_qa,
            "ablate": cmd_ablate, "synth": cmd_synth}


def _manifest_path(args):
    out = getattr(args, "out", None)
    if not out:
        return None
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def main(argv=None, out=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    try:
        args = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"kgpathqa: {exc}\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        result = HANDLERS[args.command](args, out) or {}
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except (KGPathQAError, OSError, KeyError) as exc:
        sys.stderr.write(f"kgpathqa {args.command}: {exc}\n")
        return 2
    timings = dict(result.get("timings", {}))
    timings["total"] = time.perf_counter() - t0
    manifest = _manifest_path(args)
    if manifest:
        write_manifest(manifest, args, argv, result.get("artifacts", []), timings)
    return 0


if __name__ == "__main__":
    sys.exit(main())
