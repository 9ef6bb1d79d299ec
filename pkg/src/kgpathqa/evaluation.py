"""Experiment runner: train, answer, and report Hits@1 per hop class and mode."""
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoder import QaTrainConfig, parse_qa_file, train_qa
from .exceptions import ContractViolation, KGPathQAError
from .graph import load_kb, subsample_half
from .kge import KgeFamily, KgeTrainConfig, train_kge
from .paths import compose_relations, render_chain
from .scoring import AnswerConfig, PathMode, answer_question

log = logging.getLogger(__name__)

MODE_ROWS = {PathMode.FULL: "Whole", PathMode.NO_PATH: "-Path",
             PathMode.SIGMOID_PATH: "-PT+PS"}


class StageError(KGPathQAError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def hits_at_1(predictions, gold):
    """Percentage of questions whose top prediction is in its gold set."""
    if len(predictions) != len(gold):
        raise ContractViolation(
            f"{len(predictions)} predictions for {len(gold)} gold sets")
    if not predictions:
        raise ContractViolation("no predictions")
    hits = sum(int(p) in g for p, g in zip(predictions, gold))
    return 100.0 * hits / len(predictions)


@dataclass
class PredictionRow:
    index: int
    predicted: int
    gold: tuple
    triple_score: float
    path_term: float
    total: float
    path: str

    def to_line(self, kg):
        gold = "|".join(kg.entities[g] for g in self.gold)
        return "\t".join([str(self.index), kg.entities[self.predicted], gold,
                          repr(self.triple_score), repr(self.path_term),
                          repr(self.total), self.path])


def evaluate_questions(kg, model, encoder, records, config, threads=1):
    """Answer every record; returns ``(hits_percentage, rows)`` in input order."""
    def answer(i):
        rec = records[i]
        top = answer_question(kg, model, encoder, rec, config)[0]
        path = render_chain(kg, top.explanation) if top.explanation is not None else ""
        return PredictionRow(i, top.entity, tuple(sorted(rec.answers)), top.triple_score,
                             top.path_term, top.total, path)

    idx = range(len(records))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(answer, idx))
    else:
        rows = [answer(i) for i in idx]
    hits = hits_at_1([r.predicted for r in rows], [set(r.gold) for r in rows])
    return hits, rows


def hits_from_log(lines):
    """Recompute Hits@1 from prediction-log lines."""
    preds, gold = [], []
    for line in lines:
        fields = line.rstrip("\n").split("\t")
        preds.append(fields[1])
        gold.append(set(fields[2].split("|")))
    return 100.0 * sum(p in g for p, g in zip(preds, gold)) / len(preds)


@dataclass
class EvalReport:
    hits: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict, repr=False)

    def mean_hits(self, hop, mode):
        return self.hits[hop][PathMode(mode).value]

    def table(self):
        """Aligned plain-text table: one row per mode, one column per hop class."""
        hops = sorted(self.hits)
        head = f"{'Model':<8}" + "".join(f"{f'{h}-H':>9}" for h in hops)
        lines = [head, "-" * len(head)]
        for mode, label in MODE_ROWS.items():
            if not all(mode.value in self.hits[h] for h in hops):
                continue
            lines.append(f"{label:<8}" + "".join(
                f"{self.hits[h][mode.value]:>9.1f}" for h in hops))
        return "\n".join(lines)

    def to_dict(self):
        return {"hits": {str(h): v for h, v in self.hits.items()},
                "counts": {str(h): v for h, v in self.counts.items()},
                "config": self.config, "seeds": self.seeds, "timings": self.timings}

    def write(self, directory, kg):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        with open(os.path.join(directory, "report.txt"), "w") as fh:
            fh.write(self.table() + "\n")
        for (hop, mode), rows in self.predictions.items():
            name = f"predictions_{hop}hop_{mode}.tsv"
            with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(row.to_line(kg) + "\n")


def _config_dict(obj):
    d = asdict(obj)
    return {k: (v.value if hasattr(v, "value") else v) for k, v in d.items()}


def run_pipeline(kg, splits, family=KgeFamily.MULTIPLICATIVE, kge_config=None, qa_config=None,
                 answer_config=None, half_seed=None, modes=tuple(PathMode), threads=1,
                 model=None):
    """Train and evaluate on in-memory data.

    Parameters
    ----------
    kg : KnowledgeGraph
        Full graph; halved with ``half_seed`` when given.
    splits : dict
        ``{hop: {"train": [...], "valid": [...], "test": [...]}}``.
    model : EmbeddingModel, optional
        Skip KGE training and use this model.
    """
    kge_config = kge_config or KgeTrainConfig()
    qa_config = qa_config or QaTrainConfig()
    answer_config = answer_config or AnswerConfig()
    report = EvalReport()
    report.config = {"family": KgeFamily(family).value, "kg_condition":
                     "full" if half_seed is None else "half",
                     "kge": _config_dict(kge_config), "qa": _config_dict(qa_config),
                     "answer": _config_dict(answer_config)}
    report.seeds = {"kge": kge_config.seed, "qa": qa_config.seed, "half": half_seed}

    t0 = time.perf_counter()
    if half_seed is not None:
        kg = _stage("halve", subsample_half, kg, half_seed)
    if model is None:
        model = _stage("train-kge", train_kge, kg, family, kge_config)
    report.timings["train-kge"] = time.perf_counter() - t0

    for hop in sorted(splits):
        parts = splits[hop]
        t0 = time.perf_counter()
        encoder = _stage(f"train-qa-{hop}hop", train_qa, kg, model, parts["train"],
                         parts.get("valid", ()), qa_config)
        report.timings[f"train-qa-{hop}hop"] = time.perf_counter() - t0
        report.hits[hop] = {}
        report.counts[hop] = {"questions": len(parts["test"])}
        for mode in modes:
            mode = PathMode(mode)
            t0 = time.perf_counter()
            cfg = replace(answer_config, mode=mode)
            hits, rows = _stage(f"eval-{hop}hop-{mode.value}", evaluate_questions, kg, model,
                                encoder, parts["test"], cfg, threads)
            report.timings[f"eval-{hop}hop-{mode.value}"] = time.perf_counter() - t0
            report.hits[hop][mode.value] = hits
            report.predictions[(hop, mode.value)] = rows
            if mode is PathMode.FULL:
                report.counts[hop]["answered_with_path"] = sum(bool(r.path) for r in rows)
            log.info("%d-hop %s: Hits@1 %.2f", hop, mode.value, hits)
    return report, kg, model


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class ExperimentConfig:
    kb_path: str
    qa_paths: dict
    kg_condition: str = "full"
    half_seed: int = 42
    family: KgeFamily = KgeFamily.MULTIPLICATIVE
    kge_config: KgeTrainConfig = field(default_factory=KgeTrainConfig)
    qa_config: QaTrainConfig = field(default_factory=QaTrainConfig)
    answer_config: AnswerConfig = field(default_factory=AnswerConfig)
    output_path: str | None = None
    threads: int = 1
    skip_unresolvable: bool = False

    def __post_init__(self):
        if self.kg_condition not in ("full", "half"):
            raise ContractViolation("kg_condition must be 'full' or 'half'")
        if not set(self.qa_paths) <= {1, 2, 3}:
            raise ContractViolation("hop classes must be in {1, 2, 3}")
        for path in [self.kb_path] + [p for ps in self.qa_paths.values() for p in ps if p]:
            if not os.path.exists(path):
                raise ContractViolation(f"missing input file {path}")


def run_experiment(config):
    """Load files, run the pipeline, and write the report when ``output_path`` is set.

    ``config.qa_paths`` maps hop class to ``(train, valid, test)`` paths
    (``valid`` may be ``None``).
    """
    t0 = time.perf_counter()
    kg = _stage("load-kb", load_kb, config.kb_path)
    splits = {}
    for hop, (train, valid, test) in config.qa_paths.items():
        splits[hop] = {
            "train": _stage(f"load-qa-{hop}hop", parse_qa_file, train, kg,
                            config.skip_unresolvable, log),
            "valid": (_stage(f"load-qa-{hop}hop", parse_qa_file, valid, kg,
                             config.skip_unresolvable, log) if valid else []),
            "test": _stage(f"load-qa-{hop}hop", parse_qa_file, test, kg,
                           config.skip_unresolvable, log),
        }
    load_time = time.perf_counter() - t0
    half = config.half_seed if config.kg_condition == "half" else None
    report, used_kg, _ = run_pipeline(kg, splits, config.family, config.kge_config,
                                      config.qa_config, config.answer_config, half,
                                      threads=config.threads)
    report.timings["load"] = load_time
    report.config["kb_path"] = config.kb_path
    report.config["qa_paths"] = {str(h): list(p) for h, p in config.qa_paths.items()}
    if config.output_path:
        report.write(config.output_path, used_kg)
    return report


def oracle_question_vector(model, relations):
    """Compose a gold relation path into a stand-in question embedding."""
    return compose_relations(model.family, model.relation_table[list(relations)])


def mean_report(reports):
    """Average Hits@1 across reports (e.g. several seeds)."""
    out = {}
    for hop in reports[0].hits:
        out[hop] = {m: float(np.mean([r.hits[hop][m] for r in reports]))
                    for m in reports[0].hits[hop]}
    return out
