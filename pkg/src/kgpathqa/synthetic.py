"""Desk-scale synthetic knowledge graphs with templated multi-hop questions.

Entities are split into a few types and each relation maps one type onto
another, so embeddings have structure to learn beyond memorisation. Gold
answers come from exhaustive traversal of the generated graph.
"""
import os

import numpy as np

from .encoder import QuestionRecord, format_qa_line, question_tokens
from .exceptions import ContractViolation
from .graph import dump_kb, load_kb

SPLITS = ("train", "valid", "test")


def relation_phrase(kg, r):
    """One token per augmented relation, e.g. ``rel3`` / ``rel3inv``."""
    name = kg.relation_names[r // 2]
    return name if r % 2 == 0 else name + "inv"


def question_text(kg, topic, relations):
    phrases = " of ".join(relation_phrase(kg, r) for r in reversed(relations))
    return f"which entity is {phrases} of [{kg.entities[topic]}]"


def follow(kg, topic, relations):
    """Entities reached from ``topic`` by walking exactly ``relations``."""
    frontier = {topic}
    for r in relations:
        nxt = set()
        for v in frontier:
            rels, ents = kg.neighbor_arrays(v)
            nxt.update(ents[rels == r].tolist())
        frontier = nxt
        if not frontier:
            break
    return frontier


def generate_synthetic(entities=200, relations=6, hops=(1, 2), seed=7, triples_per_entity=3,
                       n_types=4, max_questions_per_hop=1200):
    """Random typed graph plus train/valid/test question splits per hop count.

    Returns
    -------
    kg : KnowledgeGraph
        Entities that ended up without any triple are not part of it.
    splits : dict
        ``{hop: {"train": [...], "valid": [...], "test": [...]}}``, 8/1/1.
    """
    hops = tuple(sorted(set(int(h) for h in hops)))
    if entities < 20 or relations < 2:
        raise ContractViolation("need at least 20 entities and 2 relations")
    if not hops or not set(hops) <= {1, 2, 3}:
        raise ContractViolation("hops must be a non-empty subset of {1, 2, 3}")
    rng = np.random.default_rng(seed)
    n_types = max(1, min(n_types, entities // 5))
    etype = rng.permutation(np.arange(entities) % n_types)
    members = [np.flatnonzero(etype == k) for k in range(n_types)]
    domain = rng.integers(0, n_types, size=relations)
    codomain = rng.integers(0, n_types, size=relations)

    per_rel = max(1, entities * triples_per_entity // relations)
    rows = set()
    for k in range(relations):
        heads = rng.choice(members[domain[k]], size=per_rel)
        tails = rng.choice(members[codomain[k]], size=per_rel)
        rows.update((int(h), 2 * k, int(t)) for h, t in zip(heads, tails) if h != t)
    # round-trip through the text format so the graph equals what write_synthetic
    # produces: isolated entities are dropped and ids follow first appearance
    kg = load_kb([f"e{h}|rel{r // 2}|e{t}" for h, r, t in sorted(rows)])

    splits = {}
    for hop in hops:
        questions = _questions_for_hop(kg, hop, rng, max_questions_per_hop)
        if len(questions) < 10:
            raise ContractViolation(
                f"graph too small to realize {hop}-hop questions ({len(questions)} found)")
        order = rng.permutation(len(questions))
        n_train = int(0.8 * len(questions))
        n_valid = int(0.1 * len(questions))
        parts = np.split(order, [n_train, n_train + n_valid])
        splits[hop] = {name: [questions[i] for i in idx] for name, idx in zip(SPLITS, parts)}
    return kg, splits


def _walks(kg, prefix, frontier, remaining):
    """Yield ``(relation sequence, reached set)`` for every non-empty walk."""
    if remaining == 0:
        yield prefix, frontier
        return
    groups = {}
    for v in frontier:
        rels, ents = kg.neighbor_arrays(v)
        for r, u in zip(rels.tolist(), ents.tolist()):
            groups.setdefault(r, set()).add(u)
    for r in sorted(groups):
        yield from _walks(kg, prefix + (r,), groups[r], remaining - 1)


def _questions_for_hop(kg, hop, rng, limit):
    candidates = []
    for topic in range(kg.n_entities):
        for seq, answers in _walks(kg, (), {topic}, hop):
            if hop > 1:
                answers = answers - {topic}
            if answers:
                candidates.append((topic, seq, answers))
    if len(candidates) > limit:
        keep = np.sort(rng.choice(len(candidates), size=limit, replace=False))
        candidates = [candidates[i] for i in keep]
    out = []
    for topic, seq, answers in candidates:
        text = question_text(kg, topic, seq)
        tokens, _ = question_tokens(text)
        out.append(QuestionRecord(text, tokens, topic, answers))
    return out


def write_synthetic(kg, splits, directory):
    """Write ``kb.txt`` and ``qa_<hop>hop_<split>.txt`` files; returns paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {"kb": os.path.join(directory, "kb.txt")}
    with open(paths["kb"], "w", encoding="utf-8") as fh:
        dump_kb(kg, fh)
    for hop, parts in splits.items():
        for name, records in parts.items():
            path = os.path.join(directory, f"qa_{hop}hop_{name}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(format_qa_line(rec, kg) + "\n")
            paths[f"{hop}hop_{name}"] = path
    return paths
