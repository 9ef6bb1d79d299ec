"""Candidate scoring: triple score plus a bounded path/question correlation.

``total = triple_score(h, q, a) + alpha * tanh(cos(q, p))`` where ``p`` is
the composed embedding of a shortest relation path from the topic to the
candidate. The path term lies in ``[-tanh(1), tanh(1)]``, which lets
:func:`rank_candidates` skip path search for candidates that cannot reach
the top spot.
"""
import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .encoder import encode_question
from .kge import score_all_tails, triple_score
from .paths import PathIndex, path_embedding
from .validation import as_real_view, check_positive

TANH_ONE = math.tanh(1.0)


class PathMode(str, enum.Enum):
    FULL = "full"
    NO_PATH = "no-path"
    SIGMOID_PATH = "sigmoid-path"


class PathPolicy(str, enum.Enum):
    LEXICOGRAPHIC_FIRST = "lexicographic"
    MAX_CORRELATION = "max-correlation"


@dataclass(frozen=True)
class AnswerConfig:
    alpha: float = 0.1
    max_hops: int = 3
    path_cap: int = 16
    path_policy: PathPolicy = PathPolicy.LEXICOGRAPHIC_FIRST
    mode: PathMode = PathMode.FULL

    def __post_init__(self):
        object.__setattr__(self, "path_policy", PathPolicy(self.path_policy))
        object.__setattr__(self, "mode", PathMode(self.mode))
        check_positive(self.alpha, "alpha", allow_zero=True)
        check_positive(self.max_hops, "max_hops")
        check_positive(self.path_cap, "path_cap")

    @property
    def path_bound(self):
        """Largest magnitude the unweighted path term can take."""
        return 1.0 if self.mode is PathMode.SIGMOID_PATH else TANH_ONE


@dataclass(frozen=True)
class ScoredCandidate:
    entity: int
    triple_score: float
    path_term: float
    total: float
    explanation: object = None


def cosine(q, p):
    q, p = as_real_view(q), as_real_view(p)
    if q.shape != p.shape:
        raise ContractViolation(f"width mismatch {q.shape} vs {p.shape}")
    nq, np_ = np.linalg.norm(q), np.linalg.norm(p)
    if nq == 0 or np_ == 0:
        raise ContractViolation("cosine of a zero-norm vector")
    return float(np.clip(np.dot(q, p) / (nq * np_), -1.0, 1.0))


def ambipolar_term(q, p, mode=PathMode.FULL):
    """``tanh(cos(q, p))``, or ``sigmoid(cos(q, p))`` in sigmoid-path mode.

    Complex vectors are compared as their interleaved real views.
    """
    mode = PathMode(mode)
    c = cosine(q, p)
    if mode is PathMode.SIGMOID_PATH:
        return 1.0 / (1.0 + math.exp(-c))
    if mode is PathMode.NO_PATH:
        return 0.0
    return math.tanh(c)


def select_path(model, q, paths, config):
    """Pick the scoring path per policy; returns ``(path, term)``."""
    if not paths or config.mode is PathMode.NO_PATH:
        return None, 0.0
    if config.path_policy is PathPolicy.LEXICOGRAPHIC_FIRST:
        path = paths[0]
        return path, ambipolar_term(q, path_embedding(model, path), config.mode)
    best, best_term = None, -math.inf
    for path in paths:
        term = ambipolar_term(q, path_embedding(model, path), config.mode)
        if term > best_term:
            best, best_term = path, term
    return best, best_term


def combined_score(model, h, q, a, paths, config=None, triple=None):
    """Score one candidate ``a`` for topic ``h`` and question vector ``q``.

    ``triple`` may carry a precomputed triple score.
    """
    config = config or AnswerConfig()
    if triple is None:
        triple = triple_score(model, h, q, a)
    path, term = select_path(model, q, paths, config)
    return ScoredCandidate(int(a), float(triple), float(term),
                           float(triple) + config.alpha * term, path)


def _sort_key(c):
    return (-c.total, c.entity)


def rank_candidates(kg, model, topic, q, config=None, prune=True):
    """Rank every entity as an answer to ``(topic, q)``.

    Path terms are computed only for candidates whose triple score is within
    ``2 * alpha * bound`` of the best one; everything else keeps a zero path
    term, which cannot change the argmax. Set ``prune=False`` to compute the
    path term for all candidates.
    """
    config = config or AnswerConfig()
    q = model.relation_vector(q)
    triples = score_all_tails(model, topic, q)
    use_paths = config.mode is not PathMode.NO_PATH
    if use_paths and prune:
        threshold = triples.max() - 2.0 * config.alpha * config.path_bound
        pool = np.flatnonzero(triples >= threshold)
    elif use_paths:
        pool = np.arange(kg.n_entities)
    else:
        pool = np.empty(0, dtype=np.int64)
    index = PathIndex(kg, topic, config.max_hops) if len(pool) else None

    out = []
    in_pool = np.zeros(kg.n_entities, dtype=bool)
    in_pool[pool] = True
    for a in range(kg.n_entities):
        if in_pool[a]:
            paths = index.paths_to(a, config.path_cap)
            out.append(combined_score(model, topic, q, a, paths, config, triples[a]))
        else:
            out.append(ScoredCandidate(a, float(triples[a]), 0.0, float(triples[a])))
    out.sort(key=_sort_key)
    return out


def answer_question(kg, model, encoder, question, config=None, prune=True):
    """Rank all entities for a :class:`QuestionRecord`.

    The first element is the prediction; candidates that went through path
    search carry their explaining path.
    """
    q = encode_question(encoder, question.tokens)
    return rank_candidates(kg, model, question.topic, q, config, prune)
