"""Knowledge graph embeddings for three operator families.

Scores (higher means more plausible)::

    additive        -||h + r - t||_2                       (real space)
    multiplicative  Re(sum_d h_d r_d conj(t_d))             (real or complex)
    rotation        -||h o r - t||_2, |r_d| = 1             (complex space)

Complex tables are stored as ``complex128`` arrays of shape ``(n, dim)``.
Gradients of real losses w.r.t. complex parameters are returned in the
packed form ``dL/dRe + 1j * dL/dIm`` so that a plain SGD step is
``z -= lr * g`` for both real and complex tables.
"""
import enum
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ContractViolation, FormatError, TrainingDiverged
from .validation import check_triples

MODEL_MAGIC = b"KGPQKGEM"
MODEL_FORMAT_VERSION = 1


class KgeFamily(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"
    ROTATION = "rotation"


class SpaceKind(str, enum.Enum):
    REAL = "real"
    COMPLEX = "complex"


@dataclass(frozen=True)
class EmbeddingSpace:
    kind: SpaceKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.dim < 1:
            raise ContractViolation(f"embedding dim must be >= 1, got {self.dim}")

    @property
    def is_complex(self):
        return self.kind is SpaceKind.COMPLEX

    @property
    def dtype(self):
        return np.complex128 if self.is_complex else np.float64

    @property
    def real_width(self):
        """Number of stored reals per vector."""
        return 2 * self.dim if self.is_complex else self.dim


def default_space(family, dim, space=None):
    family = KgeFamily(family)
    if family is KgeFamily.ADDITIVE:
        kind = SpaceKind.REAL
    elif family is KgeFamily.ROTATION:
        kind = SpaceKind.COMPLEX
    else:
        kind = SpaceKind(space or SpaceKind.COMPLEX)
    if space is not None and SpaceKind(space) is not kind:
        raise ContractViolation(f"{family.value} family requires {kind.value} space")
    return EmbeddingSpace(kind, dim)


@dataclass(frozen=True)
class EmbeddingModel:
    """Entity and relation tables for one family.

    Tables are made read-only on construction; training works on copies.
    """

    family: KgeFamily
    space: EmbeddingSpace
    entity_table: np.ndarray
    relation_table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", KgeFamily(self.family))
        fam, sp = self.family, self.space
        if fam is KgeFamily.ADDITIVE and sp.is_complex:
            raise ContractViolation("additive family uses real space")
        if fam is KgeFamily.ROTATION and not sp.is_complex:
            raise ContractViolation("rotation family uses complex space")
        for name in ("entity_table", "relation_table"):
            tab = np.array(getattr(self, name), dtype=sp.dtype, copy=True)
            if tab.ndim != 2 or tab.shape[1] != sp.dim:
                raise ContractViolation(f"{name} must have shape (n, {sp.dim})")
            if not np.all(np.isfinite(tab)):
                raise ContractViolation(f"{name} contains non-finite values")
            tab.setflags(write=False)
            object.__setattr__(self, name, tab)
        if fam is KgeFamily.ROTATION:
            mod = np.abs(self.relation_table)
            if mod.size and np.max(np.abs(mod - 1.0)) > 1e-6:
                raise ContractViolation("rotation relations must have unit modulus")

    @property
    def n_entities(self):
        return self.entity_table.shape[0]

    @property
    def n_relations(self):
        return self.relation_table.shape[0]

    def relation_vector(self, r):
        """Resolve a relation id, or validate a raw relation-space vector."""
        if np.ndim(r) == 0:
            r = int(r)
            if not 0 <= r < self.n_relations:
                raise ContractViolation(f"relation id {r} out of range")
            return self.relation_table[r]
        vec = np.asarray(r)
        if vec.shape != (self.space.dim,):
            raise ContractViolation(
                f"relation vector has shape {vec.shape}, expected ({self.space.dim},)")
        if not self.space.is_complex and np.iscomplexobj(vec):
            raise ContractViolation("complex vector given for a real-space model")
        return vec.astype(self.space.dtype, copy=False)


@dataclass(frozen=True)
class KgeTrainConfig:
    dim: int = 200
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.0005
    negatives_per_positive: int = 10
    margin: float = 6.0
    space: str | None = None
    seed: int = 42

    def __post_init__(self):
        for name in ("dim", "batch_size", "negatives_per_positive"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.epochs < 0:
            raise ContractViolation("epochs must be >= 0")
        if self.learning_rate <= 0 or self.margin <= 0:
            raise ContractViolation("learning_rate and margin must be positive")


# ---------------------------------------------------------------------------
# scores


def _batch_scores(family, h, r, t):
    """Row-wise scores for stacked ``(n, dim)`` head/relation/tail arrays."""
    if family is KgeFamily.ADDITIVE:
        return -np.linalg.norm(h + r - t, axis=-1)
    if family is KgeFamily.ROTATION:
        return -np.linalg.norm(h * r - t, axis=-1)
    return np.real(np.sum(h * r * np.conj(t), axis=-1))


def triple_score(model, h, r, t):
    """Score one triple; ``r`` may be a relation id or a relation-space vector.

    The vector form is how a question embedding takes the relation slot.
    """
    hv = model.entity_table[int(h)]
    tv = model.entity_table[int(t)]
    rv = model.relation_vector(r)
    return float(_batch_scores(model.family, hv, rv, tv))


def score_triples(model, triples):
    tr = check_triples(triples, model.n_entities, model.n_relations)
    E, R = model.entity_table, model.relation_table
    return _batch_scores(model.family, E[tr[:, 0]], R[tr[:, 1]], E[tr[:, 2]])


def score_all_tails(model, h, r):
    """Scores of ``(h, r, a)`` for every entity ``a``."""
    hv = model.entity_table[int(h)]
    rv = model.relation_vector(r)
    E = model.entity_table
    if model.family is KgeFamily.ADDITIVE:
        return -np.linalg.norm(hv + rv - E, axis=1)
    if model.family is KgeFamily.ROTATION:
        return -np.linalg.norm(hv * rv - E, axis=1)
    return np.real(np.conj(E) @ (hv * rv))


def score_gradients(family, h, r, t):
    """Packed gradients of the score w.r.t. ``h``, ``r``, ``t`` (row-wise)."""
    if family is KgeFamily.MULTIPLICATIVE:
        return np.conj(r) * t, np.conj(h) * t, h * r
    if family is KgeFamily.ADDITIVE:
        e = h + r - t
    else:
        e = h * r - t
    norm = np.linalg.norm(e, axis=-1, keepdims=True)
    ge = -np.divide(e, norm, out=np.zeros_like(e), where=norm > 0)
    if family is KgeFamily.ADDITIVE:
        return ge, ge, -ge
    return np.conj(r) * ge, np.conj(h) * ge, -ge


# ---------------------------------------------------------------------------
# losses


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pair_loss(family, s_pos, s_neg, margin=6.0):
    """Training loss of a (positive, negative) score pair.

    Margin ranking for additive/rotation, logistic for multiplicative.
    Returns ``(loss, dloss/ds_pos, dloss/ds_neg)``.
    """
    family = KgeFamily(family)
    s_pos, s_neg = np.asarray(s_pos, float), np.asarray(s_neg, float)
    if family is KgeFamily.MULTIPLICATIVE:
        loss = _softplus(-s_pos) + _softplus(s_neg)
        return loss, -_sigmoid(-s_pos), _sigmoid(s_neg)
    z = margin - s_pos + s_neg
    active = (z > 0).astype(float)
    return np.maximum(z, 0.0), -active, active


@dataclass
class KgeGradient:
    """Sparse gradient: row id -> packed gradient vector."""

    entity: dict = field(default_factory=dict)
    relation: dict = field(default_factory=dict)

    def add(self, table, row, grad):
        store = self.entity if table == "entity" else self.relation
        row = int(row)
        store[row] = store[row] + grad if row in store else np.array(grad, copy=True)


def pair_loss_value(model, positive, negative, margin=6.0):
    s = score_triples(model, [positive, negative])
    return float(pair_loss(model.family, s[0], s[1], margin)[0])


def kge_gradient(model, family, positive, negative, margin=6.0):
    """Closed-form gradient of the pair loss, touching only involved rows."""
    family = KgeFamily(family)
    if family is not model.family:
        raise ContractViolation("family does not match the model")
    pos = check_triples([positive], model.n_entities, model.n_relations)[0]
    neg = check_triples([negative], model.n_entities, model.n_relations)[0]
    E, R = model.entity_table, model.relation_table
    grad = KgeGradient()
    s_pos = _batch_scores(family, E[pos[0]], R[pos[1]], E[pos[2]])
    s_neg = _batch_scores(family, E[neg[0]], R[neg[1]], E[neg[2]])
    _, c_pos, c_neg = pair_loss(family, s_pos, s_neg, margin)
    for coef, (h, r, t) in ((float(c_pos), pos), (float(c_neg), neg)):
        gh, gr, gt = score_gradients(family, E[h], R[r], E[t])
        grad.add("entity", h, coef * gh)
        grad.add("relation", r, coef * gr)
        grad.add("entity", t, coef * gt)
    return grad


# ---------------------------------------------------------------------------
# training


def _scatter_rows(rows, values, n_rows):
    """Sum ``values`` into ``n_rows`` buckets by row id, in a fixed order."""
    order = np.argsort(rows, kind="stable")
    rows, values = rows[order], values[order]
    uniq, starts = np.unique(rows, return_index=True)
    out = np.zeros((n_rows,) + values.shape[1:], dtype=values.dtype)
    out[uniq] = np.add.reduceat(values, starts, axis=0)
    return out


def init_model(n_entities, n_relations, family, config):
    """Seeded initialisation shared by training and ``epochs=0``."""
    family = KgeFamily(family)
    space = default_space(family, config.dim, config.space)
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / np.sqrt(config.dim)

    def uniform(n):
        if space.is_complex:
            x = rng.uniform(-bound, bound, size=(n, config.dim, 2))
            return x[..., 0] + 1j * x[..., 1]
        return rng.uniform(-bound, bound, size=(n, config.dim))

    ent = uniform(n_entities)
    if family is KgeFamily.ROTATION:
        rel = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(n_relations, config.dim)))
    else:
        rel = uniform(n_relations)
    return EmbeddingModel(family, space, ent, rel), rng


def corrupt(triples, n_entities, k, rng):
    """``k`` negatives per positive by replacing head or tail (coin flip)."""
    rep = np.repeat(triples, k, axis=0)
    replace_head = rng.random(len(rep)) < 0.5
    ents = rng.integers(0, n_entities, size=len(rep))
    neg = rep.copy()
    neg[replace_head, 0] = ents[replace_head]
    neg[~replace_head, 2] = ents[~replace_head]
    return rep, neg


def train_kge(kg, family, config=None, triples=None, callback=None):
    """Pre-train embeddings with negative sampling and plain SGD.

    Parameters
    ----------
    kg : KnowledgeGraph
    family : KgeFamily or str
    config : KgeTrainConfig, optional
    triples : array-like, optional
        Training triples; defaults to the inverse-augmented triples of ``kg``.
    callback : callable, optional
        Called as ``callback(epoch, mean_loss)`` after each epoch.

    Returns
    -------
    EmbeddingModel
    """
    config = config or KgeTrainConfig()
    family = KgeFamily(family)
    if kg.n_triples == 0:
        raise ContractViolation("cannot train on an empty knowledge graph")
    model, rng = init_model(kg.n_entities, kg.n_relations, family, config)
    if config.epochs == 0:
        return model
    data = kg.augmented_triples() if triples is None else check_triples(
        triples, kg.n_entities, kg.n_relations)
    E = np.array(model.entity_table)
    R = np.array(model.relation_table)
    with np.errstate(over="ignore", invalid="ignore"):
        _sgd_epochs(kg, family, config, data, E, R, rng, callback)
    return EmbeddingModel(family, model.space, E, R)


def _sgd_epochs(kg, family, config, data, E, R, rng, callback):
    """Run all epochs, updating ``E`` and ``R`` in place."""
    k, lr, bs = config.negatives_per_positive, config.learning_rate, config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for b, start in enumerate(range(0, len(data), bs)):
            batch = data[order[start:start + bs]]
            pos, neg = corrupt(batch, kg.n_entities, k, rng)
            hp, rp, tp = E[batch[:, 0]], R[batch[:, 1]], E[batch[:, 2]]
            hn, rn, tn = E[neg[:, 0]], R[neg[:, 1]], E[neg[:, 2]]
            s_pos = np.repeat(_batch_scores(family, hp, rp, tp), k)
            s_neg = _batch_scores(family, hn, rn, tn)
            loss, c_pos, c_neg = pair_loss(family, s_pos, s_neg, config.margin)
            batch_loss = float(np.mean(loss))
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, b, batch_loss)
            total += batch_loss * len(batch)
            # summed (not averaged) over pairs: per-row steps do not shrink with batch size
            cp = c_pos.reshape(-1, k).sum(axis=1)[:, None]
            cn = c_neg[:, None]
            gh_p, gr_p, gt_p = score_gradients(family, hp, rp, tp)
            gh_n, gr_n, gt_n = score_gradients(family, hn, rn, tn)
            rows_e = np.concatenate([batch[:, 0], batch[:, 2], neg[:, 0], neg[:, 2]])
            rows_r = np.concatenate([batch[:, 1], neg[:, 1]])
            gE = _scatter_rows(rows_e, np.concatenate([cp * gh_p, cp * gt_p, cn * gh_n, cn * gt_n]),
                               E.shape[0])
            gR = _scatter_rows(rows_r, np.concatenate([cp * gr_p, cn * gr_n]), R.shape[0])
            E -= lr * gE
            R -= lr * gR
            if family is KgeFamily.ROTATION:
                R /= np.abs(R)
            if not (np.all(np.isfinite(E)) and np.all(np.isfinite(R))):
                raise TrainingDiverged(epoch, b, float("nan"))
        if callback is not None:
            callback(epoch, total / len(data))


def score_gap(model, triples, seed=0):
    """Mean observed score minus mean score of uniformly corrupted copies."""
    tr = check_triples(triples, model.n_entities, model.n_relations)
    rng = np.random.default_rng(seed)
    _, neg = corrupt(tr, model.n_entities, 1, rng)
    return float(np.mean(score_triples(model, tr)) - np.mean(score_triples(model, neg)))


# ---------------------------------------------------------------------------
# link prediction


def link_prediction_eval(model, test_triples, all_triples, ks=(1, 10)):
    """Filtered tail-ranking metrics.

    Other known-true tails of ``(h, r, ?)`` in ``all_triples`` are removed
    before ranking. Ties with the true tail count half (mean of the
    optimistic and pessimistic rank).

    Returns
    -------
    dict
        ``hits@k`` for each ``k`` in ``ks`` and ``mrr``, all in [0, 1].
    """
    test = check_triples(test_triples, model.n_entities, model.n_relations)
    if len(test) == 0:
        raise ContractViolation("empty test set")
    known = {}
    for h, r, t in check_triples(all_triples, model.n_entities, model.n_relations).tolist():
        known.setdefault((h, r), set()).add(t)
    ranks = np.empty(len(test))
    for i, (h, r, t) in enumerate(test.tolist()):
        scores = score_all_tails(model, h, r)
        true = scores[t]
        mask = np.ones(model.n_entities, dtype=bool)
        mask[list(known.get((h, r), ()))] = False
        mask[t] = False
        others = scores[mask]
        ranks[i] = 1 + np.sum(others > true) + 0.5 * np.sum(others == true)
    out = {f"hits@{k}": float(np.mean(ranks <= k)) for k in ks}
    out["mrr"] = float(np.mean(1.0 / ranks))
    return out


# ---------------------------------------------------------------------------
# checkpoints

_FAMILY_CODE = {KgeFamily.ADDITIVE: 0, KgeFamily.MULTIPLICATIVE: 1, KgeFamily.ROTATION: 2}
_SPACE_CODE = {SpaceKind.REAL: 0, SpaceKind.COMPLEX: 1}
_HEADER = struct.Struct("<BBBIII")


def save_model(model, path, entity_names=None, relation_names=None):
    """Write a binary checkpoint plus a ``<path>.vocab`` sidecar."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_HEADER.pack(MODEL_FORMAT_VERSION, _FAMILY_CODE[model.family],
                              _SPACE_CODE[model.space.kind], model.space.dim,
                              model.n_entities, model.n_relations))
        for tab in (model.entity_table, model.relation_table):
            flat = np.ascontiguousarray(tab).view(np.float64) if model.space.is_complex else tab
            fh.write(np.asarray(flat, dtype="<f8").tobytes())
    if entity_names is not None or relation_names is not None:
        with open(f"{path}.vocab", "w", encoding="utf-8") as fh:
            for i, name in enumerate(entity_names or ()):
                fh.write(f"E\t{i}\t{name}\n")
            for i, name in enumerate(relation_names or ()):
                fh.write(f"R\t{i}\t{name}\n")


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise FormatError(f"{path}: not a KGE checkpoint")
        version, fam, sp, dim, n_ent, n_rel = _HEADER.unpack(fh.read(_HEADER.size))
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        family = {v: k for k, v in _FAMILY_CODE.items()}[fam]
        space = EmbeddingSpace({v: k for k, v in _SPACE_CODE.items()}[sp], dim)
        width = space.real_width
        tables = []
        for n in (n_ent, n_rel):
            raw = np.frombuffer(fh.read(8 * n * width), dtype="<f8").reshape(n, width)
            tables.append(raw.astype(np.float64).view(np.complex128) if space.is_complex
                          else raw.astype(np.float64))
    return EmbeddingModel(family, space, tables[0], tables[1])


def load_vocab(path):
    """Read a ``.vocab`` sidecar into ``(entity_names, relation_names)``."""
    ents, rels = {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            kind, idx, name = line.rstrip("\n").split("\t", 2)
            (ents if kind == "E" else rels)[int(idx)] = name
    return [ents[i] for i in range(len(ents))], [rels[i] for i in range(len(rels))]


def with_tables(model, entity_table=None, relation_table=None):
    return replace(model,
                   entity_table=model.entity_table if entity_table is None else entity_table,
                   relation_table=model.relation_table if relation_table is None else relation_table)
