"""Question parsing and the question encoder.

The encoder maps a token list to a vector in the relation space of a
pre-trained :class:`~kgpathqa.kge.EmbeddingModel`::

    x = mean(token_table[tokens])
    q = W2 tanh(W1 x + b1) + b2

For complex spaces the ``2k`` outputs are read as ``k`` interleaved
(real, imaginary) pairs; for rotation models each pair is scaled to unit
modulus because ``q`` takes the relation role.
"""
import re
import string
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation, FormatError, ParseError, TrainingDiverged
from .kge import KgeFamily

TOPIC_TOKEN = "<topic>"
UNK_TOKEN = "<unk>"
ENCODER_MAGIC = b"KGPQENCD"
ENCODER_FORMAT_VERSION = 1

_PUNCT = str.maketrans("", "", string.punctuation)
_TOPIC_SPAN = re.compile(r"\[([^\[\]]+)\]")


def tokenize(text):
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


def question_tokens(text):
    """Tokens with the single bracketed topic mention replaced by a placeholder.

    Returns
    -------
    tokens : list of str
    mention : str
    """
    spans = list(_TOPIC_SPAN.finditer(text))
    if len(spans) != 1:
        raise ContractViolation(
            f"question must contain exactly one [topic] mention, found {len(spans)}")
    m = spans[0]
    tokens = tokenize(text[:m.start()]) + [TOPIC_TOKEN] + tokenize(text[m.end():])
    return tokens, m.group(1).strip()


@dataclass(frozen=True)
class QuestionRecord:
    raw: str
    tokens: tuple
    topic: int
    answers: frozenset

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "answers", frozenset(int(a) for a in self.answers))
        if not self.answers:
            raise ContractViolation("question needs at least one answer")
        if self.tokens.count(TOPIC_TOKEN) != 1:
            raise ContractViolation("tokens must contain exactly one topic placeholder")


def parse_qa_line(line, kg, lineno=None):
    if "\t" not in line:
        raise ParseError("missing tab between question and answers", lineno)
    text, answer_field = line.split("\t", 1)
    try:
        tokens, mention = question_tokens(text)
    except ContractViolation as exc:
        raise ParseError(str(exc), lineno) from None
    if mention not in kg.entity_index:
        raise ParseError(f"unknown topic entity {mention!r}", lineno)
    answers = []
    for name in answer_field.split("|"):
        name = name.strip()
        if not name:
            continue
        if name not in kg.entity_index:
            raise ParseError(f"unknown answer entity {name!r}", lineno)
        answers.append(kg.entity_index[name])
    if not answers:
        raise ParseError("no answers", lineno)
    return QuestionRecord(text, tokens, kg.entity_index[mention], answers)


def parse_qa_file(source, kg, skip_unresolvable=False, log=None):
    """Parse ``question with [topic]<TAB>ans1|ans2`` lines.

    Parameters
    ----------
    source : str, path-like or iterable of lines
    kg : KnowledgeGraph
        Entities are resolved against its vocabulary by exact string.
    skip_unresolvable : bool
        Skip lines with unknown entities instead of raising. Skipped lines
        are reported through ``log`` (a logger) when given.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            return parse_qa_file(fh, kg, skip_unresolvable, log)
    records = []
    for lineno, line in enumerate(source, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        try:
            records.append(parse_qa_line(line, kg, lineno))
        except ParseError as exc:
            if skip_unresolvable and "unknown" in str(exc):
                if log is not None:
                    log.warning("skipping %s", exc)
                continue
            raise
    return records


def format_qa_line(record, kg):
    answers = "|".join(kg.entities[a] for a in sorted(record.answers))
    return f"{record.raw}\t{answers}"


@dataclass(frozen=True)
class QaTrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.0005
    label_smoothing: float = 0.05
    embedding_dim: int = 256
    hidden_dim: int = 256
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolation("epochs must be >= 0")
        for name in ("batch_size", "learning_rate", "embedding_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ContractViolation("label_smoothing must lie in [0, 1)")


@dataclass(frozen=True)
class EncoderParams:
    """Token vocabulary, token table and the two-layer projection."""

    vocab: tuple
    token_table: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    complex_output: bool = False
    unit_modulus: bool = False
    token_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        object.__setattr__(self, "token_index", {t: i for i, t in enumerate(self.vocab)})
        for name in ("token_table", "w1", "b1", "w2", "b2"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"encoder {name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.token_table.shape != (len(self.vocab), self.w1.shape[1]):
            raise ContractViolation("token table does not match vocabulary / w1")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ContractViolation("w2 does not match hidden width")
        if (self.complex_output or self.unit_modulus) and self.w2.shape[0] % 2:
            raise ContractViolation("complex output needs an even width")

    @property
    def output_width(self):
        return self.w2.shape[0]

    def arrays(self):
        return {n: getattr(self, n) for n in ("token_table", "w1", "b1", "w2", "b2")}

    def replace_arrays(self, **arrays):
        kw = self.arrays()
        kw.update(arrays)
        return EncoderParams(self.vocab, complex_output=self.complex_output,
                             unit_modulus=self.unit_modulus, **kw)

    def token_ids(self, tokens):
        unk = self.token_index[UNK_TOKEN]
        return [self.token_index.get(t, unk) for t in tokens]


def build_vocab(records):
    """Deterministic vocabulary: reserved tokens, then first-appearance order."""
    vocab = {UNK_TOKEN: 0, TOPIC_TOKEN: 1}
    for rec in records:
        for tok in rec.tokens:
            vocab.setdefault(tok, len(vocab))
    return tuple(vocab)


def init_encoder(vocab, model, config, rng=None):
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    d_w, hid, out = config.embedding_dim, config.hidden_dim, model.space.real_width

    def glorot(n_out, n_in):
        bound = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-bound, bound, size=(n_out, n_in))

    token_table = rng.normal(0.0, 1.0, size=(len(vocab), d_w))
    return EncoderParams(
        vocab, token_table, glorot(hid, d_w), np.zeros(hid), glorot(out, hid),
        np.zeros(out), complex_output=model.space.is_complex,
        unit_modulus=model.family is KgeFamily.ROTATION)


def _pool_matrix(params, token_lists):
    pool = np.zeros((len(token_lists), len(params.vocab)))
    for i, toks in enumerate(token_lists):
        if len(toks) == 0:
            raise ContractViolation("empty token list")
        for j in params.token_ids(toks):
            pool[i, j] += 1.0 / len(toks)
    return pool


def _forward(params, token_lists):
    pool = _pool_matrix(params, token_lists)
    x = pool @ params.token_table
    a1 = np.tanh(x @ params.w1.T + params.b1)
    o = a1 @ params.w2.T + params.b2
    rho = None
    if params.unit_modulus:
        pairs = o.reshape(len(o), -1, 2)
        rho = np.linalg.norm(pairs, axis=2, keepdims=True)
        o = (pairs / rho).reshape(len(o), -1)
    return pool, x, a1, o, rho


def _as_relation_vectors(params, flat):
    if params.complex_output:
        return np.ascontiguousarray(flat).view(np.complex128)
    return flat


def encode_batch(params, token_lists):
    """Encode several token lists; rows are relation-space vectors."""
    return _as_relation_vectors(params, _forward(params, token_lists)[3])


def encode_question(params, tokens):
    """Encode one token list into a relation-space vector ``q``."""
    return encode_batch(params, [list(tokens)])[0]


def smoothed_targets(answer_sets, n_entities, smoothing):
    y = np.zeros((len(answer_sets), n_entities))
    for i, ans in enumerate(answer_sets):
        y[i, list(ans)] = 1.0
    return (1.0 - smoothing) * y + smoothing / n_entities


def _scores_and_grad(model, topics, q, weights=None):
    """Scores of every entity for each (topic, q) row, and optionally the
    packed gradient of ``sum(weights * scores)`` w.r.t. ``q``."""
    E = model.entity_table
    H = E[topics]
    fam = model.family
    if fam is KgeFamily.MULTIPLICATIVE:
        scores = np.real((H * q) @ np.conj(E).T)
        grad = None if weights is None else np.conj(H) * (weights @ E)
        return scores, grad
    scores = np.empty((len(topics), model.n_entities))
    grad = None if weights is None else np.empty_like(q)
    for i in range(len(topics)):
        u = H[i] + q[i] if fam is KgeFamily.ADDITIVE else H[i] * q[i]
        diff = u - E
        dist = np.linalg.norm(diff, axis=1)
        scores[i] = -dist
        if weights is not None:
            coef = np.divide(weights[i], dist, out=np.zeros_like(dist), where=dist > 0)
            gu = -(coef @ diff)
            grad[i] = gu if fam is KgeFamily.ADDITIVE else np.conj(H[i]) * gu
    return scores, grad


def qa_loss_and_grad(params, model, token_lists, topics, answer_sets, smoothing=0.05,
                     with_grad=True):
    """Sigmoid cross-entropy of all-entity scores against smoothed answers.

    The loss is summed over entities and averaged over questions. Returns
    ``(loss, grads)`` where ``grads`` maps array names of ``params`` to
    gradients of matching shape (``None`` when ``with_grad`` is false).
    """
    pool, x, a1, o, rho = _forward(params, token_lists)
    q = _as_relation_vectors(params, o)
    y = smoothed_targets(answer_sets, model.n_entities, smoothing)
    scores, _ = _scores_and_grad(model, np.asarray(topics), q)
    n = len(token_lists)
    loss = float(np.sum(np.logaddexp(0.0, scores) - y * scores) / n)
    if not with_grad:
        return loss, None
    w = (0.5 * (1.0 + np.tanh(0.5 * scores)) - y) / n
    _, gq = _scores_and_grad(model, np.asarray(topics), q, w)
    g_o = np.ascontiguousarray(gq).view(np.float64) if params.complex_output else gq
    if params.unit_modulus:
        g = g_o.reshape(n, -1, 2)
        qp = o.reshape(n, -1, 2)
        g_o = ((g - np.sum(g * qp, axis=2, keepdims=True) * qp) / rho).reshape(n, -1)
    g_a1 = g_o @ params.w2
    g_z1 = g_a1 * (1.0 - a1 ** 2)
    grads = {
        "b2": g_o.sum(axis=0),
        "w2": g_o.T @ a1,
        "b1": g_z1.sum(axis=0),
        "w1": g_z1.T @ x,
        "token_table": pool.T @ (g_z1 @ params.w1),
    }
    return loss, grads


def predict_no_path(params, model, token_lists, topics):
    """Top-1 entity per question by triple score alone (lowest id on ties)."""
    q = encode_batch(params, token_lists)
    scores, _ = _scores_and_grad(model, np.asarray(topics), q)
    return np.argmax(scores, axis=1)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _hits(params, model, records):
    if not records:
        return 0.0
    pred = predict_no_path(params, model, [r.tokens for r in records],
                           [r.topic for r in records])
    return float(np.mean([p in r.answers for p, r in zip(pred.tolist(), records)]))


def train_qa(kg, model, train, valid=(), config=None, callback=None):
    """Fit the encoder with the embedding tables frozen.

    Parameters
    ----------
    kg : KnowledgeGraph
        Only used for consistency checks on entity counts.
    model : EmbeddingModel
        Pre-trained; never modified.
    train, valid : sequence of QuestionRecord
    config : QaTrainConfig, optional
    callback : callable, optional
        Called as ``callback(epoch, mean_loss, valid_hits)``.

    Returns
    -------
    EncoderParams
        The parameters with the best validation Hits@1 (no-path scoring),
        or the final ones when ``valid`` is empty.
    """
    config = config or QaTrainConfig()
    if kg.n_entities != model.n_entities:
        raise ContractViolation("model and graph disagree on entity count")
    rng = np.random.default_rng(config.seed)
    params = init_encoder(build_vocab(train), model, config, rng)
    if config.epochs == 0 or not train:
        return params
    arrays = {k: np.array(v) for k, v in params.arrays().items()}
    opt = _Adam(arrays, config.learning_rate)
    best, best_hits = params, -1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(len(train))
            total = 0.0
            for b, start in enumerate(range(0, len(train), config.batch_size)):
                batch = [train[i] for i in order[start:start + config.batch_size]]
                current = params.replace_arrays(**arrays)
                loss, grads = qa_loss_and_grad(
                    current, model, [r.tokens for r in batch], [r.topic for r in batch],
                    [r.answers for r in batch], config.label_smoothing)
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch, b, loss)
                total += loss * len(batch)
                opt.step(arrays, grads)
            current = params.replace_arrays(**arrays)
            hits = _hits(current, model, valid) if valid else None
            if callback is not None:
                callback(epoch, total / len(train), hits)
            if not valid:
                best = current
            elif hits > best_hits:
                best, best_hits = current, hits
    return best


# ---------------------------------------------------------------------------
# checkpoints

_ENC_HEADER = struct.Struct("<BBBIIII")


def save_encoder(params, path):
    vocab = "\n".join(params.vocab).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ENCODER_MAGIC)
        fh.write(_ENC_HEADER.pack(ENCODER_FORMAT_VERSION, int(params.complex_output),
                                  int(params.unit_modulus), len(vocab),
                                  params.token_table.shape[1], params.w1.shape[0],
                                  params.output_width))
        fh.write(vocab)
        for arr in params.arrays().values():
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_encoder(path):
    with open(path, "rb") as fh:
        if fh.read(len(ENCODER_MAGIC)) != ENCODER_MAGIC:
            raise FormatError(f"{path}: not an encoder checkpoint")
        version, cplx, unit, vlen, d_w, hid, out = _ENC_HEADER.unpack(fh.read(_ENC_HEADER.size))
        if version != ENCODER_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported encoder version {version}")
        vocab = fh.read(vlen).decode("utf-8").split("\n")
        shapes = {"token_table": (len(vocab), d_w), "w1": (hid, d_w), "b1": (hid,),
                  "w2": (out, hid), "b2": (out,)}
        arrays = {}
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            arrays[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
    return EncoderParams(vocab, complex_output=bool(cplx), unit_modulus=bool(unit), **arrays)
