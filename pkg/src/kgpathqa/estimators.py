"""scikit-learn style wrappers around the functional pipeline.

Each stage is an estimator with constructor hyperparameters, ``fit`` and
fitted attributes ending in ``_``, so ``get_params``/``set_params``/``clone``
behave as usual. :class:`KGQAPipeline` nests the three stages; ablations
are ``set_params(ranker__mode="no-path")`` with no refit.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .encoder import QaTrainConfig, QuestionRecord, encode_batch, train_qa
from .evaluation import hits_at_1
from .exceptions import ContractViolation
from .graph import KnowledgeGraph, subsample_half
from .kge import (EmbeddingModel, KgeTrainConfig, link_prediction_eval, score_triples,
                  train_kge)
from .scoring import AnswerConfig, answer_question


def _check_kg(kg):
    if not isinstance(kg, KnowledgeGraph):
        raise ContractViolation(f"expected a KnowledgeGraph, got {type(kg).__name__}")
    return kg


def _check_records(X):
    X = list(X)
    for rec in X:
        if not isinstance(rec, QuestionRecord):
            raise ContractViolation(f"expected QuestionRecord items, got {type(rec).__name__}")
    return X


def _embedding_model(embedding):
    if isinstance(embedding, KGEmbedding):
        check_is_fitted(embedding, "model_")
        return embedding.model_
    if isinstance(embedding, EmbeddingModel):
        return embedding
    raise ContractViolation("embedding must be a fitted KGEmbedding or an EmbeddingModel")


class KGEmbedding(BaseEstimator):
    """Pre-trained entity/relation embeddings for one operator family.

    Parameters
    ----------
    family : {"additive", "multiplicative", "rotation"}
    space : {"real", "complex"} or None
        Only meaningful for the multiplicative family (default complex).
    dim : int
        Components per vector; complex components count once.
    epochs, batch_size, learning_rate, negatives_per_positive, margin
        SGD and negative-sampling settings.
    random_state : int

    Attributes
    ----------
    model_ : EmbeddingModel
    """

    def __init__(self, family="multiplicative", space=None, dim=200, epochs=100,
                 batch_size=128, learning_rate=0.0005, negatives_per_positive=10,
                 margin=6.0, random_state=42):
        self.family = family
        self.space = space
        self.dim = dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.negatives_per_positive = negatives_per_positive
        self.margin = margin
        self.random_state = random_state

    def train_config(self):
        return KgeTrainConfig(dim=self.dim, epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate,
                              negatives_per_positive=self.negatives_per_positive,
                              margin=self.margin, space=self.space, seed=self.random_state)

    def fit(self, X, y=None):
        """Train on the inverse-augmented triples of graph ``X``."""
        kg = _check_kg(X)
        self.model_ = train_kge(kg, self.family, self.train_config())
        self.n_entities_ = kg.n_entities
        self.n_relations_ = kg.n_relations
        return self

    def score_samples(self, X):
        """Triple scores for an ``(n, 3)`` id array."""
        check_is_fitted(self, "model_")
        return score_triples(self.model_, X)

    def link_prediction(self, test_triples, all_triples):
        check_is_fitted(self, "model_")
        return link_prediction_eval(self.model_, test_triples, all_triples)


class QuestionEncoder(TransformerMixin, BaseEstimator):
    """Maps question records to relation-space vectors.

    ``fit`` needs the graph and a pre-trained embedding (kept frozen),
    passed as keyword fit parameters.

    Attributes
    ----------
    params_ : EncoderParams
    """

    def __init__(self, embedding_dim=256, hidden_dim=256, epochs=20, batch_size=128,
                 learning_rate=0.0005, label_smoothing=0.05, random_state=42):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.label_smoothing = label_smoothing
        self.random_state = random_state

    def train_config(self):
        return QaTrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate,
                             label_smoothing=self.label_smoothing,
                             embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
                             seed=self.random_state)

    def fit(self, X, y=None, *, kg, embedding, valid=()):
        X = _check_records(X)
        self.params_ = train_qa(_check_kg(kg), _embedding_model(embedding), X,
                                _check_records(valid), self.train_config())
        return self

    def transform(self, X):
        """Stack question vectors; accepts records or raw token lists."""
        check_is_fitted(self, "params_")
        tokens = [x.tokens if isinstance(x, QuestionRecord) else list(x) for x in X]
        return encode_batch(self.params_, tokens)


class PathQARanker(BaseEstimator):
    """Inference-time ranking with the bounded path correlation term.

    Nothing is learned; ``fit`` only binds the graph, embedding and encoder.
    """

    def __init__(self, alpha=0.1, max_hops=3, path_cap=16, path_policy="lexicographic",
                 mode="full"):
        self.alpha = alpha
        self.max_hops = max_hops
        self.path_cap = path_cap
        self.path_policy = path_policy
        self.mode = mode

    def answer_config(self):
        return AnswerConfig(alpha=self.alpha, max_hops=self.max_hops, path_cap=self.path_cap,
                            path_policy=self.path_policy, mode=self.mode)

    def fit(self, X=None, y=None, *, kg, embedding, encoder):
        self.kg_ = _check_kg(kg)
        self.model_ = _embedding_model(embedding)
        if isinstance(encoder, QuestionEncoder):
            check_is_fitted(encoder, "params_")
            encoder = encoder.params_
        self.encoder_ = encoder
        return self

    def rank(self, record):
        check_is_fitted(self, "encoder_")
        return answer_question(self.kg_, self.model_, self.encoder_, record,
                               self.answer_config())

    def predict(self, X):
        return np.array([self.rank(rec)[0].entity for rec in _check_records(X)],
                        dtype=np.int64)

    def score(self, X, y=None):
        """Hits@1 as a fraction in [0, 1]."""
        X = _check_records(X)
        return hits_at_1(self.predict(X).tolist(), [r.answers for r in X]) / 100.0


class KGQAPipeline(BaseEstimator):
    """Embedding pre-training, encoder training and path-aware ranking.

    Parameters
    ----------
    embedding : KGEmbedding
    encoder : QuestionEncoder
    ranker : PathQARanker
    kg_half : bool
        Train and search paths on a seeded half of the graph's triples.
    half_seed : int
    """

    def __init__(self, embedding=None, encoder=None, ranker=None, kg_half=False, half_seed=42):
        self.embedding = embedding
        self.encoder = encoder
        self.ranker = ranker
        self.kg_half = kg_half
        self.half_seed = half_seed

    def fit(self, X, y=None, *, kg, valid=()):
        kg = _check_kg(kg)
        if self.kg_half:
            kg = subsample_half(kg, self.half_seed)
        self.kg_ = kg
        embedding = KGEmbedding() if self.embedding is None else clone(self.embedding)
        encoder = QuestionEncoder() if self.encoder is None else clone(self.encoder)
        self.embedding_ = embedding.fit(kg)
        self.encoder_ = encoder.fit(X, kg=kg, embedding=self.embedding_, valid=valid)
        self._bind_ranker()
        return self

    def _bind_ranker(self):
        ranker = PathQARanker() if self.ranker is None else clone(self.ranker)
        self.ranker_ = ranker.fit(kg=self.kg_, embedding=self.embedding_, encoder=self.encoder_)

    def set_params(self, **params):
        super().set_params(**params)
        # ranker settings apply immediately; nothing upstream needs refitting
        if hasattr(self, "ranker_"):
            self._bind_ranker()
        return self

    def predict(self, X):
        check_is_fitted(self, "ranker_")
        return self.ranker_.predict(X)

    def score(self, X, y=None):
        check_is_fitted(self, "ranker_")
        return self.ranker_.score(X)
