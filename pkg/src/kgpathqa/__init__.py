"""Knowledge-graph question answering with embedding scores and path re-ranking."""
from .encoder import (EncoderParams, QaTrainConfig, QuestionRecord, encode_question,
                      parse_qa_file, train_qa)
from .estimators import KGEmbedding, KGQAPipeline, PathQARanker, QuestionEncoder
from .evaluation import EvalReport, ExperimentConfig, hits_at_1, run_experiment, run_pipeline
from .exceptions import (ContractViolation, FormatError, KGPathQAError, ParseError,
                         TrainingDiverged)
from .graph import KnowledgeGraph, inverse, load_kb, neighbors, subsample_half
from .kge import (EmbeddingModel, EmbeddingSpace, KgeFamily, KgeTrainConfig,
                  link_prediction_eval, train_kge, triple_score)
from .paths import RelationPath, path_embedding, shortest_relation_paths
from .scoring import (AnswerConfig, PathMode, PathPolicy, ambipolar_term, answer_question,
                      combined_score, rank_candidates)
from .synthetic import generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "AnswerConfig", "ContractViolation", "EmbeddingModel", "EmbeddingSpace", "EncoderParams",
    "EvalReport", "ExperimentConfig", "FormatError", "KGEmbedding", "KGPathQAError",
    "KGQAPipeline", "KgeFamily", "KgeTrainConfig", "KnowledgeGraph", "ParseError", "PathMode",
    "PathPolicy", "PathQARanker", "QaTrainConfig", "QuestionEncoder", "QuestionRecord",
    "RelationPath", "TrainingDiverged", "ambipolar_term", "answer_question", "combined_score",
    "encode_question", "generate_synthetic", "hits_at_1", "inverse", "link_prediction_eval",
    "load_kb", "neighbors", "parse_qa_file", "path_embedding", "rank_candidates",
    "run_experiment", "run_pipeline", "shortest_relation_paths", "subsample_half",
    "train_kge", "train_qa", "triple_score",
]
