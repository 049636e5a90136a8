"""Desk-scale dense retrieval with reader-to-retriever knowledge distillation."""

from .config import TrainConfig
from .corpus import (
    Corpus,
    Passage,
    Question,
    chunk_document,
    contains_answer,
    load_corpus,
    load_questions,
    save_corpus,
    save_questions,
)
from .distill import (
    Checkpoint,
    ScoreVector,
    contrastive_loss,
    distill_step,
    kl_divergence,
    pretrain_student,
    softmax_with_temperature,
    train,
)
from .encoder import (
    FeatureExtractor,
    JointMlp,
    RbfOracle,
    TwoTowerStudent,
    load_reader,
    load_rbf_oracle,
    load_student,
    save_reader,
    save_rbf_oracle,
    save_student,
    train_joint_reader,
)
from .evaluation import (
    PipelineResult,
    RecallReport,
    ablate_distillation,
    end_to_end_accuracy,
    finetune_reader_after_swap,
    negative_sampling_study,
    recall_at_k,
    sweep_k,
)
from .index import (
    GraphParams,
    SearchResult,
    bench_search,
    build_flat,
    build_graph,
    build_sq8,
    deserialize,
    serialize,
)
from .synthetic import generate_synthetic

__version__ = "0.1.0"
