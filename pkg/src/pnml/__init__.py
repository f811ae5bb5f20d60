"""Prototype-based multi-label learning with learned per-label metrics."""

from .datasets import (CorrelationMatrix, Dataset, DatasetError, SamplingConfig,
                       derive_seed, kfold_split, label_correlation_matrix,
                       load_dataset, sample_label_instances, save_dataset)
from .embedding import EmbeddingParams, embed, embed_backward, embedding_dim, init_embedding
from .evaluation import (EvalReport, accuracy, average_precision, evaluate_model,
                         macro_f1, micro_f1, ranking_loss)
from .losses import (LossBreakdown, correlation_regularizer, cross_entropy,
                     predict_label_prob, predict_labels, total_loss)
from .metric import (DistanceMetricParams, mahalanobis, metric_regularizer,
                     squared_mahalanobis)
from .prototypes import (ClusteringConfig, LabelPrototypes, PrototypeSet,
                         adaptive_prototypes, distance_threshold,
                         export_prototypes, single_prototype, soft_assign)
from .training import (AdamState, GradientCheckReport, Hyperparams, ModelParams,
                       TrainedModel, TrainingDivergenceError, adam_step,
                       forward_label, gradient_check, train)

__version__ = "0.1.0"
