"""ktbench: leakage-aware benchmarking of knowledge-tracing sequence models.

The library covers the full loop: canonical log ingestion, standardized
preprocessing (filtering, student-level splits, KC expansion, windowing),
trainable sequence models behind one causal interface, evaluation protocols
that keep sibling-KC ground truth out of each prediction, and a seeded
simulator that provides analytic oracles for all of it.
"""

from . import core, ingest, metrics, models, preprocess, protocols, synth
from .core import Dataset, DatasetStats, Interaction, StudentSequence, compute_stats, validate
from .ingest import compose_question_id, parse_canonical, write_canonical
from .metrics import MetricResult, UndefinedMetricError, accuracy, auc, paired_t_test
from .models import DKT, SAKT, DKTPlusLoss, MeanRateBaseline, TrainConfig, make_model, train
from .preprocess import Split, expand_to_kc, filter_dataset, make_windows, split_students
from .protocols import (
    FusionMechanism,
    MultiStepConfig,
    audit_leakage,
    eval_all_in_one,
    eval_multistep,
    eval_one_by_one,
    eval_question_level,
    fuse,
    split_by_length,
)
from .synth import SimConfig, generate, oracle_probabilities

__version__ = "0.1.0"
