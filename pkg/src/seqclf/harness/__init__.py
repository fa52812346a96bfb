from .config import TrainConfig, read_config_file
from .data import Corpus, featurize, pseudo_encode_corpus
from .experiments import (
    compare_architectures,
    layer_sweep,
    negative_control,
    split_seed_sweep,
    task_pooling_ablation,
)
from .metrics import MetricsReport, compute_metrics, read_metrics, write_metrics
from .report import report
from .train import evaluate_checkpoint, evaluate_model, train
