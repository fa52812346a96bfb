from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .classifiers import (
    ClassLatentModel,
    PerceiverPoolModel,
    SequenceClassifier,
    TransformerPoolModel,
    bce_loss,
    build_model,
    factorized_projection,
    predict,
    probabilities,
)
from .config import ARCHITECTURES, ModelConfig
