from .similarity import DEFAULT_SIMILARITY, METRICS, MODES, SimilaritySpec, memory_similarity
from .config import ABLATIONS, IMAGE_SHAPE, REMDIF_SPEC, SEQUENCE_LENGTH, ConfigError, McnConfig
from .network import MCN, build_model, extract_features, mcn_forward
from .training import (
    EpochRecord, PairDataset, TrainingDivergedError, TrainingHistory, evaluate, predict_pairs, train, train_step,
)
from .io import ModelFormatError, load_model, model_bytes, model_from_bytes, save_model
from .estimator import MCNClassifier
