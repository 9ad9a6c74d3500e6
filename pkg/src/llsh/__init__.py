"""Learnable locality-sensitive hashing for distance-based anomaly detection."""

__version__ = "0.1.0"

from .encoder import EncoderConfig, HashEncoder, binarize, encode, init_random  # noqa: F401
from .index import HashIndex, build_index, lighten, load_index, save_index  # noqa: F401
from .scoring import QueryConfig, ScoreSeries, anomaly_score, score_video, smooth  # noqa: F401
from .training import PairSampler, TrainConfig, train  # noqa: F401
from .evaluation import macro_auc, micro_auc, roc_auc  # noqa: F401
