"""Two-stage privileged-knowledge distillation for human motion prediction."""

__version__ = "0.1.0"

from .config import TrainConfig  # noqa: E402
from .dct import DctBasis, dct_encode, idct_decode  # noqa: E402
from .preprocess import MotionWindow, pad_observed, pad_privileged, make_window_samples  # noqa: E402
from .trainer import lr_at, train_fp, train_itp, train_psl, train_tp  # noqa: E402

__all__ = [
    "DctBasis", "MotionWindow", "TrainConfig", "dct_encode", "idct_decode", "lr_at", "make_window_samples",
    "pad_observed", "pad_privileged", "train_fp", "train_itp", "train_psl", "train_tp",
]
