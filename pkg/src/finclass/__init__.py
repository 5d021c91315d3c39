"""Fish image classification: classical foreground segmentation feeding a four-channel CNN."""

from .data import Dataset, Sample, load_directory, split, synth_generate
from .imgproc import PreprocessConfig, segment_foreground
from .model import build_fishnet, load_checkpoint, predict, save_checkpoint
from .optim import Adam, TrainConfig, evaluate, fit

__version__ = "0.1.0"
