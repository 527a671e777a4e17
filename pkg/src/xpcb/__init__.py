"""Cross-platform adversarial transfer for abusive-post classification."""

from ._accel import HAVE_NUMBA, backend
from .corpus import Corpus, PostRecord, Vocabulary, build_vocab, encode_corpus, load_dataset
from .encoder import EncoderConfig, TransformerEncoder
from .errors import ArtifactMismatch, DataError, NumericalError, XPCBError
from .evaluation import Metrics, evaluate
from .heads import Classifier, Discriminator, HeadConfig
from .pipeline import PipelineConfig, PipelineResult, run_configuration
from .training import TrainConfig, adversarial_adapt, train_source

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA", "backend", "Corpus", "PostRecord", "Vocabulary", "build_vocab", "encode_corpus", "load_dataset",
    "EncoderConfig", "TransformerEncoder", "ArtifactMismatch", "DataError", "NumericalError", "XPCBError",
    "Metrics", "evaluate", "Classifier", "Discriminator", "HeadConfig", "PipelineConfig", "PipelineResult",
    "run_configuration", "TrainConfig", "adversarial_adapt", "train_source",
]
