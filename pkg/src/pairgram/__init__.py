"""Joint grammar induction over paired token/part-feature sequences.

Compound PCFGs for a discrete-token modality and a real-feature-vector
modality, trained jointly: each grammar maximizes its sequence ELBO
while a contrastive objective pulls posterior span marginals of paired
instances toward aligned constituents.
"""

__version__ = "0.1.0"

from . import autodiff, chart, encoders, evalkit, grammar, grounding, synthgen
from .autodiff import Tensor
from .chart import ParseTree, Span, inside, mbr_decode, outside_and_marginals
from .config import TrainConfig
from .evalkit import EvalReport
from .grammar import CompoundParams, GrammarSpec, LatentSample, RuleProbs
from .grounding import LossBundle
from .synthgen import GroundTruthGrammar, PairedInstance

__all__ = [
    "Tensor",
    "ParseTree",
    "Span",
    "inside",
    "mbr_decode",
    "outside_and_marginals",
    "TrainConfig",
    "EvalReport",
    "CompoundParams",
    "GrammarSpec",
    "LatentSample",
    "RuleProbs",
    "LossBundle",
    "GroundTruthGrammar",
    "PairedInstance",
    "__version__",
]
