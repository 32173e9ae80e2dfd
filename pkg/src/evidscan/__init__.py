"""evidscan: selective-scan image classifier with evidential uncertainty.

Subpackages: tensor (autodiff core), backbone (scan encoder), hac
(per-sample conditioning), rap (evidential head and loss), metrics,
data/formats (datasets and serialization), train, cli.
"""

from .tensor import Tensor, Tape, tape, backward
from .rng import Rng

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "tape", "backward", "Rng", "__version__"]
