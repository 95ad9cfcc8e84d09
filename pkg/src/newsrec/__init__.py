"""News recommendation with learned history selection and word-level
fine-grained interaction, built on a small float64 autodiff core."""

__version__ = "0.1.0"

from . import autodiff
from . import bench
from . import data
from . import encoder
from . import interactor
from . import metrics
from . import model
from . import selector

__all__ = ["autodiff", "bench", "data", "encoder", "interactor",
           "metrics", "model", "selector", "__version__"]
