"""Traffic incident duration analysis: data loading, distribution distances,
tree ensembles built from scratch, threshold classification and SHAP."""

from .errors import InputError, SchemaError, TrainingError

__version__ = "0.1.0"

__all__ = ["InputError", "SchemaError", "TrainingError", "__version__"]
