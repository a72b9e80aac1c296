"""SHAP-guided feature selection for binary tabular classification."""

__version__ = "0.1.0"
