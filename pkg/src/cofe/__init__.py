"""cofe: counterfactual ECG explanations via latent-space optimization."""

__version__ = "0.1.0"
