"""Cross-spectral body identification: region-token transformer, metric-learning
training with domain-aware sampling, and template-based 1:N evaluation."""

__version__ = "0.1.0"
