"""Model adaptation harness.

Consumes the asset-preparation toolkit's artifacts strictly through their
documented file formats (tensor container, tokenizer JSON, adaptation and
corpus manifests, labeled TSV/CoNLL data), instantiates a small encoder in
PyTorch, and runs masked-LM adaptation and fine-tuning smoke tests.
"""

__version__ = "0.1.0"


class HarnessError(Exception):
    """Invalid artifact, configuration, or diverged training."""
