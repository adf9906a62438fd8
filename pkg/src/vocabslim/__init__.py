"""Toolkit for slimming multilingual masked language models.

The pipeline stages are: clean monolingual corpora, count subword
frequencies per script group, select a reduced vocabulary, prune the
unigram tokenizer and the checkpoint's embedding rows, and emit
deterministic masked-LM training data plus audit reports.
"""

from vocabslim.errors import (
    ArtifactMismatchError,
    ContainerFormatError,
    DecodeError,
    ValidationError,
    VocabslimError,
)

__version__ = "0.1.0"

__all__ = [
    "ArtifactMismatchError",
    "ContainerFormatError",
    "DecodeError",
    "ValidationError",
    "VocabslimError",
    "__version__",
]
