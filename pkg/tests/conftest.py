"""Fixtures shared across the suite (helpers live in helpers.py)."""

import pytest

from vocabslim.tokenizer import UnigramModel


@pytest.fixture
def toy_model():
    """Fixed model used across modules: covers 'a'..'e' plus a few
    multi-char pieces, with and without the boundary marker."""
    return UnigramModel.with_default_specials(
        [
            ("\u2581", -4.0),
            ("\u2581a", -1.2),
            ("\u2581b", -1.4),
            ("a", -2.0),
            ("b", -2.1),
            ("c", -2.2),
            ("d", -2.3),
            ("e", -2.4),
            ("ab", -1.8),
            ("cd", -1.9),
            ("\u2581ab", -1.1),
        ]
    )
