"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ValidationError -> 3, OSError -> 4,
ArtifactMismatchError -> 5 (argparse itself exits 2 on usage errors).
"""


class VocabslimError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(VocabslimError):
    """Input data or configuration violates a documented contract."""


class DecodeError(ValidationError):
    """Input text is not valid UTF-8; carries the file byte offset."""

    def __init__(self, path, byte_offset, reason=""):
        self.path = str(path)
        self.byte_offset = byte_offset
        msg = f"{self.path}: invalid UTF-8 at byte offset {byte_offset}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class ContainerFormatError(ValidationError):
    """Tensor container file is malformed."""


class ArtifactMismatchError(VocabslimError):
    """Two artifacts that must share provenance do not (fingerprints differ)."""
