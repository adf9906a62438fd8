"""Content fingerprints used to bind pipeline artifacts together."""

import hashlib
import json
import struct
from pathlib import Path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(Path(path), "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_fingerprint(path) -> str:
    """Fingerprint that ignores the documented timestamp headers, so an
    artifact rebuilt from identical inputs binds identically.

    JSON artifacts drop top-level ``created_at`` and ``header.created_at``;
    tensor containers drop metadata ``created_at``. Everything else hashes
    raw bytes.
    """
    path = Path(path)
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return sha256_file(path)
        if isinstance(doc, dict):
            doc.pop("created_at", None)
            if isinstance(doc.get("header"), dict):
                doc["header"].pop("created_at", None)
        return sha256_bytes(json.dumps(doc, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) == 8:
            (n,) = struct.unpack("<Q", head)
            if 0 < n <= 100 * 1024 * 1024:
                blob = f.read(n)
                if len(blob) == n:
                    try:
                        header = json.loads(blob.decode("utf-8"))
                    except (UnicodeDecodeError, json.JSONDecodeError):
                        return sha256_file(path)
                    if isinstance(header, dict):
                        header.get("__metadata__", {}).pop("created_at", None)
                        h = hashlib.sha256()
                        h.update(json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8"))
                        for chunk in iter(lambda: f.read(1 << 20), b""):
                            h.update(chunk)
                        return h.hexdigest()
    return sha256_file(path)
