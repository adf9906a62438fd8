"""Path relativization so manifests stay portable and reruns into
different directories keep byte-identical artifacts."""

from pathlib import Path


def relativize(path, base) -> str:
    """Render ``path`` relative to ``base`` when it lives under it."""
    p = Path(path).resolve()
    try:
        return p.relative_to(Path(base).resolve()).as_posix()
    except ValueError:
        return str(p)


def resolve(path, base) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p
