"""Locate LIBSVM files by name or path.

Names are looked up in ``$ECLK_DATA_DIR`` and then in the repository's
``data/`` directory. Nothing is downloaded.
"""
import os
from pathlib import Path

from .problem import load_libsvm

REPO_DATA = Path(__file__).resolve().parents[2] / "data"


def search_dirs():
    dirs = []
    if os.environ.get("ECLK_DATA_DIR"):
        dirs.append(Path(os.environ["ECLK_DATA_DIR"]))
    dirs.append(REPO_DATA)
    return dirs


def resolve(name):
    path = Path(name)
    if path.exists():
        return path
    for base in search_dirs():
        if (base / name).exists():
            return base / name
    raise FileNotFoundError(
        f"dataset {name!r} not found; pass a path or place it in one of "
        + ", ".join(str(d) for d in search_dirs())
    )


def available(name):
    try:
        resolve(name)
    except FileNotFoundError:
        return False
    return True


def load(name):
    return load_libsvm(resolve(name))
