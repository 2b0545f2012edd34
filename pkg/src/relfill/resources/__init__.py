"""Bundled data files: the TACRED label inventory and handmade verbalizations."""

from importlib import resources
from pathlib import Path


def tacred_handmade_path() -> Path:
    """Path of the bundled 42-relation fixed-length verbalization table."""
    return Path(resources.files(__package__) / "tacred_handmade.tsv")


def tacred_labels() -> list[str]:
    """The 42 TACRED relation labels, in bundled (numeric-id) order."""
    lines = tacred_handmade_path().read_text(encoding="utf-8").splitlines()
    return [line.split("\t", 1)[0] for line in lines if line.strip()]
