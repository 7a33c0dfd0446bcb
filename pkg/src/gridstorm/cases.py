"""Built-in test cases, shipped as package data."""

from __future__ import annotations

import os
from importlib import resources

from .model import GridCase, parse_case

_BUILTIN = ("ieee14", "ieee9")


def builtin_names() -> tuple[str, ...]:
    return _BUILTIN


def builtin_text(name: str) -> str:
    if name not in _BUILTIN:
        raise KeyError(f"unknown built-in case {name!r}")
    return (resources.files(__package__) / "data" / f"{name}.case").read_text()


def load_case(name_or_path: str) -> GridCase:
    """A built-in case by name, or any case file by path."""
    if name_or_path in _BUILTIN:
        return parse_case(builtin_text(name_or_path), name=name_or_path)
    if os.path.exists(name_or_path):
        base = os.path.splitext(os.path.basename(name_or_path))[0]
        with open(name_or_path) as fh:
            return parse_case(fh.read(), name=base)
    raise FileNotFoundError(
        f"{name_or_path!r} is neither a built-in case {_BUILTIN} nor a file"
    )
