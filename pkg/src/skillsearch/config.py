"""YAML loading with line-located diagnostics.

Chain, task and experiment files share one structured-text format (YAML).
Mappings and sequences come back as ``dict``/``list`` subclasses that remember
the line they started on, so validation code can point at the offending
block instead of just naming a key.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import yaml


class ConfigError(ValueError):
    """Malformed configuration; the message starts with ``source:line:``."""

    def __init__(self, source: str, line: int | None, message: str):
        self.source = source
        self.line = line
        self.message = message
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


class LocatedDict(dict):
    line: int | None = None
    source: str = "<string>"


class LocatedList(list):
    line: int | None = None
    source: str = "<string>"


def _loader_for(source: str):
    class Loader(yaml.SafeLoader):
        pass

    def construct_mapping(loader, node):
        loader.flatten_mapping(node)
        out = LocatedDict(loader.construct_pairs(node, deep=True))
        out.line = node.start_mark.line + 1
        out.source = source
        return out

    def construct_sequence(loader, node):
        out = LocatedList(loader.construct_sequence(node, deep=True))
        out.line = node.start_mark.line + 1
        out.source = source
        return out

    Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, construct_mapping)
    Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, construct_sequence)
    return Loader


def load_text(text: str, source: str = "<string>") -> LocatedDict:
    try:
        data = yaml.load(text, Loader=_loader_for(source))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(source, line, f"YAML syntax error: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(source, None, f"YAML error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(source, 1, "top level must be a mapping")
    return data


def load_file(path: str | Path) -> LocatedDict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), None, f"cannot read file: {exc.strerror}") from None
    return load_text(text, str(path))


def _where(node) -> tuple[str, int | None]:
    return getattr(node, "source", "<string>"), getattr(node, "line", None)


def fail(node, message: str):
    source, line = _where(node)
    raise ConfigError(source, line, message)


def require(node: dict, key: str, what: str = "block"):
    if not isinstance(node, dict):
        fail(node, f"expected a mapping for {what}")
    if key not in node:
        fail(node, f"missing required field '{key}' in {what}")
    return node[key]


def vector(node: dict, key: str, size: int, what: str = "block", default=None) -> np.ndarray:
    if key not in node and default is not None:
        return np.asarray(default, dtype=float)
    raw = require(node, key, what)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        fail(raw if hasattr(raw, "line") else node, f"field '{key}' in {what} must be numeric")
    if arr.shape != (size,):
        fail(raw if hasattr(raw, "line") else node,
             f"field '{key}' in {what} must have {size} numbers, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        fail(node, f"field '{key}' in {what} must be finite")
    return arr


def number(node: dict, key: str, what: str = "block", default: Any = None) -> float:
    if key not in node:
        if default is not None:
            return float(default)
        require(node, key, what)
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        fail(node, f"field '{key}' in {what} must be a number")
    return float(value)
