"""Kernel backend selection.

The hot loops live in :mod:`edgetrace._kernels`.  A compiled build of that
module is used when present; otherwise the same source is executed by the
interpreter.  ``EDGETRACE_BACKEND`` forces a choice:

``auto`` (default)
    compiled if importable, else interpreted.
``compiled``
    compiled or ImportError.
``python``
    always the interpreted source.
"""
from __future__ import annotations

import importlib.machinery
import importlib.util
import os
import sys
from pathlib import Path
from types import ModuleType

_SOURCE = Path(__file__).with_name("_kernels.py")
_cache: dict[str, ModuleType] = {}


def _load_python() -> ModuleType:
    if "python" not in _cache:
        name = "edgetrace._kernels_py"
        loader = importlib.machinery.SourceFileLoader(name, str(_SOURCE))
        spec = importlib.util.spec_from_loader(name, loader)
        mod = importlib.util.module_from_spec(spec)
        sys.modules[name] = mod
        loader.exec_module(mod)
        _cache["python"] = mod
    return _cache["python"]


def _load_compiled() -> ModuleType:
    if "compiled" not in _cache:
        mod = importlib.import_module("edgetrace._kernels")
        if not getattr(mod, "COMPILED", False):
            raise ImportError("edgetrace._kernels is not compiled; run `pip install -e .` with a C compiler")
        _cache["compiled"] = mod
    return _cache["compiled"]


def load(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` (auto/compiled/python)."""
    choice = (name or os.environ.get("EDGETRACE_BACKEND", "auto")).lower()
    if choice == "python":
        return _load_python()
    if choice == "compiled":
        return _load_compiled()
    if choice != "auto":
        raise ValueError(f"unknown backend {choice!r}; expected auto, compiled or python")
    try:
        return _load_compiled()
    except ImportError:
        return _load_python()


def available() -> list[str]:
    out = ["python"]
    try:
        _load_compiled()
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out


kernels = load()
BACKEND = "compiled" if getattr(kernels, "COMPILED", False) else "python"
