"""Kernel backend selection.

The layer-sweep kernels exist twice: a compiled Cython extension
(``_layercore``) and a NumPy reference (``reference``).  The compiled one is
used when importable; set ``ADABASIS_BACKEND=reference`` or ``compiled`` to
force a choice (forcing ``compiled`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import reference

_requested = os.environ.get("ADABASIS_BACKEND", "auto").lower()
if _requested not in ("auto", "compiled", "reference"):
    raise ValueError(
        f"ADABASIS_BACKEND must be auto, compiled or reference, got {_requested!r}"
    )

compiled = None
if _requested != "reference":
    try:
        from . import _layercore as compiled
    except ImportError:
        if _requested == "compiled":
            raise
        compiled = None
    else:
        if not (hasattr(compiled, "forward") and hasattr(compiled, "backward")):
            if _requested == "compiled":
                raise ImportError("compiled backend module lacks the kernel functions")
            compiled = None

active = compiled if compiled is not None else reference
BACKEND_NAME = "compiled" if active is compiled and compiled is not None else "reference"


def get_backend(name=None):
    """Return a backend module by name (None selects the active one)."""
    if name is None or name == "active":
        return active
    if name == "reference":
        return reference
    if name == "compiled":
        if compiled is None:
            raise ValueError("compiled backend is not available")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    """Names of importable backends."""
    names = ["reference"]
    if compiled is not None:
        names.append("compiled")
    return names
