"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension is optional; `get_backend` resolves which
implementation the filter uses. Selection order: explicit argument, the
METERFLOW_BACKEND environment variable (auto|compiled|python), then
compiled-if-available. Both backends implement the same three functions
with matching semantics:

    extend_paths        batch queue-recursion extension, in place
    step_log_weights    per-particle ABC log weights for one payment
    occupancy_counts    per-particle occupancy at evaluation times

Path extension is bit-identical across backends (same elementwise float
operations); the weight kernels may differ at the last few ulps because
reductions associate differently.
"""

import os

from . import _python

try:
    from . import _core

    HAVE_COMPILED = True
except ImportError:  # extension not built
    _core = None
    HAVE_COMPILED = False

BACKENDS = {"python": _python}
if HAVE_COMPILED:
    BACKENDS["compiled"] = _core

__all__ = ["get_backend", "backend_name", "HAVE_COMPILED", "BACKENDS"]


def get_backend(name=None):
    """Resolve a kernel backend module by name, env var, or availability."""
    if name is None:
        name = os.environ.get("METERFLOW_BACKEND", "auto")
    if name == "auto":
        name = "compiled" if HAVE_COMPILED else "python"
    try:
        return BACKENDS[name]
    except KeyError:
        if name == "compiled":
            raise RuntimeError(
                "compiled kernels requested but the extension is not built"
            ) from None
        raise ValueError(f"unknown backend {name!r}; use auto, compiled, or python")


def backend_name(module):
    return "compiled" if module is _core and _core is not None else "python"
