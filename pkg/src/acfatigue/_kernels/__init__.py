"""Training kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it imports; otherwise, or
when ``ACFATIGUE_BACKEND=python`` is set, the numpy module ``_pure`` is
used.  Both expose ``predict``, ``gradients`` and ``train_epoch`` with
identical signatures.
"""

import os

from . import _pure

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = {"python": _pure}
if _core is not None:
    BACKENDS["compiled"] = _core


def _select():
    wanted = os.environ.get("ACFATIGUE_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(
                f"ACFATIGUE_BACKEND={wanted!r} not available; have {sorted(BACKENDS)}"
            )
        return wanted
    return "compiled" if _core is not None else "python"


backend_name = _select()
backend = BACKENDS[backend_name]


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}") from None
