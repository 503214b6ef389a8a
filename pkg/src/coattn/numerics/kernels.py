"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy reference
kernels are used. ``COATTN_KERNELS=python`` forces the fallback and
``COATTN_KERNELS=cython`` makes a missing extension an import error.
"""
import os

from coattn.numerics import _pykernels

_choice = os.environ.get("COATTN_KERNELS", "auto").lower()

if _choice == "python":
    backend = _pykernels
else:
    try:
        from coattn.numerics import _ckernels as backend
    except ImportError:
        if _choice == "cython":
            raise
        backend = _pykernels


def available_backends():
    """All importable kernel modules, fallback first."""
    found = [_pykernels]
    try:
        from coattn.numerics import _ckernels
    except ImportError:
        pass
    else:
        found.append(_ckernels)
    return found


def use(name):
    """Switch the active backend by name (``"python"`` or ``"cython"``)."""
    global backend
    for mod in available_backends():
        if mod.NAME == name:
            backend = mod
            return mod
    raise ImportError(f"kernel backend {name!r} is not available")
