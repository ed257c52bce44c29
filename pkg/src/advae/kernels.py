"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``ADVAE_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used. ``use_backend`` switches at runtime
(benchmarks and cross-backend tests rely on it).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _pykernels


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = backend_name()
    _active = _BACKENDS[name]
    return previous


def _initial_backend():
    forced = os.environ.get("ADVAE_PURE_PYTHON", "")
    if forced and forced != "0":
        return "python"
    return "compiled" if _ckernels is not None else "python"


use_backend(_initial_backend())


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    _active.adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2)


def relu_forward(x):
    return _active.relu_forward(x)


def relu_backward(g, x):
    return _active.relu_backward(g, x)


def rbf_kernel_sums(x, y, gamma):
    return _active.rbf_kernel_sums(x, y, gamma)


def nearest_center(samples, centers):
    return _active.nearest_center(samples, centers)
