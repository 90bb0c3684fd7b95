"""Recurrence kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built at install time. Setting
``MTLAFFECT_PURE_PYTHON=1`` before import forces the numpy kernels.
"""
import os
from types import ModuleType

from . import _recurrent_py

try:
    from . import _recurrent_c
except ImportError:  # extension not built
    _recurrent_c = None

_BACKENDS: dict[str, ModuleType] = {"python": _recurrent_py}
if _recurrent_c is not None:
    _BACKENDS["cython"] = _recurrent_c

if os.environ.get("MTLAFFECT_PURE_PYTHON", "") not in ("", "0") or _recurrent_c is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_active = _BACKENDS[BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


def set_backend(name: str) -> None:
    global _active, BACKEND
    _active = get_backend(name)
    BACKEND = name


def gru_forward(gx, h0, w_hh, b_hh):
    return _active.gru_forward(gx, h0, w_hh, b_hh)


def gru_backward(dhs, h0, hs, cache, w_hh):
    return _active.gru_backward(dhs, h0, hs, cache, w_hh)


def lstm_forward(gx, h0, c0, w_hh, b_hh):
    return _active.lstm_forward(gx, h0, c0, w_hh, b_hh)


def lstm_backward(dhs, h0, c0, hs, cs, cache, w_hh):
    return _active.lstm_backward(dhs, h0, c0, hs, cs, cache, w_hh)
