"""Numba shim: exposes ``njit`` or a no-op stand-in.

The accelerated kernels are optional.  Setting ``KDALIGN_DISABLE_NUMBA=1``
(or numba being absent) routes every kernel through its pure-numpy
implementation instead; see :mod:`kdalign.kernels`.
"""

import os

NUMBA_ENABLED = os.environ.get("KDALIGN_DISABLE_NUMBA", "0") != "1"

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """Identity decorator used when JIT compilation is off."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap
