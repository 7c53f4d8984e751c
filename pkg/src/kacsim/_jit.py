"""Optional numba acceleration for the hot loops.

Numerical kernels are written as plain functions over float64 arrays and
compiled with numba when it is importable.  The pure-Python fallback produces
bit-identical results: numba reproduces the numpy Generator bit stream
exactly, and fastmath is deliberately left off so float semantics do not
depend on compilation.
"""

try:
    import numba as _nb

    HAVE_NUMBA = True

    def jit(func):
        return _nb.njit(cache=True, nogil=True)(func)

except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def jit(func):
        return func
