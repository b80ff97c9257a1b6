"""Per-domain caches for operators and free spectra (thread-guarded)."""

import threading

from .domain import build_laplacian, free_eigenpairs

_lock = threading.Lock()
_operators = {}
_free = {}


def operator_for(domain):
    with _lock:
        L = _operators.get(domain)
    if L is None:
        L = build_laplacian(domain)
        with _lock:
            _operators.setdefault(domain, L)
    return L


def free_modes(domain, count):
    """First ``count`` free eigenpairs of the domain, cached and extended lazily."""
    with _lock:
        cached = _free.get(domain)
    if cached is None or len(cached) < count:
        pairs = free_eigenpairs(operator_for(domain), count)
        with _lock:
            prev = _free.get(domain)
            if prev is None or len(prev) < len(pairs):
                _free[domain] = pairs
            cached = _free[domain]
    return cached[:count]


def clear():
    with _lock:
        _operators.clear()
        _free.clear()
