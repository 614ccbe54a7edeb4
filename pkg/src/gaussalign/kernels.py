"""Hot numeric kernels, each in two flavors: a numba ``@njit`` version and a
vectorized pure-numpy fallback.

The default flavor is chosen at import time by :mod:`gaussalign.backend`
(``GAUSS_ALIGN_BACKEND`` env var); every public function also takes a
``use_numba`` override so tests and benchmarks can drive both paths in one
process. Both flavors implement identical math; results agree to floating
round-off (not guaranteed bit-identical across flavors, but each flavor is
deterministic run-to-run).

Kernels:

* ``sinkhorn_scaling``  - entropic OT by alternating row/column scaling,
  plain (exp kernel) or log-domain (fused logsumexp updates).
* ``greedy_assign``     - hard matching extraction from a coupling by
  repeatedly taking the largest free entry, ties by (row, col).

Status protocol: the sinkhorn kernels return ``(P, iterations, converged,
violation, status)`` where status 0 means clean arithmetic and 1 means a
non-finite scaling appeared (caller decides how to fail).
"""

import numpy as np

from .backend import NUMBA_AVAILABLE, USE_NUMBA, njit, prange

STATUS_OK = 0
STATUS_NONFINITE = 1


# ---------------------------------------------------------------------------
# Plain-domain Sinkhorn
# ---------------------------------------------------------------------------

def _sinkhorn_plain_numpy(C, reg, a, b, max_iter, tol):
    K = np.exp(-C / reg)
    bx, by = K.shape
    u = np.ones(bx)
    v = np.ones(by)
    iters = 0
    converged = False
    for it in range(1, max_iter + 1):
        iters = it
        ktu = K.T @ u
        if np.any(ktu <= 0.0) or not np.all(np.isfinite(ktu)):
            return np.empty((0, 0)), iters, False, np.inf, STATUS_NONFINITE
        v = b / ktu
        kv = K @ v
        if np.any(kv <= 0.0) or not np.all(np.isfinite(kv)):
            return np.empty((0, 0)), iters, False, np.inf, STATUS_NONFINITE
        err = np.max(np.abs(u * kv - a))
        if err < tol:
            converged = True
            break
        u = a / kv
    P = (u[:, None] * K) * v[None, :]
    if not np.all(np.isfinite(P)):
        return np.empty((0, 0)), iters, False, np.inf, STATUS_NONFINITE
    violation = max(
        float(np.max(np.abs(P.sum(axis=1) - a))),
        float(np.max(np.abs(P.sum(axis=0) - b))),
    )
    return P, iters, converged, violation, STATUS_OK


def _sinkhorn_plain_core(C, reg, a, b, max_iter, tol):
    bx, by = C.shape
    K = np.empty((bx, by))
    KT = np.empty((by, bx))
    for i in prange(bx):
        for j in range(by):
            kij = np.exp(-C[i, j] / reg)
            K[i, j] = kij
            KT[j, i] = kij
    u = np.ones(bx)
    v = np.ones(by)
    kv = np.empty(bx)
    ktu = np.empty(by)
    iters = 0
    converged = False
    bad = False
    for it in range(1, max_iter + 1):
        iters = it
        for j in prange(by):
            s = 0.0
            for i in range(bx):
                s += KT[j, i] * u[i]
            ktu[j] = s
            v[j] = b[j] / s
        for i in prange(bx):
            s = 0.0
            for j in range(by):
                s += K[i, j] * v[j]
            kv[i] = s
        err = 0.0
        for i in range(bx):
            r = u[i] * kv[i]
            if not np.isfinite(r):
                bad = True
            dev = abs(r - a[i])
            if dev > err:
                err = dev
        if bad:
            return np.empty((0, 0)), iters, False, np.inf, STATUS_NONFINITE
        if err < tol:
            converged = True
            break
        for i in range(bx):
            u[i] = a[i] / kv[i]
    P = np.empty((bx, by))
    for i in prange(bx):
        for j in range(by):
            P[i, j] = u[i] * K[i, j] * v[j]
    row_err = 0.0
    col_err = 0.0
    ok = True
    for i in range(bx):
        s = 0.0
        for j in range(by):
            pij = P[i, j]
            if not np.isfinite(pij):
                ok = False
            s += pij
        dev = abs(s - a[i])
        if dev > row_err:
            row_err = dev
    for j in range(by):
        s = 0.0
        for i in range(bx):
            s += P[i, j]
        dev = abs(s - b[j])
        if dev > col_err:
            col_err = dev
    if not ok:
        return np.empty((0, 0)), iters, False, np.inf, STATUS_NONFINITE
    violation = row_err if row_err > col_err else col_err
    return P, iters, converged, violation, STATUS_OK


# ---------------------------------------------------------------------------
# Log-domain Sinkhorn
# ---------------------------------------------------------------------------

def _logsumexp_rows(M):
    m = np.max(M, axis=1)
    return m + np.log(np.sum(np.exp(M - m[:, None]), axis=1))


def _sinkhorn_log_numpy(C, reg, a, b, max_iter, tol):
    bx, by = C.shape
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(bx)
    g = np.zeros(by)
    Ct = C.T
    iters = 0
    converged = False
    for it in range(1, max_iter + 1):
        iters = it
        g = reg * (log_b - _logsumexp_rows((f[None, :] - Ct) / reg))
        log_P = (f[:, None] + g[None, :] - C) / reg
        err = np.max(np.abs(np.exp(_logsumexp_rows(log_P)) - a))
        if err < tol:
            converged = True
            break
        f = reg * (log_a - _logsumexp_rows((g[None, :] - C) / reg))
    P = np.exp((f[:, None] + g[None, :] - C) / reg)
    violation = max(
        float(np.max(np.abs(P.sum(axis=1) - a))),
        float(np.max(np.abs(P.sum(axis=0) - b))),
    )
    return P, iters, converged, violation, STATUS_OK


def _sinkhorn_log_core(C, reg, a, b, max_iter, tol):
    bx, by = C.shape
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(bx)
    g = np.zeros(by)
    CT = np.empty((by, bx))
    for i in prange(bx):
        for j in range(by):
            CT[j, i] = C[i, j]
    row_dev = np.empty(bx)
    iters = 0
    converged = False
    for it in range(1, max_iter + 1):
        iters = it
        for j in prange(by):
            m = -np.inf
            for i in range(bx):
                z = (f[i] - CT[j, i]) / reg
                if z > m:
                    m = z
            s = 0.0
            for i in range(bx):
                s += np.exp((f[i] - CT[j, i]) / reg - m)
            g[j] = reg * (log_b[j] - (m + np.log(s)))
        for i in prange(bx):
            s = 0.0
            for j in range(by):
                s += np.exp((f[i] + g[j] - C[i, j]) / reg)
            row_dev[i] = abs(s - a[i])
        err = 0.0
        for i in range(bx):
            if row_dev[i] > err:
                err = row_dev[i]
        if err < tol:
            converged = True
            break
        for i in prange(bx):
            m = -np.inf
            for j in range(by):
                z = (g[j] - C[i, j]) / reg
                if z > m:
                    m = z
            s = 0.0
            for j in range(by):
                s += np.exp((g[j] - C[i, j]) / reg - m)
            f[i] = reg * (log_a[i] - (m + np.log(s)))
    P = np.empty((bx, by))
    for i in prange(bx):
        for j in range(by):
            P[i, j] = np.exp((f[i] + g[j] - C[i, j]) / reg)
    row_err = 0.0
    col_err = 0.0
    for i in range(bx):
        s = 0.0
        for j in range(by):
            s += P[i, j]
        dev = abs(s - a[i])
        if dev > row_err:
            row_err = dev
    for j in range(by):
        s = 0.0
        for i in range(bx):
            s += P[i, j]
        dev = abs(s - b[j])
        if dev > col_err:
            col_err = dev
    violation = row_err if row_err > col_err else col_err
    return P, iters, converged, violation, STATUS_OK


# ---------------------------------------------------------------------------
# Greedy matching extraction
# ---------------------------------------------------------------------------

def _greedy_assign_numpy(P):
    bx, by = P.shape
    # stable sort on -P: descending value, ties by flat (row-major) index,
    # i.e. lexicographic (row, col)
    order = np.argsort(-P.ravel(), kind="stable")
    target = np.full(bx, -1, dtype=np.int64)
    col_used = np.zeros(by, dtype=bool)
    assigned = 0
    quota = min(bx, by)
    for pos in order:
        i = pos // by
        j = pos - i * by
        if target[i] < 0 and not col_used[j]:
            target[i] = j
            col_used[j] = True
            assigned += 1
            if assigned == quota:
                break
    if assigned < bx:
        # more rows than columns: leftover rows take their best column
        for i in range(bx):
            if target[i] < 0:
                target[i] = int(np.argmax(P[i]))
    return target


def _greedy_assign_core(P):
    bx, by = P.shape
    n = bx * by
    flat = np.empty(n)
    for i in range(bx):
        for j in range(by):
            flat[i * by + j] = -P[i, j]
    order = np.argsort(flat, kind="mergesort")
    target = np.full(bx, -1, dtype=np.int64)
    col_used = np.zeros(by, dtype=np.bool_)
    assigned = 0
    quota = min(bx, by)
    for k in range(n):
        pos = order[k]
        i = pos // by
        j = pos - i * by
        if target[i] < 0 and not col_used[j]:
            target[i] = j
            col_used[j] = True
            assigned += 1
            if assigned == quota:
                break
    if assigned < bx:
        for i in range(bx):
            if target[i] < 0:
                best = 0
                best_val = P[i, 0]
                for j in range(1, by):
                    if P[i, j] > best_val:
                        best_val = P[i, j]
                        best = j
                target[i] = best
    return target


# ---------------------------------------------------------------------------
# Compilation and dispatch
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:
    _sinkhorn_plain_numba = njit(cache=True, parallel=True)(_sinkhorn_plain_core)
    _sinkhorn_log_numba = njit(cache=True, parallel=True)(_sinkhorn_log_core)
    _greedy_assign_numba = njit(cache=True)(_greedy_assign_core)
else:  # pragma: no cover - numba is a declared dependency
    _sinkhorn_plain_numba = None
    _sinkhorn_log_numba = None
    _greedy_assign_numba = None


def _pick(use_numba):
    if use_numba is None:
        return USE_NUMBA
    if use_numba and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not available")
    return bool(use_numba)


def sinkhorn_scaling(C, reg, a, b, max_iter, tol, log_domain, use_numba=None):
    """Run Sinkhorn scaling on cost matrix C with marginals (a, b).

    Returns ``(P, iterations, converged, violation, status)``. ``violation``
    is the final max absolute marginal deviation; ``status`` follows the
    module protocol.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    numba_path = _pick(use_numba)
    if log_domain:
        impl = _sinkhorn_log_numba if numba_path else _sinkhorn_log_numpy
    else:
        impl = _sinkhorn_plain_numba if numba_path else _sinkhorn_plain_numpy
    P, iters, converged, violation, status = impl(
        C, float(reg), a, b, int(max_iter), float(tol)
    )
    return P, int(iters), bool(converged), float(violation), int(status)


def greedy_assign(P, use_numba=None):
    """Greedy matching from a nonnegative score matrix: repeatedly pick the
    largest entry whose row and column are both free; ties break by
    lexicographic (row, col). Returns an int64 target index per row."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    if _pick(use_numba):
        return _greedy_assign_numba(P)
    return _greedy_assign_numpy(P)


def warmup():
    """Force JIT compilation of the numba kernels on tiny inputs."""
    if not NUMBA_AVAILABLE:
        return
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    a = np.array([0.5, 0.5])
    b = np.array([0.5, 0.5])
    _sinkhorn_plain_numba(C, 0.1, a, b, 5, 1e-9)
    _sinkhorn_log_numba(C, 0.1, a, b, 5, 1e-9)
    _greedy_assign_numba(C)
