"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The jitted path is used when numba imports cleanly, unless the environment
variable ``TF2D_NUMBA`` is set to ``0``/``false``/``off``, which forces the
numpy fallback.  ``BACKEND`` reports which path is active.  Both paths share
the same semantics; ``benchmarks/bench_accel.py`` compares their speed.

Kernels here are the runtime hot spots:

* arithmetic-geometric mean evaluation of the complete elliptic integral K,
* assembly of the dense angular Coulomb kernel matrix (n^2 AGM calls),
* Sturm-sequence eigenvalue counting and bisection for symmetric
  tridiagonal matrices.
"""

from __future__ import annotations

import math
import os

import numpy as np

_AGM_RTOL = 1e-15
_AGM_MAXIT = 60
_PIVMIN = 1e-300


def _env_wants_numba() -> bool:
    val = os.environ.get("TF2D_NUMBA", "1").strip().lower()
    return val not in ("0", "false", "off", "no")


HAVE_NUMBA = False
if _env_wants_numba():
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - mirror image of the numba env
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

if HAVE_NUMBA:
    threads = os.environ.get("TF2D_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        except (ImportError, ValueError):
            pass


# ---------------------------------------------------------------------------
# Complete elliptic integral of the first kind, parametrized by the
# complementary modulus k' = sqrt(1 - k^2).  Near the Coulomb-kernel diagonal
# k' = |r - s| / (r + s) is computed without cancellation, so this is the
# accurate entry point.
# ---------------------------------------------------------------------------

def _ellint_k_from_kprime_np(kprime):
    kp = np.asarray(kprime, dtype=np.float64)
    scalar = kp.ndim == 0
    a = np.ones_like(kp, dtype=np.float64)
    b = kp.astype(np.float64, copy=True).reshape(-1)
    a = a.reshape(-1)
    for _ in range(_AGM_MAXIT):
        if np.all(a - b <= _AGM_RTOL * a):
            break
        t = 0.5 * (a + b)
        b = np.sqrt(a * b)
        a = t
    out = np.pi / (a + b)
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(kprime))


# ---------------------------------------------------------------------------
# Coulomb operator assembly (product integration, hybrid).
#
# Row for evaluation radius r: the integrand rho(s) * k_ang(r, s) * s has a
# logarithmic kink at s = r.  On cells overlapping the window
# [r/2, 3r/2] the kernel is split as
#     k_ang * s = W(r, s) - phi(s) ln|s - r|,
#     phi(s) = 4 s / (r + s),
#     W(r, s) = k_ang(r, s) * s + phi(s) ln|s - r|,  W(r, r) = 2 ln(8 r),
# with W handled by the per-cell trapezoid and the log factor integrated
# exactly against hat(s) * phi_linear(s) via the moments
#     integral u^k ln|u| du,  k = 0, 1, 2.
# The window must scale with r (not with the cell size): the kink's
# curvature contaminates an O(r) neighbourhood at first order if left to
# the plain trapezoid.  Outside the window the plain trapezoid of the full
# kernel is used; evaluating the exact moments there would hit catastrophic
# cancellation (error ~ eps |u|^3 ln|u| / cell width).
# ---------------------------------------------------------------------------

_WINDOW_LO = 0.5
_WINDOW_HI = 1.5


def _h0(x):
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(ax) - x
    return np.where(ax == 0.0, 0.0, out)


def _h1(x):
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * x * x * (np.log(ax) - 0.5)
    return np.where(ax == 0.0, 0.0, out)


def _h2(x):
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x**3 / 3.0 * (np.log(ax) - 1.0 / 3.0)
    return np.where(ax == 0.0, 0.0, out)


def _coulomb_row_np(r, nodes, self_index=-1):
    s = nodes
    n = s.size
    with np.errstate(divide="ignore"):
        diff = np.abs(r - s)
        tot = r + s
        kp = diff / tot
        if self_index >= 0:
            kp[self_index] = 1.0
        kval = _ellint_k_from_kprime_np(kp)
        w_smooth = (4.0 * s / tot) * (kval + np.log(diff))
        kern = (4.0 * s / tot) * kval  # k_ang(r, s) * s
    if self_index >= 0:
        w_smooth[self_index] = 2.0 * np.log(8.0 * r)
        kern[self_index] = np.inf
    a = s[:-1]
    b = s[1:]
    delta = b - a
    near = (b > _WINDOW_LO * r) & (a < _WINDOW_HI * r)
    out = np.zeros_like(s)
    half = 0.5 * delta
    # far cells: plain trapezoid of the full kernel
    far = ~near
    np.add.at(out, np.flatnonzero(far), (half * kern[:-1])[far])
    np.add.at(out, np.flatnonzero(far) + 1, (half * kern[1:])[far])
    # near cells: trapezoid of W plus exact log moments
    idx = np.flatnonzero(near)
    np.add.at(out, idx, (half * w_smooth[:-1])[near])
    np.add.at(out, idx + 1, (half * w_smooth[1:])[near])
    alpha = (a - r)[near]
    beta = (b - r)[near]
    dl = delta[near]
    i0 = _h0(beta) - _h0(alpha)
    i1 = _h1(beta) - _h1(alpha)
    i2 = _h2(beta) - _h2(alpha)
    phia = (4.0 * a / (r + a))[near]
    phib = (4.0 * b / (r + b))[near]
    q0 = (phia * beta - phib * alpha) / dl
    q1 = (phib - phia) / dl
    np.add.at(out, idx, -(beta * q0 * i0 + (beta * q1 - q0) * i1 - q1 * i2) / dl)
    np.add.at(out, idx + 1, -(-alpha * q0 * i0 + (q0 - alpha * q1) * i1 + q1 * i2) / dl)
    return out


def _coulomb_matrix_np(nodes, tau):
    n = nodes.size
    m = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        m[i, :] = _coulomb_row_np(nodes[i], nodes, self_index=i)
    # weighted symmetrization: diag(tau) @ P symmetric
    ratio = tau[None, :] / tau[:, None]
    p = 0.5 * (m + ratio * m.T)
    return p


def _sturm_count_batch_np(d, e2, shifts):
    """Number of eigenvalues strictly below each shift (LDL^T sign count)."""
    xs = np.asarray(shifts, dtype=np.float64)
    scalar = xs.ndim == 0
    xs = np.atleast_1d(xs)
    counts = np.zeros(xs.shape, dtype=np.int64)
    n = d.shape[0]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        q = d[0] - xs
        np.copyto(q, -_PIVMIN, where=np.abs(q) < _PIVMIN)
        counts += q < 0.0
        for i in range(1, n):
            q = d[i] - xs - e2[i - 1] / q
            np.copyto(q, -_PIVMIN, where=np.abs(q) < _PIVMIN)
            counts += q < 0.0
    if scalar:
        return int(counts[0])
    return counts


def _gershgorin(d, e):
    rad = np.zeros_like(d)
    rad[:-1] += np.abs(e)
    rad[1:] += np.abs(e)
    return float(np.min(d - rad)), float(np.max(d + rad))


def _eigenvalues_below_np(d, e2, bound, abstol, maxiter):
    n = d.shape[0]
    e = np.sqrt(e2) if n > 1 else np.zeros(0)
    glo, ghi = _gershgorin(d, e)
    m = int(_sturm_count_batch_np(d, e2, np.array([bound]))[0])
    if m == 0:
        return np.empty(0, dtype=np.float64)
    lo = np.full(m, glo)
    hi = np.full(m, min(bound, ghi + abs(ghi) * 1e-12 + abstol))
    ranks = np.arange(1, m + 1)
    for _ in range(maxiter):
        width = hi - lo
        tol = abstol + 4.0 * np.finfo(float).eps * np.maximum(np.abs(lo), np.abs(hi))
        active = width > tol
        if not np.any(active):
            break
        mid = 0.5 * (lo + hi)
        counts = _sturm_count_batch_np(d, e2, mid[active])
        below = counts >= ranks[active]
        idx = np.flatnonzero(active)
        hi[idx[below]] = mid[idx[below]]
        lo[idx[~below]] = mid[idx[~below]]
    return 0.5 * (lo + hi)


if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _k_from_kprime_scalar(kp):
        a = 1.0
        b = kp
        it = 0
        while a - b > _AGM_RTOL * a and it < _AGM_MAXIT:
            t = 0.5 * (a + b)
            b = math.sqrt(a * b)
            a = t
            it += 1
        return math.pi / (a + b)

    @njit(cache=True, nogil=True)
    def _ellint_k_from_kprime_nb(kp):
        out = np.empty(kp.shape[0], dtype=np.float64)
        for i in range(kp.shape[0]):
            out[i] = _k_from_kprime_scalar(kp[i])
        return out

    @njit(cache=True, parallel=True, nogil=True)
    def _assemble_kernel_nb(nodes):
        n = nodes.shape[0]
        out = np.zeros((n, n), dtype=np.float64)
        for i in prange(n):
            ri = nodes[i]
            for j in range(i):
                rj = nodes[j]
                s = ri + rj
                kp = (ri - rj) / s
                v = 4.0 / s * _k_from_kprime_scalar(kp)
                out[i, j] = v
                out[j, i] = v
        return out

    @njit(cache=True, inline="always")
    def _h0_nb(x):
        if x == 0.0:
            return 0.0
        return x * math.log(abs(x)) - x

    @njit(cache=True, inline="always")
    def _h1_nb(x):
        if x == 0.0:
            return 0.0
        return 0.5 * x * x * (math.log(abs(x)) - 0.5)

    @njit(cache=True, inline="always")
    def _h2_nb(x):
        if x == 0.0:
            return 0.0
        return x**3 / 3.0 * (math.log(abs(x)) - 1.0 / 3.0)

    @njit(cache=True, nogil=True)
    def _coulomb_row_nb(r, nodes, self_index, out):
        n = nodes.shape[0]
        w_smooth = np.empty(n, dtype=np.float64)
        kern = np.empty(n, dtype=np.float64)
        for j in range(n):
            if j == self_index:
                w_smooth[j] = 2.0 * math.log(8.0 * r)
                kern[j] = math.inf
            else:
                s = nodes[j]
                tot = r + s
                kp = abs(r - s) / tot
                kval = _k_from_kprime_scalar(kp)
                w_smooth[j] = (4.0 * s / tot) * (kval + math.log(abs(r - s)))
                kern[j] = (4.0 * s / tot) * kval
            out[j] = 0.0
        for j in range(n - 1):
            a = nodes[j]
            b = nodes[j + 1]
            half = 0.5 * (b - a)
            if b > _WINDOW_LO * r and a < _WINDOW_HI * r:
                out[j] += half * w_smooth[j]
                out[j + 1] += half * w_smooth[j + 1]
                delta = b - a
                alpha = a - r
                beta = b - r
                i0 = _h0_nb(beta) - _h0_nb(alpha)
                i1 = _h1_nb(beta) - _h1_nb(alpha)
                i2 = _h2_nb(beta) - _h2_nb(alpha)
                phia = 4.0 * a / (r + a)
                phib = 4.0 * b / (r + b)
                q0 = (phia * beta - phib * alpha) / delta
                q1 = (phib - phia) / delta
                out[j] += -(beta * q0 * i0 + (beta * q1 - q0) * i1 - q1 * i2) / delta
                out[j + 1] += -(-alpha * q0 * i0 + (q0 - alpha * q1) * i1 + q1 * i2) / delta
            else:
                out[j] += half * kern[j]
                out[j + 1] += half * kern[j + 1]

    @njit(cache=True, parallel=True, nogil=True)
    def _coulomb_matrix_nb(nodes, tau):
        n = nodes.shape[0]
        m = np.empty((n, n), dtype=np.float64)
        for i in prange(n):
            _coulomb_row_nb(nodes[i], nodes, i, m[i])
        for i in prange(n):
            for j in range(i):
                v = 0.5 * (m[i, j] + tau[j] / tau[i] * m[j, i])
                m[i, j] = v
                m[j, i] = v * tau[i] / tau[j]
        return m

    @njit(cache=True, nogil=True)
    def _sturm_count_nb(d, e2, x):
        n = d.shape[0]
        count = 0
        q = d[0] - x
        if abs(q) < _PIVMIN:
            q = -_PIVMIN
        if q < 0.0:
            count += 1
        for i in range(1, n):
            q = d[i] - x - e2[i - 1] / q
            if abs(q) < _PIVMIN:
                q = -_PIVMIN
            if q < 0.0:
                count += 1
        return count

    @njit(cache=True, nogil=True)
    def _sturm_count_batch_nb(d, e2, xs):
        out = np.empty(xs.shape[0], dtype=np.int64)
        for k in range(xs.shape[0]):
            out[k] = _sturm_count_nb(d, e2, xs[k])
        return out

    @njit(cache=True, nogil=True)
    def _eigenvalues_below_nb(d, e2, bound, abstol, maxiter):
        n = d.shape[0]
        glo = d[0]
        ghi = d[0]
        for i in range(n):
            rad = 0.0
            if i > 0:
                rad += math.sqrt(e2[i - 1])
            if i < n - 1:
                rad += math.sqrt(e2[i])
            if d[i] - rad < glo:
                glo = d[i] - rad
            if d[i] + rad > ghi:
                ghi = d[i] + rad
        m = _sturm_count_nb(d, e2, bound)
        vals = np.empty(m, dtype=np.float64)
        if m == 0:
            return vals
        hi0 = min(bound, ghi + abs(ghi) * 1e-12 + abstol)
        lo = np.full(m, glo)
        hi = np.full(m, hi0)
        eps = 2.220446049250313e-16
        for _ in range(maxiter):
            done = True
            for t in range(m):
                width = hi[t] - lo[t]
                tol = abstol + 4.0 * eps * max(abs(lo[t]), abs(hi[t]))
                if width > tol:
                    done = False
                    mid = 0.5 * (lo[t] + hi[t])
                    if _sturm_count_nb(d, e2, mid) >= t + 1:
                        hi[t] = mid
                    else:
                        lo[t] = mid
            if done:
                break
        for t in range(m):
            vals[t] = 0.5 * (lo[t] + hi[t])
        return vals


def ellint_k_from_kprime(kprime):
    """K as a function of the complementary modulus, vectorized.

    Accepts scalars or arrays with entries in (0, 1]; the caller is
    responsible for domain checks (kprime == 0 means a divergent K).
    """
    if HAVE_NUMBA:
        kp = np.asarray(kprime, dtype=np.float64)
        if kp.ndim == 0:
            return float(_ellint_k_from_kprime_nb(kp.reshape(1))[0])
        return _ellint_k_from_kprime_nb(np.ascontiguousarray(kp.reshape(-1))).reshape(kp.shape)
    return _ellint_k_from_kprime_np(kprime)


def assemble_coulomb_matrix(nodes, tau):
    """Potential matrix P with diag(tau) @ P exactly symmetric.

    Phi = P @ rho approximates the radial Coulomb convolution at the nodes;
    tau = nodes * (dr trapezoid weights).
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    if HAVE_NUMBA:
        return _coulomb_matrix_nb(nodes, tau)
    return _coulomb_matrix_np(nodes, tau)


def coulomb_row(r, nodes, self_index=-1):
    """Raw (unsymmetrized) quadrature row for the potential at radius r."""
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    if HAVE_NUMBA:
        out = np.empty_like(nodes)
        _coulomb_row_nb(float(r), nodes, int(self_index), out)
        return out
    return _coulomb_row_np(float(r), nodes, self_index=int(self_index))


def _assemble_kernel_np(nodes, block=512):
    n = nodes.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        rr = nodes[i0:i1, None]
        ss = nodes[None, :]
        tot = rr + ss
        kp = np.abs(rr - ss) / tot
        # dummy positive value on the diagonal entries of this block
        np.copyto(kp, 1.0, where=kp == 0.0)
        out[i0:i1, :] = 4.0 / tot * _ellint_k_from_kprime_np(kp)
    np.fill_diagonal(out, 0.0)
    return out


def assemble_angular_kernel(nodes):
    """Dense matrix of the angular Coulomb kernel at node pairs.

    Entry (i, j), i != j, is the azimuthal integral of 1/|x - y| over the
    circle pair with radii nodes[i], nodes[j]; the (divergent) diagonal is
    left at zero for the caller to regularize.
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    if HAVE_NUMBA:
        return _assemble_kernel_nb(nodes)
    return _assemble_kernel_np(nodes)


def sturm_count(d, e2, shift) -> int:
    """Number of eigenvalues of the tridiagonal (d, sqrt(e2)) below shift."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    e2 = np.ascontiguousarray(e2, dtype=np.float64)
    if HAVE_NUMBA:
        return int(_sturm_count_nb(d, e2, float(shift)))
    return int(_sturm_count_batch_np(d, e2, float(shift)))


def sturm_count_batch(d, e2, shifts):
    d = np.ascontiguousarray(d, dtype=np.float64)
    e2 = np.ascontiguousarray(e2, dtype=np.float64)
    shifts = np.ascontiguousarray(shifts, dtype=np.float64)
    if HAVE_NUMBA:
        return _sturm_count_batch_nb(d, e2, shifts)
    return _sturm_count_batch_np(d, e2, shifts)


def eigenvalues_below(d, e, bound, abstol=1e-10, maxiter=220):
    """All eigenvalues strictly below ``bound``, ascending, via bisection.

    ``e`` is the off-diagonal of the symmetric tridiagonal matrix.  Each
    eigenvalue is located to absolute accuracy ``abstol`` (or to a few ulp
    for very large magnitudes).
    """
    d = np.ascontiguousarray(d, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    e2 = np.ascontiguousarray(e * e)
    if HAVE_NUMBA:
        return _eigenvalues_below_nb(d, e2, float(bound), float(abstol), int(maxiter))
    return _eigenvalues_below_np(d, e2, float(bound), float(abstol), int(maxiter))


def warmup() -> None:
    """Trigger jit compilation on tiny inputs (useful before thread pools)."""
    nodes = np.array([0.5, 1.0, 2.0])
    t = np.array([0.25, 0.75, 0.5])
    assemble_angular_kernel(nodes)
    assemble_coulomb_matrix(nodes, nodes * t)
    coulomb_row(0.7, nodes, -1)
    ellint_k_from_kprime(np.array([0.5]))
    eigenvalues_below(np.array([2.0, 2.0]), np.array([-1.0]), 10.0)
