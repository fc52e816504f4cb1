"""Hot numeric kernels.

Every kernel exists twice: a ``*_nb`` version compiled with numba and a
``*_np`` version in vectorized numpy. The unsuffixed public name binds to
one of them according to :data:`prcurves._accel.USE_NUMBA`. Both versions
reduce in the same block order, so each one is bit-stable across thread
counts; the two backends agree to rounding (~1e-15 relative).
"""
import numpy as np

from ._accel import USE_NUMBA, njit, prange

# Elements per numpy temporary in the chunked fallbacks.
_CHUNK = 1 << 22


# --------------------------------------------------------------------------
# joint probabilities down a prefix tree
# --------------------------------------------------------------------------

def joint_from_tables_np(tables):
    """Sequence probabilities in lexicographic order.

    ``tables[l]`` has shape ``(V**l, V)``: the conditional at depth ``l``
    for every length-``l`` context in lexicographic order. Partial
    products are carried one level at a time.
    """
    joint = np.asarray(tables[0], dtype=np.float64).reshape(-1)
    for table in tables[1:]:
        joint = (joint[:, None] * table).reshape(-1)
    return joint


@njit
def _joint_level_nb(joint, table):
    n, v = table.shape
    out = np.empty(n * v)
    for i in range(n):
        base = joint[i]
        for j in range(v):
            out[i * v + j] = base * table[i, j]
    return out


def joint_from_tables_nb(tables):
    joint = np.ascontiguousarray(tables[0], dtype=np.float64).reshape(-1)
    for table in tables[1:]:
        joint = _joint_level_nb(joint, np.ascontiguousarray(table, dtype=np.float64))
    return joint


# --------------------------------------------------------------------------
# PR sums: alpha = sum min(lam p, q), beta = sum min(p, q / lam)
# --------------------------------------------------------------------------

@njit(parallel=True)
def _pr_sums_kernel(p, q, lambdas, n_blocks):
    n = p.shape[0]
    m = lambdas.shape[0]
    size = n // n_blocks
    part_a = np.zeros((n_blocks, m))
    part_b = np.zeros((n_blocks, m))
    for blk in prange(n_blocks):
        lo = blk * size
        hi = n if blk == n_blocks - 1 else lo + size
        for j in range(m):
            lam = lambdas[j]
            sa = 0.0
            sb = 0.0
            for i in range(lo, hi):
                pi = p[i]
                qi = q[i]
                x = lam * pi
                sa += x if x < qi else qi
                y = qi / lam
                sb += pi if pi < y else y
            part_a[blk, j] = sa
            part_b[blk, j] = sb
    alpha = np.zeros(m)
    beta = np.zeros(m)
    for blk in range(n_blocks):
        for j in range(m):
            alpha[j] += part_a[blk, j]
            beta[j] += part_b[blk, j]
    return alpha, beta


def pr_sums_nb(p, q, lambdas, n_blocks=1):
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    lambdas = np.ascontiguousarray(lambdas, dtype=np.float64)
    n_blocks = max(1, min(int(n_blocks), p.shape[0]))
    return _pr_sums_kernel(p, q, lambdas, n_blocks)


def pr_sums_np(p, q, lambdas, n_blocks=1):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n = p.shape[0]
    n_blocks = max(1, min(int(n_blocks), n))
    size = n // n_blocks
    alpha = np.zeros(lambdas.shape[0])
    beta = np.zeros(lambdas.shape[0])
    for blk in range(n_blocks):
        lo = blk * size
        hi = n if blk == n_blocks - 1 else lo + size
        pb, qb = p[lo:hi], q[lo:hi]
        for j, lam in enumerate(lambdas):
            alpha[j] += np.minimum(lam * pb, qb).sum()
            beta[j] += np.minimum(pb, qb / lam).sum()
    return alpha, beta


# --------------------------------------------------------------------------
# k-NN manifold estimate
# --------------------------------------------------------------------------

@njit
def _kth_nn_sqdist_kernel(x, k):
    n, d = x.shape
    out = np.empty(n)
    dist = np.empty(n - 1)
    for i in range(n):
        m = 0
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for c in range(d):
                diff = x[i, c] - x[j, c]
                s += diff * diff
            dist[m] = s
            m += 1
        out[i] = np.partition(dist, k - 1)[k - 1]
    return out


@njit
def _in_any_ball_kernel(y, x, radii_sq):
    n_y, d = y.shape
    n_x = x.shape[0]
    inside = np.zeros(n_y, dtype=np.bool_)
    for i in range(n_y):
        for j in range(n_x):
            s = 0.0
            for c in range(d):
                diff = y[i, c] - x[j, c]
                s += diff * diff
                if s > radii_sq[j]:
                    break
            if s <= radii_sq[j]:
                inside[i] = True
                break
    return inside


def kth_nn_sqdist_nb(x, k):
    """Squared distance from each row of ``x`` to its k-th nearest other row."""
    return _kth_nn_sqdist_kernel(np.ascontiguousarray(x, dtype=np.float64), int(k))


def in_any_ball_nb(y, x, radii_sq):
    """Mask over rows of ``y``: inside at least one ball (centre x_j, radius^2 r_j)."""
    return _in_any_ball_kernel(
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(radii_sq, dtype=np.float64),
    )


def _sqdist_rows(a, b):
    # Direct differences, not the Gram expansion: d(x, x) must be exactly 0.
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _row_chunk(n_other, dim):
    return max(1, _CHUNK // max(1, n_other * dim))


def kth_nn_sqdist_np(x, k):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty(n)
    step = _row_chunk(n, x.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d2 = _sqdist_rows(x[lo:hi], x)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.partition(d2, k - 1, axis=1)[:, k - 1]
    return out


def in_any_ball_np(y, x, radii_sq):
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    radii_sq = np.asarray(radii_sq, dtype=np.float64)
    inside = np.zeros(y.shape[0], dtype=bool)
    step = _row_chunk(x.shape[0], x.shape[1])
    for lo in range(0, y.shape[0], step):
        hi = min(y.shape[0], lo + step)
        inside[lo:hi] = (_sqdist_rows(y[lo:hi], x) <= radii_sq[None, :]).any(axis=1)
    return inside


# --------------------------------------------------------------------------
# minimal number of top tokens covering a probability mass
# --------------------------------------------------------------------------

# Slack on the cumulative mass comparison so 0.5 + 0.3 counts as >= 0.8.
MASS_TOL = 1e-12


@njit
def _cover_counts_kernel(probs, p):
    # selection of the running maximum; rows are short and the loop usually
    # stops after a few picks, so this beats a per-row sort
    n, v = probs.shape
    out = np.empty(n, dtype=np.int64)
    row = np.empty(v)
    for i in range(n):
        row[:] = probs[i]
        total = 0.0
        k = v
        for j in range(v):
            best = 0
            for u in range(1, v):
                if row[u] > row[best]:
                    best = u
            total += row[best]
            row[best] = -1.0
            if total >= p - MASS_TOL:
                k = j + 1
                break
        out[i] = k
    return out


def cover_counts_nb(probs, p):
    """For each row, the fewest largest entries whose sum reaches ``p``."""
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    return _cover_counts_kernel(probs.reshape(-1, probs.shape[-1]), float(p)).reshape(
        probs.shape[:-1]
    )


def cover_counts_np(probs, p):
    probs = np.asarray(probs, dtype=np.float64)
    ordered = -np.sort(-probs, axis=-1)
    csum = np.cumsum(ordered, axis=-1)
    k = (csum < p - MASS_TOL).sum(axis=-1) + 1
    return np.minimum(k, probs.shape[-1]).astype(np.int64)


if USE_NUMBA:
    joint_from_tables = joint_from_tables_nb
    pr_sums = pr_sums_nb
    kth_nn_sqdist = kth_nn_sqdist_nb
    in_any_ball = in_any_ball_nb
    cover_counts = cover_counts_nb
else:
    joint_from_tables = joint_from_tables_np
    pr_sums = pr_sums_np
    kth_nn_sqdist = kth_nn_sqdist_np
    in_any_ball = in_any_ball_np
    cover_counts = cover_counts_np
