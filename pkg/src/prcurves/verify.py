"""Oracle suite: each property pits a library result against an independent route.

``run_all()`` returns one :class:`CheckResult` per property. The CLI's
``verify`` command and the acceptance tests both go through here.
"""
import itertools
import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from . import artcase, losses, prmetrics
from .dist import FactorizedSeqDist, temper_seq
from .nn import model as nn_model
from .nn.optim import AdamState, adam_step


@dataclass
class CheckResult:
    name: str
    criterion: int
    passed: bool
    value: float
    tolerance: float
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.criterion}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# --------------------------------------------------------------------------
# 1, 2: closed form against enumeration, and alpha = lam * beta
# --------------------------------------------------------------------------

ART_GRID = [
    artcase.ArtCaseParams(4, 2, 2, 1, 2, 0.5, 0.7, 0.1),
    artcase.ArtCaseParams(6, 4, 3, 1, 3, 0.5, 0.8, 0.2),
    artcase.ArtCaseParams(6, 3, 3, 2, 1, 1 / 3, 0.5, 0.05),
    artcase.ArtCaseParams(8, 4, 4, 2, 4, 0.25, 0.4, 0.3),
    artcase.ArtCaseParams(8, 6, 3, 3, 1, 0.5, 0.9, 0.4),
    artcase.ArtCaseParams(5, 4, 3, 1, 2, 0.75, 0.95, 0.15),
    artcase.ArtCaseParams(7, 2, 4, 4, 1, 0.5, 0.6, 0.5),
    artcase.ArtCaseParams(6, 6, 2, 1, 2, 0.5, 0.75, 0.0),
    artcase.ArtCaseParams(4, 3, 4, 3, 2, 2 / 3, 0.9, 0.25),
    artcase.ArtCaseParams(8, 2, 2, 2, 1, 0.5, 1.0, 0.2),
]
ART_TEMPS = (0.3, 0.7, 1.0, 1.6, 3.0)
ART_LAMBDAS = (0.05, 0.3, 0.7, 1.0, 1.5, 4.0)


def _art_lambdas(params, t):
    lo, hi, _, _ = artcase.regime_boundaries(params, t)
    extra = [x for x in (lo, hi) if x > 0]
    return np.unique(np.array(list(ART_LAMBDAS) + extra))


def closed_form_points(grid=ART_GRID, temps=ART_TEMPS):
    """``(params, t, lam, closed-form point, enumerated point)`` for every combination."""
    out = []
    for params in grid:
        P = artcase.build_p(params)
        Q = artcase.build_q(params)
        for t in temps:
            lams = _art_lambdas(params, t)
            curve = prmetrics.pr_curve_exact(P, temper_seq(Q, t), lams)
            for lam, enum_pt in zip(lams, curve):
                out.append((params, t, float(lam), artcase.pr_closed_form(params, t, float(lam)), enum_pt))
    return out


def check_closed_form(tol=1e-9):
    pts = closed_form_points()
    dev = max(max(abs(c.alpha - e.alpha), abs(c.beta - e.beta)) for _, _, _, c, e in pts)
    ok = len(pts) >= 200 and dev <= tol
    return CheckResult("closed_form_vs_enumeration", 1, ok, dev, tol,
                       f"{len(pts)} (params, t, lambda) points, max |dev| = {dev:.2e}")


def _random_pair(rng, V, L):
    def rand_table(sparse):
        tables = []
        for depth in range(L):
            t = rng.random((V**depth, V)) ** 3
            if sparse:
                t *= rng.random(t.shape) < 0.6
                t[np.arange(len(t)), rng.integers(0, V, len(t))] += 0.1
            tables.append(t / t.sum(axis=1, keepdims=True))
        return FactorizedSeqDist.from_tables(tables)

    return rand_table(True), rand_table(False)


def check_pr_identity(tol=1e-9, n_random=40, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    count = 0
    for _, _, lam, c, e in closed_form_points():
        worst = max(worst, abs(c.alpha - lam * c.beta), abs(e.alpha - lam * e.beta))
        count += 2
    lams = np.array([1e-3, 0.1, 0.5, 1.0, 2.0, 10.0, 1e3])
    for _ in range(n_random):
        V, L = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        P, Q = _random_pair(rng, V, L)
        for pt in prmetrics.pr_curve_exact(P, Q, lams):
            worst = max(worst, abs(pt.alpha - pt.lam * pt.beta))
            count += 1
    return CheckResult("pr_identity", 2, worst <= tol, worst, tol,
                       f"{count} points, max |alpha - lam*beta| = {worst:.2e}")


# --------------------------------------------------------------------------
# 3: the sparsity bound
# --------------------------------------------------------------------------

def check_sparsity_bound(n_models=100, seed=1):
    rng = np.random.default_rng(seed)
    temps = (0.25, 0.5, 1.0, 2.0, 5.0)
    lams = np.array([0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0])
    violations = 0
    worst = -math.inf
    n_checked = 0
    for _ in range(n_models):
        V, L = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        logits = [rng.normal(0.0, rng.uniform(0.2, 3.0), size=(V**d, V)) for d in range(L)]
        Z = max(prmetrics.max_logit_gap(z) for z in logits)
        # sparse reference: a random subset of sequences, at least one
        p = rng.random(V**L) * (rng.random(V**L) < rng.uniform(0.05, 0.6))
        p[rng.integers(0, V**L)] += 1.0
        p /= p.sum()
        supp = int((p > 0).sum())
        for t in temps:
            q = prmetrics.joint_probs(prmetrics.logits_seq_dist(logits, t))
            for pt in prmetrics._curve_from_arrays(p, q, lams, V):
                bound = prmetrics.sparsity_bound(supp, V, L, Z, t, pt.lam).alpha_raw
                worst = max(worst, pt.alpha - bound)
                violations += pt.alpha > bound
                n_checked += 1
    return CheckResult("sparsity_bound", 3, violations == 0, violations, 0,
                       f"{n_models} models, {n_checked} (t, lambda) checks, {violations} violations, "
                       f"max alpha - bound = {worst:.3g}")


# --------------------------------------------------------------------------
# 4: eps0 separates eventual fall and rise of lambda_min(t)
# --------------------------------------------------------------------------

EPS0_BASES = [
    (10, 2, 0.5, 0.7), (10, 5, 0.4, 0.6), (20, 4, 0.5, 0.8), (20, 10, 0.5, 0.725),
    (50, 10, 0.2, 0.3), (100, 50, 0.5, 0.725), (100, 10, 0.5, 0.725), (100, 20, 0.25, 0.5),
    (30, 6, 0.5, 0.9), (40, 30, 0.5, 0.65), (12, 3, 1 / 3, 0.45), (16, 8, 0.25, 0.4),
    (60, 12, 0.5, 0.6), (25, 5, 0.4, 0.55), (80, 40, 0.75, 0.9),
]
EPS0_MARGIN = 0.3


def eps0_cases():
    """Parameter sets with ``eps`` a clear margin below or above ``eps0``."""
    out = []
    for V, K, rho, a in EPS0_BASES:
        base = artcase.ArtCaseParams(V, K, 3, 1, 2, rho, a, 0.0)
        e0 = artcase.epsilon0(base).value
        for eps in (e0 * (1 - EPS0_MARGIN), e0 * (1 + EPS0_MARGIN), 0.5):
            if 0 < eps <= 0.5 and abs(eps - e0) >= EPS0_MARGIN * e0:
                out.append(artcase.ArtCaseParams(V, K, 3, 1, 2, rho, a, eps))
    return out


def eventual_slope_sign(params, t_end=100.0, h=1e-3):
    """Sign of a central difference of ``lambda_min`` at the end of ``[1, t_end]``."""
    up = artcase.middle_factor(params, t_end * (1 + h))
    down = artcase.middle_factor(params, t_end * (1 - h))
    return int(np.sign(up - down))


def check_eps0(min_sets=20):
    cases = eps0_cases()
    agree = 0
    bad = []
    for params in cases:
        expected = -1 if params.epsilon < artcase.epsilon0(params).value else 1
        got = eventual_slope_sign(params)
        if got == expected:
            agree += 1
        else:
            bad.append((params.V, params.K, params.epsilon))
    ok = len(cases) >= min_sets and agree == len(cases)
    detail = f"{agree}/{len(cases)} parameter sets agree"
    if bad:
        detail += f"; disagree at {bad[:3]}"
    return CheckResult("eps0_threshold", 4, ok, agree / max(len(cases), 1), 1.0, detail)


# --------------------------------------------------------------------------
# 5: transformer gradients
# --------------------------------------------------------------------------

def grad_check(arch, seed=0, h=1e-4):
    """Worst per-coordinate relative error of analytic vs central-difference gradients, per group."""
    cfg = nn_model.ModelConfig(5, 3, n_layers=2, d_model=8, n_heads=2, d_ff=12,
                               arch=arch, dtype="float64", seed=seed)
    rng = np.random.default_rng(seed)
    params = nn_model.init_params(cfg)
    for k in params:
        # move away from the near-symmetric init so every path carries signal
        params[k] = params[k] + rng.standard_normal(params[k].shape) * 0.3
    tokens = rng.integers(0, 5, (4, 3))
    w = rng.random((4, 3))
    _, grads = nn_model.loss_and_grads(params, cfg, tokens, w)
    worst = {}
    for name, p in params.items():
        err = 0.0
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = nn_model.loss_and_grads(params, cfg, tokens, w)[0]
            p[idx] = old - h
            down = nn_model.loss_and_grads(params, cfg, tokens, w)[0]
            p[idx] = old
            fd = (up - down) / (2 * h)
            an = grads[name][idx]
            err = max(err, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        worst[name] = err
    return worst


def check_gradients(tol=1e-4):
    worst_all = 0.0
    worst_name = ""
    n_groups = 0
    for arch in ("llama", "simple"):
        for name, err in grad_check(arch).items():
            n_groups += 1
            if err > worst_all:
                worst_all, worst_name = err, f"{arch}:{name}"
    return CheckResult("gradient_finite_difference", 5, worst_all < tol, worst_all, tol,
                       f"{n_groups} parameter groups, worst rel. err {worst_all:.2e} ({worst_name})")


# --------------------------------------------------------------------------
# 6: loss-family identities
# --------------------------------------------------------------------------

def _short_trajectory(spec, steps=5, seed=0):
    cfg = nn_model.ModelConfig(6, 4, n_layers=2, d_model=8, n_heads=2, d_ff=16, seed=seed)
    params = nn_model.init_params(cfg)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(seed)
    buffer = losses.QuantileBuffer(spec.buffer_size)
    for _ in range(steps):
        tokens = rng.integers(0, 6, (16, 4))
        lp, cache = nn_model.token_logprobs(params, cfg, tokens, keep_cache=True)
        w, _ = losses.compute_weights(spec, lp, buffer)
        grads = nn_model.backward(params, cfg, cache, losses.weighted_nll_grad(lp, w.astype(lp.dtype)))
        adam_step(params, grads, state, 1e-2, 0.1)
    return params


def check_loss_identities(n_pairs=10**4, tol=1e-12, seed=2):
    nll = _short_trajectory(losses.LossSpec("NLL"))
    cdiv = _short_trajectory(losses.LossSpec("CDiv", alpha=1.0))
    same = all(np.array_equal(nll[k], cdiv[k]) for k in nll)
    rng = np.random.default_rng(seed)
    q = rng.random(n_pairs)
    gamma = rng.uniform(1e-6, 1.0, n_pairs)
    seq_len = 8
    pos = rng.integers(1, seq_len + 1, n_pairs)
    dev = float(np.max(np.abs(
        losses.weights_lambda_pr(q, gamma, 1.0, pos, seq_len) - losses.weights_tailr(q, gamma)
    )))
    ok = same and dev <= tol
    return CheckResult("loss_identities", 6, ok, dev, tol,
                       f"CDiv(alpha=1) trajectory bit-identical to NLL: {same}; "
                       f"max |LambdaPR(lambda=1) - TaiLr| over {n_pairs} pairs = {dev:.1e}")


# --------------------------------------------------------------------------
# 7: population fixed points
# --------------------------------------------------------------------------

def tailr_fixed_point(p, gamma, steps=20000, lr=0.5):
    """Iterate the detached-weight gradient of the TaiLr objective on softmax logits.

    Reads ``losses.weights_tailr`` at call time, so a fault injected there
    shows up here.
    """
    theta = np.log(p)
    for _ in range(steps):
        q = np.exp(theta - theta.max())
        q /= q.sum()
        w = losses.weights_tailr(q, gamma)
        pw = p * w
        # d/dtheta of -sum_i p_i w_i log q_i with w held fixed
        grad = -(pw - pw.sum() * q)
        theta -= lr * grad
    q = np.exp(theta - theta.max())
    return q / q.sum()


def _project_capped_simplex(y, total, cap):
    """Euclidean projection onto ``{x : sum x = total, 0 <= x <= cap}``.

    ``sum(clip(y - tau, 0, cap))`` is piecewise linear and decreasing in
    ``tau`` with kinks at ``y`` and ``y - cap``; locate the crossing exactly.
    """
    knots = np.sort(np.concatenate([y, y - cap]))
    mass = np.clip(y[None, :] - knots[:, None], 0.0, cap).sum(axis=1)
    j = int(np.searchsorted(-mass, -total, side="left"))
    if j == 0:
        tau = knots[0]
    else:
        m0, m1 = mass[j - 1], mass[j]
        frac = 0.0 if m0 == m1 else (m0 - total) / (m0 - m1)
        tau = knots[j - 1] + frac * (knots[j] - knots[j - 1])
    return np.clip(y - tau, 0.0, cap)


def truncr_projected_gradient(p, kept, steps=3000):
    """Minimize ``-sum_{kept} p log Q`` with ``Q <= delta`` on kept and ``Q >= delta`` elsewhere.

    Excluded ids sit at ``delta`` (more mass there is wasted), so for a
    fixed ``delta`` the kept block lives on a capped simplex and is solved
    by projected gradient; ``delta`` itself is a bounded scalar search.
    """
    p = np.asarray(p, dtype=np.float64)
    kept = np.asarray(kept, dtype=bool)
    V = len(p)
    n_out = int((~kept).sum())
    pk = p[kept]

    def inner(delta):
        total = 1.0 - n_out * delta
        x = np.full(len(pk), total / len(pk))
        step = 0.5 * delta**2
        for _ in range(steps):
            x = _project_capped_simplex(x + step * pk / np.maximum(x, 1e-12), total, delta)
        return x

    def objective(delta):
        return -float(np.sum(pk * np.log(np.maximum(inner(delta), 1e-300))))

    hi = 1.0 / n_out if n_out else 1.0
    res = minimize_scalar(objective, bounds=(1.0 / V, hi), method="bounded", options={"xatol": 1e-10})
    q = np.empty(V)
    q[kept] = inner(res.x)
    q[~kept] = res.x
    return q, res.x


TAILR_CASES = [
    (np.array([0.3, 0.7]), 0.1),
    (np.array([0.45, 0.55]), 0.3),
    (np.array([0.1, 0.15, 0.2, 0.25, 0.3]), 0.05),
    (np.array([0.12, 0.18, 0.2, 0.22, 0.28]), 0.2),
]
TRUNCR_CASES = [
    (np.array([0.1, 0.2, 0.3, 0.4]), [True, True, True, False]),
    (np.array([0.05, 0.15, 0.3, 0.5]), [True, True, False, False]),
    (np.array([0.3, 0.25, 0.2, 0.15, 0.1]), [False, True, True, True, True]),
    (np.array([0.05, 0.1, 0.15, 0.2, 0.22, 0.28]), [True, True, True, True, False, False]),
    (np.array([0.4, 0.35, 0.25]), [True, True, False]),
]


def check_tailr_fixed_point(tol=1e-4):
    worst = 0.0
    for p, gamma in TAILR_CASES:
        q = tailr_fixed_point(p, gamma)
        worst = max(worst, float(np.max(np.abs(q - losses.tailr_optimum(p, gamma)))))
    return CheckResult("tailr_fixed_point", 7, worst <= tol, worst, tol,
                       f"{len(TAILR_CASES)} interior cases, sup-norm gap {worst:.2e}")


def check_truncr_structure(tol=1e-4):
    worst = 0.0
    for p, kept in TRUNCR_CASES:
        q_pg, _ = truncr_projected_gradient(p, kept)
        q_cf, _, _ = losses.truncr_optimum(p, np.array(kept))
        worst = max(worst, float(np.max(np.abs(q_pg - q_cf))))
    return CheckResult("truncr_min_structure", 7, worst <= tol, worst, tol,
                       f"{len(TRUNCR_CASES)} instances, sup-norm gap to min(delta, gamma P) {worst:.2e}")


# --------------------------------------------------------------------------
# 8: pass@k
# --------------------------------------------------------------------------

def pass_at_k_bruteforce(n, c, k):
    items = [1] * c + [0] * (n - c)
    hits = total = 0
    for subset in itertools.combinations(range(n), k):
        total += 1
        hits += any(items[i] for i in subset)
    return Fraction(hits, total)


def check_pass_at_k(n_max=12):
    mismatches = 0
    count = 0
    for n in range(1, n_max + 1):
        for c in range(n + 1):
            for k in range(1, n + 1):
                count += 1
                mismatches += prmetrics.pass_at_k_exact(n, c, k) != pass_at_k_bruteforce(n, c, k)
    anchor = prmetrics.pass_at_k_exact(5, 2, 2) == Fraction(7, 10)
    ok = mismatches == 0 and anchor
    return CheckResult("pass_at_k_exhaustive", 8, ok, mismatches, 0,
                       f"{count} (n, c, k) triples, {mismatches} mismatches; pass@2(n=5, c=2) = 0.7: {anchor}")


PROPERTIES = [
    check_closed_form,
    check_pr_identity,
    check_sparsity_bound,
    check_eps0,
    check_gradients,
    check_loss_identities,
    check_tailr_fixed_point,
    check_truncr_structure,
    check_pass_at_k,
]


def run_all(report=None):
    """Run every property; ``report`` (if given) is called with each result as it lands."""
    results = []
    for prop in PROPERTIES:
        t0 = time.perf_counter()
        try:
            res = prop()
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            res = CheckResult(prop.__name__.removeprefix("check_"), 0, False, math.nan, math.nan,
                              f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if report is not None:
            report(res)
    return results
