"""Independent reference evaluations used as test oracles.

Nothing here imports from ``pandaskill``.
"""
import math


def weng_lin_pl(mus, sigmas, ranks, beta=25.0 / 6.0, kappa=1e-4):
    """Plackett-Luce update for one-player teams, written straight from the
    published Weng-Lin (2011) algorithm with the usual gamma = sigma_i / c.

    Returns a list of (mu, sigma) in input order.
    """
    k = len(mus)
    c = math.sqrt(sum(s * s + beta * beta for s in sigmas))
    strength = [math.exp(m / c) for m in mus]
    out = []
    for i in range(k):
        omega = 0.0
        delta = 0.0
        # sum over every q that finished at or above i
        for q in range(k):
            if ranks[q] > ranks[i]:
                continue
            tied_with_q = sum(1 for s in range(k) if ranks[s] == ranks[q])
            denom = sum(strength[s] for s in range(k) if ranks[s] >= ranks[q])
            p_iq = strength[i] / denom
            indicator = 1.0 if q == i else 0.0
            omega += (indicator - p_iq) / tied_with_q
            delta += p_iq * (1.0 - p_iq) / tied_with_q
        var = sigmas[i] ** 2
        omega *= var / c
        gamma = sigmas[i] / c
        delta *= gamma * var / c ** 2
        new_mu = mus[i] + omega
        new_sigma = sigmas[i] * math.sqrt(max(1.0 - delta, kappa))
        out.append((new_mu, new_sigma))
    return out


def midpoint_ecdf(train, x):
    """Percentile of x among ``train`` by midpoint ranks, linear between points."""
    s = sorted(train)
    n = len(s)
    if x < s[0]:
        return 0.0
    if x > s[-1]:
        return 100.0
    knots = []
    for v in s:
        if not knots or knots[-1][0] != v:
            below = sum(1 for u in s if u < v)
            equal = sum(1 for u in s if u == v)
            knots.append((v, (below + equal / 2.0) / n))
    for (x0, y0), (x1, y1) in zip(knots, knots[1:]):
        if x0 <= x <= x1:
            return 100.0 * (y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    return 100.0 * knots[0][1]


def w1_by_cdf_integral(a, b, grid=200001):
    """1-D Wasserstein-1 as the integral of |F_a - F_b|, by dense quadrature."""
    lo = min(min(a), min(b))
    hi = max(max(a), max(b))
    if hi == lo:
        return 0.0
    sa, sb = sorted(a), sorted(b)
    import bisect

    h = (hi - lo) / (grid - 1)
    total = 0.0
    for j in range(grid - 1):
        x = lo + (j + 0.5) * h
        fa = bisect.bisect_right(sa, x) / len(sa)
        fb = bisect.bisect_right(sb, x) / len(sb)
        total += abs(fa - fb) * h
    return total
