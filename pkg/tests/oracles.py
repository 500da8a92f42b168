"""Independent reference computations used by the tests.

Nothing here calls into the package's kernels: distances and attachment
probabilities are evaluated from scratch in multiprecision arithmetic.
"""
import mpmath
import numpy as np
from scipy import stats as sps


def mp_distance(a, b, torus):
    s = mpmath.mpf(0)
    for x, y in zip(a, b):
        t = abs(mpmath.mpf(float(x)) - mpmath.mpf(float(y)))
        if torus and t > mpmath.mpf("0.5"):
            t = 1 - t
        s += t * t
    return mpmath.sqrt(s)


def mp_log_f(kind, param, r):
    if kind == "constant":
        return mpmath.mpf(0)
    if kind == "power_law":
        return -mpmath.mpf(param) * mpmath.log(r)
    t = mpmath.log(1 / r)
    return t ** mpmath.mpf(param) if t > 0 else mpmath.mpf(0)


def exact_attachment_probs(positions, degree, x, F, torus, dps=80):
    """P(v) = deg(v) F(|X_v - x|) / sum_u deg(u) F(|X_u - x|), to ``dps`` digits."""
    with mpmath.workdps(dps):
        logs = [mpmath.log(int(d)) + mp_log_f(F.kind, F.param, mp_distance(p, x, torus))
                for p, d in zip(positions, degree)]
        m = max(logs)
        w = [mpmath.exp(l - m) for l in logs]
        tot = mpmath.fsum(w)
        return np.array([float(v / tot) for v in w])


def chisquare_pvalue(draws, probs, min_expected=5.0):
    """Chi-square goodness of fit, pooling categories with small expected counts."""
    N = len(draws)
    obs = np.bincount(draws, minlength=len(probs)).astype(float)
    exp = np.asarray(probs) * N
    big = exp >= min_expected
    o = list(obs[big])
    e = list(exp[big])
    if (~big).any():
        o.append(obs[~big].sum())
        e.append(exp[~big].sum())
    o, e = np.array(o), np.array(e)
    if len(o) < 2:
        return 1.0 if o.sum() == N else 0.0
    keep = e > 0
    if (o[~keep] > 0).any():
        return 0.0
    o, e = o[keep], e[keep]
    e = e * o.sum() / e.sum()
    return float(sps.chisquare(o, e).pvalue)


def brute_nearest(pts, q, torus):
    d = np.abs(pts - q)
    if torus:
        d = np.minimum(d, 1.0 - d)
    r2 = (d * d).sum(axis=1)
    return int(np.argmin(r2))
