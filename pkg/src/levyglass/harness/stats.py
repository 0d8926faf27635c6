"""Statistical utilities: plug-in TV with bootstrap, KS, chi-square, DKW bands."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as _st

from ..errors import InputError


@dataclass
class StatReport:
    """Estimate with uncertainty, sample sizes and seed lineage."""

    name: str
    estimate: float
    ci: tuple = (math.nan, math.nan)
    se: float = math.nan
    p_value: float = math.nan
    statistic: float = math.nan
    threshold: float = math.nan
    passed: bool = True
    n: int = 0
    seed: object = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["ci"] = list(self.ci)
        return d


def _as_counts(h):
    h = np.asarray(h, dtype=float)
    if h.ndim != 1:
        raise InputError("histograms must be one-dimensional")
    if h.sum() <= 0:
        raise InputError("empty histogram")
    if np.any(h < 0):
        raise InputError("negative histogram count")
    return h


def tv_distance(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


@dataclass
class TVEstimate:
    estimate: float
    ci: tuple
    bias: float
    null_mean: float
    null_ci: tuple
    n_a: int
    n_b: int
    n_bootstrap: int

    def to_dict(self):
        d = asdict(self)
        d["ci"], d["null_ci"] = list(self.ci), list(self.null_ci)
        return d


def tv_plugin(hist_a, hist_b, n_bootstrap=200, seed=0, level=0.95):
    """Plug-in TV between two count histograms on a common support.

    ``ci`` is the percentile bootstrap interval and ``bias`` the bootstrap
    bias estimate. ``null_mean``/``null_ci`` describe the plug-in TV of two
    samples of the same sizes drawn from the pooled law, i.e. the level a
    zero distance would produce.
    """
    a, b = _as_counts(hist_a), _as_counts(hist_b)
    if a.shape != b.shape:
        raise InputError("histograms must share a support")
    est = tv_distance(a, b)
    na, nb = int(round(a.sum())), int(round(b.sum()))
    if n_bootstrap <= 0:
        return TVEstimate(est, (est, est), 0.0, math.nan, (math.nan, math.nan), na, nb, 0)
    rng = np.random.default_rng(seed)
    pa, pb = a / a.sum(), b / b.sum()
    pooled = (a + b) / (a.sum() + b.sum())
    ba = rng.multinomial(na, pa, size=n_bootstrap)
    bb = rng.multinomial(nb, pb, size=n_bootstrap)
    boot = 0.5 * np.abs(ba / na - bb / nb).sum(axis=1)
    na_ = rng.multinomial(na, pooled, size=n_bootstrap)
    nb_ = rng.multinomial(nb, pooled, size=n_bootstrap)
    null = 0.5 * np.abs(na_ / na - nb_ / nb).sum(axis=1)
    lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
    return TVEstimate(
        estimate=est,
        ci=(float(np.quantile(boot, lo)), float(np.quantile(boot, hi))),
        bias=float(boot.mean() - est),
        null_mean=float(null.mean()),
        null_ci=(float(np.quantile(null, lo)), float(np.quantile(null, hi))),
        n_a=na, n_b=nb, n_bootstrap=n_bootstrap)


def tv_to_law(counts, probs, n_bootstrap=200, seed=0, level=0.95):
    """Plug-in TV of an empirical histogram to a known law, with bootstrap CI."""
    c = _as_counts(counts)
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    est = tv_distance(c, p)
    n = int(round(c.sum()))
    rng = np.random.default_rng(seed)
    boot = 0.5 * np.abs(rng.multinomial(n, c / c.sum(), size=n_bootstrap) / n - p).sum(axis=1)
    null = 0.5 * np.abs(rng.multinomial(n, p, size=n_bootstrap) / n - p).sum(axis=1)
    lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
    return TVEstimate(est, (float(np.quantile(boot, lo)), float(np.quantile(boot, hi))),
                      float(boot.mean() - est), float(null.mean()),
                      (float(np.quantile(null, lo)), float(np.quantile(null, hi))),
                      n, 0, n_bootstrap)


def ks_exponential(samples, rate):
    """One-sample KS test against Exp(rate)."""
    res = _st.kstest(np.asarray(samples, dtype=float), "expon", args=(0.0, 1.0 / rate))
    return float(res.statistic), float(res.pvalue)


def ks_two_sample(a, b):
    res = _st.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def chi2_gof(counts, probs, min_expected=5.0):
    """Chi-square goodness of fit; cells with small expectation are pooled."""
    c = np.asarray(counts, dtype=float)
    p = np.asarray(probs, dtype=float)
    e = p / p.sum() * c.sum()
    order = np.argsort(e)
    cc, ee = [], []
    acc_c = acc_e = 0.0
    for i in order:
        acc_c += c[i]
        acc_e += e[i]
        if acc_e >= min_expected:
            cc.append(acc_c)
            ee.append(acc_e)
            acc_c = acc_e = 0.0
    if acc_e > 0 and ee:
        cc[-1] += acc_c
        ee[-1] += acc_e
    if len(ee) < 2:
        return 0.0, 1.0
    res = _st.chisquare(cc, ee)
    return float(res.statistic), float(res.pvalue)


def dkw_epsilon(n, confidence=0.99):
    """Half-width of the DKW band for an empirical CDF of ``n`` samples."""
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


def empirical_survival(samples, r):
    x = np.sort(np.asarray(samples, dtype=float))
    return 1.0 - np.searchsorted(x, r, side="right") / len(x)


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan


def bonferroni(alpha, m):
    return alpha / max(1, m)
