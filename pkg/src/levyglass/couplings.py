"""Heavy-tailed coupling matrices: sampling, order statistics, structural audits.

Vertices are 0-based throughout. ``rank_index[0]`` is the edge carrying the
largest ``|J|`` (the first order statistic), ``rank_index[1]`` the second, and
so on.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, UnsupportedVariantError

PARETO = "pareto"
GENERAL = "general"
PLANTED = "planted"
_VARIANTS = (PARETO, GENERAL, PLANTED)

SERIAL_FORMAT = "levyglass.coupling"
SERIAL_VERSION = 1


@dataclass(frozen=True)
class CouplingLaw:
    """Law of the i.i.d. upper-triangular couplings.

    ``pareto`` is the symmetric density ``alpha/(2n) |x|^-(1+alpha)`` on
    ``|x| >= n^(-1/alpha)``. ``general`` takes a tabulated survival function
    ``P(|X| > t)`` and rescales by ``b_n = inf{t : P(|X| > t) <= 1/n}``.
    ``planted`` overrides selected edges on top of ``base`` (zero if None);
    ``base_scale`` multiplies the sampled base values.
    """

    alpha: float
    n: int
    variant: str = PARETO
    survival_t: Optional[tuple] = None
    survival_p: Optional[tuple] = None
    base: Optional["CouplingLaw"] = None
    planted: tuple = ()
    base_scale: float = 1.0
    b_n: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise InputError(f"unknown coupling variant {self.variant!r}")
        if not 0.0 < self.alpha < 2.0:
            raise InputError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not 0.0 < self.alpha < 1.0:
            warnings.warn(f"alpha={self.alpha} is outside (0, 1), where the "
                          "metastability results apply", stacklevel=3)
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n}")
        if self.variant == GENERAL:
            t = np.asarray(self.survival_t, dtype=float)
            p = np.asarray(self.survival_p, dtype=float)
            if t.ndim != 1 or t.shape != p.shape or t.size < 2:
                raise InputError("survival table needs two equal-length arrays")
            if np.any(np.diff(t) <= 0) or t[0] <= 0:
                raise InputError("survival abscissae must be positive and increasing")
            if np.any(np.diff(p) > 0) or p[0] > 1 or p[-1] <= 0:
                raise InputError("survival values must be non-increasing in (0, 1]")
            object.__setattr__(self, "b_n", _bisect_b_n(self, self.n))
        if self.variant == PLANTED:
            seen = set()
            for (i, j), value in self.planted:
                if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
                    raise InputError(f"planted edge ({i}, {j}) out of range for n={self.n}")
                key = (min(i, j), max(i, j))
                if key in seen:
                    raise InputError(f"planted edge {key} listed twice")
                if not math.isfinite(value):
                    raise InputError(f"planted value for {key} is not finite")
                seen.add(key)
            if self.base is not None and self.base.n != self.n:
                raise InputError("planted base law must have the same n")

    @classmethod
    def pareto(cls, alpha, n):
        return cls(alpha=alpha, n=n)

    @classmethod
    def general(cls, alpha, n, t, survival):
        return cls(alpha=alpha, n=n, variant=GENERAL,
                   survival_t=tuple(float(x) for x in t),
                   survival_p=tuple(float(x) for x in survival))

    @classmethod
    def planted_law(cls, n, edges, base=None, base_scale=1.0, alpha=0.5):
        """``edges`` maps (i, j) to a coupling value."""
        items = tuple(sorted(((min(i, j), max(i, j)), float(v))
                             for (i, j), v in dict(edges).items()))
        return cls(alpha=alpha, n=n, variant=PLANTED, base=base,
                   planted=items, base_scale=base_scale)

    def survival(self, t):
        """``P(|X| > t)`` of the unnormalized general-tail variable."""
        if self.variant != GENERAL:
            raise UnsupportedVariantError("survival table only exists for general laws")
        t = np.asarray(t, dtype=float)
        tt = np.asarray(self.survival_t)
        pp = np.asarray(self.survival_p)
        out = np.ones_like(t)
        inside = (t >= tt[0]) & (t <= tt[-1])
        with np.errstate(divide="ignore"):
            out[inside] = np.exp(np.interp(np.log(t[inside]), np.log(tt), np.log(pp)))
        beyond = t > tt[-1]
        out[beyond] = pp[-1] * (t[beyond] / tt[-1]) ** (-self.alpha)
        return out

    def _inverse_survival(self, u):
        tt = np.log(np.asarray(self.survival_t))
        pp = np.log(np.asarray(self.survival_p))
        lu = np.log(u)
        # reverse to increasing abscissae; drop flat runs
        xp, idx = np.unique(pp[::-1], return_index=True)
        fp = tt[::-1][idx]
        out = np.exp(np.interp(lu, xp, fp))
        tail = lu < pp[-1]
        out[tail] = np.exp(tt[-1]) * np.exp((pp[-1] - lu[tail]) / self.alpha)
        out[lu > pp[0]] = np.exp(tt[0])
        return out

    def to_dict(self):
        d = {"alpha": self.alpha, "n": self.n, "variant": self.variant}
        if self.variant == GENERAL:
            d["survival_t"] = list(self.survival_t)
            d["survival_p"] = list(self.survival_p)
        if self.variant == PLANTED:
            d["planted"] = [[i, j, v] for (i, j), v in self.planted]
            d["base"] = None if self.base is None else self.base.to_dict()
            d["base_scale"] = self.base_scale
        return d

    @classmethod
    def from_dict(cls, d):
        variant = d.get("variant", PARETO)
        if variant == PARETO:
            return cls.pareto(d["alpha"], d["n"])
        if variant == GENERAL:
            return cls.general(d["alpha"], d["n"], d["survival_t"], d["survival_p"])
        base = d.get("base")
        return cls.planted_law(
            d["n"], {(int(i), int(j)): v for i, j, v in d.get("planted", [])},
            base=None if base is None else cls.from_dict(base),
            base_scale=d.get("base_scale", 1.0), alpha=d.get("alpha", 0.5))


def _bisect_b_n(law, n, rtol=1e-12):
    target = 1.0 / n
    lo = 0.0
    hi = law.survival_t[-1]
    while law.survival(np.array([hi]))[0] > target:
        hi *= 2.0
    if law.survival(np.array([law.survival_t[0]]))[0] <= target:
        hi = law.survival_t[0]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if law.survival(np.array([mid]))[0] <= target:
            hi = mid
        else:
            lo = mid
    return hi


class CouplingMatrix:
    """Immutable symmetric coupling matrix with an order-statistics index."""

    def __init__(self, values, alpha=None, seed=None, law=None):
        values = np.array(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError("coupling matrix must be square")
        if not np.allclose(values, values.T, rtol=0, atol=0):
            raise InputError("coupling matrix must be symmetric")
        if np.any(np.diag(values) != 0):
            raise InputError("coupling matrix must have zero diagonal")
        values.setflags(write=False)
        self.values = values
        self.n = values.shape[0]
        self.alpha = alpha if alpha is not None else (law.alpha if law else None)
        self.seed = seed
        self.law = law
        iu, ju = np.triu_indices(self.n, k=1)
        mags = np.abs(values[iu, ju])
        # descending |J|, ties broken lexicographically on (i, j)
        order = np.lexsort((ju, iu, -mags))
        self.rank_index = np.stack([iu[order], ju[order]], axis=1)
        self.rank_index.setflags(write=False)
        self.abs_sorted = mags[order]
        self.abs_sorted.setflags(write=False)

    def __repr__(self):
        return f"CouplingMatrix(n={self.n}, alpha={self.alpha}, seed={self.seed})"

    def __getitem__(self, ij):
        return self.values[ij]

    def top_edges(self, k):
        return self.rank_index[:k]

    def order_statistic(self, l):
        """``|J|`` of the edge at rank ``l`` (0-based)."""
        return float(self.abs_sorted[l]) if l < len(self.abs_sorted) else 0.0

    def upper(self):
        iu, ju = np.triu_indices(self.n, k=1)
        return self.values[iu, ju]

    # serialization -------------------------------------------------------

    def to_json(self):
        return json.dumps({
            "format": SERIAL_FORMAT,
            "version": SERIAL_VERSION,
            "n": self.n,
            "alpha": self.alpha,
            "seed": self.seed,
            "law": None if self.law is None else self.law.to_dict(),
            "upper": [float(x) for x in self.upper()],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format") != SERIAL_FORMAT or d.get("version") != SERIAL_VERSION:
            raise InputError("not a version-1 coupling matrix document")
        n = int(d["n"])
        vals = np.zeros((n, n))
        iu, ju = np.triu_indices(n, k=1)
        vals[iu, ju] = d["upper"]
        vals[ju, iu] = d["upper"]
        law = None if d.get("law") is None else CouplingLaw.from_dict(d["law"])
        return cls(vals, alpha=d.get("alpha"), seed=d.get("seed"), law=law)

    def write_csv(self, path):
        """Rows ``i, j, J_ij, rank`` over all i < j, in rank order."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "J_ij", "rank"])
            for r, (i, j) in enumerate(self.rank_index):
                writer.writerow([int(i), int(j), repr(float(self.values[i, j])), r])


def sample_matrix(law, seed):
    """Draw a coupling matrix; bit-identical for equal ``(law, seed)``."""
    rng = np.random.default_rng(seed)
    n = law.n
    m = n * (n - 1) // 2
    upper = _sample_upper(law, m, rng)
    vals = np.zeros((n, n))
    iu, ju = np.triu_indices(n, k=1)
    vals[iu, ju] = upper
    vals[ju, iu] = upper
    if law.variant == PLANTED:
        for (i, j), v in law.planted:
            vals[i, j] = vals[j, i] = v
    return CouplingMatrix(vals, alpha=law.alpha, seed=seed, law=law)


def _sample_upper(law, m, rng):
    if law.variant == PLANTED:
        if law.base is None:
            return np.zeros(m)
        return law.base_scale * _sample_upper(law.base, m, rng)
    u = 1.0 - rng.random(m)  # uniform on (0, 1]
    sign = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    if law.variant == PARETO:
        mag = law.n ** (-1.0 / law.alpha) * u ** (-1.0 / law.alpha)
    else:
        mag = law._inverse_survival(u) / law.b_n
    return sign * mag


def tail_probability(law, r):
    """``P(|J| > r n^(-1/alpha))`` under the Pareto law."""
    if law.variant != PARETO:
        raise UnsupportedVariantError("tail_probability is defined for the Pareto law only")
    if r < 1:
        return 1.0
    return float(r) ** (-law.alpha)


@dataclass(frozen=True)
class RegimeParams:
    """Temperature and timescale parameters ``(beta, a, gamma)``.

    ``threshold`` is the relevance cut ``(a / 2 beta) n^gamma`` and
    ``log_t_scale = a n^gamma`` the log of the observation timescale.
    """

    beta: float
    a: float
    gamma: float
    alpha: float
    n: int
    rho: Optional[float] = None
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.beta <= 0 or self.a <= 0:
            raise InputError("beta and a must be positive")
        if self.threshold is None:
            object.__setattr__(self, "threshold",
                               self.a / (2.0 * self.beta) * self.n ** self.gamma)
        if self.rho is None:
            lo, hi = self.rho_window
            if lo < hi:
                object.__setattr__(self, "rho", 0.5 * (lo + hi))
        elif not self.rho_window[0] < self.rho < self.rho_window[1]:
            raise InputError(f"rho={self.rho} outside its admissible window {self.rho_window}")

    @classmethod
    def from_log_time(cls, beta, log_t, n, gamma=1.0, alpha=0.5, rho=None):
        """Regime whose timescale is ``exp(log_t)``; the cut is ``log_t / 2 beta``."""
        return cls(beta=beta, a=log_t / n ** gamma, gamma=gamma, alpha=alpha,
                   n=n, rho=rho, threshold=log_t / (2.0 * beta))

    @classmethod
    def from_threshold(cls, beta, threshold, n, gamma=1.0, alpha=0.5, rho=None):
        return cls(beta=beta, a=2.0 * beta * threshold / n ** gamma, gamma=gamma,
                   alpha=alpha, n=n, rho=rho, threshold=threshold)

    @property
    def xi(self):
        return (1.0 - self.alpha) / (1.0 + 2.0 * self.alpha)

    @property
    def gamma0(self):
        a = self.alpha
        return (5.0 * a + 1.0) / (2.0 * a * (2.0 * a + 1.0))

    @property
    def log_t_scale(self):
        return 2.0 * self.beta * self.threshold

    @property
    def rho_window(self):
        """Open interval of admissible rho; empty when lower >= upper."""
        a = self.alpha
        lo = 1.0 / (2.0 * a)
        if a >= 1:
            return lo, lo
        return lo, (self.gamma - self.xi - 1.0) / (1.0 - a)

    def conditions(self):
        a, g, xi = self.alpha, self.gamma, self.xi
        out = {
            "gamma0_below_inverse_alpha": self.gamma0 < 1.0 / a,
            "gamma_in_window": self.gamma0 < g < 1.0 / a,
            "spacing_exponent": 2 * a * g + xi > 2,
            "gap_exponent": g - xi > 0.5 + 0.5 / a,
        }
        if self.rho is not None:
            out["rho_lower"] = self.rho > 0.5 / a
            out["rho_upper"] = 1 - a * self.rho + self.rho < g - xi
        return out

    def to_dict(self):
        return {"beta": self.beta, "a": self.a, "gamma": self.gamma,
                "alpha": self.alpha, "n": self.n, "rho": self.rho,
                "threshold": self.threshold}


@dataclass(frozen=True)
class RelevantEdges:
    edges: np.ndarray
    vertices: np.ndarray

    @property
    def K(self):
        return len(self.edges)


def relevant_edges(J, regime):
    """Edges with ``|J| >= threshold`` (inclusive), in rank order."""
    k = int(np.searchsorted(-J.abs_sorted, -regime.threshold, side="right"))
    edges = np.array(J.rank_index[:k], dtype=np.int64).reshape(-1, 2)
    return RelevantEdges(edges=edges, vertices=np.unique(edges))


def expected_relevant_count(regime):
    """Mean number of relevant edges under the Pareto law."""
    b, a, g, al, n = regime.beta, regime.a, regime.gamma, regime.alpha, regime.n
    return (2 * b) ** al / (2 * a ** al) * n ** (1 - al * g)


@dataclass
class DiagnosticsReport:
    n: int
    K: int
    rho: float
    row_pair_rows: list
    max_nonmax_row_sum: float
    row_sum_bound: float
    total_nonmax_sum_large_rows: float
    total_nonmax_bound: float
    small_entry_sum: float
    small_entry_bound: float
    annulus: tuple
    annulus_count: int
    spacing_bins: dict
    spacing_violation: Optional[tuple]
    shared_vertices: list
    passes: dict

    @property
    def all_pass(self):
        return all(self.passes.values())

    def lemma_passes(self):
        """Pass flags grouped by the three structural lemmas on J."""
        p = self.passes
        return {
            "row_estimates": p["no_row_pair"] and p["row_sum"] and p["small_entry_sum"],
            "gaps": p["annulus_empty"] and p["large_rows_total"],
            "spacing": p["spacing"],
        }


def structure_diagnostics(J, regime, c_row=1.0, c_small=1.0, d_total=1.0):
    """Audit the structural events the metastability picture relies on.

    ``c_row``, ``c_small`` and ``d_total`` are the caller's choice of the
    existential constants in the row-sum, small-entry and large-row bounds;
    the raw statistics are reported alongside.
    """
    n, al = J.n, regime.alpha
    if regime.rho is None:
        raise InputError("regime has an empty rho window; pass gamma in (gamma0, 1/alpha)")
    rho = regime.rho
    A = np.abs(np.asarray(J.values))
    big, med = n ** rho, n ** (1.0 / (2 * al))

    n_big = (A >= big).sum(axis=1)
    n_med = (A >= med).sum(axis=1)
    pair_rows = [int(i) for i in np.nonzero((n_big >= 1) & (n_med >= 2))[0]]

    row_max = A.max(axis=1) if n > 1 else np.zeros(n)
    nonmax = A.sum(axis=1) - row_max
    large_rows = row_max >= big
    max_nonmax = float(nonmax[large_rows].max()) if large_rows.any() else 0.0
    total_nonmax = float(nonmax[large_rows].sum())
    row_bound = c_row * med
    total_bound = d_total * n ** (1 - al * rho + 1 / (2 * al))

    up = np.abs(J.upper())
    small_sum = float(up[up < big].sum())
    small_bound = c_small * n ** (1 - al * rho + rho) * math.log(n)

    theta = n ** (-regime.xi)
    scale = regime.a / (2 * regime.beta) * n ** regime.gamma
    ann = (scale * (1 - theta), scale * (1 + theta))
    ann_count = int(((up >= ann[0]) & (up <= ann[1])).sum())

    base, width = n ** regime.gamma, n ** (regime.gamma - regime.xi)
    hits = np.floor((up[up >= base] - base) / width).astype(np.int64)
    ls, counts = np.unique(hits, return_counts=True)
    bins = {int(l): int(c) for l, c in zip(ls, counts)}
    violation = None
    for l in sorted(bins):
        if bins[l] + bins.get(l + 1, 0) >= 2:
            violation = (l, l + 1)
            break

    rel = relevant_edges(J, regime)
    verts, vc = np.unique(rel.edges, return_counts=True)
    shared = [int(v) for v in verts[vc > 1]]

    passes = {
        "no_row_pair": not pair_rows,
        "row_sum": max_nonmax <= row_bound,
        "small_entry_sum": small_sum <= small_bound,
        "annulus_empty": ann_count == 0,
        "large_rows_total": total_nonmax <= total_bound,
        "spacing": violation is None,
        "disjoint_top_edges": not shared,
    }
    return DiagnosticsReport(
        n=n, K=rel.K, rho=rho, row_pair_rows=pair_rows,
        max_nonmax_row_sum=max_nonmax, row_sum_bound=row_bound,
        total_nonmax_sum_large_rows=total_nonmax, total_nonmax_bound=total_bound,
        small_entry_sum=small_sum, small_entry_bound=small_bound,
        annulus=ann, annulus_count=ann_count, spacing_bins=bins,
        spacing_violation=violation, shared_vertices=shared, passes=passes)
