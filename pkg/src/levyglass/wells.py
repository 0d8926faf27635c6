"""Well decomposition, skeleton projection, timescale index and the two-state chain.

Bond ranks are 1-based here (``l = 1`` is the largest relevant bond), matching
the order-statistic notation ``J_(l)``; vertices stay 0-based. For each
relevant edge ``(v_l, w_l)`` with ``v_l < w_l``, the well label records
``s[v_l]``; the spin at ``w_l`` then follows from satisfaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from ._rng import child_rng, child_seeds
from .couplings import relevant_edges
from .errors import InputError, StructuralError
from .hamiltonian import (Constraint, as_array, conditional_expectation,
                          gibbs_exact, pair_rate_functional, DEFAULT_ENUM_CAP)

TRANSIT = -1
DEFAULT_LOG_DELTA = -10.0


@dataclass(frozen=True)
class WellLabel:
    """Skeleton value: a tuple of +-1 spins at ``v_1..v_K``, or Transit (None)."""

    spins: Optional[tuple]

    @property
    def is_transit(self):
        return self.spins is None

    def __str__(self):
        if self.spins is None:
            return "*"
        return "".join("+" if s > 0 else "-" for s in self.spins)

    @classmethod
    def parse(cls, text):
        if text == "*":
            return cls(None)
        if any(c not in "+-" for c in text):
            raise InputError(f"bad well label {text!r}")
        return cls(tuple(1 if c == "+" else -1 for c in text))

    @classmethod
    def transit(cls):
        return cls(None)

    def code(self):
        if self.spins is None:
            return TRANSIT
        return sum(1 << l for l, s in enumerate(self.spins) if s < 0)

    @classmethod
    def from_code(cls, code, K):
        if code == TRANSIT:
            return cls(None)
        return cls(tuple(-1 if (code >> l) & 1 else 1 for l in range(K)))


class WellDecomposition:
    """Relevant edges ``e_1..e_K`` of a coupling matrix at a given regime."""

    def __init__(self, J, regime, require_disjoint=True):
        self.J = J
        self.regime = regime
        self.beta = regime.beta
        rel = relevant_edges(J, regime)
        self.edges = rel.edges
        self.K = rel.K
        A = as_array(J)
        self.v = self.edges[:, 0].copy()
        self.w = self.edges[:, 1].copy()
        self.signs = np.sign(A[self.v, self.w]).astype(np.int8)
        self.abs_j = np.abs(A[self.v, self.w])
        # log-time scale of each bond: 2 beta |J_(l)|
        self.log_scales = 2.0 * self.beta * self.abs_j
        verts, counts = np.unique(self.edges, return_counts=True)
        shared = verts[counts > 1]
        self.disjoint = len(shared) == 0
        if require_disjoint and not self.disjoint:
            raise StructuralError("relevant edges are not vertex-disjoint",
                                  offending=[int(x) for x in shared])
        self.vertices = verts

    @property
    def n(self):
        return as_array(self.J).shape[0]

    def edge(self, l):
        return int(self.v[l - 1]), int(self.w[l - 1])

    def frozen_for(self, label_spins, upto=None):
        """Frozen vertex map putting bonds ``1..upto`` in their satisfied state."""
        upto = self.K if upto is None else upto
        if len(label_spins) < upto:
            raise InputError("label shorter than the number of bonds to freeze")
        out = {}
        for l in range(upto):
            s = int(label_spins[l])
            if s not in (-1, 1):
                raise InputError("label entries must be +-1")
            out[int(self.v[l])] = s
            out[int(self.w[l])] = s * int(self.signs[l])
        return out

    def reconstruct(self, label):
        """Spins on all relevant vertices implied by a non-transit label."""
        if label.is_transit:
            raise InputError("transit label has no reconstruction")
        return self.frozen_for(label.spins)

    def bond_arrays(self):
        return (self.v.astype(np.int64), self.w.astype(np.int64),
                self.signs.astype(np.int64))

    def to_dict(self):
        return {"K": self.K, "edges": self.edges.tolist(),
                "abs_j": self.abs_j.tolist(), "regime": self.regime.to_dict()}


def skeleton(sigma, decomp):
    s = np.asarray(getattr(sigma, "spins", sigma))
    code = int(skeleton_codes(s[None, :], decomp)[0])
    return WellLabel.from_code(code, decomp.K)


def skeleton_codes(configs, decomp):
    """Vectorized skeleton: well codes per row, ``TRANSIT`` (-1) off-well."""
    c = np.asarray(configs)
    if decomp.K == 0:
        return np.zeros(c.shape[0], dtype=np.int64)
    sv = c[:, decomp.v].astype(np.int64)
    sw = c[:, decomp.w].astype(np.int64)
    sat = np.all(sv * sw == decomp.signs[None, :], axis=1)
    codes = ((sv < 0).astype(np.int64) << np.arange(decomp.K)).sum(axis=1)
    return np.where(sat, codes, TRANSIT)


@dataclass(frozen=True)
class TimescaleIndex:
    L: int
    case: int


def timescale_index(decomp, time=None, log_time=None, log_delta=DEFAULT_LOG_DELTA):
    """Critical bond index ``L`` at a time and its window case.

    Comparisons happen in log-time. ``L`` counts the bonds whose window end
    ``log(1/delta) + 2 beta |J_(l)|`` has not been passed; adjacent interval
    endpoints belong to the larger index. Case 1 means the time sits within a
    factor ``1/delta`` of ``exp(2 beta |J_(L)|)``.
    """
    if log_time is None:
        if time is None or time <= 0:
            raise InputError("give a positive time or a log_time")
        log_time = math.log(time)
    if not log_delta < 0:
        raise InputError("delta must lie in (0, 1)")
    w = -log_delta
    g = decomp.log_scales
    L = int(np.count_nonzero(log_time <= w + g))
    hits = np.nonzero(np.abs(log_time - g) <= w)[0]
    if len(hits) > 1:
        raise StructuralError("time lies in the resonance windows of two bonds",
                              offending=tuple(int(h) + 1 for h in hits[:2]))
    case = 1 if (L >= 1 and abs(log_time - g[L - 1]) <= w) else 2
    return TimescaleIndex(L=L, case=case)


@dataclass(frozen=True)
class TwoStateChain:
    """Jump chain on +-1 that waits Exp(rate) in each state, then resamples fairly."""

    rate_plus: float
    rate_minus: float
    se_plus: float = 0.0
    se_minus: float = 0.0
    mode: str = "exact"
    flagged: bool = False

    def __post_init__(self):
        if not (self.rate_plus > 0 and self.rate_minus > 0):
            raise InputError("two-state rates must be positive")

    def stationary(self):
        """``(P(+), P(-))``, proportional to the mean holding times."""
        a, b = 1.0 / self.rate_plus, 1.0 / self.rate_minus
        return a / (a + b), b / (a + b)

    def rate(self, m):
        return self.rate_plus if m > 0 else self.rate_minus

    def prob_same(self, m0, t):
        """``P(M(t) = m0)`` in closed form."""
        a, b = self.rate_plus / 2.0, self.rate_minus / 2.0  # effective switch rates
        pi_p = b / (a + b)
        p0 = 1.0 if m0 > 0 else 0.0
        pt = pi_p + (p0 - pi_p) * math.exp(-(a + b) * t)
        return pt if m0 > 0 else 1.0 - pt


def _two_state_constraints(decomp, L, context):
    if not 1 <= L <= decomp.K:
        raise InputError(f"L={L} outside 1..{decomp.K}")
    context = tuple(int(c) for c in (context or ()))
    if len(context) != L - 1:
        raise InputError(f"context must fix the {L - 1} bonds above L")
    out = []
    for sign in (1, -1):
        out.append(decomp.frozen_for(context + (sign,), upto=L))
    return out


def two_state_rates(J, beta, decomp, L, context=(), mode="exact", cap=DEFAULT_ENUM_CAP,
                    seed=0, n_batches=40, batch_len=None, pilot_len=2000.0):
    """Conditional means of ``lambda_{v_L} + lambda_{w_L}`` over ``C_+-``.

    ``C_+-`` freezes bonds ``1..L-1`` per ``context`` and bond ``L`` satisfied
    with ``s[v_L] = +-1``; all other spins are free.
    """
    v, w = decomp.edge(L)
    rates, ses, flagged = [], [], False
    for k, frozen in enumerate(_two_state_constraints(decomp, L, context)):
        if mode == "exact":
            table = gibbs_exact(J, beta, Constraint(frozen=frozen), cap=cap)
            rates.append(conditional_expectation(table, pair_rate_functional(J, beta, v, w)))
            ses.append(0.0)
        elif mode == "mcmc":
            est = mcmc_pair_average(J, beta, frozen, v, w, use_z=False,
                                    seed=int(child_seeds(seed, 2)[k]), n_batches=n_batches,
                                    batch_len=batch_len, pilot_len=pilot_len)
            rates.append(est.mean)
            ses.append(est.se)
            flagged |= est.flagged
        else:
            raise InputError(f"unknown mode {mode!r}")
    return TwoStateChain(rates[0], rates[1], ses[0], ses[1], mode=mode, flagged=flagged)


@dataclass(frozen=True)
class McmcEstimate:
    mean: float
    se: float
    tau: float
    burn_in: float
    n_batches: int
    flagged: bool


def integrated_autocorr_time(x, dt, window_c=5.0):
    """Sokal-windowed integrated autocorrelation time of a regular time series."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    var = x @ x / n
    if var <= 0:
        return dt, False
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (var * n)
    tau = 0.5
    for k in range(1, n):
        tau += acf[k]
        if k >= window_c * tau:
            return max(tau, 0.5) * 2 * dt, True
    return max(tau, 0.5) * 2 * dt, False


def mcmc_pair_average(J, beta, frozen, v, w, use_z, seed, n_batches=40,
                      batch_len=None, pilot_len=2000.0, n_pilot=4000):
    """Time average of ``g(m_v) + g(m_w)`` under the restricted dynamics."""
    A = as_array(J)
    n = A.shape[0]
    fro = np.zeros(n, dtype=np.bool_)
    rng = child_rng(seed, 0)
    x0 = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)
    for u, s in frozen.items():
        fro[u] = True
        x0[u] = s
    s1, s2 = child_seeds(seed, 2)
    dt = pilot_len / n_pilot
    series = _kernels.sample_grid(A, beta, x0, fro, v, w, use_z, dt, n_pilot, int(s1))
    tau, converged = integrated_autocorr_time(series[n_pilot // 10:], dt)
    burn = 10.0 * tau
    blen = batch_len if batch_len is not None else max(50.0 * tau, 10.0)
    means = _kernels.time_average(A, beta, x0, fro, v, w, use_z, burn, blen,
                                  n_batches, int(s2))
    mean = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(n_batches))
    lag1 = np.corrcoef(means[:-1], means[1:])[0, 1] if np.std(means) > 0 else 0.0
    flagged = (not converged) or (abs(lag1) > 0.4)
    return McmcEstimate(mean, se, tau, burn, n_batches, bool(flagged))


def simulate_two_state(chain, m0, duration, seed):
    """State of the two-state chain at ``duration``."""
    return int(simulate_two_state_many(chain, m0, duration, 1, seed)[0])


def simulate_two_state_many(chain, m0, duration, n_paths, seed):
    if m0 not in (-1, 1):
        raise InputError("m0 must be +-1")
    rng = np.random.default_rng(seed)
    state = np.full(n_paths, m0, dtype=np.int64)
    t = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    while alive.any():
        idx = np.nonzero(alive)[0]
        rate = np.where(state[idx] > 0, chain.rate_plus, chain.rate_minus)
        t[idx] += rng.exponential(1.0, len(idx)) / rate
        done = t[idx] > duration
        alive[idx[done]] = False
        ring = idx[~done]
        state[ring] = np.where(rng.random(len(ring)) < 0.5, 1, -1)
    return state
