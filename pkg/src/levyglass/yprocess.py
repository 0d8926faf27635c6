"""The well-level jump process Y, its Gibbs-averaged rates and stationary law.

Y lives on {+-1}^K and is simulated in rescaled time ``s`` (units of the
observation timescale ``t = exp(log_t_scale)``). Coordinate ``l`` rings at
rate ``t * Z_l(y)``; on a ring it is resampled uniformly, so it actually
switches at half that rate. All rates are handled as logs.

Bond ranks ``l`` and ``L`` are 1-based, as in :mod:`levyglass.wells`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._rng import child_rng, child_seeds
from .dynamics import snapshots, uniform_starts
from .errors import InputError, ResourceCapError
from .hamiltonian import (Constraint, as_array, gibbs_exact, log_conditional_expectation,
                          DEFAULT_ENUM_CAP)
from .harness.stats import tv_plugin
from .wells import TRANSIT, WellLabel, mcmc_pair_average, skeleton_codes


def _code(y, K):
    if isinstance(y, (int, np.integer)):
        if not 0 <= y < (1 << K):
            raise InputError(f"well code {y} out of range")
        return int(y)
    y = tuple(int(s) for s in (y.spins if isinstance(y, WellLabel) else y))
    if len(y) != K or any(s not in (-1, 1) for s in y):
        raise InputError(f"Y state must be a +-1 vector of length {K}")
    return sum(1 << l for l, s in enumerate(y) if s < 0)


def _spins(code, K):
    return tuple(-1 if (code >> l) & 1 else 1 for l in range(K))


def _all_pairs_log_z(A, beta, decomp):
    v, w = decomp.v, decomp.w

    def f(conf):
        s = conf.astype(float)
        m = s * (s @ A)
        return np.logaddexp(-2.0 * beta * m[:, v], -2.0 * beta * m[:, w])
    return f


class RateTable:
    """Lazily filled table of ``log Z_l(y)`` (exact or mcmc), memoized per state.

    Entries are computed once and then only read; concurrent readers may
    duplicate work but always see complete entries.
    """

    def __init__(self, J, beta, decomp, log_t_scale=None, mode="exact",
                 cap=DEFAULT_ENUM_CAP, seed=0, mcmc_options=None):
        if mode not in ("exact", "mcmc"):
            raise InputError(f"unknown mode {mode!r}")
        self.J = as_array(J)
        self.beta = float(beta)
        self.decomp = decomp
        self.K = decomp.K
        self.log_t_scale = decomp.regime.log_t_scale if log_t_scale is None else float(log_t_scale)
        self.mode = mode
        self.cap = cap
        self.seed = seed
        self.mcmc_options = dict(mcmc_options or {})
        self._cache = {}
        self._log_z_well = {}

    def _compute(self, code):
        frozen = self.decomp.frozen_for(_spins(code, self.K))
        if self.mode == "exact":
            table = gibbs_exact(self.J, self.beta, Constraint(frozen=frozen), cap=self.cap)
            self._log_z_well.setdefault(code, table.log_partition)
            lz = np.atleast_1d(log_conditional_expectation(
                table, _all_pairs_log_z(self.J, self.beta, self.decomp)))
            return lz, np.zeros(self.K), False
        lz = np.empty(self.K)
        se = np.empty(self.K)
        flagged = False
        seeds = child_seeds([self.seed, code], self.K) if self.K else []
        for l in range(self.K):
            est = mcmc_pair_average(self.J, self.beta, frozen, int(self.decomp.v[l]),
                                    int(self.decomp.w[l]), use_z=True, seed=int(seeds[l]),
                                    **self.mcmc_options)
            lz[l] = math.log(est.mean)
            se[l] = est.se / est.mean  # standard error of the log-rate
            flagged |= est.flagged
        return lz, se, flagged

    def entry(self, y):
        code = _code(y, self.K)
        hit = self._cache.get(code)
        if hit is None:
            hit = self._cache.setdefault(code, self._compute(code))
        return hit

    def log_rates(self, y):
        """``log Z_l(y)`` for l = 1..K (unscaled, original time units)."""
        return self.entry(y)[0]

    def log_scaled_rates(self, y):
        return self.log_t_scale + self.log_rates(y)

    def log_rate(self, l, y):
        return float(self.log_rates(y)[l - 1])

    def rate(self, l, y):
        return math.exp(self.log_rate(l, y))

    def se(self, l, y):
        return float(self.entry(y)[1][l - 1])

    def flagged(self, y):
        return bool(self.entry(y)[2])

    def log_well_weight(self, y):
        """``log sum_{s in well} exp(beta H)`` (exact mode)."""
        code = _code(y, self.K)
        if code not in self._log_z_well:
            frozen = self.decomp.frozen_for(_spins(code, self.K))
            table = gibbs_exact(self.J, self.beta, Constraint(frozen=frozen), cap=self.cap)
            self._log_z_well.setdefault(code, table.log_partition)
        return self._log_z_well[code]

    def visited(self):
        return sorted(self._cache)

    def to_dict(self):
        return {"mode": self.mode, "log_t_scale": self.log_t_scale, "K": self.K,
                "entries": {str(WellLabel.from_code(c, self.K)):
                            {"log_rate": self._cache[c][0].tolist(),
                             "se_log": self._cache[c][1].tolist()}
                            for c in self.visited()}}


def y_rate(J, beta, decomp, l, y, mode="exact", **kw):
    """``Z_l(y)``: conditional mean of ``Z_v + Z_w`` on the well ``y``."""
    return RateTable(J, beta, decomp, mode=mode, **kw).rate(l, y)


def log_y_rate(J, beta, decomp, l, y, mode="exact", **kw):
    return RateTable(J, beta, decomp, mode=mode, **kw).log_rate(l, y)


@dataclass
class YTrajectory:
    y0: tuple
    times: np.ndarray
    states: np.ndarray  # row k holds the state after jump k; row 0 is y0
    horizon: float

    def state_at(self, s):
        if not 0 <= s <= self.horizon:
            raise InputError(f"s={s} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.times, s, side="right"))
        return tuple(int(x) for x in self.states[k])


def _y_step(rng, lrates, frozen_mask):
    """Waiting time and ringing coordinate from log-rates (Gumbel-max)."""
    lr = np.where(frozen_mask, -np.inf, lrates)
    if not np.isfinite(lr).any():
        return math.inf, -1
    total = logsumexp(lr)
    dt = rng.exponential() * math.exp(-total) if total > -700 else math.inf
    g = lr - np.log(-np.log(rng.random(len(lr))))
    return dt, int(np.argmax(g))


def simulate_Y(rates, y0, duration_s, seed, frozen_coords=()):
    """One path of Y on ``[0, duration_s]`` in rescaled time."""
    K = rates.K
    code = _code(y0, K)
    rng = np.random.default_rng(seed)
    fm = np.zeros(K, dtype=bool)
    fm[[l - 1 for l in frozen_coords]] = True
    t = 0.0
    times, states = [], [_spins(code, K)]
    while K:
        dt, l = _y_step(rng, rates.log_scaled_rates(code), fm)
        t += dt
        if t > duration_s:
            break
        if rng.random() < 0.5:
            code ^= 1 << l
        times.append(t)
        states.append(_spins(code, K))
    return YTrajectory(y0=_spins(_code(y0, K), K), times=np.array(times),
                       states=np.array(states, dtype=np.int8).reshape(-1, K),
                       horizon=float(duration_s))


def simulate_Y_codes(rates, y0_codes, times_s, seed, frozen_coords=()):
    """Well codes of independent Y paths at sorted rescaled times."""
    K = rates.K
    times_s = np.asarray(times_s, dtype=float)
    out = np.empty((len(y0_codes), len(times_s)), dtype=np.int64)
    fm = np.zeros(K, dtype=bool)
    fm[[l - 1 for l in frozen_coords]] = True
    seeds = child_seeds(seed, len(y0_codes))
    horizon = times_s[-1] if len(times_s) else 0.0
    for p, c0 in enumerate(y0_codes):
        rng = np.random.default_rng(int(seeds[p]))
        code, t, k = int(c0), 0.0, 0
        while k < len(times_s):
            dt, l = (_y_step(rng, rates.log_scaled_rates(code), fm) if K else (math.inf, -1))
            t_next = t + dt
            while k < len(times_s) and times_s[k] < t_next:
                out[p, k] = code
                k += 1
            if t_next > horizon:
                break
            t = t_next
            if rng.random() < 0.5:
                code ^= 1 << l
    return out


@dataclass
class YStationary:
    K: int
    log_probs: np.ndarray

    @property
    def probs(self):
        return np.exp(self.log_probs)

    def prob(self, y):
        return float(self.probs[_code(y, self.K)])

    def conditioned(self, fixed):
        """Law conditioned on coordinates ``{l: spin}`` (1-based l)."""
        codes = np.arange(1 << self.K)
        keep = np.ones(len(codes), dtype=bool)
        for l, s in fixed.items():
            bit = (codes >> (l - 1)) & 1
            keep &= bit == (1 if s < 0 else 0)
        lp = np.where(keep, self.log_probs, -np.inf)
        return YStationary(self.K, lp - logsumexp(lp))


def stationary_Y(J, beta, decomp, mode="exact", cap=DEFAULT_ENUM_CAP, rates=None):
    """``pi^Y(C)`` proportional to the Gibbs mass of each well."""
    if mode != "exact":
        raise InputError("stationary_Y supports exact mode only")
    if decomp.K > 20:
        raise ResourceCapError(f"2^{decomp.K} wells is too many to enumerate")
    rates = rates or RateTable(J, beta, decomp, cap=cap)
    lw = np.array([rates.log_well_weight(c) for c in range(1 << decomp.K)])
    return YStationary(decomp.K, lw - logsumexp(lw))


@dataclass
class YGenerator:
    K: int
    Q: np.ndarray
    log_rates: np.ndarray  # (2^K, K) log t Z_l(y); -inf for frozen coordinates
    frozen: tuple


def y_generator(rates, frozen_coords=()):
    """Dense generator of Y in rescaled time (switch rate ``t Z_l / 2``)."""
    K = rates.K
    M = 1 << K
    Q = np.zeros((M, M))
    lr = np.full((M, K), -np.inf)
    for c in range(M):
        r = rates.log_scaled_rates(c)
        for l in range(K):
            if (l + 1) in frozen_coords:
                continue
            lr[c, l] = r[l]
            Q[c, c ^ (1 << l)] = 0.5 * math.exp(r[l])
        Q[c, c] = -Q[c].sum()
    return YGenerator(K, Q, lr, tuple(frozen_coords))


def detailed_balance_residual(stat, gen):
    """Largest ``|log(pi(y) q(y,y')) - log(pi(y') q(y',y))|`` over adjacent pairs."""
    worst = 0.0
    for c in range(1 << gen.K):
        for l in range(gen.K):
            d = c ^ (1 << l)
            a = gen.log_rates[c, l]
            b = gen.log_rates[d, l]
            if not (np.isfinite(a) and np.isfinite(b)):
                continue
            lhs = stat.log_probs[c] + a
            rhs = stat.log_probs[d] + b
            if np.isfinite(lhs) or np.isfinite(rhs):
                worst = max(worst, abs(lhs - rhs))
    return worst


def generator_stationary(gen, start_code=0):
    """Stationary law of the communicating class containing ``start_code``."""
    M = 1 << gen.K
    mask = np.zeros(M, dtype=bool)
    fixed = [l for l in range(gen.K) if (l + 1) in gen.frozen]
    codes = np.arange(M)
    mask[:] = True
    for l in fixed:
        mask &= ((codes >> l) & 1) == ((start_code >> l) & 1)
    idx = np.nonzero(mask)[0]
    Qs = gen.Q[np.ix_(idx, idx)]
    A = np.vstack([Qs.T, np.ones(len(idx))])
    b = np.zeros(len(idx) + 1)
    b[-1] = 1.0
    p, *_ = np.linalg.lstsq(A, b, rcond=None)
    out = np.zeros(M)
    out[idx] = p
    return out


@dataclass
class MPrimeRates:
    plus: float
    minus: float
    log_plus: float
    log_minus: float


def mprime_rates(J, beta, decomp, L, context=(), cap=DEFAULT_ENUM_CAP):
    """Means of ``Z_{v_L} + Z_{w_L}`` over ``W_+-``: every relevant bond satisfied,
    bonds ``1..L-1`` fixed by ``context`` and ``s[v_L] = +-1``."""
    if not 1 <= L <= decomp.K:
        raise InputError(f"L={L} outside 1..{decomp.K}")
    context = tuple(int(c) for c in context)
    if len(context) != L - 1:
        raise InputError(f"context must fix the {L - 1} bonds above L")
    A = as_array(J)
    v, w = decomp.edge(L)
    req = tuple((int(decomp.v[l]), int(decomp.w[l])) for l in range(L, decomp.K))
    out = []
    for sign in (1, -1):
        frozen = decomp.frozen_for(context + (sign,), upto=L)
        table = gibbs_exact(A, beta, Constraint(frozen=frozen, required_sat=req), cap=cap)

        def f(conf, v=v, w=w):
            s = conf.astype(float)
            m = s * (s @ A)
            return np.logaddexp(-2.0 * beta * m[:, v], -2.0 * beta * m[:, w])
        out.append(log_conditional_expectation(table, f))
    return MPrimeRates(math.exp(out[0]), math.exp(out[1]), out[0], out[1])


@dataclass
class SkeletonComparison:
    times_s: list
    K: int
    init: str
    n_paths: int
    seed: object
    marginals_x: list
    marginals_y: list
    tv_single: list
    joint_tv: dict
    transit_fraction: list
    pairwise_fallback: bool
    joint_hist_x: dict = field(default_factory=dict)
    joint_hist_y: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "times_s": self.times_s, "K": self.K, "init": self.init,
            "n_paths": self.n_paths, "seed": self.seed,
            "labels": [str(WellLabel.from_code(c, self.K)) for c in range(1 << self.K)] + ["*"],
            "marginals_x": self.marginals_x, "marginals_y": self.marginals_y,
            "tv_single": self.tv_single, "joint_tv": self.joint_tv,
            "transit_fraction": self.transit_fraction,
            "pairwise_fallback": self.pairwise_fallback,
            "joint_hist_x": self.joint_hist_x, "joint_hist_y": self.joint_hist_y,
        }, sort_keys=True)


def compare_skeleton(J, beta, decomp, times_s, n_paths, seed, log_t_scale=None, rates=None,
                     init="uniform", burn_in=50.0, n_bootstrap=200, joint_cap=4096,
                     cap=DEFAULT_ENUM_CAP):
    """Empirical laws of ``S(X(s_i t))`` and ``Y(s_i)`` and their TV distances.

    ``init="uniform"`` starts X and Y independently uniform. ``init="matched"``
    starts Y from ``S(X(burn_in))`` (uniform if that is transit) and reads X
    at ``burn_in + s_i t``.
    """
    times_s = [float(s) for s in times_s]
    if any(b <= a for a, b in zip(times_s, times_s[1:])):
        raise InputError("times must be strictly increasing")
    if init not in ("uniform", "matched"):
        raise InputError(f"unknown init {init!r}")
    A = as_array(J)
    n = A.shape[0]
    K = decomp.K
    rates = rates or RateTable(A, beta, decomp, log_t_scale=log_t_scale, cap=cap)
    t = math.exp(rates.log_t_scale)
    offset = burn_in if init == "matched" else 0.0
    x_times = ([offset] if init == "matched" else []) + [offset + s * t for s in times_s]
    snap = snapshots(A, beta, uniform_starts(n, n_paths, seed), x_times, seed=seed)
    codes = skeleton_codes(snap.reshape(-1, n), decomp).reshape(n_paths, len(x_times))
    rng = child_rng(seed, 7)
    if init == "matched":
        y0 = codes[:, 0].copy()
        bad = y0 == TRANSIT
        y0[bad] = rng.integers(0, 1 << K, bad.sum())
        codes = codes[:, 1:]
    else:
        y0 = rng.integers(0, 1 << K, n_paths)
    ycodes = simulate_Y_codes(rates, y0, times_s, seed=int(child_seeds(seed, 9)[8]))

    n_cells = (1 << K) + 1  # last cell is transit
    xc = np.where(codes == TRANSIT, n_cells - 1, codes)
    yc = ycodes
    marg_x, marg_y, tv_single, transit = [], [], [], []
    for i in range(len(times_s)):
        hx = np.bincount(xc[:, i], minlength=n_cells)
        hy = np.bincount(yc[:, i], minlength=n_cells)
        marg_x.append(hx.tolist())
        marg_y.append(hy.tolist())
        tv_single.append(tv_plugin(hx, hy, n_bootstrap, seed=i).to_dict())
        transit.append(float(hx[-1] / n_paths))

    joint_x, joint_y = {}, {}
    fallback = n_cells ** len(times_s) > joint_cap
    if not fallback:
        w = n_cells ** np.arange(len(times_s))
        jx = np.bincount(xc @ w, minlength=n_cells ** len(times_s))
        jy = np.bincount(yc @ w, minlength=n_cells ** len(times_s))
        joint = tv_plugin(jx, jy, n_bootstrap, seed=101).to_dict()
        joint_x = {int(k): int(v) for k, v in enumerate(jx) if v}
        joint_y = {int(k): int(v) for k, v in enumerate(jy) if v}
        joint_tv = {"joint": joint}
    else:
        pairs = {}
        for i in range(len(times_s)):
            for j in range(i + 1, len(times_s)):
                jx = np.bincount(xc[:, i] * n_cells + xc[:, j], minlength=n_cells ** 2)
                jy = np.bincount(yc[:, i] * n_cells + yc[:, j], minlength=n_cells ** 2)
                pairs[f"{i},{j}"] = tv_plugin(jx, jy, n_bootstrap, seed=1000 + i * 31 + j).to_dict()
        joint_tv = {"pairwise": pairs,
                    "max_pairwise": max((p["estimate"] for p in pairs.values()), default=0.0)}
    return SkeletonComparison(times_s=times_s, K=K, init=init, n_paths=n_paths, seed=seed,
                              marginals_x=marg_x, marginals_y=marg_y, tv_single=tv_single,
                              joint_tv=joint_tv, transit_fraction=transit,
                              pairwise_fallback=fallback, joint_hist_x=joint_x,
                              joint_hist_y=joint_y)
