"""Continuous-time heat-bath Glauber dynamics and trajectory observables.

Two engines share one law on spin trajectories:

* ``NAIVE``: every free vertex carries a rate-1 clock; on a ring the spin is
  resampled from its conditional law (so it flips with probability lambda_v).
* ``REJECTION_FREE``: only flips are generated, with total rate
  ``Lambda = sum_v lambda_v`` and the flipping vertex picked proportionally.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._rng import child_rng, child_seeds
from .errors import InputError, ResourceCapError
from .hamiltonian import Constraint, as_array, gibbs_exact, DEFAULT_ENUM_CAP
from .wells import WellLabel, skeleton_codes


class EngineKind(enum.Enum):
    NAIVE = "naive"
    REJECTION_FREE = "rejection_free"

    @classmethod
    def parse(cls, x):
        if isinstance(x, cls):
            return x
        try:
            return cls(str(x).lower().replace("-", "_"))
        except ValueError:
            raise InputError(f"unknown engine {x!r}") from None


def _frozen_mask(n, frozen):
    mask = np.zeros(n, dtype=np.bool_)
    for v in (frozen or ()):
        if not 0 <= int(v) < n:
            raise InputError(f"frozen vertex {v} out of range")
        mask[int(v)] = True
    return mask


def _spin_vector(x0, n):
    s = np.asarray(getattr(x0, "spins", x0), dtype=np.int8)
    if s.shape != (n,) or not np.all(np.abs(s) == 1):
        raise InputError("initial configuration must be a +-1 vector of length n")
    return s.copy()


@dataclass
class Trajectory:
    """Initial state plus the ordered list of events on ``[0, horizon]``."""

    x0: np.ndarray
    times: np.ndarray
    vertices: np.ndarray
    new_spins: np.ndarray
    horizon: float
    absorbed: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def _check(self, t):
        if not 0.0 <= t <= self.horizon:
            raise InputError(f"time {t} outside [0, {self.horizon}]")

    def state_at(self, t):
        return self.states_at([t])[0]

    def states_at(self, ts):
        ts = np.asarray(ts, dtype=float)
        order = np.argsort(ts)
        out = np.empty((len(ts), len(self.x0)), dtype=np.int8)
        s = self.x0.copy()
        k = 0
        for i in order:
            self._check(ts[i])
            while k < len(self.times) and self.times[k] <= ts[i]:
                s[self.vertices[k]] = self.new_spins[k]
                k += 1
            out[i] = s
        return out

    def final_state(self):
        return self.states_at([self.horizon])[0]

    def labels(self, decomp, ts):
        return [WellLabel.from_code(int(c), decomp.K)
                for c in skeleton_codes(self.states_at(ts), decomp)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "vertex", "new_spin"])
            for t, v, s in zip(self.times, self.vertices, self.new_spins):
                w.writerow([repr(float(t)), int(v), int(s)])

    def summary(self):
        return {"n_events": len(self), "horizon": self.horizon,
                "absorbed": self.absorbed, **self.meta}


def run(J, beta, x0, duration, engine=EngineKind.REJECTION_FREE, frozen=(), seed=0,
        record_null=False):
    """One trajectory of the (restricted) dynamics on ``[0, duration]``."""
    A = as_array(J)
    n = A.shape[0]
    if duration < 0:
        raise InputError("duration must be non-negative")
    engine = EngineKind.parse(engine)
    s0 = _spin_vector(x0, n)
    mask = _frozen_mask(n, frozen)
    s_kernel = int(child_seeds(seed, 1)[0])
    times, verts, spins, count, absorbed = _kernels.run_path(
        A, float(beta), s0, float(duration), mask, engine is EngineKind.NAIVE,
        bool(record_null and engine is EngineKind.NAIVE), s_kernel, 1024)
    if count and np.any(mask[verts]):
        raise AssertionError("restricted dynamics touched a frozen vertex")
    return Trajectory(x0=s0, times=times.copy(), vertices=verts.copy(),
                      new_spins=spins.copy(), horizon=float(duration),
                      absorbed=bool(absorbed),
                      meta={"engine": engine.value, "seed": seed, "beta": beta})


def uniform_starts(n, n_paths, seed):
    rng = child_rng(seed, 1)
    return np.where(rng.random((n_paths, n)) < 0.5, -1, 1).astype(np.int8)


def snapshots(J, beta, x0s, times, engine=EngineKind.REJECTION_FREE, frozen=(), seed=0):
    """States of independent paths at sorted times, shape (paths, times, n)."""
    A = as_array(J)
    n = A.shape[0]
    x0s = np.ascontiguousarray(x0s, dtype=np.int8)
    if x0s.ndim != 2 or x0s.shape[1] != n:
        raise InputError("x0s must have shape (paths, n)")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise InputError("snapshot times must be sorted and non-negative")
    engine = EngineKind.parse(engine)
    mask = _frozen_mask(n, frozen)
    seeds = child_seeds(seed, x0s.shape[0])
    out, events = _kernels.snapshot_batch(A, float(beta), x0s, times, mask,
                                          engine is EngineKind.NAIVE, seeds)
    return out


def autocorrelation(traj, t, t2):
    """``(1/N) sum_v X_v(t) X_v(t2)`` along one trajectory."""
    if t > t2:
        raise InputError("need t <= t2")
    a, b = traj.states_at([t, t2])
    return float(np.mean(a.astype(float) * b))


def mean_autocorrelation(J, beta, t, t2, n_runs, seed, x0s=None, engine=EngineKind.REJECTION_FREE):
    """Mean and standard error of ``C(t, t2)`` over independent runs."""
    n = as_array(J).shape[0]
    if x0s is None:
        x0s = uniform_starts(n, n_runs, seed)
    snap = snapshots(J, beta, x0s, [t, t2], engine=engine, seed=seed)
    c = np.mean(snap[:, 0, :].astype(float) * snap[:, 1, :], axis=1)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(len(c)))


@dataclass
class EscapeSample:
    times: np.ndarray
    censored: np.ndarray
    horizon: float

    @property
    def censor_fraction(self):
        return float(self.censored.mean()) if len(self.censored) else 0.0

    @property
    def observed(self):
        return self.times[~self.censored]

    def to_json(self):
        return json.dumps({"times": self.times.tolist(),
                           "censored": self.censored.tolist(),
                           "horizon": self.horizon})


def _check_in_well(x0s, decomp, well):
    codes = skeleton_codes(x0s, decomp)
    want = well.code() if isinstance(well, WellLabel) else int(well)
    if want < 0 or np.any(codes != want):
        raise InputError("initial configuration is not in the requested well")


def escape_times(J, beta, decomp, well, x0s, horizon=math.inf, frozen=(), seed=0):
    """First times any relevant edge becomes unsatisfied, one per start."""
    A = as_array(J)
    x0s = np.ascontiguousarray(np.atleast_2d(x0s), dtype=np.int8)
    _check_in_well(x0s, decomp, well)
    bv, bw, bs = decomp.bond_arrays()
    mask = _frozen_mask(A.shape[0], frozen)
    if not math.isfinite(horizon) and (decomp.K == 0 or mask[bv].any() or mask[bw].any()):
        raise InputError("an escape that can never happen needs a finite horizon")
    seeds = child_seeds(seed, x0s.shape[0])
    times, cens = _kernels.escape_batch(A, float(beta), x0s, bv, bw, bs,
                                        float(horizon), mask, seeds)
    return EscapeSample(times=times, censored=cens, horizon=float(horizon))


def escape_time(J, beta, decomp, well, x0, seed=0, horizon=math.inf, frozen=()):
    """Single escape time; returns ``(time, censored)``."""
    res = escape_times(J, beta, decomp, well, np.asarray(x0)[None, :], horizon, frozen, seed)
    return float(res.times[0]), bool(res.censored[0])


def sample_in_well(J, beta, decomp, well, n, seed, cap=DEFAULT_ENUM_CAP):
    """Exact draws from the Gibbs law conditioned on the well."""
    frozen = decomp.reconstruct(well)
    table = gibbs_exact(J, beta, Constraint(frozen=frozen), cap=cap)
    return table.sample(child_rng(seed, 2), n)


@dataclass
class AutocorrelationLaw:
    dynamic: np.ndarray
    replica: np.ndarray
    replica_values: Optional[np.ndarray]
    replica_probs: Optional[np.ndarray]
    tv_binned: float
    bins: np.ndarray
    s: float
    log_t_scale: float
    surrogate: bool

    def to_dict(self):
        return {"s": self.s, "log_t_scale": self.log_t_scale,
                "surrogate": self.surrogate, "tv_binned": self.tv_binned,
                "dynamic_mean": float(self.dynamic.mean()),
                "replica_mean": float(self.replica.mean()),
                "n_dynamic": len(self.dynamic), "n_replica": len(self.replica)}


MAX_EXPECTED_EVENTS = 5e9


def replica_overlap_law(J, beta, decomp, cap=DEFAULT_ENUM_CAP):
    """Exact law of the overlap of two conditional samples in a uniform well."""
    A = as_array(J)
    n = A.shape[0]
    K = decomp.K
    law = {}
    for code in range(1 << K):
        label = WellLabel.from_code(code, K)
        table = gibbs_exact(A, beta, Constraint(frozen=decomp.reconstruct(label)), cap=cap)
        conf = table.configs().astype(np.int64)
        overlap = conf @ conf.T  # integer inner products
        p = table.probs
        joint = np.outer(p, p)
        for val in np.unique(overlap):
            law[int(val)] = law.get(int(val), 0.0) + joint[overlap == val].sum() / (1 << K)
    vals = np.array(sorted(law))
    return vals / n, np.array([law[v] for v in vals])


def replica_overlaps(J, beta, decomp, n_samples, seed, cap=DEFAULT_ENUM_CAP):
    A = as_array(J)
    n = A.shape[0]
    rng = child_rng(seed, 3)
    K = decomp.K
    wells = rng.integers(0, 1 << K, n_samples) if K else np.zeros(n_samples, dtype=np.int64)
    out = np.empty(n_samples)
    for code in np.unique(wells):
        idx = np.nonzero(wells == code)[0]
        label = WellLabel.from_code(int(code), K)
        table = gibbs_exact(A, beta, Constraint(frozen=decomp.reconstruct(label)), cap=cap)
        a = table.sample(rng, len(idx)).astype(float)
        b = table.sample(rng, len(idx)).astype(float)
        out[idx] = np.mean(a * b, axis=1)
    return out


def binned_tv(x, y, n_bins=20, lo=-1.0, hi=1.0):
    edges = np.linspace(lo, hi, n_bins + 1)
    hx, _ = np.histogram(np.clip(x, lo, hi), bins=edges)
    hy, _ = np.histogram(np.clip(y, lo, hi), bins=edges)
    return 0.5 * float(np.abs(hx / hx.sum() - hy / hy.sum()).sum()), edges


def autocorrelation_distribution(J, beta, decomp, s, n_runs, seed, log_t_scale=None,
                                 surrogate=False, n_bins=20, cap=DEFAULT_ENUM_CAP,
                                 max_events=MAX_EXPECTED_EVENTS):
    """Dynamical law of ``C(t, s t)`` from uniform starts and the replica law.

    The observation time is ``exp(log_t_scale)`` (default: the regime's).
    Without ``surrogate``, instances whose expected event count exceeds
    ``max_events`` are refused.
    """
    if s <= 1:
        raise InputError("s must exceed 1")
    A = as_array(J)
    n = A.shape[0]
    lt = decomp.regime.log_t_scale if log_t_scale is None else float(log_t_scale)
    if lt > 700:
        raise ResourceCapError("observation time overflows double precision",
                               hint="use a planted surrogate instance")
    t = math.exp(lt)
    expected = n_runs * n * s * t
    if expected > max_events and not surrogate:
        raise ResourceCapError(
            f"about {expected:.2e} clock rings needed",
            hint="use planted bonds with 2 beta |J| in [8, 30] and set surrogate=True")
    x0s = uniform_starts(n, n_runs, seed)
    snap = snapshots(A, beta, x0s, [t, s * t], seed=seed)
    dyn = np.mean(snap[:, 0, :].astype(float) * snap[:, 1, :], axis=1)
    rep = replica_overlaps(A, beta, decomp, n_runs, seed, cap=cap)
    try:
        vals, probs = replica_overlap_law(A, beta, decomp, cap=cap)
    except ResourceCapError:
        vals, probs = None, None
    tv, edges = binned_tv(dyn, rep, n_bins)
    return AutocorrelationLaw(dynamic=dyn, replica=rep, replica_values=vals,
                              replica_probs=probs, tv_binned=tv, bins=edges, s=float(s),
                              log_t_scale=lt, surrogate=bool(surrogate))
