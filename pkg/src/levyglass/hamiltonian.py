"""Energies, local fields, heat-bath rates and exact Gibbs tables.

Conventions: ``H(s) = sum_{i<j} J_ij s_i s_j`` and the Gibbs weight is
``exp(+beta H)``. The local field is ``m_v = sum_w J_vw s_v s_w``, so a flip
of ``v`` changes the energy by ``-2 m_v`` and happens at heat-bath rate
``1 / (1 + exp(2 beta m_v))``.

Configuration bitmasks set bit ``v`` when ``s_v = -1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import InputError, ResourceCapError

DEFAULT_ENUM_CAP = 26
REFRESH_FLIPS = 1 << 20
_CHUNK = 1 << 18


def as_array(J):
    """Dense coupling values from a CouplingMatrix or an array."""
    return np.asarray(getattr(J, "values", J), dtype=float)


def _spins(sigma):
    s = np.asarray(getattr(sigma, "spins", sigma))
    if not np.all(np.abs(s) == 1):
        raise InputError("spins must be +1 or -1")
    return s.astype(np.int8)


def energy(J, sigma):
    A = as_array(J)
    s = _spins(sigma).astype(float)
    return float(0.5 * s @ A @ s)


def local_fields(J, sigma):
    A = as_array(J)
    s = _spins(sigma).astype(float)
    return s * (A @ s)


def local_field(J, sigma, v):
    A = as_array(J)
    s = _spins(sigma).astype(float)
    if not 0 <= v < len(s):
        raise InputError(f"vertex {v} out of range")
    return float(s[v] * (A[v] @ s))


def z_factor(beta, m):
    """``Z_v = exp(-2 beta m_v)``."""
    return np.exp(-2.0 * beta * np.asarray(m, dtype=float))


def flip_rate(beta, m):
    """Heat-bath flip rate ``1 / (1 + exp(2 beta m))``, overflow-free."""
    out = expit(-2.0 * beta * np.asarray(m, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def log_flip_rate(beta, m):
    x = 2.0 * beta * np.asarray(m, dtype=float)
    out = -np.logaddexp(0.0, x)
    return float(out) if np.ndim(out) == 0 else out


def sat_set(J, sigma):
    """Satisfied edges ``(i, j)``, ``i < j``, as an (k, 2) array.

    Zero couplings are never reported.
    """
    A = as_array(J)
    s = _spins(sigma).astype(float)
    iu, ju = np.triu_indices(len(s), k=1)
    prod = A[iu, ju] * s[iu] * s[ju]
    keep = prod > 0
    return np.stack([iu[keep], ju[keep]], axis=1)


def is_satisfied(J, sigma, edge):
    A = as_array(J)
    i, j = edge
    s = _spins(sigma)
    return bool(A[i, j] * s[i] * s[j] > 0)


class SpinConfig:
    """Spin vector with incrementally maintained local fields and energy."""

    def __init__(self, J, spins):
        self._J = as_array(J)
        self._s = _spins(spins).copy()
        if self._s.shape != (self._J.shape[0],):
            raise InputError("spin vector length does not match the coupling matrix")
        self.flips = 0
        self.refresh()

    @classmethod
    def uniform(cls, J, rng):
        n = as_array(J).shape[0]
        rng = np.random.default_rng(rng)
        return cls(J, np.where(rng.random(n) < 0.5, -1, 1))

    @property
    def n(self):
        return self._s.shape[0]

    @property
    def spins(self):
        view = self._s.view()
        view.setflags(write=False)
        return view

    @property
    def fields(self):
        view = self._m.view()
        view.setflags(write=False)
        return view

    @property
    def energy(self):
        return float(self._H)

    def refresh(self):
        s = self._s.astype(float)
        self._m = s * (self._J @ s)
        self._H = 0.5 * self._m.sum()

    def flip(self, v):
        sv = float(self._s[v])
        col = self._J[:, v]
        self._H -= 2.0 * self._m[v]
        self._m -= 2.0 * col * sv * self._s
        self._m[v] = -self._m[v]
        self._s[v] = -self._s[v]
        self.flips += 1
        if self.flips % REFRESH_FLIPS == 0:
            self.refresh()

    def cache_error(self):
        """Largest relative deviation of cached fields from a full recompute."""
        s = self._s.astype(float)
        m = s * (self._J @ s)
        scale = max(1.0, float(np.abs(m).max(initial=0.0)))
        return float(np.abs(m - self._m).max(initial=0.0) / scale)

    def copy(self):
        out = SpinConfig.__new__(SpinConfig)
        out._J, out._s, out._m, out._H = self._J, self._s.copy(), self._m.copy(), self._H
        out.flips = self.flips
        return out


@dataclass(frozen=True)
class Constraint:
    """Frozen vertex values and/or edges required to be satisfied."""

    frozen: dict = field(default_factory=dict)
    required_sat: tuple = ()

    def describe(self):
        return {"frozen": {int(k): int(v) for k, v in sorted(self.frozen.items())},
                "required_sat": [[int(i), int(j)] for i, j in self.required_sat]}


def codes_to_configs(codes, n):
    bits = (np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def configs_to_codes(configs):
    c = np.asarray(configs)
    return ((c < 0).astype(np.int64) << np.arange(c.shape[1])).sum(axis=1)


class GibbsTable:
    """Exact conditional Gibbs law over the constrained configurations.

    ``codes`` are sorted full-system bitmasks; ``log_weights`` hold
    ``beta H``; ``probs`` are normalized.
    """

    def __init__(self, J, beta, constraint, codes, log_weights):
        self.J = as_array(J)
        self.n = self.J.shape[0]
        self.beta = float(beta)
        self.constraint = constraint
        self.codes = codes
        self.log_weights = log_weights
        self.log_partition = float(logsumexp(log_weights)) if len(codes) else -np.inf
        self.log_probs = log_weights - self.log_partition
        self.probs = np.exp(self.log_probs)

    def __len__(self):
        return len(self.codes)

    def configs(self):
        return codes_to_configs(self.codes, self.n)

    def chunks(self, size=_CHUNK):
        for k in range(0, len(self.codes), size):
            yield slice(k, k + size), codes_to_configs(self.codes[k:k + size], self.n)

    def index_of(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        idx = np.searchsorted(self.codes, codes)
        idx = np.minimum(idx, len(self.codes) - 1)
        if not np.all(self.codes[idx] == codes):
            raise InputError("configuration outside the constrained set")
        return idx

    def sample(self, rng, size):
        rng = np.random.default_rng(rng)
        cdf = np.cumsum(self.probs)
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return codes_to_configs(self.codes[np.minimum(idx, len(cdf) - 1)], self.n)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bitmask", "probability"])
            for c, p in zip(self.codes, self.probs):
                w.writerow([int(c), repr(float(p))])


def gibbs_exact(J, beta, constraint=None, cap=DEFAULT_ENUM_CAP):
    """Enumerate the constrained configurations and their Gibbs weights."""
    A = as_array(J)
    n = A.shape[0]
    constraint = constraint or Constraint()
    for v, s in constraint.frozen.items():
        if not 0 <= v < n or s not in (-1, 1):
            raise InputError(f"bad frozen assignment {v}: {s}")
    free = np.array([v for v in range(n) if v not in constraint.frozen], dtype=np.int64)
    f = len(free)
    if f > cap:
        raise ResourceCapError(
            f"{f} free spins exceed the enumeration cap {cap}",
            hint="use the mcmc estimators or raise the cap")
    base = np.ones(n, dtype=np.int8)
    for v, s in constraint.frozen.items():
        base[v] = s
    req = np.asarray(constraint.required_sat, dtype=np.int64).reshape(-1, 2)
    req_sign = np.sign(A[req[:, 0], req[:, 1]]) if len(req) else np.zeros(0)
    if np.any(req_sign == 0):
        raise InputError("a required edge has zero coupling and can never be satisfied")
    base_code = int(configs_to_codes(base[None, :])[0])

    codes_out, logw_out = [], []
    total = 1 << f
    for start in range(0, total, _CHUNK):
        local = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        bits = (local[:, None] >> np.arange(f)) & 1
        codes = np.full(len(local), base_code, dtype=np.int64)
        if f:
            codes |= (bits << free).sum(axis=1)
        conf = codes_to_configs(codes, n)
        if len(req):
            ok = np.all(conf[:, req[:, 0]] * conf[:, req[:, 1]] == req_sign, axis=1)
            conf, codes = conf[ok], codes[ok]
        s = conf.astype(float)
        h = 0.5 * np.einsum("ij,ij->i", s @ A, s)
        codes_out.append(codes)
        logw_out.append(beta * h)
    codes = np.concatenate(codes_out)
    logw = np.concatenate(logw_out)
    order = np.argsort(codes)
    if len(codes) == 0:
        raise InputError("constraint admits no configuration")
    return GibbsTable(A, beta, constraint, codes[order], logw[order])


def conditional_expectation(table, f):
    """``sum_s f(s) pi(s)``; ``f`` maps an (M, n) int8 block to (M,) or (M, k)."""
    acc = None
    for sl, conf in table.chunks():
        vals = np.asarray(f(conf), dtype=float)
        part = np.tensordot(table.probs[sl], vals, axes=(0, 0))
        acc = part if acc is None else acc + part
    return float(acc) if np.ndim(acc) == 0 else acc


def log_conditional_expectation(table, log_f):
    """``log sum_s exp(log_f(s)) pi(s)`` for positive functionals."""
    parts = []
    for sl, conf in table.chunks():
        lv = np.asarray(log_f(conf), dtype=float)
        lp = table.log_probs[sl]
        parts.append(logsumexp(lp[:, None] + lv.reshape(len(lp), -1), axis=0))
    out = logsumexp(np.stack(parts), axis=0)
    return float(out[0]) if out.size == 1 else out


def pair_rate_functional(J, beta, v, w):
    """Block functional ``lambda_v + lambda_w`` for use with expectations."""
    A = as_array(J)

    def f(conf):
        s = conf.astype(float)
        m = s * (s @ A)
        return flip_rate(beta, m[:, v]) + flip_rate(beta, m[:, w])
    return f


def pair_log_z_functional(J, beta, v, w):
    """Block functional ``log(Z_v + Z_w)``."""
    A = as_array(J)

    def f(conf):
        s = conf.astype(float)
        m = s * (s @ A)
        return np.logaddexp(-2.0 * beta * m[:, v], -2.0 * beta * m[:, w])
    return f
