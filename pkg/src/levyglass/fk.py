"""Random-cluster (Edwards-Sokal) coupling for conditioned spin-glass Gibbs laws.

An edge ``e`` is open with probability ``p_e = 1 - exp(-2 beta |J_e|)`` when
satisfied and never when unsatisfied; the top ``L`` bonds are forced open.
Conditioned laws fix spins ``tau`` on a vertex set (the forced bonds'
endpoints plus any extra frozen vertices). Clusters are tracked by a signed
union-find whose parity records ``s_v = parity(v) * s_root``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate, special

from ._rng import child_rng, child_seeds
from .couplings import CouplingMatrix
from .errors import InputError, ResourceCapError, StructuralError
from .hamiltonian import Constraint, as_array, codes_to_configs, gibbs_exact
from .harness.stats import mean_se, tv_to_law

RC_ENUM_CAP = 16  # open/closed patterns over at most this many nonzero edges


def _matrix(J):
    return J if isinstance(J, CouplingMatrix) else CouplingMatrix(as_array(J))


def bond_probabilities(J, beta):
    """Dense ``p_e = 1 - exp(-2 beta |J_e|)`` (zero on the diagonal)."""
    return -np.expm1(-2.0 * beta * np.abs(as_array(J)))


@dataclass(frozen=True)
class PercolationParams:
    p: np.ndarray
    forced: tuple

    @classmethod
    def build(cls, J, beta, L=0):
        Jm = _matrix(J)
        p = bond_probabilities(Jm, beta)
        forced = tuple((int(i), int(j)) for i, j in Jm.rank_index[:L])
        for i, j in forced:
            p[i, j] = p[j, i] = 1.0
        p.setflags(write=False)
        return cls(p, forced)


class BondConfig:
    """Open-edge set with a lazily built signed union-find."""

    def __init__(self, J, open_edges):
        self.J = as_array(J)
        self.n = self.J.shape[0]
        e = np.asarray(open_edges, dtype=np.int64).reshape(-1, 2)
        e = np.sort(e, axis=1)
        self.open_edges = np.unique(e, axis=0) if len(e) else e
        self._built = False

    def _build(self):
        self._built = True
        n = self.n
        self.parent = np.arange(n)
        self.parity = np.ones(n, dtype=np.int64)
        self.frustrated = None
        for i, j in self.open_edges:
            s = int(np.sign(self.J[i, j]))
            if s == 0:
                self.frustrated = (int(i), int(j))
                continue
            if not self._union(int(i), int(j), s) and self.frustrated is None:
                self.frustrated = (int(i), int(j))

    def find(self, v):
        if not self._built:
            self._build()
        path = []
        while self.parent[v] != v:
            path.append(v)
            v = self.parent[v]
        root = v
        # compress, accumulating parity from the top down
        for u in reversed(path):
            p = self.parent[u]
            if p != root:
                self.parity[u] *= self.parity[p]
            self.parent[u] = root
        return root

    def _union(self, i, j, s):
        ri, rj = self.find(i), self.find(j)
        pi, pj = self.parity[i], self.parity[j]
        if ri == rj:
            return pi * pj == s
        self.parent[rj] = ri
        # s_j = s * s_i, s_i = pi s_ri, s_j = pj s_rj => s_rj = pj s pi s_ri
        self.parity[rj] = pj * s * pi
        return True

    @property
    def consistent(self):
        if not self._built:
            self._build()
        return self.frustrated is None

    def components(self):
        roots = np.array([self.find(v) for v in range(self.n)])
        _, labels = np.unique(roots, return_inverse=True)
        return labels

    def sign_to_root(self, v):
        self.find(v)
        return int(self.parity[v])

    def n_components(self):
        return int(self.components().max()) + 1 if self.n else 0

    def connected(self, i, j):
        return self.find(i) == self.find(j)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j"])
            for i, j in self.open_edges:
                w.writerow([int(i), int(j)])


def _frozen_from(J, L, tau):
    """Merge forced-edge endpoints with an explicit assignment."""
    Jm = _matrix(J)
    tau = dict(tau or {})
    for i, j in Jm.rank_index[:L]:
        if int(i) not in tau or int(j) not in tau:
            raise InputError("tau must assign both endpoints of every forced edge")
    return {int(k): int(v) for k, v in tau.items()}


def rc_from_spin(J, beta, sigma, L=0, seed=0):
    """Open each satisfied edge independently with its probability ``p_{e,L}``."""
    Jm = _matrix(J)
    A = Jm.values
    s = np.asarray(getattr(sigma, "spins", sigma), dtype=np.int64)
    pp = PercolationParams.build(Jm, beta, L)
    for i, j in pp.forced:
        if A[i, j] * s[i] * s[j] <= 0:
            raise InputError(f"forced edge ({i}, {j}) is not satisfied")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(Jm.n, 1)
    sat = A[iu, ju] * s[iu] * s[ju] > 0
    u = rng.random(len(iu))
    keep = sat & (u < pp.p[iu, ju])
    return BondConfig(A, np.stack([iu[keep], ju[keep]], axis=1))


def _root_assignment(omega, tau):
    """Root spins forced by tau; raises on conflicts or frustration."""
    if not omega.consistent:
        raise StructuralError("open edges contain a frustrated cycle", offending=omega.frustrated)
    fixed = {}
    for v, s in tau.items():
        r = omega.find(v)
        want = s * omega.sign_to_root(v)
        if fixed.setdefault(r, want) != want:
            raise StructuralError("tau conflicts with the open clusters", offending=(v, r))
    return fixed


def spin_from_rc(J, omega, tau=None, seed=0):
    """Fair-coin spin per free cluster, propagated so every open edge is satisfied."""
    tau = dict(tau or {})
    fixed = _root_assignment(omega, tau)
    rng = np.random.default_rng(seed)
    n = omega.n
    roots = [omega.find(v) for v in range(n)]
    coin = {}
    s = np.empty(n, dtype=np.int8)
    for v in range(n):
        r = roots[v]
        if r not in fixed and r not in coin:
            coin[r] = 1 if rng.random() < 0.5 else -1
        s[v] = omega.sign_to_root(v) * fixed.get(r, coin.get(r))
    return s


def eta(J, omega, i, j, tau=None):
    """Sign product along an open path, or 0 if ``i``, ``j`` are not connected.

    With boundary ``tau``, two clusters that each contain a frozen vertex have
    a determined relative sign, which is returned instead of 0.
    """
    if not omega.consistent:
        raise StructuralError("open edges contain a frustrated cycle", offending=omega.frustrated)
    if i == j:
        return 1
    ri, rj = omega.find(i), omega.find(j)
    if ri == rj:
        return omega.sign_to_root(i) * omega.sign_to_root(j)
    if tau:
        fixed = _root_assignment(omega, dict(tau))
        if ri in fixed and rj in fixed:
            return omega.sign_to_root(i) * fixed[ri] * omega.sign_to_root(j) * fixed[rj]
    return 0


def _nonzero_edges(A):
    iu, ju = np.triu_indices(A.shape[0], 1)
    nz = A[iu, ju] != 0
    return np.stack([iu[nz], ju[nz]], axis=1)


def rc_measure_exact(J, beta, L=0, tau=None, cap=RC_ENUM_CAP):
    """Enumerate the random-cluster law: list of ``(BondConfig, probability)``.

    The weight is ``1{consistent with tau} 2^(free clusters) P_ind(omega)``.
    """
    Jm = _matrix(J)
    A = Jm.values
    frozen = _frozen_from(Jm, L, tau)
    edges = _nonzero_edges(A)
    if len(edges) > cap:
        raise ResourceCapError(f"{len(edges)} edges exceed the enumeration cap {cap}")
    pp = PercolationParams.build(Jm, beta, L).p
    pe = pp[edges[:, 0], edges[:, 1]]
    out, weights = [], []
    for bits in itertools.product((0, 1), repeat=len(edges)):
        b = np.array(bits, dtype=bool)
        pind = float(np.prod(np.where(b, pe, 1.0 - pe)))
        if pind == 0.0:
            continue
        om = BondConfig(A, edges[b])
        if not om.consistent:
            continue
        try:
            fixed = _root_assignment(om, frozen)
        except StructuralError:
            continue
        free = len({om.find(v) for v in range(Jm.n)} - set(fixed))
        out.append(om)
        weights.append(pind * 2.0 ** free)
    w = np.array(weights)
    return list(zip(out, w / w.sum()))


@dataclass
class IdentityReport:
    spin_side: float
    rc_side: float
    difference: float
    mode: str


def correlation_identity_check(J, beta, i, j, L=0, tau=None, mode="exact", n_samples=20000,
                               seed=0, cap=RC_ENUM_CAP):
    """Compare ``<s_i s_j>_tau`` with ``<eta_ij>^rc_tau``."""
    Jm = _matrix(J)
    frozen = _frozen_from(Jm, L, tau)
    table = gibbs_exact(Jm.values, beta, Constraint(frozen=frozen))
    conf = table.configs().astype(float)
    lhs = float(table.probs @ (conf[:, i] * conf[:, j]))
    if mode == "exact":
        rc = rc_measure_exact(Jm, beta, L, frozen, cap=cap)
        rhs = float(sum(p * eta(Jm, om, i, j, frozen) for om, p in rc))
    elif mode == "mc":
        rng = child_rng(seed, 11)
        draws = table.sample(rng, n_samples)
        seeds = child_seeds(seed, n_samples)
        vals = [eta(Jm, rc_from_spin(Jm, beta, s, L, int(sd)), i, j, frozen)
                for s, sd in zip(draws, seeds)]
        rhs = float(np.mean(vals))
    else:
        raise InputError(f"unknown mode {mode!r}")
    return IdentityReport(lhs, rhs, abs(lhs - rhs), mode)


def correlation_identity_all(J, beta, L=0, tau=None, cap=RC_ENUM_CAP):
    """Exact identity check for every pair, enumerating each law once."""
    Jm = _matrix(J)
    frozen = _frozen_from(Jm, L, tau)
    table = gibbs_exact(Jm.values, beta, Constraint(frozen=frozen))
    conf = table.configs().astype(float)
    corr = (conf * table.probs[:, None]).T @ conf
    rc = rc_measure_exact(Jm, beta, L, frozen, cap=cap)
    out = {}
    for i in range(Jm.n):
        for j in range(i + 1, Jm.n):
            rhs = float(sum(p * eta(Jm, om, i, j, frozen) for om, p in rc))
            out[(i, j)] = IdentityReport(float(corr[i, j]), rhs, abs(corr[i, j] - rhs), "exact")
    return out


@dataclass
class JointLawReport:
    max_joint_diff: float
    max_spin_marginal_diff: float
    max_rc_marginal_diff: float


def edwards_sokal_check(J, beta, L=0, tau=None, cap=RC_ENUM_CAP):
    """Exact joint laws built both ways (spin->rc and rc->spin) and their gap."""
    Jm = _matrix(J)
    A = Jm.values
    n = Jm.n
    frozen = _frozen_from(Jm, L, tau)
    table = gibbs_exact(A, beta, Constraint(frozen=frozen))
    edges = _nonzero_edges(A)
    if len(edges) > cap:
        raise ResourceCapError(f"{len(edges)} edges exceed the enumeration cap {cap}")
    pe = PercolationParams.build(Jm, beta, L).p[edges[:, 0], edges[:, 1]]
    conf = table.configs().astype(np.int64)
    sat = A[edges[:, 0], edges[:, 1]][None, :] * conf[:, edges[:, 0]] * conf[:, edges[:, 1]] > 0

    rc = rc_measure_exact(Jm, beta, L, frozen, cap=cap)
    code_of = {tuple(map(tuple, om.open_edges.tolist())): k for k, (om, _) in enumerate(rc)}
    pats = list(itertools.product((0, 1), repeat=len(edges)))
    mu1 = np.zeros((len(conf), len(pats)))
    mu2 = np.zeros_like(mu1)
    rc_prob = np.zeros(len(pats))
    for k, bits in enumerate(pats):
        b = np.array(bits, dtype=bool)
        key = tuple(map(tuple, edges[b].tolist()))
        if key in code_of:
            om, p = rc[code_of[key]]
            rc_prob[k] = p
            fixed = _root_assignment(om, frozen)
            free = len({om.find(v) for v in range(n)} - set(fixed))
            ok = np.all(~b[None, :] | sat, axis=1)
            mu2[:, k] = np.where(ok, p * 2.0 ** -free, 0.0)
        # spin -> rc: open edges must be satisfied, each with its p
        trans = np.where(b[None, :], np.where(sat, pe[None, :], 0.0),
                         np.where(sat, 1.0 - pe[None, :], 1.0))
        mu1[:, k] = table.probs * np.prod(trans, axis=1)
    return JointLawReport(float(np.abs(mu1 - mu2).max()),
                          float(np.abs(mu1.sum(1) - mu2.sum(1)).max()),
                          float(np.abs(mu1.sum(0) - rc_prob).max()))


def beta0(alpha):
    """High-temperature threshold ``1 / (2 Gamma(1 - alpha)^(1/alpha))``."""
    if not 0 < alpha < 1:
        raise InputError("beta0 needs alpha in (0, 1)")
    return 0.5 / math.gamma(1.0 - alpha) ** (1.0 / alpha)


def mean_bond_prob(alpha, beta, N, rtol=1e-10):
    """``N E[p(J)]`` under the Pareto law via adaptive quadrature."""
    if beta == 0:
        return 0.0
    a_n = 2.0 * beta * N ** (-1.0 / alpha)
    head = -N * math.expm1(-a_n)
    f = lambda u: math.exp(-u) * u ** (-alpha)  # noqa: E731
    # on [a_n, 1] substitute v = u^(1-alpha) to remove the endpoint singularity
    g = lambda v: math.exp(-v ** (1.0 / (1.0 - alpha))) / (1.0 - alpha)  # noqa: E731
    parts = []
    if a_n < 1.0:
        parts.append(integrate.quad(g, a_n ** (1.0 - alpha), 1.0, epsabs=0.0, epsrel=rtol,
                                    limit=200, full_output=1))
    parts.append(integrate.quad(f, max(a_n, 1.0), math.inf, epsabs=0.0, epsrel=rtol,
                                limit=200, full_output=1))
    total = 0.0
    for res in parts:
        val, err = res[0], res[1]
        if len(res) > 3 or err > max(1e-9, 10 * rtol) * max(abs(val), 1e-300):
            raise ArithmeticError("quadrature did not converge")
        total += val
    return head + (2.0 * beta) ** alpha * total


def mean_bond_prob_closed(alpha, beta, N):
    """Same quantity through the regularized upper incomplete gamma function."""
    a_n = 2.0 * beta * N ** (-1.0 / alpha)
    return (-N * math.expm1(-a_n)
            + (2.0 * beta) ** alpha * math.gamma(1 - alpha) * special.gammaincc(1 - alpha, a_n))


# compiled sampler --------------------------------------------------------

@njit(cache=True)
def _uf_find(parent, v):
    r = v
    while parent[r] != r:
        r = parent[r]
    while parent[v] != r:
        nxt = parent[v]
        parent[v] = r
        v = nxt
    return r


@njit(cache=True)
def _cluster_chain(A, P, frozen, x0, n_burn, n_samples, thin, seed):
    """Alternate bond and cluster resampling of the Edwards-Sokal joint law.

    Satisfied edges open with probability ``P``; each cluster without a frozen
    vertex then flips with probability 1/2.
    """
    np.random.seed(seed)
    n = x0.shape[0]
    s = x0.copy()
    out = np.empty((n_samples, n), dtype=np.int8)
    parent = np.empty(n, dtype=np.int64)
    anchored = np.empty(n, dtype=np.bool_)
    flip = np.empty(n, dtype=np.bool_)
    total = n_burn + n_samples * thin
    k = 0
    for step in range(total):
        for v in range(n):
            parent[v] = v
        for i in range(n):
            for j in range(i + 1, n):
                if A[i, j] * s[i] * s[j] > 0.0 and np.random.random() < P[i, j]:
                    ri = _uf_find(parent, i)
                    rj = _uf_find(parent, j)
                    if ri != rj:
                        parent[rj] = ri
        for v in range(n):
            anchored[v] = False
        for v in range(n):
            if frozen[v]:
                anchored[_uf_find(parent, v)] = True
        for v in range(n):
            flip[v] = np.random.random() < 0.5
        for v in range(n):
            r = _uf_find(parent, v)
            if (not anchored[r]) and flip[r]:
                s[v] = -s[v]
        if step >= n_burn and (step - n_burn) % thin == thin - 1:
            out[k] = s
            k += 1
    return out


def cluster_samples(J, beta, frozen, n_samples, seed, n_burn=50, thin=2, x0=None):
    """Equilibrium draws from the Gibbs law conditioned on ``frozen`` spins.

    This is an Edwards-Sokal cluster sampler used only to produce reference
    samples; it is not a model of the Glauber dynamics.
    """
    A = as_array(J)
    n = A.shape[0]
    P = bond_probabilities(A, beta)
    fm = np.zeros(n, dtype=np.bool_)
    rng = child_rng(seed, 5)
    s0 = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8) if x0 is None else \
        np.asarray(x0, dtype=np.int8).copy()
    for v, sv in frozen.items():
        fm[v] = True
        s0[v] = sv
    return _cluster_chain(A, P, fm, s0, int(n_burn), int(n_samples), int(thin),
                          int(child_seeds(seed, 1)[0]))


@dataclass
class OverlapStats:
    mean_q2: float
    se_q2: float
    mean_q: float
    q: np.ndarray
    n: int
    floor: float

    def to_dict(self):
        return {"mean_q2": self.mean_q2, "se_q2": self.se_q2, "mean_q": self.mean_q,
                "n_samples": len(self.q), "n": self.n, "floor": self.floor}


def q_overlap_stats(J, beta, decomp, n_samples, seed, method="cluster", n_burn=50, thin=2,
                    duplicate=False):
    """Overlaps of two conditional draws inside a uniformly chosen well.

    ``method`` is ``"cluster"`` (Edwards-Sokal sampler) or ``"exact"``
    (enumeration). ``duplicate=True`` pairs each draw with itself, a
    diagnostic that must return ``q = 1``.
    """
    A = as_array(J)
    n = A.shape[0]
    K = decomp.K
    rng = child_rng(seed, 13)
    wells = rng.integers(0, 1 << K, n_samples) if K else np.zeros(n_samples, dtype=np.int64)
    q = np.empty(n_samples)
    for code in np.unique(wells):
        idx = np.nonzero(wells == code)[0]
        spins = tuple(-1 if (int(code) >> l) & 1 else 1 for l in range(K))
        frozen = decomp.frozen_for(spins)
        m = len(idx)
        if method == "exact":
            table = gibbs_exact(A, beta, Constraint(frozen=frozen))
            a = table.sample(rng, m)
            b = a if duplicate else table.sample(rng, m)
        elif method == "cluster":
            sub = int(child_seeds([seed, int(code)], 1)[0])
            draws = cluster_samples(A, beta, frozen, 2 * m, sub, n_burn=n_burn, thin=thin)
            a = draws[0::2]
            b = a if duplicate else draws[1::2]
        else:
            raise InputError(f"unknown method {method!r}")
        q[idx] = np.mean(a.astype(float) * b, axis=1)
    m2, se = mean_se(q ** 2)
    return OverlapStats(m2, se, float(q.mean()), q, n, 1.0 / n)


@dataclass
class UniformityReport:
    tv: float
    ci: tuple
    null_mean: float
    counts: np.ndarray
    n_samples: int


def uniformity_check(J, beta, decomp, L, tau, n_samples, seed, method="cluster",
                     n_burn=50, thin=2, n_bootstrap=200):
    """TV between the law of ``(s_{v_{L+1}}, ..., s_{v_K})`` given bonds ``1..L``
    fixed by ``tau`` and the uniform law on ``{+-1}^(K-L)``."""
    A = as_array(J)
    K = decomp.K
    if not 0 <= L < K:
        raise InputError("need 0 <= L < K")
    if K - L > 12:
        raise ResourceCapError(f"2^{K - L} cells is too many for a histogram")
    frozen = decomp.frozen_for(tuple(tau), upto=L) if L else {}
    free_v = decomp.v[L:]
    if method == "cluster":
        draws = cluster_samples(A, beta, frozen, n_samples, seed, n_burn=n_burn, thin=thin)
    elif method == "exact":
        draws = gibbs_exact(A, beta, Constraint(frozen=frozen)).sample(child_rng(seed, 17),
                                                                       n_samples)
    else:
        raise InputError(f"unknown method {method!r}")
    bits = (draws[:, free_v] < 0).astype(np.int64)
    codes = (bits << np.arange(K - L)).sum(axis=1)
    counts = np.bincount(codes, minlength=1 << (K - L))
    est = tv_to_law(counts, np.ones(len(counts)), n_bootstrap=n_bootstrap, seed=seed)
    return UniformityReport(est.estimate, est.ci, est.null_mean, counts, n_samples)


def exact_skeleton_law(J, beta, decomp, L, tau):
    """Exact law of ``(s_{v_{L+1}}, ..., s_{v_K})`` given bonds ``1..L`` (small n)."""
    A = as_array(J)
    K = decomp.K
    frozen = decomp.frozen_for(tuple(tau), upto=L) if L else {}
    table = gibbs_exact(A, beta, Constraint(frozen=frozen))
    conf = codes_to_configs(table.codes, A.shape[0])
    bits = (conf[:, decomp.v[L:]] < 0).astype(np.int64)
    codes = (bits << np.arange(K - L)).sum(axis=1)
    return np.bincount(codes, weights=table.probs, minlength=1 << (K - L))
