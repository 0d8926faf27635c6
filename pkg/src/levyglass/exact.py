"""Dense generators, spectral gaps, TV curves, block and canonical-path bounds.

Everything here is exact linear algebra on small systems with hard caps on
the state count. The Dirichlet form is ``(1/2) sum_{x,y} pi(x) q(x,y) (f(y) -
f(x))^2``, so the variational infimum equals the smallest nonzero eigenvalue
of ``-Q``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh, expm
from scipy.sparse.csgraph import connected_components

from .errors import InputError, ResourceCapError
from .hamiltonian import (Constraint, as_array, codes_to_configs, flip_rate, gibbs_exact,
                          log_flip_rate)
from .wells import skeleton_codes

DENSE_CAP = 14


class GeneratorMatrix:
    """Heat-bath generator on the configurations allowed by ``frozen``/``constraint``.

    Moves that would leave the constrained set are suppressed, so the chain is
    reversible with respect to the conditioned Gibbs law.
    """

    def __init__(self, J, beta, frozen=None, constraint=None, cap=DENSE_CAP):
        A = as_array(J)
        n = A.shape[0]
        frozen = dict(frozen or {})
        base = constraint or Constraint()
        merged = Constraint(frozen={**base.frozen, **frozen}, required_sat=base.required_sat)
        n_free = n - len(merged.frozen)
        if n_free > cap:
            raise ResourceCapError(f"{n_free} free spins exceed the dense cap {cap}",
                                   hint="shrink the instance or freeze more vertices")
        table = gibbs_exact(A, beta, merged, cap=cap)
        self.J, self.beta, self.n = A, float(beta), n
        self.constraint = merged
        self.table = table
        self.codes = table.codes
        self.log_pi = table.log_probs
        self.pi = table.probs
        self.free = np.array([v for v in range(n) if v not in merged.frozen], dtype=np.int64)
        conf = table.configs().astype(float)
        self.fields = conf * (conf @ A)
        M = len(self.codes)
        Q = np.zeros((M, M))
        LQ = np.full((M, M), -np.inf)
        for v in self.free:
            target = self.codes ^ (np.int64(1) << v)
            j = np.searchsorted(self.codes, target)
            j = np.minimum(j, M - 1)
            ok = self.codes[j] == target
            i = np.nonzero(ok)[0]
            Q[i, j[ok]] = flip_rate(beta, self.fields[i, v])
            LQ[i, j[ok]] = log_flip_rate(beta, self.fields[i, v])
        Q[np.arange(M), np.arange(M)] = -Q.sum(axis=1)
        self.Q = Q
        self.log_q = LQ

    @property
    def size(self):
        return len(self.codes)

    def configs(self):
        return codes_to_configs(self.codes, self.n)

    def index(self, config_or_code):
        c = config_or_code
        if np.ndim(c) == 1 and len(c) == self.n:
            c = int(((np.asarray(c) < 0).astype(np.int64) << np.arange(self.n)).sum())
        return int(self.table.index_of([int(c)])[0])

    def detailed_balance_error(self):
        """Largest ``|log(pi_x q_xy) - log(pi_y q_yx)|`` over adjacent pairs."""
        i, j = np.nonzero(np.isfinite(self.log_q))
        lhs = self.log_pi[i] + self.log_q[i, j]
        rhs = self.log_pi[j] + self.log_q[j, i]
        return float(np.abs(lhs - rhs).max(initial=0.0))

    def row_sum_error(self):
        return float(np.abs(self.Q.sum(axis=1)).max())

    def symmetrized(self):
        """``D^{1/2} Q D^{-1/2}``; equals ``sqrt(q_xy q_yx)`` off the diagonal."""
        S = np.sqrt(self.Q * self.Q.T)
        np.fill_diagonal(S, np.diag(self.Q))
        return S

    def to_text(self, path):
        """Dense text export: header line with the state codes, then rows of Q."""
        with open(path, "w") as fh:
            fh.write("# codes " + " ".join(str(int(c)) for c in self.codes) + "\n")
            np.savetxt(fh, self.Q, fmt="%.17g")


def build_generator(J, beta, frozen=None, constraint=None, cap=DENSE_CAP):
    return GeneratorMatrix(J, beta, frozen=frozen, constraint=constraint, cap=cap)


@dataclass
class GapResult:
    gap: float
    component_gaps: list
    disconnected: bool
    eigenvalues: np.ndarray = field(repr=False, default=None)


def spectral_gap(G, tol=1e-12):
    """Smallest nonzero eigenvalue of ``-Q`` per communicating class."""
    adj = (G.Q > 0) | (G.Q.T > 0)
    np.fill_diagonal(adj, False)
    n_comp, labels = connected_components(adj, directed=False)
    S = -G.symmetrized()
    comp_gaps = []
    for c in range(n_comp):
        idx = np.nonzero(labels == c)[0]
        if len(idx) == 1:
            comp_gaps.append(math.inf)
            continue
        ev = eigh(S[np.ix_(idx, idx)], eigvals_only=True)
        comp_gaps.append(float(ev[1]))
    if n_comp == 1:
        ev = eigh(S, eigvals_only=True)
        return GapResult(float(ev[1]) if len(ev) > 1 else math.inf, comp_gaps, False, ev)
    # several zero eigenvalues: the gap of the whole chain is zero
    return GapResult(0.0, comp_gaps, True, None)


def rayleigh_quotient(G, f):
    f = np.asarray(f, dtype=float)
    mean = G.pi @ f
    var = G.pi @ (f - mean) ** 2
    if var <= 0:
        raise InputError("test function is constant under pi")
    off = G.Q.copy()
    np.fill_diagonal(off, 0.0)
    diff2 = (f[None, :] - f[:, None]) ** 2
    dirichlet = 0.5 * float((G.pi[:, None] * off * diff2).sum())
    return dirichlet / var


def _eig(G):
    S = -G.symmetrized()
    ev, U = eigh(S)
    d = np.sqrt(G.pi)
    return ev, U, d


def transition_matrix(G, t, method="expm"):
    if method == "expm":
        return expm(G.Q * t)
    ev, U, d = _eig(G)
    return (U * np.exp(-ev * t)) @ U.T * (d[None, :] / d[:, None])


def tv_curve(G, x0, times, method="expm"):
    """TV distance to pi from ``x0`` (state index or configuration) at each time."""
    i = x0 if isinstance(x0, (int, np.integer)) else G.index(x0)
    out = []
    for t in np.atleast_1d(times):
        P = transition_matrix(G, float(t), method)
        out.append(0.5 * float(np.abs(P[i] - G.pi).sum()))
    return np.array(out)


def worst_tv(G, t, method="eig"):
    P = transition_matrix(G, t, method)
    return float(0.5 * np.abs(P - G.pi[None, :]).sum(axis=1).max())


def mixing_time(G, eps=0.25, rtol=1e-6, method="eig"):
    """``inf{t : max_x TV(P_t(x, .), pi) < eps}`` by bracketing and bisection."""
    if not 0 < eps < 1:
        raise InputError("eps must lie in (0, 1)")
    if worst_tv(G, 0.0, method) < eps:
        return 0.0
    hi = 1.0
    while worst_tv(G, hi, method) >= eps:
        hi *= 2.0
        if hi > 1e300:
            raise InputError("chain does not mix (disconnected state space?)")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if worst_tv(G, mid, method) < eps:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class BlockSpec:
    blocks: tuple
    free: tuple

    def __post_init__(self):
        covered = set(itertools.chain.from_iterable(self.blocks))
        missing = set(self.free) - covered
        if missing:
            raise InputError(f"blocks do not cover free vertices {sorted(missing)}")
        if covered - set(self.free):
            raise InputError("blocks contain frozen or unknown vertices")

    @property
    def chi(self):
        return max(sum(v in b for b in self.blocks) for v in self.free) if self.free else 0

    @classmethod
    def make(cls, blocks, n, frozen=()):
        blocks = tuple(tuple(sorted(int(v) for v in b)) for b in blocks if len(b))
        free = tuple(v for v in range(n) if v not in set(frozen))
        return cls(blocks, free)


def block_generator(G, blocks):
    """Generator of the block dynamics (rate-1 heat-bath resampling of each block)."""
    M = G.size
    Q = np.zeros((M, M))
    lp = G.log_pi
    for b in blocks:
        mask = np.int64(sum(1 << v for v in b))
        outside = G.codes & ~mask
        # group states by their configuration outside the block
        order = np.argsort(outside, kind="stable")
        keys = outside[order]
        starts = np.r_[0, np.nonzero(np.diff(keys))[0] + 1, len(keys)]
        for a, z in zip(starts[:-1], starts[1:]):
            grp = order[a:z]
            w = np.exp(lp[grp] - lp[grp].max())
            cond = w / w.sum()
            Q[np.ix_(grp, grp)] += cond[None, :]
    np.fill_diagonal(Q, 0.0)
    Q[np.arange(M), np.arange(M)] = -Q.sum(axis=1)
    return Q


def _gap_of(Q, pi):
    S = np.sqrt(np.maximum(Q * Q.T, 0.0))
    np.fill_diagonal(S, np.diag(Q))
    ev = eigh(-S, eigvals_only=True)
    return float(ev[1]) if len(ev) > 1 else math.inf


@dataclass
class BlockGapReport:
    gap_single_site: float
    gap_block: float
    worst_block_gap: float
    worst_block: int
    chi: int
    lhs: float
    rhs: float
    holds: bool

    def to_dict(self):
        return asdict(self)


def block_gap_check(J, beta, blocks, frozen=None, cap=DENSE_CAP, rtol=1e-9):
    """Check ``1/gap_V <= chi / gap_B * max_i max_zeta 1/gap(B_i, zeta)``."""
    A = as_array(J)
    n = A.shape[0]
    frozen = dict(frozen or {})
    spec = blocks if isinstance(blocks, BlockSpec) else BlockSpec.make(blocks, n, frozen)
    G = GeneratorMatrix(A, beta, frozen=frozen, cap=cap)
    gap_v = spectral_gap(G).gap
    gap_b = _gap_of(block_generator(G, spec.blocks), G.pi)
    worst, worst_i = math.inf, -1
    for i, b in enumerate(spec.blocks):
        others = [v for v in spec.free if v not in b]
        for bits in itertools.product((1, -1), repeat=len(others)):
            zeta = {**frozen, **dict(zip(others, bits))}
            if len(b) == 0:
                continue
            Gi = GeneratorMatrix(A, beta, frozen=zeta, cap=cap)
            g = spectral_gap(Gi).gap
            if g < worst:
                worst, worst_i = g, i
    lhs = 1.0 / gap_v
    rhs = spec.chi / gap_b / worst
    return BlockGapReport(gap_v, gap_b, worst, worst_i, spec.chi, lhs, rhs,
                          bool(lhs <= rhs * (1 + rtol)))


def three_block_partition(J, L, small_cut, edges=None, n=None):
    """Blocks by the largest incident bond of each vertex.

    ``V3``: largest incident ``|J|`` above ``|J_(L+1)|`` (frozen);
    ``V2``: in ``[small_cut, |J_(L+1)|]``; ``V1``: below ``small_cut``.
    Returns ``(V1, V2, V3)`` as sorted tuples.
    """
    A = np.abs(as_array(J))
    n = A.shape[0]
    jl1 = J.order_statistic(L) if hasattr(J, "order_statistic") else np.sort(
        A[np.triu_indices(n, 1)])[::-1][L]
    top = A.max(axis=1)
    V3 = tuple(int(v) for v in np.nonzero(top > jl1)[0])
    V2 = tuple(int(v) for v in np.nonzero((top >= small_cut) & (top <= jl1))[0])
    V1 = tuple(int(v) for v in np.nonzero(top < small_cut)[0])
    return V1, V2, V3


@dataclass
class CongestionReport:
    B: float
    gap: float
    bound: float
    lower_holds: bool
    upper_holds: bool
    n_paths: int

    def to_dict(self):
        return asdict(self)


def _four_state(J, beta, i1, i2, tau):
    A = as_array(J)
    n = A.shape[0]
    tau = np.asarray(tau, dtype=float)
    others = [j for j in range(n) if j not in (i1, i2)]
    h = np.array([A[i1, others] @ tau[others], A[i2, others] @ tau[others]])
    J12 = A[i1, i2]
    states = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    logw = np.array([beta * (J12 * a * b + h[0] * a + h[1] * b) for a, b in states])
    pi = np.exp(logw - logw.max())
    pi /= pi.sum()
    Q = np.zeros((4, 4))
    for x, (a, b) in enumerate(states):
        for l in range(2):
            s = [a, b]
            m = s[l] * (J12 * s[1 - l] + h[l])
            s[l] = -s[l]
            y = states.index(tuple(s))
            Q[x, y] = flip_rate(beta, m)
        Q[x, x] = -Q[x].sum()
    return states, pi, Q


def congestion_4state(J, beta, i1, i2, tau):
    """Canonical-path congestion of the two-spin heat-bath chain with boundary ``tau``.

    Paths are shortest, flipping coordinate 1 first when both differ.
    ``B = max_e (1/Q(e)) sum_{(x,y) through e} pi(x) pi(y) |path|``.
    """
    A = as_array(J)
    states, pi, Q = _four_state(A, beta, i1, i2, tau)
    load = {}
    n_paths = 0
    for x, y in itertools.product(range(4), repeat=2):
        n_paths += 1
        if x == y:
            continue
        cur = list(states[x])
        path = []
        for l in range(2):
            if cur[l] != states[y][l]:
                nxt = cur.copy()
                nxt[l] = -nxt[l]
                path.append((states.index(tuple(cur)), states.index(tuple(nxt))))
                cur = nxt
        for e in path:
            load[e] = load.get(e, 0.0) + pi[x] * pi[y] * len(path)
    B = max(load[e] / (pi[e[0]] * Q[e]) for e in load)
    S = np.sqrt(Q * Q.T)
    np.fill_diagonal(S, np.diag(Q))
    gap = float(eigh(-S, eigvals_only=True)[1])
    rows = np.abs(A[[i1, i2]]).sum(axis=1)
    bound = 128.0 * math.exp(2.0 * beta * rows.max())
    tol = 1e-12
    return CongestionReport(B=float(B), gap=gap, bound=bound,
                            lower_holds=bool(1.0 / gap <= B * (1 + tol)),
                            upper_holds=bool(B <= bound * (1 + tol)), n_paths=n_paths)


@dataclass
class SeparationReport:
    t_mix: float
    mean_exit: float
    ratio: float
    fitted_D: float
    restricted_size: int
    interior_size: int
    mean_exit_from_stationary: float
    max_mean_exit: float

    def to_dict(self):
        return asdict(self)


def mean_exit_times(G, interior):
    """Solve ``(-Q_CC) h = 1`` on the interior states (indices into G)."""
    idx = np.asarray(interior)
    Qc = G.Q[np.ix_(idx, idx)]
    h = np.linalg.solve(-Qc, np.ones(len(idx)))
    return h


def verify_well_separation(J, beta, decomp, well, eps=0.25, cap=DENSE_CAP):
    """Restricted-chain mixing time versus the exact mean exit time of the well."""
    A = as_array(J)
    n = A.shape[0]
    frozen = decomp.reconstruct(well)
    R = GeneratorMatrix(A, beta, frozen=frozen, cap=cap)
    tmix = mixing_time(R, eps)
    full = GeneratorMatrix(A, beta, cap=cap)
    codes = skeleton_codes(full.configs(), decomp)
    interior = np.nonzero(codes == well.code())[0]
    h = mean_exit_times(full, interior)
    p = full.pi[interior] / full.pi[interior].sum()
    mean_exit = float(p @ h)
    K = decomp.K
    nxt = A[np.triu_indices(n, 1)]
    nxt = np.sort(np.abs(nxt))[::-1]
    j_next = float(nxt[K]) if K < len(nxt) else 0.0
    alpha = decomp.regime.alpha
    D = (math.log(tmix) - 2 * beta * j_next) / n ** (0.5 + 0.5 / alpha) if tmix > 0 else -math.inf
    return SeparationReport(t_mix=tmix, mean_exit=mean_exit, ratio=tmix / mean_exit,
                            fitted_D=D, restricted_size=R.size, interior_size=len(interior),
                            mean_exit_from_stationary=mean_exit, max_mean_exit=float(h.max()))


def report_json(report):
    return json.dumps(report.to_dict(), sort_keys=True)
