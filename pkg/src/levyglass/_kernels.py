"""Compiled inner loops for continuous-time heat-bath Glauber dynamics.

All kernels take a dense symmetric coupling matrix and operate on int8 spin
vectors. Every path reseeds the numba generator with its own seed before
drawing, so results do not depend on how paths are scheduled over threads.

Local fields use the convention ``m[v] = sum_w J[v, w] s[v] s[w]`` and the
flip rate of an unfrozen vertex is ``1 / (1 + exp(2 beta m[v]))``.
"""

import numpy as np
from numba import njit, prange

REFRESH_EVENTS = 1 << 16


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _fields(J, s, m):
    n = s.shape[0]
    for v in range(n):
        acc = 0.0
        for w in range(n):
            if w != v:
                acc += J[v, w] * s[w]
        m[v] = acc * s[v]


@njit(cache=True)
def _flip(J, s, m, v):
    n = s.shape[0]
    sv = s[v]
    for w in range(n):
        if w != v:
            m[w] -= 2.0 * J[v, w] * sv * s[w]
    m[v] = -m[v]
    s[v] = -sv


@njit(cache=True)
def _rates(beta, m, frozen, lam):
    total = 0.0
    for v in range(m.shape[0]):
        if frozen[v]:
            lam[v] = 0.0
        else:
            lam[v] = 1.0 / (1.0 + np.exp(2.0 * beta * m[v]))
        total += lam[v]
    return total


@njit(cache=True)
def _pick(lam, total):
    u = np.random.random() * total
    acc = 0.0
    last = -1
    for v in range(lam.shape[0]):
        if lam[v] > 0.0:
            last = v
            acc += lam[v]
            if u < acc:
                return v
    return last


@njit(cache=True)
def _log_domain_step(beta, m, frozen):
    """Waiting time and vertex when every rate underflows double precision.

    Returns (dt, v); dt is +inf when no vertex can move.
    """
    n = m.shape[0]
    best = -np.inf
    pick = -1
    lmax = -np.inf
    for v in range(n):
        if not frozen[v]:
            lr = -_softplus(2.0 * beta * m[v])
            if lr > lmax:
                lmax = lr
    if lmax == -np.inf:
        return np.inf, -1
    acc = 0.0
    for v in range(n):
        if not frozen[v]:
            lr = -_softplus(2.0 * beta * m[v])
            acc += np.exp(lr - lmax)
            # Gumbel-max selection over log-rates
            g = lr - np.log(-np.log(1.0 - np.random.random()))
            if g > best:
                best = g
                pick = v
    log_total = lmax + np.log(acc)
    dt = np.random.exponential(1.0) * np.exp(-log_total)
    return dt, pick


@njit(cache=True)
def _next_event(J, beta, s, m, frozen, lam, total, naive, n_free):
    """Draw the next event. Returns (dt, v, flips)."""
    if naive:
        dt = np.random.exponential(1.0) / n_free
        k = int(np.random.random() * n_free)
        v = -1
        for w in range(s.shape[0]):
            if not frozen[w]:
                if k == 0:
                    v = w
                    break
                k -= 1
        p = 1.0 / (1.0 + np.exp(2.0 * beta * m[v]))
        return dt, v, np.random.random() < p
    if total > 0.0:
        dt = np.random.exponential(1.0) / total
        return dt, _pick(lam, total), True
    dt, v = _log_domain_step(beta, m, frozen)
    return dt, v, v >= 0


@njit(cache=True, parallel=True)
def snapshot_batch(J, beta, x0s, times, frozen, naive, seeds):
    """Spin configurations of independent paths at the given sorted times.

    Returns (out, n_events) with out of shape (paths, len(times), n).
    """
    n_paths, n = x0s.shape
    n_times = times.shape[0]
    out = np.empty((n_paths, n_times, n), dtype=np.int8)
    n_events = np.zeros(n_paths, dtype=np.int64)
    n_free = 0
    for v in range(n):
        if not frozen[v]:
            n_free += 1
    for p in prange(n_paths):
        np.random.seed(seeds[p])
        s = x0s[p].copy()
        m = np.empty(n)
        lam = np.empty(n)
        _fields(J, s, m)
        total = _rates(beta, m, frozen, lam)
        t = 0.0
        k = 0
        events = 0
        while k < n_times:
            if n_free == 0:
                dt = np.inf
                v = -1
                flips = False
            else:
                dt, v, flips = _next_event(J, beta, s, m, frozen, lam, total,
                                           naive, n_free)
            t_next = t + dt
            while k < n_times and times[k] < t_next:
                out[p, k, :] = s
                k += 1
            if k >= n_times:
                break
            t = t_next
            if flips:
                _flip(J, s, m, v)
                events += 1
                if events % REFRESH_EVENTS == 0:
                    _fields(J, s, m)
                total = _rates(beta, m, frozen, lam)
        n_events[p] = events
    return out, n_events


@njit(cache=True)
def run_path(J, beta, x0, duration, frozen, naive, record_null, seed, capacity):
    """Event list of one path on [0, duration].

    Returns (times, vertices, new_spins, count, absorbed). ``absorbed`` is
    True when the path reached a state with zero total rate.
    """
    np.random.seed(seed)
    n = x0.shape[0]
    s = x0.copy()
    m = np.empty(n)
    lam = np.empty(n)
    _fields(J, s, m)
    total = _rates(beta, m, frozen, lam)
    n_free = 0
    for v in range(n):
        if not frozen[v]:
            n_free += 1
    times = np.empty(capacity)
    verts = np.empty(capacity, dtype=np.int64)
    spins = np.empty(capacity, dtype=np.int8)
    count = 0
    t = 0.0
    absorbed = False
    flips_done = 0
    while True:
        if n_free == 0:
            absorbed = True
            break
        dt, v, flips = _next_event(J, beta, s, m, frozen, lam, total, naive,
                                   n_free)
        if v < 0 or dt == np.inf:
            absorbed = True
            break
        t += dt
        if t > duration:
            break
        if flips or record_null:
            if count == times.shape[0]:
                cap = 2 * times.shape[0] + 16
                nt = np.empty(cap)
                nv = np.empty(cap, dtype=np.int64)
                ns = np.empty(cap, dtype=np.int8)
                nt[:count] = times[:count]
                nv[:count] = verts[:count]
                ns[:count] = spins[:count]
                times, verts, spins = nt, nv, ns
            times[count] = t
            verts[count] = v
            spins[count] = -s[v] if flips else s[v]
            count += 1
        if flips:
            _flip(J, s, m, v)
            flips_done += 1
            if flips_done % REFRESH_EVENTS == 0:
                _fields(J, s, m)
            total = _rates(beta, m, frozen, lam)
    return times[:count], verts[:count], spins[:count], count, absorbed


@njit(cache=True, parallel=True)
def escape_batch(J, beta, x0s, bond_v, bond_w, bond_sign, horizon, frozen,
                 seeds):
    """First time any listed bond becomes unsatisfied, per path.

    Paths still inside at ``horizon`` (or absorbed) return horizon and a
    censored flag.
    """
    n_paths, n = x0s.shape
    n_b = bond_v.shape[0]
    bond_of = np.full(n, -1, dtype=np.int64)
    for b in range(n_b):
        bond_of[bond_v[b]] = b
        bond_of[bond_w[b]] = b
    out = np.empty(n_paths)
    censored = np.zeros(n_paths, dtype=np.bool_)
    n_free = 0
    for v in range(n):
        if not frozen[v]:
            n_free += 1
    for p in prange(n_paths):
        np.random.seed(seeds[p])
        s = x0s[p].copy()
        m = np.empty(n)
        lam = np.empty(n)
        _fields(J, s, m)
        total = _rates(beta, m, frozen, lam)
        t = 0.0
        events = 0
        done = False
        while not done:
            if n_free == 0:
                out[p] = horizon
                censored[p] = True
                break
            dt, v, flips = _next_event(J, beta, s, m, frozen, lam, total,
                                       False, n_free)
            if v < 0 or t + dt > horizon:
                out[p] = horizon
                censored[p] = True
                break
            t += dt
            _flip(J, s, m, v)
            events += 1
            b = bond_of[v]
            if b >= 0 and s[bond_v[b]] * s[bond_w[b]] != bond_sign[b]:
                out[p] = t
                done = True
                break
            if events % REFRESH_EVENTS == 0:
                _fields(J, s, m)
            total = _rates(beta, m, frozen, lam)
    return out, censored


@njit(cache=True)
def _observable(beta, m, v, w, use_z):
    if use_z:
        return np.exp(-2.0 * beta * m[v]) + np.exp(-2.0 * beta * m[w])
    return (1.0 / (1.0 + np.exp(2.0 * beta * m[v]))
            + 1.0 / (1.0 + np.exp(2.0 * beta * m[w])))


@njit(cache=True)
def time_average(J, beta, x0, frozen, obs_v, obs_w, use_z, burn_in,
                 batch_len, n_batches, seed):
    """Batch means of the time average of a two-vertex rate observable.

    The observable is ``g(m[v]) + g(m[w])`` with g the heat-bath flip rate, or
    ``exp(-2 beta m)`` when ``use_z`` is set. It is piecewise constant between
    events and integrated exactly.
    """
    np.random.seed(seed)
    n = x0.shape[0]
    s = x0.copy()
    m = np.empty(n)
    lam = np.empty(n)
    _fields(J, s, m)
    total = _rates(beta, m, frozen, lam)
    n_free = 0
    for v in range(n):
        if not frozen[v]:
            n_free += 1
    means = np.zeros(n_batches)
    horizon = burn_in + batch_len * n_batches
    t = 0.0
    events = 0
    while t < horizon:
        f = _observable(beta, m, obs_v, obs_w, use_z)
        if n_free == 0:
            dt, v, flips = np.inf, -1, False
        else:
            dt, v, flips = _next_event(J, beta, s, m, frozen, lam, total,
                                       False, n_free)
        t_end = min(t + dt, horizon)
        # spread f * (t_end - t) over the batches it overlaps
        a = max(t, burn_in)
        b_idx = int((a - burn_in) / batch_len)
        # step the index explicitly; recomputing it from a can stall at a boundary
        while a < t_end and b_idx < n_batches:
            b_end = min(t_end, burn_in + (b_idx + 1) * batch_len)
            if b_end > a:
                means[b_idx] += f * (b_end - a)
                a = b_end
            if a < t_end:
                b_idx += 1
        t = t_end
        if t >= horizon or v < 0:
            break
        if flips:
            _flip(J, s, m, v)
            events += 1
            if events % REFRESH_EVENTS == 0:
                _fields(J, s, m)
            total = _rates(beta, m, frozen, lam)
    return means / batch_len


@njit(cache=True)
def sample_grid(J, beta, x0, frozen, obs_v, obs_w, use_z, dt_grid, n_points,
                seed):
    """Observable sampled on a regular time grid (for autocorrelation time)."""
    np.random.seed(seed)
    n = x0.shape[0]
    s = x0.copy()
    m = np.empty(n)
    lam = np.empty(n)
    _fields(J, s, m)
    total = _rates(beta, m, frozen, lam)
    n_free = 0
    for v in range(n):
        if not frozen[v]:
            n_free += 1
    out = np.empty(n_points)
    t = 0.0
    k = 0
    while k < n_points:
        if n_free == 0:
            dt, v, flips = np.inf, -1, False
        else:
            dt, v, flips = _next_event(J, beta, s, m, frozen, lam, total,
                                       False, n_free)
        while k < n_points and k * dt_grid < t + dt:
            out[k] = _observable(beta, m, obs_v, obs_w, use_z)
            k += 1
        t += dt
        if flips:
            _flip(J, s, m, v)
            total = _rates(beta, m, frozen, lam)
    return out
