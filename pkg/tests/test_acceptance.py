"""Acceptance criteria at their stated tolerances; each prints one pass/fail line."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_couplings, record_criterion
from levyglass.couplings import (CouplingLaw, CouplingMatrix, RegimeParams, sample_matrix,
                                 structure_diagnostics)
from levyglass.dynamics import (autocorrelation_distribution, escape_times, mean_autocorrelation,
                                sample_in_well, snapshots, uniform_starts)
from levyglass.errors import StructuralError
from levyglass.exact import (block_gap_check, build_generator, congestion_4state,
                             three_block_partition, verify_well_separation)
from levyglass.fk import (beta0, correlation_identity_all, edwards_sokal_check, mean_bond_prob,
                          q_overlap_stats, uniformity_check)
from levyglass.harness.stats import dkw_epsilon, ks_exponential, tv_distance
from levyglass.instances import planted_instance
from levyglass.wells import WellDecomposition, WellLabel, two_state_rates
from levyglass.yprocess import (RateTable, compare_skeleton, detailed_balance_residual,
                                stationary_Y, y_generator)


def codes_of(conf):
    return ((np.asarray(conf) < 0).astype(np.int64) << np.arange(conf.shape[-1])).sum(axis=-1)


def mixed_instance(k, n):
    """Alternate Gaussian and (rescaled) heavy-tailed test couplings."""
    if k % 2 == 0:
        return random_couplings(n, k)
    J = sample_matrix(CouplingLaw.pareto(0.5, n), k)
    return np.asarray(J.values) / max(J.abs_sorted[0], 1e-300) * 4.0


def test_criterion_01_generator_reversibility():
    worst = 0.0
    betas = (0.2, 1.0, 3.0)
    for k in range(50):
        n = 2 + k % 9
        G = build_generator(mixed_instance(k, n), betas[k % 3])
        worst = max(worst, G.detailed_balance_error())
    ok = worst < 1e-10
    record_criterion(1, "generator detailed balance", ok,
                     f"max relative error {worst:.2e} over 50 instances (< 1e-10)")
    assert ok


def test_criterion_02_engine_equivalence():
    worst = 0.0
    for k in range(10):
        A = random_couplings(4, 100 + k)
        x0 = uniform_starts(4, 10 ** 5, k)
        a = codes_of(snapshots(A, 1.0, x0, [2.0], engine="naive", seed=2 * k)[:, 0, :])
        b = codes_of(snapshots(A, 1.0, x0, [2.0], engine="rejection-free",
                               seed=2 * k + 1)[:, 0, :])
        worst = max(worst, tv_distance(np.bincount(a, minlength=16),
                                       np.bincount(b, minlength=16)))
    ok = worst < 0.02
    record_criterion(2, "engine equivalence", ok,
                     f"max TV {worst:.4f} over 10 instances, 1e5 runs each (< 0.02)")
    assert ok


def test_criterion_03_zero_beta_autocorrelation():
    A = np.zeros((32, 32))
    parts, ok = [], True
    for k, d in enumerate((0.5, 1.0, 2.0)):
        c, se = mean_autocorrelation(A, 0.0, 1.0, 1.0 + d, 10 ** 4, 30 + k)
        z = abs(c - math.exp(-d)) / se
        ok &= z <= 3.0
        parts.append(f"D={d}: {c:.4f} vs {math.exp(-d):.4f} ({z:.2f} SE)")
    record_criterion(3, "beta=0 autocorrelation", ok, "; ".join(parts))
    assert ok


def test_criterion_04_escape_exponential():
    inst = planted_instance(n=8, bonds=((0, 1, 6.0),), log_t=6.0)
    J, d = inst.J, inst.decomp
    well = WellLabel((1,))
    rate = two_state_rates(J, 1.0, d, 1).rate_plus
    exact_mean = verify_well_separation(J, 1.0, d, well).mean_exit
    x0 = sample_in_well(J, 1.0, d, well, 2000, 4)
    res = escape_times(J, 1.0, d, well, x0, seed=5)
    _, p = ks_exponential(res.times, rate)
    rel = abs(res.times.mean() - exact_mean) / exact_mean
    ok = bool(p >= 0.01 and rel <= 0.10 and not res.censored.any())
    record_criterion(4, "escape exponentiality", ok,
                     f"KS p={p:.3f} (>= 0.01), mean {res.times.mean():.0f} vs exact "
                     f"{exact_mean:.0f} ({100 * rel:.1f}% <= 10%)")
    assert ok


def test_criterion_05_y_detailed_balance():
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(6, 11))
        b1, b2 = rng.uniform(4.0, 8.0, 2)
        inst = planted_instance(n=n, bonds=((0, 1, b1), (2, 3, -b2)), seed=k, log_t=3.0)
        beta = float(rng.choice([0.5, 1.0, 2.0]))
        rt = RateTable(inst.J, beta, inst.decomp)
        worst = max(worst, detailed_balance_residual(
            stationary_Y(inst.J, beta, inst.decomp, rates=rt), y_generator(rt)))
    ok = worst < 1e-10
    record_criterion(5, "Y detailed balance", ok,
                     f"max residual {worst:.2e} over 20 K=2 instances (< 1e-10)")
    assert ok


def test_criterion_06_skeleton_matches_y(pair_instance):
    J, d = pair_instance.J, pair_instance.decomp
    assert sorted(np.round(d.log_scales, 12)) == [10.0, 12.0]
    seps = [verify_well_separation(J, 1.0, d, WellLabel.from_code(c, 2)).ratio
            for c in range(4)]
    cmp = compare_skeleton(J, 1.0, d, [1.0, 2.0], 10 ** 4, 6)
    single = [r["estimate"] for r in cmp.tv_single]
    joint = cmp.joint_tv["joint"]["estimate"]
    ok = max(seps) < 1e-3 and max(single) < 0.1 and joint < 0.15
    record_criterion(6, "skeleton vs Y process", ok,
                     f"TV s=1 {single[0]:.4f}, s=2 {single[1]:.4f} (< 0.1), joint "
                     f"{joint:.4f} (< 0.15), separation ratio <= {max(seps):.1e}")
    assert ok


def test_criterion_07_autocorrelation_vs_replica():
    inst = planted_instance(log_t=4.0)
    J, d = inst.J, inst.decomp
    a = autocorrelation_distribution(J, 1.0, d, 2.0, 10 ** 4, 7)
    b = autocorrelation_distribution(J, 1.0, d, 5.0, 200, 8)
    same = (np.array_equal(a.replica_values, b.replica_values)
            and np.array_equal(a.replica_probs, b.replica_probs))
    ok = a.tv_binned < 0.1 and same
    record_criterion(7, "autocorrelation vs replica law", ok,
                     f"binned TV {a.tv_binned:.4f} (< 0.1), 20 bins, 1e4 samples; "
                     f"replica law s=2 vs s=5 identical: {same}")
    assert ok


def test_criterion_08_fk_exactness():
    worst, worst_es = 0.0, 0.0
    for k in range(10):
        A = mixed_instance(k, 4)
        beta = (0.3, 1.0)[k % 2]
        for rep in correlation_identity_all(A, beta).values():
            worst = max(worst, rep.difference)
        worst_es = max(worst_es, edwards_sokal_check(A, beta).max_joint_diff)
    ok = worst < 1e-12 and worst_es < 1e-12
    record_criterion(8, "random-cluster identities", ok,
                     f"max |<s_i s_j> - <eta_ij>| {worst:.1e}, joint-law gap {worst_es:.1e} "
                     f"(< 1e-12)")
    assert ok


def test_criterion_09_mean_bond_probability():
    b0 = beta0(0.5)
    below = {N: mean_bond_prob(0.5, 0.9 * b0, N) for N in (1e2, 1e4, 1e6)}
    above = {N: mean_bond_prob(0.5, 1.1 * b0, N) for N in (1e4, 1e5, 1e6, 1e8)}
    ok = (abs(b0 - 1 / (2 * math.pi)) < 1e-12 and all(v < 1 for v in below.values())
          and all(v > 1 for v in above.values()))
    record_criterion(9, "subcritical bond percolation", ok,
                     f"beta0-1/(2pi)={b0 - 1 / (2 * math.pi):.1e}; 0.9 beta0: "
                     + ", ".join(f"{v:.4f}" for v in below.values()) + "; 1.1 beta0: "
                     + ", ".join(f"{v:.4f}" for v in above.values()))
    assert ok


def test_criterion_10_congestion_bounds():
    rng = np.random.default_rng(10)
    bad = 0
    for k in range(100):
        n = int(rng.integers(3, 9))
        A = mixed_instance(k, n)
        tau = np.where(rng.random(n) < 0.5, -1, 1)
        beta = float(rng.choice([0.2, 0.5, 1.0, 2.0]))
        rep = congestion_4state(A, beta, 0, 1, tau)
        bad += not (rep.lower_holds and rep.upper_holds)
    ok = bad == 0
    record_criterion(10, "canonical-path congestion", ok,
                     f"{bad} violations of 1/gap <= B <= 128 exp(2 beta max row) in 100")
    assert ok


def test_criterion_11_block_gap():
    bad, checked = 0, 0
    for seed in range(10):
        inst = planted_instance(n=8, bonds=((0, 1, 4.0),), log_t=4.0, seed=seed,
                                background=0.3, max_background=2.0)
        J = inst.J
        A = np.asarray(J.values)
        top = np.abs(A).max(axis=1)
        cut = float(np.median(top[2:]))
        V1, V2, V3 = three_block_partition(J, 1, cut)
        frozen = {0: 1, 1: 1}
        assert set(V3) == {0, 1} and V1 and V2
        rep = block_gap_check(J, 1.0, [V1, V2], frozen=frozen)
        checked += 1
        bad += not rep.holds
    ok = bad == 0 and checked == 10
    record_criterion(11, "block-dynamics gap inequality", ok,
                     f"{bad} violations in {checked} instances (n=8, blocks V1, V2; V3 frozen)")
    assert ok


def test_criterion_12_well_separation():
    inst = planted_instance(n=8, bonds=((0, 1, 6.0),), log_t=6.0)
    rep = verify_well_separation(inst.J, 1.0, inst.decomp, WellLabel((1,)))
    ok = rep.ratio < 1e-3
    record_criterion(12, "mixing within a well vs exit", ok,
                     f"t_mix {rep.t_mix:.3g} / mean exit {rep.mean_exit:.4g} = "
                     f"{rep.ratio:.2e} (< 1e-3)")
    assert ok


def test_criterion_13_coupling_statistics():
    N = 448  # 100128 upper entries
    J = sample_matrix(CouplingLaw.pareto(0.5, N), 13)
    x = np.sort(np.abs(J.upper()) * N ** 2)
    m = len(x)
    true = x ** -0.5
    dev = max(np.abs(1 - np.arange(1, m + 1) / m - true).max(),
              np.abs(1 - np.arange(m) / m - true).max())
    eps = dkw_epsilon(m, 0.99)

    sizes, n_seeds = (50, 100, 200, 400), 1000
    joint, groups = [], {}
    for n in sizes:
        reg = RegimeParams(beta=1.0, a=0.1, gamma=1.9, alpha=0.5, n=n)
        law = CouplingLaw.pareto(0.5, n)
        passes = {"all": 0}
        for seed in range(n_seeds):
            lp = structure_diagnostics(sample_matrix(law, seed), reg).lemma_passes()
            passes["all"] += all(lp.values())
            for key, v in lp.items():
                passes[key] = passes.get(key, 0) + v
        joint.append(passes["all"] / n_seeds)
        for key in lp:
            groups.setdefault(key, []).append(passes[key] / n_seeds)
    mono = all(b > a for a, b in zip(joint, joint[1:]))
    ok = m >= 10 ** 5 and dev <= eps and mono
    detail = (f"DKW sup {dev:.5f} <= {eps:.5f} (m={m}); joint pass frequency "
              + " < ".join(f"{v:.3f}" for v in joint) + f" ({n_seeds} seeds); per lemma: "
              + "; ".join(f"{k} " + ",".join(f"{v:.3f}" for v in vals)
                          for k, vals in groups.items()))
    record_criterion(13, "coupling-law statistics", ok, detail)
    assert ok


def test_criterion_14_high_temperature_trend():
    b = 0.5 * beta0(0.5)
    J = sample_matrix(CouplingLaw.pareto(0.5, 200), 1)
    thr = 0.5 * (J.abs_sorted[3] + J.abs_sorted[4])
    d = WellDecomposition(J, RegimeParams.from_threshold(b, thr, 200, gamma=1.9))
    L = 1
    rows = []
    for tau in (1, -1):
        u = uniformity_check(J, b, d, L, (tau,), 10 ** 4, 14)
        rows.append(u.tv)

    means = []
    sizes = (50, 100, 200, 400)
    for N in sizes:
        vals = []
        for seed in range(12):
            if len(vals) == 4:
                break
            reg = RegimeParams(beta=b, a=0.0042, gamma=1.9, alpha=0.5, n=N)
            Jn = sample_matrix(CouplingLaw.pareto(0.5, N), seed)
            try:
                dn = WellDecomposition(Jn, reg)
            except StructuralError:
                continue
            vals.append(q_overlap_stats(Jn, b, dn, 1000, seed, n_burn=20).mean_q2)
        means.append(float(np.mean(vals)))
    slope = np.polyfit(np.log(sizes), np.log(means), 1)[0]
    decreasing = all(y < x for x, y in zip(means, means[1:]))
    ok = d.K - L == 3 and max(rows) < 0.1 and decreasing and -1.3 <= slope <= -0.7
    record_criterion(14, "high-temperature uniformity and overlap", ok,
                     f"K-L={d.K - L}, TV to uniform {rows[0]:.4f} / {rows[1]:.4f} (< 0.1); "
                     "E[q^2] " + ", ".join(f"N={N}: {v:.4f}" for N, v in zip(sizes, means))
                     + f" decreasing, log-log slope {slope:.2f}")
    assert ok
