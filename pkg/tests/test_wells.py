from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_couplings
from levyglass.couplings import CouplingLaw, CouplingMatrix, RegimeParams, sample_matrix
from levyglass.dynamics import EngineKind, run, sample_in_well, snapshots, uniform_starts
from levyglass.errors import InputError, StructuralError
from levyglass.hamiltonian import (Constraint, conditional_expectation, gibbs_exact,
                                   pair_rate_functional)
from levyglass.harness.stats import tv_distance
from levyglass.instances import planted_instance
from levyglass.wells import (
    TRANSIT, TwoStateChain, WellDecomposition, WellLabel, simulate_two_state,
    simulate_two_state_many, skeleton, skeleton_codes, timescale_index, two_state_rates,
)


def single_bond(n=4, value=5.0, sign=1.0):
    A = np.zeros((n, n))
    A[0, 1] = A[1, 0] = sign * value
    J = CouplingMatrix(A)
    return J, WellDecomposition(J, RegimeParams.from_threshold(1.0, value / 2, n))


def test_label_strings():
    assert str(WellLabel((1, -1, 1))) == "+-+"
    assert str(WellLabel.transit()) == "*"
    assert WellLabel.parse("+--") == WellLabel((1, -1, -1))
    assert WellLabel.parse("*").is_transit
    with pytest.raises(InputError):
        WellLabel.parse("+x")
    for code in range(8):
        assert WellLabel.from_code(code, 3).code() == code
    assert WellLabel.from_code(TRANSIT, 3).is_transit


def test_skeleton_examples():
    J, d = single_bond(n=4)
    assert skeleton([1, 1, 1, -1], d) == WellLabel((1,))
    assert skeleton([1, -1, 1, 1], d).is_transit
    Z = CouplingMatrix(np.zeros((3, 3)))
    d0 = WellDecomposition(Z, RegimeParams.from_threshold(1.0, 1.0, 3))
    assert d0.K == 0 and skeleton([1, -1, 1], d0) == WellLabel(())


def test_non_disjoint_refused():
    A = np.zeros((5, 5))
    A[0, 1] = A[1, 0] = 9.0
    A[1, 2] = A[2, 1] = 8.0
    with pytest.raises(StructuralError) as err:
        WellDecomposition(CouplingMatrix(A), RegimeParams.from_threshold(1.0, 5.0, 5))
    assert err.value.offending == [1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_reconstruction_matches(seed):
    inst = planted_instance(n=8, bonds=((0, 1, 6.0), (2, 3, -5.0), (4, 7, 4.0)), seed=seed % 50)
    d = inst.decomp
    rng = np.random.default_rng(seed)
    s = np.where(rng.random(8) < 0.5, -1, 1)
    label = skeleton(s, d)
    if not label.is_transit:
        rec = d.reconstruct(label)
        assert all(s[v] == x for v, x in rec.items())
        assert set(rec) == set(d.vertices.tolist())


def test_skeleton_codes_vectorized():
    inst = planted_instance(bonds=((0, 1, 6.0), (2, 3, -5.0)))
    conf = uniform_starts(8, 200, 3)
    codes = skeleton_codes(conf, inst.decomp)
    assert [WellLabel.from_code(int(c), 2) for c in codes] == \
        [skeleton(s, inst.decomp) for s in conf]


def test_timescale_examples():
    inst = planted_instance(bonds=((0, 1, 6.0), (2, 3, -5.0)), log_t=9.0)
    d = inst.decomp
    g = d.log_scales
    assert timescale_index(d, time=1.0, log_delta=-0.5) == timescale_index(d, log_time=0.0,
                                                                           log_delta=-0.5)
    ti = timescale_index(d, log_time=0.0, log_delta=-0.5)
    assert (ti.L, ti.case) == (2, 2)
    ti = timescale_index(d, log_time=g[0], log_delta=-0.5)
    assert (ti.L, ti.case) == (1, 1)
    ti = timescale_index(d, log_time=g[0] + 5, log_delta=-0.5)
    assert ti.L == 0
    with pytest.raises(StructuralError):
        timescale_index(d, log_time=11.0, log_delta=-1.5)
    with pytest.raises(InputError):
        timescale_index(d, log_time=1.0, log_delta=0.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(2.0, 40.0), min_size=1, max_size=5, unique=True),
       st.lists(st.floats(-5.0, 60.0), min_size=2, max_size=10))
def test_timescale_index_monotone(mags, log_times):
    n = 2 * len(mags)
    A = np.zeros((n, n))
    for k, m in enumerate(sorted(mags, reverse=True)):
        A[2 * k, 2 * k + 1] = A[2 * k + 1, 2 * k] = m
    d = WellDecomposition(CouplingMatrix(A), RegimeParams.from_threshold(1.0, 1.0, n))
    Ls = []
    for lt in sorted(log_times):
        try:
            Ls.append(timescale_index(d, log_time=lt, log_delta=-1e-3).L)
        except StructuralError:
            continue
    assert all(a >= b for a, b in zip(Ls, Ls[1:]))


@pytest.mark.parametrize("value,beta", [(3.0, 1.0), (2.0, 0.5), (5.0, 1.3)])
def test_two_state_decoupled_closed_form(value, beta):
    J, d = single_bond(value=value)
    ch = two_state_rates(J, beta, d, 1)
    expect = 2.0 / (math.exp(2 * beta * value) + 1)
    assert ch.rate_plus == pytest.approx(expect, rel=1e-12)
    assert ch.rate_minus == pytest.approx(expect, rel=1e-12)


def test_two_state_zero_beta():
    inst = planted_instance()
    ch = two_state_rates(inst.J, 0.0, inst.decomp, 1)
    assert ch.rate_plus == pytest.approx(1.0) and ch.rate_minus == pytest.approx(1.0)


def test_two_state_symmetric_instance():
    # no fields, so the law is invariant under global flip
    J = CouplingMatrix(random_couplings(7, 4, scale=0.3) + np.pad([[0, 4.0], [4.0, 0]],
                                                                  ((0, 5), (0, 5))))
    d = WellDecomposition(J, RegimeParams.from_threshold(1.0, 3.0, 7))
    ch = two_state_rates(J, 1.0, d, 1)
    assert ch.rate_plus == pytest.approx(ch.rate_minus, rel=1e-12)


def test_two_state_matches_conditional_expectation():
    inst = planted_instance(bonds=((0, 1, 6.0), (2, 3, -5.0)), log_t=9.0)
    d = inst.decomp
    ch = two_state_rates(inst.J, 1.0, d, 2, context=(-1,))
    frozen = {0: -1, 1: -1, 2: 1, 3: -1}
    t = gibbs_exact(inst.J, 1.0, Constraint(frozen=frozen))
    v, w = d.edge(2)
    assert ch.rate_plus == pytest.approx(
        conditional_expectation(t, pair_rate_functional(inst.J, 1.0, v, w)), rel=1e-12)


def test_two_state_context_validation():
    inst = planted_instance()
    with pytest.raises(InputError):
        two_state_rates(inst.J, 1.0, inst.decomp, 2, context=())
    with pytest.raises(InputError):
        two_state_rates(inst.J, 1.0, inst.decomp, 0)


def test_two_state_mcmc_agrees_with_exact():
    J = sample_matrix(CouplingLaw.planted_law(6, {(0, 1): 2.0}, base=CouplingLaw.pareto(0.5, 6),
                                              base_scale=0.02), 3)
    d = WellDecomposition(J, RegimeParams.from_threshold(1.0, 1.0, 6))
    ex = two_state_rates(J, 1.0, d, 1)
    mc = two_state_rates(J, 1.0, d, 1, mode="mcmc", seed=9)
    assert mc.mode == "mcmc" and mc.se_plus > 0
    assert abs(mc.rate_plus - ex.rate_plus) < 5 * mc.se_plus + 1e-3 * ex.rate_plus
    assert abs(mc.rate_minus - ex.rate_minus) < 5 * mc.se_minus + 1e-3 * ex.rate_minus


def test_two_state_chain_basics():
    ch = TwoStateChain(2.0, 0.5)
    assert ch.stationary() == pytest.approx((0.2, 0.8))
    assert simulate_two_state(ch, -1, 0.0, 0) == -1
    with pytest.raises(InputError):
        TwoStateChain(0.0, 1.0)


def test_two_state_symmetric_closed_form():
    r = 0.7
    ch = TwoStateChain(r, r)
    for t in (0.5, 2.0):
        emp = (simulate_two_state_many(ch, 1, t, 40000, 5) == 1).mean()
        expect = 0.5 + 0.5 * math.exp(-r * t)
        assert ch.prob_same(1, t) == pytest.approx(expect)
        assert abs(emp - expect) < 4 * math.sqrt(expect * (1 - expect) / 40000)


def test_two_state_long_run_frequency():
    ch = TwoStateChain(2.0, 0.5)
    emp = (simulate_two_state_many(ch, 1, 200.0, 40000, 6) == 1).mean()
    assert abs(emp - ch.stationary()[0]) < 4 * math.sqrt(0.16 / 40000)


def test_case_one_skeleton_matches_two_state_chain():
    # single bond with 2 beta |J| = 8 observed at the Case-1 time e^8
    inst = planted_instance(n=6, bonds=((0, 1, 4.0),), log_t=4.0)
    d = inst.decomp
    t_obs = math.exp(8.0)
    assert timescale_index(d, time=t_obs, log_delta=-1.0).case == 1
    ch = two_state_rates(inst.J, 1.0, d, 1)
    x0 = sample_in_well(inst.J, 1.0, d, WellLabel((1,)), 4000, 1)
    snap = snapshots(inst.J, 1.0, x0, [t_obs], seed=2)[:, 0, :]
    codes = skeleton_codes(snap, d)
    emp = np.array([(codes == 0).sum(), (codes == 1).sum(), (codes == TRANSIT).sum()])
    p = ch.prob_same(1, t_obs)
    assert tv_distance(emp, np.array([p, 1 - p, 0.0])) < 0.1


def test_first_update_at_unsatisfied_bond_succeeds():
    inst = planted_instance(n=8, bonds=((0, 1, 3.0),), log_t=2.0)
    A = np.asarray(inst.J.values)
    beta = 1.0
    rows = np.abs(A[[0, 1]]).sum(axis=1) - 3.0
    bound = math.exp(-2 * beta * 3.0 + 2 * beta * rows.max())
    rng = np.random.default_rng(0)
    success = 0
    n_runs = 3000
    for k in range(n_runs):
        s = np.where(rng.random(8) < 0.5, -1, 1)
        s[1] = -s[0]
        tr = run(inst.J, beta, s, 20.0, EngineKind.NAIVE, seed=k, record_null=True)
        hit = np.nonzero(np.isin(tr.vertices, [0, 1]))[0]
        # first ring at an endpoint; state just before it is s unless other sites moved
        k0 = hit[0]
        before = tr.states_at([tr.times[k0] - 1e-12])[0] if k0 else s
        success += int(tr.new_spins[k0] != before[tr.vertices[k0]])
    assert success / n_runs >= 1 - 2 * bound


def test_skeleton_uniform_after_burn_in():
    inst = planted_instance(bonds=((0, 1, 6.0), (2, 3, -5.0)), log_t=9.0)
    x0 = uniform_starts(8, 8000, 4)
    snap = snapshots(inst.J, 1.0, x0, [50.0], seed=5)[:, 0, :]
    codes = skeleton_codes(snap, inst.decomp)
    counts = np.array([(codes == c).sum() for c in range(4)] + [(codes == TRANSIT).sum()])
    assert tv_distance(counts, np.array([1, 1, 1, 1, 0.0])) < 0.05
