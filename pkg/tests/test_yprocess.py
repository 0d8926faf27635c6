from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyglass.couplings import CouplingMatrix, RegimeParams
from levyglass.errors import InputError
from levyglass.instances import planted_instance
from levyglass.wells import WellDecomposition, two_state_rates
from levyglass.yprocess import (
    RateTable, compare_skeleton, detailed_balance_residual, generator_stationary,
    mprime_rates, simulate_Y, simulate_Y_codes, stationary_Y, y_generator, y_rate,
)


def decoupled(values, n=None):
    """Disjoint planted bonds on an otherwise empty matrix."""
    n = n or 2 * len(values)
    A = np.zeros((n, n))
    for k, v in enumerate(values):
        A[2 * k, 2 * k + 1] = A[2 * k + 1, 2 * k] = v
    J = CouplingMatrix(A)
    thr = 0.5 * min(abs(v) for v in values)
    return J, WellDecomposition(J, RegimeParams.from_threshold(1.0, thr, n))


@pytest.mark.parametrize("beta", [0.3, 1.0])
def test_decoupled_rate_closed_form(beta):
    J, d = decoupled([3.0, -2.0])
    for y in [(1, 1), (-1, 1), (1, -1)]:
        for l, v in ((1, 3.0), (2, 2.0)):
            assert y_rate(J, beta, d, l, y) == pytest.approx(
                2 * math.exp(-2 * beta * v), rel=1e-12)


def test_zero_beta_rate():
    inst = planted_instance()
    rt = RateTable(inst.J, 0.0, inst.decomp, log_t_scale=0.0)
    assert np.allclose(np.exp(rt.log_rates((1, -1))), 2.0)


def test_rate_table_memoizes_and_exports():
    inst = planted_instance()
    rt = RateTable(inst.J, 1.0, inst.decomp)
    a = rt.log_rates((1, 1))
    assert rt.log_rates(0) is a
    assert rt.visited() == [0]
    d = rt.to_dict()
    assert set(d["entries"]) == {"++"}
    with pytest.raises(InputError):
        rt.log_rates((1, 0))
    with pytest.raises(InputError):
        RateTable(inst.J, 1.0, inst.decomp, mode="approx")


def test_mcmc_rate_agrees():
    inst = planted_instance(n=6, bonds=((0, 1, 2.0),), log_t=2.0)
    ex = RateTable(inst.J, 1.0, inst.decomp)
    mc = RateTable(inst.J, 1.0, inst.decomp, mode="mcmc", seed=3)
    lz_ex, lz_mc = ex.log_rate(1, (1,)), mc.log_rate(1, (1,))
    assert abs(lz_ex - lz_mc) < 5 * mc.se(1, (1,)) + 1e-3


def test_simulate_zero_duration_and_single_coordinate():
    J, d = decoupled([2.0])
    rt = RateTable(J, 1.0, d, log_t_scale=4.0)
    tr = simulate_Y(rt, (1,), 0.0, 0)
    assert tr.state_at(0.0) == (1,) and len(tr.times) == 0
    # one coordinate switching at rate r/2 with r = t Z
    r = math.exp(4.0) * 2 * math.exp(-4.0)
    s = 0.4
    codes = simulate_Y_codes(rt, np.zeros(20000, dtype=np.int64), [s], 1)[:, 0]
    same = (codes == 0).mean()
    expect = 0.5 + 0.5 * math.exp(-r * s)
    assert abs(same - expect) < 4 * math.sqrt(expect * (1 - expect) / 20000)


def test_y_trajectory_consistency():
    inst = planted_instance(log_t=9.0)
    rt = RateTable(inst.J, 1.0, inst.decomp)
    tr = simulate_Y(rt, (1, -1), 3.0, 2)
    assert np.all(np.diff(tr.times) > 0)
    for k in range(1, len(tr.states)):
        assert np.abs(tr.states[k] - tr.states[k - 1]).sum() in (0, 2)
    with pytest.raises(InputError):
        tr.state_at(4.0)


def test_frozen_coordinate_is_fixed():
    inst = planted_instance(log_t=9.0)
    rt = RateTable(inst.J, 1.0, inst.decomp)
    codes = simulate_Y_codes(rt, np.full(300, 2, dtype=np.int64), [0.5, 5.0], 1,
                             frozen_coords=(2,))
    assert np.all((codes >> 1) & 1 == 1)


def test_stationary_zero_beta_is_uniform():
    inst = planted_instance()
    st_ = stationary_Y(inst.J, 0.0, inst.decomp)
    assert np.allclose(st_.probs, 0.25, atol=1e-14)


def test_stationary_symmetric_under_global_flip():
    inst = planted_instance(log_t=9.0)
    p = stationary_Y(inst.J, 1.0, inst.decomp).probs
    assert p.sum() == pytest.approx(1.0)
    # code c and its complement are related by flipping every spin
    assert np.allclose(p, p[::-1], rtol=1e-12)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 200), st.floats(0.2, 2.0))
def test_detailed_balance(seed, beta):
    inst = planted_instance(n=8, bonds=((0, 1, 6.0), (2, 3, -5.0)), seed=seed, log_t=9.0)
    rt = RateTable(inst.J, beta, inst.decomp)
    st_ = stationary_Y(inst.J, beta, inst.decomp, rates=rt)
    gen = y_generator(rt)
    assert detailed_balance_residual(st_, gen) < 1e-10
    assert np.allclose(gen.Q.sum(axis=1), 0.0, atol=1e-9)
    assert np.allclose(generator_stationary(gen), st_.probs, atol=1e-8)


def test_conditioned_stationary():
    inst = planted_instance(log_t=9.0)
    st_ = stationary_Y(inst.J, 1.0, inst.decomp)
    c = st_.conditioned({1: -1})
    assert c.probs[[0, 2]].sum() == 0.0
    assert c.probs.sum() == pytest.approx(1.0)
    assert c.probs[1] / c.probs[3] == pytest.approx(st_.probs[1] / st_.probs[3])


def test_frozen_generator_stationary():
    inst = planted_instance(log_t=9.0)
    rt = RateTable(inst.J, 1.0, inst.decomp)
    gen = y_generator(rt, frozen_coords=(1,))
    p = generator_stationary(gen, start_code=1)
    want = stationary_Y(inst.J, 1.0, inst.decomp).conditioned({1: -1}).probs
    assert np.allclose(p, want, atol=1e-10)


@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_mprime_decoupled(beta):
    J, d = decoupled([3.0, -2.0])
    m = mprime_rates(J, beta, d, 2, context=(1,))
    assert m.plus == pytest.approx(2 * math.exp(-4 * beta), rel=1e-12)
    assert m.log_minus == pytest.approx(math.log(2) - 4 * beta, rel=1e-12)


def test_mprime_relates_to_two_state_rates():
    # decoupled: Z = 2 e^{-2 b J} and lambda = 2/(e^{2 b J} + 1) differ by the factor (1 + e^{-2 b J})
    J, d = decoupled([3.0])
    m = mprime_rates(J, 1.0, d, 1)
    ch = two_state_rates(J, 1.0, d, 1)
    assert m.plus / ch.rate_plus == pytest.approx(1 + math.exp(-6.0), rel=1e-12)
    with pytest.raises(InputError):
        mprime_rates(J, 1.0, d, 1, context=(1,))


def test_compare_skeleton_zero_beta():
    inst = planted_instance()
    cmp = compare_skeleton(inst.J, 0.0, inst.decomp, [1.0], 4000, 0, log_t_scale=0.0)
    # X is uniform: each bond is unsatisfied w.p. 1/2, and Y never sits in transit
    se = math.sqrt(0.75 * 0.25 / 4000)
    assert abs(cmp.transit_fraction[0] - 0.75) < 4 * se
    assert abs(cmp.tv_single[0]["estimate"] - 0.75) < 4 * se + 0.02


def test_compare_skeleton_transit_fraction_small_in_well_regime():
    inst = planted_instance(log_t=9.0)
    cmp = compare_skeleton(inst.J, 1.0, inst.decomp, [0.5, 1.0], 400, 1)
    assert max(cmp.transit_fraction) < 0.02
    out = json.loads(cmp.to_json())
    assert out["labels"][-1] == "*" and out["K"] == 2


def test_compare_skeleton_validation():
    inst = planted_instance()
    with pytest.raises(InputError):
        compare_skeleton(inst.J, 1.0, inst.decomp, [2.0, 1.0], 10, 0)
    with pytest.raises(InputError):
        compare_skeleton(inst.J, 1.0, inst.decomp, [1.0], 10, 0, init="other")
