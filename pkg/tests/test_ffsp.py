import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.sparse.linalg import expm_multiply

from srnfilter.errors import SizeCap, StepUnstable, ZeroMass
from srnfilter.ffsp import (
    Pmf,
    TruncatedSpace,
    UnnormalizedPmf,
    cme_operator,
    enumerate_space,
    filter_interjump,
    filter_jump,
    filtering_operator,
    full_model_rows,
    normalize,
    solve_cme,
)
from srnfilter.model import Reaction, SrnModel, StatePartition


def birth_death(lam=3.0, mu=1.0):
    return SrnModel(("S",), (Reaction([0], [1], lam), Reaction([1], [0], mu)))


def two_species():
    # production -> conversion -> decay; B observed in the filtering tests
    return SrnModel(
        ("A", "B"),
        (
            Reaction([0, 0], [1, 0], 2.0),
            Reaction([1, 0], [0, 1], 1.0),
            Reaction([0, 1], [0, 0], 1.0),
        ),
    )


class TestTruncatedSpace:
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 4)), min_size=1, max_size=3))
    @settings(max_examples=40, deadline=None)
    def test_index_bijection(self, dims):
        bounds = [(lo, lo + span) for lo, span in dims]
        space = enumerate_space(bounds)
        idx = space.index_of(space.states)
        np.testing.assert_array_equal(idx, np.arange(space.size))

    def test_outside_is_negative(self):
        space = enumerate_space([(0, 2), (1, 3)])
        assert space.index_of([[3, 2]])[0] == -1
        assert space.index_of([[0, 0]])[0] == -1
        assert space.index_of([[-1, 2]])[0] == -1

    def test_size_cap(self):
        with pytest.raises(SizeCap):
            enumerate_space([(0, 10)] * 9, size_cap=10**6)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            TruncatedSpace([2], [1])


class TestPmf:
    def test_marginal_sums(self):
        space = enumerate_space([(0, 2), (0, 3)])
        rng = np.random.default_rng(0)
        p = rng.random(space.size)
        p /= p.sum()
        pmf = Pmf(space, p)
        m0 = pmf.marginal((0,))
        grid = p.reshape(3, 4)
        np.testing.assert_allclose(m0.probs, grid.sum(axis=1))
        assert abs(m0.probs.sum() - 1.0) < 1e-12

    def test_marginal_axis_order(self):
        space = enumerate_space([(0, 1), (0, 2)])
        p = np.arange(space.size, dtype=float)
        p /= p.sum()
        pmf = Pmf(space, p)
        m = pmf.marginal((1, 0))
        grid = p.reshape(2, 3)
        np.testing.assert_allclose(m.probs, grid.T.ravel())

    def test_mean_variance(self):
        space = enumerate_space([(0, 2)])
        pmf = Pmf(space, np.array([0.2, 0.5, 0.3]))
        assert abs(pmf.mean(0) - 1.1) < 1e-12
        assert abs(pmf.variance(0) - (0.2 * 1.21 + 0.5 * 0.01 + 0.3 * 0.81)) < 1e-12


class TestUnnormalized:
    def test_rebase_preserves_value(self):
        space = enumerate_space([(0, 3)])
        rho = UnnormalizedPmf(space, np.array([1e-120, 2e-120, 0, 0]), 0.0)
        before = rho.weights * math.exp(rho.log_norm)
        rho.rebase()
        after = rho.weights * math.exp(rho.log_norm)
        np.testing.assert_allclose(after, before, rtol=1e-12)

    def test_zero_mass(self):
        space = enumerate_space([(0, 1)])
        rho = UnnormalizedPmf(space, np.zeros(2))
        with pytest.raises(ZeroMass):
            rho.rebase()

    def test_normalize_scale_invariant(self):
        space = enumerate_space([(0, 2)])
        w = np.array([1.0, 2.0, 3.0])
        p1 = normalize(UnnormalizedPmf(space, w, 0.0))
        p2 = normalize(UnnormalizedPmf(space, 7.5 * w, -4.0))
        np.testing.assert_allclose(p1.probs, p2.probs)


class TestCmeOperator:
    def test_column_sums_nonpositive(self):
        space = enumerate_space([(0, 8)])
        op = cme_operator(birth_death(), space)
        A = op.matrix(0.0)
        colsums = np.asarray(A.sum(axis=0)).ravel()
        assert np.all(colsums <= 1e-12)
        # interior states conserve mass exactly; only the top boundary leaks
        assert np.allclose(colsums[:-1], 0.0, atol=1e-12)
        assert colsums[-1] < 0

    def test_against_matrix_exponential(self):
        space = enumerate_space([(0, 25)])
        model = birth_death()
        p0 = np.zeros(space.size)
        p0[0] = 1.0
        series, leak = solve_cme(model, space, Pmf(space, p0), 1.0, 0.002)
        A = cme_operator(model, space).matrix(0.0)
        ref = expm_multiply(A, p0, start=0.0, stop=1.0, num=2)[-1]
        assert np.abs(series[-1][1].probs - ref).max() < 1e-10
        assert 0 <= leak < 1e-6

    def test_against_poisson_marginal(self):
        space = enumerate_space([(0, 25)])
        p0 = np.zeros(space.size)
        p0[0] = 1.0
        series, _ = solve_cme(birth_death(), space, Pmf(space, p0), 2.0, 0.005)
        mean = 3.0 * (1.0 - math.exp(-2.0))
        ref = stats.poisson.pmf(np.arange(26), mean)
        assert np.abs(series[-1][1].probs - ref).max() < 1e-8

    def test_rk4_order(self):
        space = enumerate_space([(0, 25)])
        model = birth_death()
        p0 = np.zeros(space.size)
        p0[0] = 1.0
        A = cme_operator(model, space).matrix(0.0)
        ref = expm_multiply(A, p0, start=0.0, stop=0.5, num=2)[-1]
        errs = []
        for dt in (0.05, 0.025):
            series, _ = solve_cme(model, space, Pmf(space, p0), 0.5, dt)
            errs.append(np.abs(series[-1][1].probs - ref).max())
        order = math.log2(errs[0] / errs[1])
        assert order > 3.5

    def test_step_unstable(self):
        space = enumerate_space([(0, 40)])
        p0 = np.zeros(space.size)
        p0[0] = 1.0
        with pytest.raises(StepUnstable):
            solve_cme(birth_death(40.0, 5.0), space, Pmf(space, p0), 2.0, 0.5)


class TestFiltering:
    def setup_method(self):
        self.model = two_species()
        self.partition = StatePartition((0,), (), (1,))
        self.space = enumerate_space([(0, 20)])

    def test_interjump_matches_matrix_exponential(self):
        # frozen observed value: the inter-jump flow is a linear autonomous ODE
        rows = full_model_rows(self.model, self.partition, self.space, [2])
        op = filtering_operator(rows, self.space)
        w0 = np.zeros(self.space.size)
        w0[3] = 1.0
        rho = UnnormalizedPmf(self.space, w0.copy(), 0.0, 0.0)
        filter_interjump(self.model, self.partition, self.space, rho, [2],
                         (0.0, 0.8), 0.002)
        ref = expm_multiply(op.matrix(0.0), w0, start=0.0, stop=0.8, num=2)[-1]
        np.testing.assert_allclose(rho.weights * math.exp(rho.log_norm), ref,
                                   atol=1e-10)

    def test_interjump_mass_decreases(self):
        # observable activity only drains unnormalized mass between jumps
        w0 = np.ones(self.space.size)
        rho = UnnormalizedPmf(self.space, w0, 0.0, 0.0)
        before = rho.log_total()
        filter_interjump(self.model, self.partition, self.space, rho, [1],
                         (0.0, 0.5), 0.005)
        assert rho.log_total() < before

    def test_jump_update_hand_computed(self):
        # single observable birth B+=1 via reaction A->B with rate a(x)=x
        w = np.array([0.0, 0.4, 0.6] + [0.0] * 18)
        rho = UnnormalizedPmf(self.space, w.copy(), 0.0, 0.5)
        out = filter_jump(self.model, self.partition, self.space, rho, {1}, [0], 0.5)
        got = out.weights * math.exp(out.log_norm)
        # rho+(x) = a(x+1) * rho-(x+1): x=0 gets 1*0.4, x=1 gets 2*0.6
        expect = np.zeros(21)
        expect[0] = 0.4
        expect[1] = 1.2
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_jump_zero_mass(self):
        w = np.zeros(self.space.size)
        w[0] = 1.0  # A=0: conversion propensity vanishes
        rho = UnnormalizedPmf(self.space, w, 0.0, 0.0)
        with pytest.raises(ZeroMass):
            filter_jump(self.model, self.partition, self.space, rho, {1}, [0], 0.1)

    def test_jump_average_over_candidates(self):
        model = SrnModel(
            ("A", "B"),
            (
                Reaction([1, 0], [0, 1], 2.0),   # A -> B
                Reaction([0, 0], [0, 1], 4.0),   # 0 -> B
            ),
        )
        partition = StatePartition((0,), (), (1,))
        space = enumerate_space([(0, 5)])
        w = np.zeros(6)
        w[2] = 1.0
        rho = UnnormalizedPmf(space, w.copy(), 0.0, 0.0)
        out = filter_jump(model, partition, space, rho, {0, 1}, [0], 0.0)
        got = out.weights * math.exp(out.log_norm)
        # (1/2) * [a_0(x+1) rho(x+1) shifted + a_1(x) rho(x)]
        expect = np.zeros(6)
        expect[1] = 0.5 * (2.0 * 2)   # conversion from A=2
        expect[2] = 0.5 * 4.0         # pure birth leaves A unchanged
        np.testing.assert_allclose(got, expect, atol=1e-12)
