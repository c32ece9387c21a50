import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from hisd.dynamics import (
    SaddleState,
    SchemeConfig,
    constraint_defects,
    explicit_step,
    gram_schmidt,
    retract,
    rhs_continuous,
    semi_implicit_v_substep,
    semi_implicit_x_substep,
    step,
    v_substep_system,
    vector_transport,
)
from hisd.energy import QuadraticEnergy, RosenbrockEnergy, default_splitting, explicit_splitting
from hisd.errors import DegenerateDirection, StepTooLarge, ValidationError, ZeroVector
from hisd.harness import PRESETS

from conftest import random_orthonormal_state
from oracles import cofactor_solve3, oracle_semi_implicit_step


def _lists(model):
    return (lambda x: model.force(np.array(x)).tolist(),
            lambda x: model.hessian_neg(np.array(x)).tolist())


class TestSaddleState:
    def test_normalises_input(self):
        s = SaddleState.from_initial([0.8, 1, 1], [[1, -0.4, -0.4]])
        assert np.linalg.norm(s.x) == pytest.approx(1.0, abs=1e-15)
        assert s.k == 1

    def test_names_violated_product(self):
        with pytest.raises(ValidationError, match=r"v1·x"):
            SaddleState.from_initial([0.8, 1, 1], [[1, 0, -0.4]])
        with pytest.raises(ValidationError, match=r"v2·v1"):
            SaddleState.from_initial([0, 0, 1], [[1, 0, 0], [1, 1, 0]])

    def test_rejects_k_not_below_dimension(self):
        with pytest.raises(ValidationError):
            SaddleState.from_initial([1, 0], [[0, 1], [0, 1]])

    @pytest.mark.parametrize("name", "abcd")
    def test_presets_are_orthonormal(self, name):
        p = PRESETS[name]
        assert max(constraint_defects(p.initial_state())) <= 1e-15


class TestRhsContinuous:
    def test_stationary_fixture(self, fixture_model, fixture_state):
        dx, dvs = rhs_continuous(fixture_model, fixture_state)
        np.testing.assert_array_equal(dx, 0.0)
        for dv in dvs:
            assert np.max(np.abs(dv)) == 0.0

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.sampled_from([(-1.0, 5.5), (-0.5, 1.5)]))
    def test_tangency(self, seed, k, ab):
        m = RosenbrockEnergy(*ab)
        s = random_orthonormal_state(np.random.default_rng(seed), 3, k)
        dx, dvs = rhs_continuous(m, s)
        scale = 1.0 + np.linalg.norm(m.force(s.x)) + np.linalg.norm(m.hessian_neg(s.x))
        assert abs(dx @ s.x) <= 1e-12 * scale
        for v, dv in zip(s.directions, dvs):
            assert abs(dv @ s.x + v @ dx) <= 1e-10 * scale


class TestRetractTransport:
    @pytest.mark.parametrize("v, expected", [
        ([3, 4, 0], [0.6, 0.8, 0]),
        ([0, 0, 1], [0, 0, 1]),
        ([1, 1, 1], [1 / math.sqrt(3)] * 3),
    ])
    def test_retract(self, v, expected):
        np.testing.assert_allclose(retract(np.array(v, float)), expected, rtol=1e-15)

    def test_retract_zero(self):
        with pytest.raises(ZeroVector):
            retract(np.zeros(3))

    def test_transport_examples(self):
        x = np.array([1.0, 0.0, 0.0])
        np.testing.assert_array_equal(vector_transport([0, 2, 3], x), [0, 2, 3])
        np.testing.assert_array_equal(vector_transport(x, x), [0, 0, 0])
        np.testing.assert_array_equal(vector_transport([1, 1, 0], x), [0, 1, 0])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 7))
    def test_transport_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        x = retract(rng.standard_normal(d))
        vt = rng.standard_normal(d)
        vh = vector_transport(vt, x)
        assert abs(vh @ x) <= 1e-14 * max(1.0, np.linalg.norm(vt))
        assert abs(np.linalg.norm(vh - vt) - abs(vt @ x)) <= 1e-14 * max(1.0, np.linalg.norm(vt))


class TestGramSchmidt:
    def test_identity_case(self):
        v = np.array([0.6, 0.8, 0.0])
        out, Y = gram_schmidt(v)
        np.testing.assert_array_equal(out, v)
        assert Y == pytest.approx(1.0, abs=1e-15)

    def test_one_prior(self):
        out, Y = gram_schmidt(np.array([1.0, 1.0, 0.0]), [np.array([1.0, 0.0, 0.0])])
        np.testing.assert_array_equal(out, [0, 1, 0])
        assert Y == 1.0

    @given(st.integers(0, 2**32 - 1))
    def test_random_d5(self, seed):
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        prior = [Q[:, 0], Q[:, 1]]
        v_hat = rng.standard_normal(5)
        v, Y = gram_schmidt(v_hat, prior)
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-14
        for p in prior:
            assert abs(v @ p) <= 1e-14
        y_closed = math.sqrt(v_hat @ v_hat - sum((v_hat @ p) ** 2 for p in prior))
        y_direct = np.linalg.norm(v_hat - sum((v_hat @ p) * p for p in prior))
        assert Y == pytest.approx(y_direct, abs=1e-12)
        assert Y == pytest.approx(y_closed, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateDirection):
            gram_schmidt(np.array([1.0, 0.0, 0.0]), [np.array([1.0, 0.0, 0.0])])


class TestXSubstep:
    def test_fixed_point(self, fixture_model, fixture_state):
        split = default_splitting(fixture_model)
        x_tilde, x_n = semi_implicit_x_substep(fixture_model, split, fixture_state, 0.01)
        np.testing.assert_allclose(x_n, fixture_state.x, atol=1e-12)
        np.testing.assert_allclose(x_tilde, fixture_state.x, atol=1e-12)

    @pytest.mark.parametrize("make_split", [default_splitting, explicit_splitting])
    def test_against_cofactor_oracle(self, make_split):
        p = PRESETS["a"]
        m = p.model()
        s = p.initial_state()
        split = make_split(m)
        tau = 2.0**-6
        x_tilde, x_n = semi_implicit_x_substep(m, split, s, tau)
        F, J = _lists(m)
        ox_tilde, ox_n, _, _ = oracle_semi_implicit_step(
            F, J, split.linear_part.tolist(), s.x.tolist(), [v.tolist() for v in s.directions], tau
        )
        np.testing.assert_allclose(x_tilde, ox_tilde, rtol=0, atol=1e-12)
        np.testing.assert_allclose(x_n, ox_n, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("make_split", [default_splitting, explicit_splitting])
    def test_first_order_consistency(self, make_split):
        p = PRESETS["a"]
        m = p.model()
        s = p.initial_state()
        dx, _ = rhs_continuous(m, s)
        errs = []
        for tau in (1e-2, 1e-3, 1e-4):
            x_tilde, _ = semi_implicit_x_substep(m, make_split(m), s, tau)
            errs.append(np.linalg.norm((x_tilde - s.x) / tau - dx))
        rates = np.log10(np.array(errs[:-1]) / errs[1:])
        if errs[0] > 1e-12:
            np.testing.assert_allclose(rates, 1.0, atol=0.15)

    def test_step_too_large(self):
        m = QuadraticEnergy(np.diag([0.0, -1.9]))
        s = SaddleState.from_initial([1.0, 1.0])
        with pytest.raises(StepTooLarge):
            semi_implicit_x_substep(m, default_splitting(m), s, 1.0)


class TestVSubstep:
    def test_fixed_point(self, fixture_model, fixture_state):
        committed = []
        for i, v in enumerate(fixture_state.directions):
            vt = semi_implicit_v_substep(fixture_model, i, v, fixture_state.x, committed, 0.01)
            np.testing.assert_allclose(vt, v, atol=1e-12)
            committed.append(v)

    def test_uses_committed_vectors(self):
        p = PRESETS["c"]
        m = p.model()
        s = p.initial_state()
        tau = 2.0**-6
        split = explicit_splitting(m)
        s_next, diag = step(m, SchemeConfig(tau, split), s)
        x_n = s_next.x
        v1_new = s_next.directions[0]
        v2_prev = s.directions[1]
        vt2 = semi_implicit_v_substep(m, 1, v2_prev, x_n, [v1_new], tau)
        np.testing.assert_array_equal(vt2, diag.directions[1].v_tilde)
        # oracle system assembled with the committed v_{1,n}
        J = m.hessian_neg(x_n)
        F = m.force(x_n)
        P = np.eye(3) - np.outer(x_n, x_n) - 2 * np.outer(v1_new, v1_new)
        M = (np.eye(3) - tau * P @ J - tau * np.outer(x_n, F)).tolist()
        b = (v2_prev - tau * (v2_prev @ J @ v2_prev) * v2_prev).tolist()
        np.testing.assert_allclose(vt2, cofactor_solve3(M, b), rtol=0, atol=1e-12)
        stale = semi_implicit_v_substep(m, 1, v2_prev, x_n, [s.directions[0]], tau)
        gap = np.linalg.norm(stale - vt2)
        assert gap > 1e-6

    def test_committed_count_checked(self):
        p = PRESETS["c"]
        s = p.initial_state()
        with pytest.raises(ValueError):
            semi_implicit_v_substep(p.model(), 1, s.directions[1], s.x, [], 0.01)

    def test_first_order_consistency(self):
        p = PRESETS["c"]
        m = p.model()
        s = p.initial_state()
        _, dvs = rhs_continuous(m, s)
        errs = []
        for tau in (1e-2, 1e-3, 1e-4):
            committed = []
            e = 0.0
            for i, v in enumerate(s.directions):
                vt = semi_implicit_v_substep(m, i, v, s.x, list(s.directions[:i]), tau)
                e = max(e, np.linalg.norm((vt - v) / tau - dvs[i]))
            errs.append(e)
        rates = np.log10(np.array(errs[:-1]) / errs[1:])
        np.testing.assert_allclose(rates, 1.0, atol=0.15)

    def test_system_matrix_folds_rank_one_term(self):
        p = PRESETS["a"]
        m = p.model()
        s = p.initial_state()
        tau = 0.05
        M, b = v_substep_system(m, s.directions[0], s.x, [], tau)
        vt = np.linalg.solve(M, b)
        # the solution satisfies the implicit relation term by term
        J, F = m.hessian_neg(s.x), m.force(s.x)
        v = s.directions[0]
        P = np.eye(3) - np.outer(s.x, s.x)
        rhs = v + tau * P @ J @ vt - tau * v * (v @ J @ v) + tau * s.x * (vt @ F)
        np.testing.assert_allclose(vt, rhs, atol=1e-13)


class TestStep:
    def test_fixed_point(self, fixture_model, fixture_state):
        cfg = SchemeConfig(0.01, default_splitting(fixture_model))
        s_next, diag = step(fixture_model, cfg, fixture_state)
        np.testing.assert_allclose(s_next.x, fixture_state.x, atol=1e-12)
        for a, b in zip(s_next.directions, fixture_state.directions):
            np.testing.assert_allclose(a, b, atol=1e-12)
        assert diag.x_tilde_norm_defect <= 1e-12
        assert diag.max_transport_defect <= 1e-12
        assert diag.max_gs_defect <= 1e-12

    @pytest.mark.parametrize("name", "abcd")
    @pytest.mark.parametrize("make_split", [default_splitting, explicit_splitting])
    def test_constraints_hold_after_each_step(self, name, make_split):
        p = PRESETS[name]
        m = p.model()
        s = p.initial_state()
        cfg = SchemeConfig(2.0**-6, make_split(m))
        for _ in range(3):
            s, diag = step(m, cfg, s)
            nd, tang, orth = constraint_defects(s)
            assert nd <= 1e-12 and tang <= 1e-10 and orth <= 1e-10
            for rec in diag.directions:
                assert abs(np.linalg.norm(rec.v_hat - rec.v_tilde) - rec.transport_defect) <= 1e-14
                assert rec.Y > 0

    @pytest.mark.parametrize("name", "ac")
    def test_matches_full_oracle(self, name):
        p = PRESETS[name]
        m = p.model()
        s = p.initial_state()
        split = default_splitting(m)
        tau = 2.0**-6
        s_next, diag = step(m, SchemeConfig(tau, split), s)
        F, J = _lists(m)
        ox_tilde, ox, ovt, ov = oracle_semi_implicit_step(
            F, J, split.linear_part.tolist(), s.x.tolist(), [v.tolist() for v in s.directions], tau
        )
        np.testing.assert_allclose(diag.x_tilde, ox_tilde, rtol=0, atol=1e-12)
        np.testing.assert_allclose(s_next.x, ox, rtol=0, atol=1e-12)
        for i in range(s.k):
            np.testing.assert_allclose(diag.directions[i].v_tilde, ovt[i], rtol=0, atol=1e-12)
            np.testing.assert_allclose(s_next.directions[i], ov[i], rtol=0, atol=1e-12)

    def test_k_zero_is_projected_gradient_flow(self):
        m = RosenbrockEnergy(-1.0, 5.5)
        s = SaddleState.from_initial([0.8, 1.0, 1.0])
        s_next, diag = step(m, SchemeConfig(0.01), s)
        assert s_next.k == 0 and diag.directions == ()
        dx, _ = rhs_continuous(m, s)
        np.testing.assert_allclose(s_next.x, retract(s.x + 0.01 * dx), atol=1e-15)


class TestExplicitStep:
    def test_fixed_point(self, fixture_model, fixture_state):
        s_next, _ = explicit_step(fixture_model, fixture_state, 0.01)
        np.testing.assert_allclose(s_next.x, fixture_state.x, atol=1e-12)
        for a, b in zip(s_next.directions, fixture_state.directions):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_dispatch_from_config(self):
        p = PRESETS["c"]
        m = p.model()
        s = p.initial_state()
        a, _ = step(m, SchemeConfig(0.01, scheme="explicit"), s)
        b, _ = explicit_step(m, s, 0.01)
        np.testing.assert_array_equal(a.x, b.x)

    @pytest.mark.parametrize("name", "ac")
    def test_agrees_with_semi_implicit_to_second_order(self, name):
        p = PRESETS[name]
        m = p.model()
        s = p.initial_state()
        gaps = []
        taus = [2.0**-e for e in range(9, 13)]
        for tau in taus:
            a, _ = step(m, SchemeConfig(tau, default_splitting(m)), s)
            b, _ = explicit_step(m, s, tau)
            gaps.append(np.linalg.norm(a.x - b.x)
                        + sum(np.linalg.norm(u - w) for u, w in zip(a.directions, b.directions)))
        ratios = np.array(gaps[:-1]) / gaps[1:]
        assert np.all(np.abs(ratios - 4.0) <= 1.0), ratios
