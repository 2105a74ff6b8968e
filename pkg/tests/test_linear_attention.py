"""Tests for the gated linear attention recurrence, chunking and snapshots."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit

from retention_stream.errors import DomainError, NumericalError, PreconditionError, ShapeMismatchError
from retention_stream.linear_attention import (
    GATE_EPS,
    FeatureMap,
    GLAParams,
    RecurrentState,
    TokenSequence,
    ValueRule,
    chunk_sizes,
    discounted_objective,
    feature_map,
    gate,
    process_chunk,
    process_stream,
    readout,
    recursive_objective_step,
    state_row_norms,
    state_update,
    ttt_step,
)


def _gate_params(bias: float, d_model: int = 3, channels: int = 4) -> GLAParams:
    return GLAParams(
        W_gamma=np.zeros((channels, d_model)),
        b_gamma=np.full(channels, bias),
        W_q=np.zeros((channels, d_model)),
        W_k=np.zeros((channels, d_model)),
        W_v=np.zeros((2, d_model)),
    )


class TestObjective:
    def test_single_step(self, rng: np.random.Generator) -> None:
        S, k, v = rng.standard_normal((3, 2)), rng.standard_normal(3), rng.standard_normal(2)
        expected = float(np.sum((S.T @ k - v) ** 2))
        assert discounted_objective(S, [k], [v], [0.3]) == pytest.approx(expected, rel=1e-14)

    def test_exact_fit_is_zero(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((3, 2))
        keys = list(rng.standard_normal((4, 3)))
        values = [S.T @ k for k in keys]
        assert discounted_objective(S, keys, values, [0.9] * 4) == pytest.approx(0.0, abs=1e-24)

    def test_matches_brute_force_sum(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((2, 2))
        keys, values = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        gammas = [0.9, 0.6, 0.3]
        expected = 0.0
        for i in range(3):
            discount = 1.0
            for j in range(i + 1, 3):
                discount *= gammas[j]
            residual = S.T @ keys[i] - values[i]
            expected += discount * float(residual @ residual)
        assert discounted_objective(S, keys, values, gammas) == pytest.approx(expected, rel=1e-12)

    def test_recursion_matches_direct_sum(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((3, 3))
        keys, values = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
        gammas = rng.uniform(0.0, 1.0, size=20)
        J = 0.0
        for t in range(20):
            J = recursive_objective_step(J, S, keys[t], values[t], gammas[t])
        assert J == pytest.approx(discounted_objective(S, keys, values, gammas), abs=1e-10)

    def test_zero_gate_keeps_only_residual(self, rng: np.random.Generator) -> None:
        S, k, v = rng.standard_normal((2, 2)), rng.standard_normal(2), rng.standard_normal(2)
        assert recursive_objective_step(5.0, S, k, v, 0.0) == discounted_objective(S, [k], [v], [1.0])

    def test_negative_previous_value(self) -> None:
        with pytest.raises(PreconditionError):
            recursive_objective_step(-1.0, np.eye(2), np.ones(2), np.ones(2), 0.5)

    def test_length_mismatch(self) -> None:
        with pytest.raises(ShapeMismatchError):
            discounted_objective(np.eye(2), [np.ones(2)], [np.ones(2), np.ones(2)], [0.5])


class TestGate:
    def test_zero_parameters_give_one_half(self) -> None:
        assert np.array_equal(gate(np.ones(3), _gate_params(0.0)), np.full(4, 0.5))

    def test_bias_two(self) -> None:
        np.testing.assert_allclose(gate(np.zeros(3), _gate_params(2.0)), np.full(4, 0.8808), atol=1e-4)
        assert gate(np.zeros(3), _gate_params(2.0))[0] == pytest.approx(float(expit(2.0)), rel=1e-15)

    def test_saturation_is_clamped(self) -> None:
        assert np.all(gate(np.zeros(3), _gate_params(100.0)) == 1.0 - GATE_EPS)
        assert np.all(gate(np.zeros(3), _gate_params(-100.0)) == GATE_EPS)

    def test_non_finite_input(self) -> None:
        with pytest.raises(DomainError):
            gate(np.array([0.0, np.nan, 1.0]), _gate_params(0.0))


class TestStateUpdate:
    def test_near_zero_gate_forgets(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(3, 2)
        state = RecurrentState(rng.standard_normal((3, 2)))
        k, v = rng.standard_normal(3), rng.standard_normal(2)
        updated = state_update(state, k, v, np.full(3, GATE_EPS), params)
        np.testing.assert_allclose(updated.S[0], np.outer(k, v), atol=1e-5)

    def test_single_outer_product(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(3, 2)
        k, v = rng.standard_normal(3), rng.standard_normal(2)
        updated = state_update(params.zero_state(), k, v, np.full(3, 1.0 - GATE_EPS), params)
        assert np.array_equal(updated.S[0], np.outer(k, v))
        assert updated.step == 1

    def test_unrolled_sum(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(2, 2)
        keys, values = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        state = params.zero_state()
        for k, v in zip(keys, values):
            state = state_update(state, k, v, 0.5, params)
        expected = sum(0.5 ** (3 - i) * np.outer(keys[i - 1], values[i - 1]) for i in range(1, 4))
        np.testing.assert_allclose(state.S[0], expected, rtol=1e-14, atol=1e-15)

    def test_rank_one_norm(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(4, 3)
        k, v = rng.standard_normal(4), rng.standard_normal(3)
        state = state_update(params.zero_state(), k, v, 0.9, params)
        assert state.frobenius() == pytest.approx(np.linalg.norm(k) * np.linalg.norm(v), rel=1e-14)

    def test_dimension_mismatch(self) -> None:
        params = GLAParams.bare(3, 2)
        with pytest.raises(ShapeMismatchError):
            state_update(params.zero_state(), np.ones(4), np.ones(2), 0.5, params)

    def test_non_finite_state_raises(self) -> None:
        params = GLAParams.bare(1, 1)
        state = RecurrentState(np.array([[1e300]]))
        with pytest.raises(NumericalError):
            state_update(state, np.array([1e300]), np.array([1e300]), 0.5, params)

    def test_delta_rule_predicts_from_decayed_state(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(3, 2, value_rule=ValueRule.DELTA, eta=0.7)
        S = rng.standard_normal((3, 2))
        k, v = rng.standard_normal(3), rng.standard_normal(2)
        updated = state_update(RecurrentState(S), k, v, 0.8, params)
        expected = 0.8 * S + 0.7 * np.outer(k, v - (0.8 * S).T @ k)
        np.testing.assert_allclose(updated.S[0], expected, rtol=1e-13, atol=1e-14)

    def test_shifted_exp_feature_map(self) -> None:
        keys = np.array([-2.0, 0.0, 0.5])
        np.testing.assert_allclose(feature_map(keys, FeatureMap.SHIFTED_EXP), [np.exp(-2.0), 1.0, 1.5])
        assert np.all(feature_map(np.linspace(-30, 30, 61), FeatureMap.SHIFTED_EXP) > 0)


class TestReadout:
    def test_zero_state(self) -> None:
        assert np.array_equal(readout(np.ones(3), RecurrentState.zeros(1, 3, 2)), np.zeros(2))

    def test_identity_state(self, rng: np.random.Generator) -> None:
        q = rng.standard_normal(4)
        assert np.array_equal(readout(q, RecurrentState(np.eye(4))), q)

    def test_matches_explicit_product(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((2, 3, 4))
        q = rng.standard_normal(6)
        expected = np.zeros(8)
        for h in range(2):
            for j in range(4):
                expected[4 * h + j] = sum(S[h, i, j] * q[3 * h + i] for i in range(3))
        np.testing.assert_allclose(readout(q, RecurrentState(S)), expected, rtol=1e-13)


class TestTTT:
    def test_matches_delta_rule_bitwise(self, rng: np.random.Generator) -> None:
        params = GLAParams.bare(4, 3, value_rule=ValueRule.DELTA, eta=0.3)
        state = RecurrentState(rng.standard_normal((4, 3)))
        k, v = rng.standard_normal(4), rng.standard_normal(3)
        for gamma in (1.0, 0.7):
            assert np.array_equal(ttt_step(state, k, v, gamma, 0.3).S, state_update(state, k, v, gamma, params).S)

    def test_undiscounted_step(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((3, 3))
        k, v = rng.standard_normal(3), rng.standard_normal(3)
        expected = S + 0.5 * np.outer(k, v - S.T @ k)
        np.testing.assert_allclose(ttt_step(RecurrentState(S), k, v, 1.0, 0.5).S[0], expected, rtol=1e-13, atol=1e-14)

    def test_from_zero_state(self, rng: np.random.Generator) -> None:
        k, v = rng.standard_normal(3), rng.standard_normal(2)
        for gamma in (0.1, 0.9):
            result = ttt_step(RecurrentState.zeros(1, 3, 2), k, v, gamma, 0.4)
            np.testing.assert_allclose(result.S[0], 0.4 * np.outer(k, v), rtol=1e-15)

    def test_zero_step_size_only_decays(self, rng: np.random.Generator) -> None:
        S = rng.standard_normal((3, 2))
        result = ttt_step(RecurrentState(S), rng.standard_normal(3), rng.standard_normal(2), 0.6, 0.0)
        assert np.array_equal(result.S[0], 0.6 * S)

    def test_negative_step_size(self) -> None:
        with pytest.raises(DomainError):
            ttt_step(RecurrentState.zeros(1, 2, 2), np.ones(2), np.ones(2), 0.5, -0.1)


class TestStreaming:
    def test_first_output_from_empty_state(self, small_params: GLAParams, small_tokens: TokenSequence) -> None:
        first = small_tokens.slice(0, 1)
        outputs, state = process_chunk(first, small_params.zero_state(), small_params)
        x = first.x[0]
        q = (small_params.W_q @ x).reshape(2, 3)
        k = (small_params.W_k @ x).reshape(2, 3)
        v = (small_params.W_v @ x).reshape(2, 2)
        expected = np.concatenate([(k[h] @ q[h]) * v[h] for h in range(2)])
        np.testing.assert_allclose(outputs[0], expected, rtol=1e-12, atol=1e-15)
        assert state.step == 1

    def test_outputs_are_causal(self, small_params: GLAParams, small_tokens: TokenSequence) -> None:
        outputs, _ = process_chunk(small_tokens, small_params.zero_state(), small_params)
        changed = small_tokens.x.copy()
        changed[8:] += 5.0
        altered, _ = process_chunk(TokenSequence(changed), small_params.zero_state(), small_params)
        assert np.array_equal(outputs[:8], altered[:8])
        assert not np.array_equal(outputs[8:], altered[8:])

    @pytest.mark.parametrize("sizes", [[12], [5, 7], [1] * 12, [3, 3, 3, 3]])
    def test_chunk_boundaries_do_not_matter(
        self, small_params: GLAParams, small_tokens: TokenSequence, sizes: list[int]
    ) -> None:
        reference, final = process_chunk(small_tokens, small_params.zero_state(), small_params)
        outputs, state = process_stream(small_tokens, small_params.zero_state(), small_params, sizes)
        np.testing.assert_allclose(outputs, reference, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(state.S, final.S, rtol=1e-12, atol=1e-14)

    def test_state_size_is_constant(self, small_params: GLAParams, rng: np.random.Generator) -> None:
        tokens = TokenSequence(rng.standard_normal((500, 6)))
        state = small_params.zero_state()
        sizes = set()
        for chunk in tokens.chunks(chunk_sizes(500, 21)):
            _, state = process_chunk(chunk, state, small_params)
            sizes.add(state.nbytes)
        assert sizes == {2 * 3 * 2 * 8}

    def test_chunk_sizes(self) -> None:
        assert chunk_sizes(64, 21) == [21, 21, 21, 1]
        assert chunk_sizes(42, 21) == [21, 21]

    def test_mismatched_chunking(self, small_tokens: TokenSequence) -> None:
        with pytest.raises(ShapeMismatchError):
            list(small_tokens.chunks([5, 5]))

    def test_float32_mode(self, small_params: GLAParams, small_tokens: TokenSequence) -> None:
        params32 = small_params.astype(np.float32)
        outputs, state = process_chunk(small_tokens.astype(np.float32), params32.zero_state(), params32)
        reference, _ = process_chunk(small_tokens, small_params.zero_state(), small_params)
        assert state.S.dtype == np.float32
        np.testing.assert_allclose(outputs, reference, rtol=1e-3, atol=1e-4)


class TestSnapshots:
    def test_round_trip_keeps_heads(self, rng: np.random.Generator) -> None:
        state = RecurrentState(rng.standard_normal((2, 3, 4)))
        restored = RecurrentState.from_bytes(state.to_bytes(), heads=2)
        assert np.array_equal(restored.S, state.S)

    def test_header(self) -> None:
        data = RecurrentState.zeros(2, 3, 4).to_bytes()
        assert data[:4] == b"GLAS"
        assert len(data) == 16 + 3 * 8 * 8

    def test_rejects_foreign_bytes(self) -> None:
        with pytest.raises(PreconditionError):
            RecurrentState.from_bytes(b"NOPE" + bytes(12))

    def test_row_norms(self) -> None:
        S = np.zeros((2, 2, 2))
        S[0, 0] = [3.0, 4.0]
        S[1, 1] = [0.0, 2.0]
        assert np.array_equal(state_row_norms(RecurrentState(S)), [5.0, 0.0, 0.0, 2.0])
