import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import attention_oracle

from stremn.attention import (
    KeyValue,
    KeyValueProjector,
    attention_weights,
    concat_memory_kv,
    memory_position,
    memory_read,
    project_kv,
)
from stremn.errors import DimensionError, StateError
from stremn.tensor import Tensor, grad_check, ops


def kv(rng, dk, dv, h, w, role="memory"):
    return KeyValue(Tensor(rng.standard_normal((dk, h, w))), Tensor(rng.standard_normal((dv, h, w))), role)


class TestProjection:
    def test_zero_in_zero_out(self, rng):
        proj = KeyValueProjector(4, 3, 5, rng)
        for conv in (proj.key, proj.value):
            conv.bias.data[:] = 0
        out = project_kv(Tensor(np.zeros((4, 6, 6))), proj)
        assert out.key.shape == (3, 6, 6) and out.value.shape == (5, 6, 6)
        assert not out.key.data.any() and not out.value.data.any()

    def test_channel_contract(self, rng):
        with pytest.raises(DimensionError):
            project_kv(Tensor(np.zeros((2, 6, 6))), KeyValueProjector(4, 3, 5, rng))

    def test_projection_gradients(self, f64, rng):
        x = Tensor(rng.standard_normal((3, 3, 3)))
        rk, rv = rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 3))
        proj = KeyValueProjector(3, 2, 2, rng)

        def fn(wk, wv):
            proj.key.weight, proj.value.weight = wk, wv
            out = project_kv(x, proj)
            return ops.add(ops.sum(ops.mul(out.key, Tensor(rk))), ops.sum(ops.mul(ops.tanh(out.value), Tensor(rv))))

        rep = grad_check(fn, [rng.standard_normal((2, 3, 3, 3)), rng.standard_normal((2, 3, 3, 3))])
        assert rep.max_rel_error < 1e-6


class TestConcat:
    def test_single_slot_is_relayout(self, rng):
        one = kv(rng, 2, 3, 4, 5)
        m = concat_memory_kv([one])
        np.testing.assert_array_equal(m.key.data, one.key.data.reshape(2, 20))
        np.testing.assert_array_equal(m.value.data, one.value.data.reshape(3, 20))

    def test_slot_major_order(self, rng):
        slots = [kv(rng, 2, 2, 2, 2) for _ in range(3)]
        m = concat_memory_kv(slots)
        assert m.key.shape == (2, 12)
        for pos in range(12):
            s, p = memory_position(pos, 4)
            np.testing.assert_array_equal(m.key.data[:, pos], slots[s].key.data.reshape(2, 4)[:, p])

    def test_position_round_trip(self):
        hw = 6
        seen = {memory_position(j, hw) for j in range(5 * hw)}
        assert seen == {(s, p) for s in range(5) for p in range(hw)}

    def test_empty(self):
        with pytest.raises(StateError):
            concat_memory_kv([])

    def test_mixed_shapes(self, rng):
        with pytest.raises(DimensionError):
            concat_memory_kv([kv(rng, 2, 2, 2, 2), kv(rng, 2, 2, 3, 3)])


class TestRead:
    def test_single_position(self, f64, rng):
        q, m = kv(rng, 3, 2, 1, 1, "query"), kv(rng, 3, 2, 1, 1)
        out = memory_read(q, concat_memory_kv([m]))
        np.testing.assert_array_equal(out.data[:2, 0, 0], m.value.data[:, 0, 0])
        np.testing.assert_array_equal(out.data[2:, 0, 0], q.value.data[:, 0, 0])

    def test_identical_keys_average_values(self, f64, rng):
        slots = [KeyValue(Tensor(np.ones((2, 2, 2))), Tensor(rng.standard_normal((3, 2, 2)))) for _ in range(3)]
        out = memory_read(kv(rng, 2, 3, 2, 2, "query"), concat_memory_kv(slots))
        mean = np.mean([s.value.data.reshape(3, -1) for s in slots], axis=(0, 2))
        np.testing.assert_allclose(out.data[:3], np.broadcast_to(mean[:, None, None], (3, 2, 2)), atol=1e-12)

    def test_matches_double_loop(self, f64, rng):
        q = kv(rng, 3, 3, 2, 2, "query")
        slots = [kv(rng, 3, 3, 2, 2) for _ in range(2)]
        out = memory_read(q, concat_memory_kv(slots))
        want = attention_oracle(q.key.data, q.value.data, [s.key.data for s in slots], [s.value.data for s in slots])
        np.testing.assert_allclose(out.data, want, atol=1e-10, rtol=0)

    def test_weights_are_distributions(self, f64, rng):
        w = attention_weights(kv(rng, 4, 2, 3, 3, "query"), concat_memory_kv([kv(rng, 4, 2, 3, 3) for _ in range(4)]))
        assert w.shape == (9, 36)
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_slot_permutation_invariance(self, seed, n_slots):
        r = np.random.default_rng(seed)
        q = kv(r, 3, 2, 2, 3, "query")
        slots = [kv(r, 3, 2, 2, 3) for _ in range(n_slots)]
        perm = r.permutation(n_slots)
        a = memory_read(q, concat_memory_kv(slots)).data
        b = memory_read(q, concat_memory_kv([slots[i] for i in perm])).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_scaled_logits(self, f64, rng):
        q, m = kv(rng, 4, 2, 2, 2, "query"), concat_memory_kv([kv(rng, 4, 2, 2, 2)])
        plain = attention_weights(q, m).data
        scaled = attention_weights(q, m, scale=True).data
        manual = attention_weights(KeyValue(ops.mul(q.key, 0.5), q.value), m).data
        np.testing.assert_allclose(scaled, manual, atol=1e-12)
        assert not np.allclose(plain, scaled)

    def test_key_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            memory_read(kv(rng, 3, 2, 2, 2, "query"), concat_memory_kv([kv(rng, 4, 2, 2, 2)]))

    def test_value_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            memory_read(kv(rng, 3, 2, 2, 2, "query"), concat_memory_kv([kv(rng, 3, 5, 2, 2)]))
