import numpy as np
import pytest

from stremn.errors import ConfigError, ContractError, DimensionError, StateError
from stremn.models import Decoder, Encoder, EncoderConfig, ModelConfig, build_model
from stremn.tensor import Tensor, grad_check, ops, precision


def small_cfg(**kw):
    base = dict(image_size=32, width=8, enc_blocks=2, dec_blocks=2, downsample=4, k_slots=4)
    base.update(kw)
    return ModelConfig(**base)


def frames(rng, n, size=32):
    return rng.uniform(0, 1, (n, 3, size, size)).astype(np.float32)


class TestEncoder:
    def test_shape(self, rng):
        enc = Encoder(EncoderConfig(3, blocks=3, width=8, downsample=8), rng)
        assert enc(Tensor(np.zeros((3, 64, 64), dtype=np.float32))).shape == (8, 8, 8)

    def test_zero_image(self, rng):
        enc = Encoder(EncoderConfig(3, blocks=2, width=4, downsample=4), rng)
        np.testing.assert_array_equal(enc(Tensor(np.zeros((3, 16, 16), dtype=np.float32))).data, 0.0)

    def test_gradient_through_two_blocks(self, f64, rng):
        enc = Encoder(EncoderConfig(3, blocks=2, width=4, downsample=2), rng)
        x = rng.uniform(0, 1, (3, 6, 6))
        r = rng.standard_normal((4, 3, 3))
        w0 = enc.blocks[0].conv1.weight

        def fn(w):
            enc.blocks[0].conv1.weight = w
            return ops.sum(ops.mul(enc(Tensor(x)), Tensor(r)))

        assert grad_check(fn, [w0.data], max_coords=40).max_rel_error < 1e-5


class TestDecoder:
    def test_shape(self, rng):
        dec = Decoder(16, 8, 3, 2, 2, rng)
        assert dec(Tensor(np.zeros((16, 8, 8), dtype=np.float32))).shape == (2, 64, 64)

    def test_frame_head_in_unit_range(self, rng):
        model = build_model(small_cfg(task="pred"), seed=0)
        out = model.decode(Tensor((50 * rng.standard_normal((2 * model.cfg.dv, 8, 8))).astype(np.float32)))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_gradient(self, f64, rng):
        dec = Decoder(4, 4, 1, 1, 2, rng)
        x = rng.standard_normal((4, 3, 3))
        r = rng.standard_normal((2, 6, 6))
        rep = grad_check(lambda w: ops.sum(ops.mul(self._with_weight(dec, w)(Tensor(x)), Tensor(r))), [dec.head.weight.data])
        assert rep.max_rel_error < 1e-5

    @staticmethod
    def _with_weight(dec, w):
        dec.head.weight = w
        return dec


class TestConfig:
    def test_learned_needs_three_slots(self):
        with pytest.raises(ConfigError):
            ModelConfig(k_slots=2)

    def test_rule_policy_accepts_two_slots(self):
        assert ModelConfig(k_slots=2, policy="A").k_slots == 2

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            ModelConfig(task="depth")


class TestVOSModel:
    def test_mask_channel_is_live(self, rng):
        model = build_model(small_cfg(), seed=0)
        f = frames(rng, 1)[0]
        a = model.encode_memory(f, np.zeros((32, 32), dtype=np.float32)).data
        b = model.encode_memory(f, np.ones((32, 32), dtype=np.float32)).data
        assert np.abs(a - b).max() > 0

    def test_memory_encoder_takes_four_channels(self, rng):
        model = build_model(small_cfg(), seed=0)
        out = model.memory_encoder(Tensor(np.zeros((4, 32, 32), dtype=np.float32)))
        assert out.shape == (model.cfg.channels, 8, 8)

    def test_first_frame_is_pinned(self, rng):
        model = build_model(small_cfg(), seed=0)
        state = model.init_state(frames(rng, 1)[0], np.ones((32, 32)))
        assert len(state.bank) == 1 and state.bank.slots[0].pinned and state.bank.slots[0].frame_index == 0

    def test_first_step_reads_one_slot(self, rng):
        model = build_model(small_cfg(), seed=0)
        fr = frames(rng, 2)
        state = model.init_state(fr[0], np.ones((32, 32)))
        logits, state = model.step(state, fr[1])
        assert logits.shape == (2, 32, 32)
        assert state.rollout == [(1, [0])]
        assert len(state.bank) == 2

    def test_capacity_holds(self, rng):
        model = build_model(small_cfg(), seed=0)
        fr = frames(rng, 10)
        state = model.init_state(fr[0], np.ones((32, 32)))
        for t in range(1, 10):
            _, state = model.step(state, fr[t])
        assert len(state.bank) == 4 and state.peak_slots == 4
        assert len(state.decisions) == 10 - 4

    @pytest.mark.parametrize("policy", ["learned", "A", "B", "C", "D", "E", "F"])
    def test_eval_rollout_is_deterministic(self, rng, policy):
        fr = frames(rng, 8)
        outs = []
        for _ in range(2):
            model = build_model(small_cfg(policy=policy), seed=3)
            state = model.init_state(fr[0], np.ones((32, 32)), seed=5)
            seq = []
            for t in range(1, 8):
                logits, state = model.step(state, fr[t])
                seq.append(logits.data)
            outs.append((np.stack(seq), state.bank.frame_indices))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        assert outs[0][1] == outs[1][1]

    def test_step_before_init(self, rng):
        model = build_model(small_cfg(), seed=0)
        with pytest.raises(StateError):
            model.step(None, frames(rng, 1)[0])

    def test_mask_size_mismatch(self, rng):
        with pytest.raises(DimensionError):
            build_model(small_cfg(), seed=0).init_state(frames(rng, 1)[0], np.ones((16, 16)))


class TestPredictionModel:
    def test_clip_encoder_shape(self, rng):
        model = build_model(small_cfg(task="pred"), seed=0)
        assert model.encode_clip(list(frames(rng, 3))).shape == (model.cfg.channels, 8, 8)

    def test_identical_vs_distinct_frames(self, rng):
        model = build_model(small_cfg(task="pred"), seed=0)
        f = frames(rng, 3)
        assert np.abs(model.encode_clip([f[0]] * 3).data - model.encode_clip(list(f)).data).max() > 0

    def test_order_matters(self, rng):
        model = build_model(small_cfg(task="pred"), seed=0)
        f = list(frames(rng, 3))
        assert np.abs(model.encode_clip(f).data - model.encode_clip(f[::-1]).data).max() > 0

    def test_init_slot_and_rollout(self, rng):
        model = build_model(small_cfg(task="pred"), seed=0)
        f = frames(rng, 12)
        state = model.init_state(f[:3])
        assert state.bank.frame_indices == [2]
        for t in range(3, 12):
            pred, state = model.step(state, f[t] if t < 6 else None)
            assert pred.shape == (3, 32, 32)
        assert len(state.bank) == 4

    def test_wrong_clip_length(self, rng):
        with pytest.raises(ContractError):
            build_model(small_cfg(task="pred"), seed=0).init_state(frames(rng, 2))


def test_seeded_init_is_reproducible():
    with precision(32):
        a = dict(build_model(small_cfg(), seed=4).state_dict())
        b = dict(build_model(small_cfg(), seed=4).state_dict())
        c = dict(build_model(small_cfg(), seed=5).state_dict())
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
