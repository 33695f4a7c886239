import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import first_last_reference, fusion_scalar_oracle, queue_reference, similarity_oracle, stack_reference

from stremn.errors import ConfigError, DimensionError, StateError, UnsupportedOperation
from stremn.memory import (
    FusionModule,
    MemoryBank,
    SlotEntry,
    UpdateKeyProjector,
    baseline_policy_update,
    canonical_policy,
    feature_align,
    fuse_templates,
    fusion_update,
    gumbel_softmax,
    one_hot_argmax,
    project_update_keys,
    similarity,
    straight_through_select,
    update_memory,
)
from stremn.tensor import GradientTape, Tensor, backward, grad_check, ops


def make_bank(rng, k=6, shape=(4, 3, 3), policy="learned", n=None, frames=None):
    n = k if n is None else n
    frames = list(range(n)) if frames is None else frames
    slots = [SlotEntry(Tensor(rng.standard_normal(shape)), f, pinned=(i == 0)) for i, f in enumerate(frames)]
    return MemoryBank(k, policy, slots=slots)


def insert_all(frames, kind, k, rng=None, shape=(2, 2, 2)):
    bank = MemoryBank(k, kind)
    r = np.random.default_rng(0)
    for f in frames:
        bank = baseline_policy_update(bank, Tensor(r.standard_normal(shape)), f, kind, rng)
    return bank


class TestUpdateKeys:
    def test_zero_in_zero_out(self, rng):
        proj = UpdateKeyProjector(4, 2, rng)
        proj.conv.bias.data[:] = 0
        out = project_update_keys(Tensor(np.zeros((4, 5, 5))), proj)
        assert out.shape == (2, 5, 5)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_channel_contract(self, rng):
        with pytest.raises(DimensionError):
            project_update_keys(Tensor(np.zeros((3, 5, 5))), UpdateKeyProjector(4, 2, rng))

    def test_weight_gradient(self, f64, rng):
        proj = UpdateKeyProjector(3, 2, rng)
        x, y = Tensor(rng.standard_normal((3, 3, 3))), Tensor(rng.standard_normal((3, 3, 3)))

        def fn(w):
            proj.conv.weight = w
            return similarity(project_update_keys(x, proj), project_update_keys(y, proj))

        assert grad_check(fn, [rng.standard_normal((2, 3, 3, 3))]).max_rel_error < 1e-6


class TestSimilarity:
    def test_self_similarity(self, f64, rng):
        u = rng.standard_normal((3, 4, 4))
        assert similarity(Tensor(u), Tensor(u)).item() == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self, f64):
        a = np.zeros((2, 2, 2))
        b = np.zeros((2, 2, 2))
        a[0] = [[1.0, 2.0], [3.0, 0.5]]
        b[1] = [[0.2, 4.0], [1.0, 1.0]]
        assert similarity(Tensor(a), Tensor(b)).item() == pytest.approx(0.0, abs=1e-15)

    def test_matches_pairwise_oracle(self, f64, rng):
        for _ in range(20):
            a, b = rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 2))
            assert abs(similarity(Tensor(a), Tensor(b)).item() - similarity_oracle(a, b)) < 1e-12

    def test_gradient_away_from_ties(self, f64, rng):
        rep = grad_check(lambda a, b: similarity(a, b), [rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3, 3))])
        assert rep.max_rel_error < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            similarity(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 3, 3))))


class TestGumbelSoftmax:
    def test_known_value(self, f64):
        out = gumbel_softmax(Tensor([1.0, 0.0]), 1.0, np.zeros(2))
        np.testing.assert_allclose(out.data, [0.73106, 0.26894], atol=1e-5)

    def test_equal_scores_uniform_over_eligible(self, f64):
        elig = np.array([False, True, True, True, False])
        out = gumbel_softmax(Tensor(np.full(5, 0.3)), 1.0, np.zeros(5), elig)
        np.testing.assert_allclose(out.data, [0, 1 / 3, 1 / 3, 1 / 3, 0])

    def test_low_temperature(self, f64):
        out = gumbel_softmax(Tensor([1.0, 0.0]), 1e-3, np.zeros(2))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-6)

    def test_rejects_bad_temperature(self):
        with pytest.raises(ConfigError):
            gumbel_softmax(Tensor([1.0, 0.0]), 0.0)

    def test_no_eligible_slot(self):
        with pytest.raises(StateError):
            gumbel_softmax(Tensor([1.0, 0.0]), 1.0, eligible=np.array([False, False]))


class TestStraightThrough:
    def test_argmax(self):
        np.testing.assert_array_equal(one_hot_argmax(np.array([0.7, 0.3])), [1, 0])

    def test_tie_goes_to_lowest_index(self):
        np.testing.assert_array_equal(one_hot_argmax(np.array([0.5, 0.5])), [1, 0])

    def test_soft_path_gradient(self, f64, rng):
        r = rng.standard_normal(4)
        rep = grad_check(
            lambda s: ops.sum(ops.mul(straight_through_select(ops.softmax(s)), Tensor(r))),
            [rng.standard_normal(4)],
            numeric_fn=lambda s: ops.sum(ops.mul(ops.softmax(s), Tensor(r))),
        )
        assert rep.max_rel_error < 1e-5


class TestUpdateMemory:
    def test_append_below_capacity(self, rng):
        bank = make_bank(rng, k=6, n=2)
        x = Tensor(rng.standard_normal((4, 3, 3)))
        out, decision = update_memory(bank, x, 2, UpdateKeyProjector(4, 2, rng))
        assert decision is None
        assert len(out) == 3
        assert out.slots[:2] == bank.slots
        assert out.slots[2].template is x

    @pytest.mark.parametrize("forced", [1, 2, 3, 4])
    def test_forced_one_hot(self, rng, forced):
        bank = make_bank(rng)
        x = Tensor(rng.standard_normal((4, 3, 3)))
        out, _ = update_memory(bank, x, 9, UpdateKeyProjector(4, 2, rng), forced_index=forced)
        for i, (old, new) in enumerate(zip(bank.slots, out.slots)):
            if i == forced:
                np.testing.assert_array_equal(new.template.data, x.data)
                assert new.frame_index == 9
            else:
                np.testing.assert_array_equal(new.template.data, old.template.data)

    def test_forced_ineligible(self, rng):
        with pytest.raises(StateError):
            update_memory(make_bank(rng), Tensor(rng.standard_normal((4, 3, 3))), 9, UpdateKeyProjector(4, 2, rng), forced_index=5)

    def test_eval_changes_one_slot_bitwise(self, rng):
        proj = UpdateKeyProjector(4, 2, rng)
        for _ in range(20):
            bank = make_bank(rng)
            x = Tensor(rng.standard_normal((4, 3, 3)))
            out, d = update_memory(bank, x, 99, proj, mode="eval")
            changed = [i for i in range(6) if out.slots[i].template is not bank.slots[i].template]
            assert changed == [d.replaced]
            assert np.array_equal(out.slots[d.replaced].template.data, x.data)
            np.testing.assert_array_equal(d.gumbel_noise, 0.0)

    def test_latest_found_by_frame_index(self, rng):
        # the most recent slot is not necessarily the last position
        bank = make_bank(rng, frames=[0, 30, 10, 20, 5, 7])
        assert bank.latest_position() == 1
        np.testing.assert_array_equal(bank.eligible_mask(), [False, False, True, True, True, True])

    def test_train_mode_needs_rng(self, rng):
        with pytest.raises(ConfigError):
            update_memory(make_bank(rng), Tensor(rng.standard_normal((4, 3, 3))), 9, UpdateKeyProjector(4, 2, rng), mode="train")

    def test_train_mode_gradient_reaches_scores(self, f64, rng):
        proj = UpdateKeyProjector(4, 2, rng)
        bank = make_bank(rng)
        x = Tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
        with GradientTape() as tape:
            out, _ = update_memory(bank, x, 9, proj, mode="train", rng=np.random.default_rng(0))
            loss = ops.sum(ops.stack([ops.sum(s.template) for s in out.slots]))
        grads = backward(loss, tape)
        assert np.abs(grads[proj.conv.weight]).sum() > 0

    def test_capacity_below_three(self):
        with pytest.raises(ConfigError):
            MemoryBank(2, "learned")

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            update_memory(make_bank(rng), Tensor(np.zeros((4, 2, 2))), 9, UpdateKeyProjector(4, 2, rng))

    def test_empty_template(self, rng):
        with pytest.raises(ConfigError):
            update_memory(MemoryBank(4), Tensor(np.zeros((0,))), 0, UpdateKeyProjector(4, 2, rng))


class TestRulePolicies:
    def test_aliases(self):
        assert canonical_policy("A") == "oldest"
        assert canonical_policy("F") == "most-similar"
        with pytest.raises(ConfigError):
            canonical_policy("G")

    def test_queue_example(self):
        assert sorted(insert_all(range(21), "A", 6).frame_indices) == [0, 16, 17, 18, 19, 20]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 8), st.lists(st.integers(1, 5), min_size=1, max_size=30))
    def test_reference_semantics(self, k, gaps):
        frames = list(np.cumsum([0, *gaps]))
        assert insert_all(frames, "A", k).frame_indices == queue_reference(frames, k)
        assert insert_all(frames, "B", k).frame_indices == stack_reference(frames, k)
        assert insert_all(frames, "E", k).frame_indices == first_last_reference(frames)

    def test_first_last_every_step(self):
        bank = MemoryBank(6, "E")
        for t in range(12):
            bank = baseline_policy_update(bank, Tensor(np.ones((1, 2, 2))), t, "E")
            assert bank.frame_indices == ([0] if t == 0 else [0, t])

    def test_most_similar_removes_duplicate(self, rng):
        for j in range(1, 5):
            bank = make_bank(rng, policy="F")
            x = Tensor(bank.slots[j].template.data.copy())
            out = baseline_policy_update(bank, x, 50, "F")
            assert j not in out.frame_indices
            assert len(out) == 6

    def test_random_drop_keeps_pinned_and_latest(self, rng):
        bank = make_bank(rng, policy="C")
        r = np.random.default_rng(3)
        for t in range(6, 200):
            prev_latest = bank.slots[bank.latest_position()].frame_index
            bank = baseline_policy_update(bank, Tensor(rng.standard_normal((4, 3, 3))), t, "C", r)
            assert 0 in bank.frame_indices and prev_latest in bank.frame_indices
            assert len(bank) == 6

    def test_reservoir_size(self):
        bank = MemoryBank(5, "D")
        r = np.random.default_rng(0)
        for t in range(30):
            bank = baseline_policy_update(bank, Tensor(np.ones((1, 1, 1))), t, "D", r)
            assert len(bank) <= 5
            assert bank.frame_indices[0] == 0 and bank.frame_indices[-1] == t
        assert bank.intermediates_seen == 28

    def test_random_policies_need_rng(self):
        with pytest.raises(ConfigError):
            baseline_policy_update(MemoryBank(4, "C"), Tensor(np.ones((1, 1, 1))), 0, "C")

    def test_learned_is_not_a_rule(self):
        with pytest.raises(ConfigError):
            baseline_policy_update(MemoryBank(4), Tensor(np.ones((1, 1, 1))), 0, "learned")


class TestFusion:
    def test_closed_gate_keeps_target(self, rng):
        fus = FusionModule(3, rng)
        a, b = Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((3, 2, 2)))
        np.testing.assert_array_equal(fuse_templates(a, b, fus, force_z=0.0).data, b.data)

    def test_open_filter_passes_input(self, f64, rng):
        fus = FusionModule(3, rng)
        a, b = Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((3, 2, 2)))
        aligned = feature_align(b, a)
        pair = ops.concat([aligned, b], axis=0)
        z = ops.sigmoid(fus.h(pair))
        expected = ops.add(ops.mul(ops.sub(1.0, z), b), ops.mul(z, ops.tanh(fus.g(pair))))
        np.testing.assert_array_equal(fuse_templates(a, b, fus, force_r=1.0).data, expected.data)

    def test_scalar_oracle(self, f64, rng):
        for _ in range(20):
            fus = FusionModule(1, rng, gate_bias=float(rng.standard_normal()))
            for conv in (fus.f, fus.h, fus.g):
                conv.bias.data[:] = rng.standard_normal(1)
            xd, xt = rng.standard_normal(2)
            got = fuse_templates(Tensor(np.full((1, 1, 1), xd)), Tensor(np.full((1, 1, 1), xt)), fus).item()
            taps = [(c.weight.data[0, :, 1, 1], float(c.bias.data[0])) for c in (fus.f, fus.h, fus.g)]
            want = fusion_scalar_oracle(xd, xt, *taps[0], *taps[1], *taps[2])
            assert abs(got - want) < 1e-12

    def test_gate_starts_nearly_closed(self, rng):
        fus = FusionModule(4, rng)
        a, b = Tensor(0.1 * rng.standard_normal((4, 3, 3))), Tensor(0.1 * rng.standard_normal((4, 3, 3)))
        assert np.abs(fuse_templates(a, b, fus).data - b.data).max() < 0.1

    def test_disabled(self, rng):
        fus = FusionModule(4, rng, enabled=False)
        with pytest.raises(UnsupportedOperation):
            fusion_update(make_bank(rng), 2, 3, fus)

    def test_same_slot(self, rng):
        with pytest.raises(StateError):
            fusion_update(make_bank(rng), 2, 2, FusionModule(4, rng))

    def test_update_with_fusion_touches_target_only(self, rng):
        bank = make_bank(rng)
        x = Tensor(rng.standard_normal((4, 3, 3)))
        out, d = update_memory(bank, x, 9, UpdateKeyProjector(4, 2, rng), fusion=FusionModule(4, rng))
        changed = [i for i in range(6) if out.slots[i].template is not bank.slots[i].template]
        assert d.replaced in changed and len(changed) == 2
        assert out.slots[0].template is bank.slots[0].template
