from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errexplain.config import SimConfig
from errexplain.errors import UsageError
from errexplain.features import (
    ENTITY_INDEX,
    ENTITY_TOKENS,
    FeatureScaler,
    MaskedInput,
    extract,
    feature_slots,
    forward_fill,
    objects_at_goal,
    relative_features,
    to_masked,
)
from errexplain.world import (
    TASK_KEYS,
    EpisodeConfig,
    FailureScenario,
    init_state,
    run_episode,
)

SIM = SimConfig()


def make_episode(scenario, seed=11, obj="cup", place="dining table"):
    return run_episode(
        EpisodeConfig(seed=seed, object=obj, goal_place=place, scenario=scenario)
    )


def failure_features(scenario, **kw):
    episode = forward_fill(make_episode(scenario, **kw))
    config = episode.config
    return extract(episode.snapshots[-1], config.object, config.goal_place, 1.0)


class TestObjectsAtGoal:
    def test_unknown_place_rejected(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        with pytest.raises(UsageError):
            objects_at_goal(snap, "garage", 1.0)

    def test_zero_radius_gives_empty_list(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        assert objects_at_goal(snap, "dining table", 1e-6) == []

    def test_not_present_excludes_the_object(self):
        episode = make_episode(FailureScenario.NOT_PRESENT)
        found = objects_at_goal(episode.snapshots[-1], "dining table", 1.0)
        assert "cup" not in found

    def test_no_failure_includes_the_object(self):
        episode = make_episode(FailureScenario.NO_FAILURE)
        detect_tick = next(s for s in episode.snapshots if s.task_states["k_detect"] == 1)
        assert "cup" in objects_at_goal(detect_tick, "dining table", 1.0)

    def test_sorted_and_excludes_places(self):
        episode = make_episode(FailureScenario.CLOSE_TOGETHER)
        found = objects_at_goal(episode.snapshots[-1], "dining table", 1.0)
        assert found == sorted(found)
        assert not set(found) & {"dining table", "left kitchen counter"}


class TestRelativeFeatures:
    def test_pythagorean_distance(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        locations = dict(snap.entity_locations)
        locations["cup"] = (3.0, 4.0, 0.0)
        snap = replace(snap, entity_locations=locations)
        _, _, rel_a_o = relative_features(snap, "cup", "dining table", ["cup"])
        assert rel_a_o == pytest.approx(5.0, abs=1e-12)

    def test_lone_object_has_empty_min_distance(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        _, rel_o_objg, _ = relative_features(snap, "cup", "dining table", ["cup"])
        assert rel_o_objg is None

    def test_close_together_failure_tick(self):
        fv = failure_features(FailureScenario.CLOSE_TOGETHER)
        assert fv.rel_o_objg < SIM.geometry.clutter_dist

    def test_believed_pose_drives_agent_distances(self):
        fv = failure_features(FailureScenario.MISLOCALIZED)
        # arrival distance is place height (~0.75) without the offset
        assert fv.rel_a_goal > 0.9


class TestForwardFill:
    def _episode_with_column(self, column):
        episode = make_episode(FailureScenario.NO_FAILURE)
        snaps = list(episode.snapshots[: len(column)])
        for i, value in enumerate(column):
            states = {key: None for key in TASK_KEYS}
            states["k_move"] = value
            snaps[i] = replace(snaps[i], task_states=states)
        return replace(episode, snapshots=tuple(snaps))

    def test_holes_take_most_recent_value(self):
        episode = self._episode_with_column([None, 0, None, 1])
        filled = forward_fill(episode)
        assert [s.task_states["k_move"] for s in filled.snapshots] == [None, 0, 0, 1]

    def test_all_null_column_stays_null(self):
        episode = self._episode_with_column([None, None, None])
        filled = forward_fill(episode)
        assert all(s.task_states["k_move"] is None for s in filled.snapshots)

    def test_filled_move_column_is_monotone(self):
        for scenario in (FailureScenario.NO_FAILURE, FailureScenario.TOO_FAR):
            filled = forward_fill(make_episode(scenario))
            column = [
                s.task_states["k_move"]
                for s in filled.snapshots
                if s.task_states["k_move"] is not None
            ]
            assert column == sorted(column)

    @given(
        st.lists(st.sampled_from([None, 0, 1, -1]), min_size=1, max_size=12),
    )
    @settings(max_examples=60, deadline=None)
    def test_fill_properties(self, column):
        episode = self._episode_with_column(column)
        filled = forward_fill(episode)
        out = [s.task_states["k_move"] for s in filled.snapshots]
        # defined inputs are preserved; holes inherit the latest earlier value
        last = None
        for got, raw in zip(out, column):
            if raw is not None:
                assert got == raw
                last = raw
            else:
                assert got == last
        # idempotent
        again = forward_fill(filled)
        assert [s.task_states["k_move"] for s in again.snapshots] == out


class TestExtract:
    def test_initial_snapshot(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        fv = extract(snap, "cup", "dining table", 1.0)
        assert fv.v_ang == 0.0 and fv.v_lin == 0.0
        assert all(s is None for s in fv.s_k)

    def test_occluded_failure_tick(self):
        fv = failure_features(FailureScenario.OCCLUDED)
        assert fv.o_p is True
        assert fv.s_k[TASK_KEYS.index("k_detect")] == -1

    def test_not_present_failure_tick(self):
        fv = failure_features(FailureScenario.NOT_PRESENT)
        assert fv.o_p is False
        assert fv.s_k[TASK_KEYS.index("k_detect")] == -1

    def test_pure_function(self):
        episode = forward_fill(make_episode(FailureScenario.TOO_FAR))
        snap = episode.snapshots[-1]
        assert extract(snap, "cup", "dining table", 1.0) == extract(
            snap, "cup", "dining table", 1.0
        )

    def test_o_p_consistent_with_x(self):
        for scenario in (FailureScenario.NO_FAILURE, FailureScenario.NOT_PRESENT):
            fv = failure_features(scenario) if scenario is not FailureScenario.NO_FAILURE \
                else extract(forward_fill(make_episode(scenario)).snapshots[-1], "cup", "dining table", 1.0)
            assert fv.o_p == (fv.o in fv.x_entities)


class TestMasking:
    def test_masked_slots_carry_zero_sentinel(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        fv = extract(snap, "cup", "dining table", 1.0)
        m = to_masked(fv)
        assert m.n_values.shape == (12,) and m.n_mask.shape == (12,)
        assert (m.n_values[~m.n_mask] == 0.0).all()
        # initial snapshot: all six task-state slots are Empty
        assert (~m.n_mask[5:11]).all()

    def test_empty_goal_area_becomes_empty_token(self):
        snap = init_state(EpisodeConfig(1, "cup", "dining table", FailureScenario.NO_FAILURE))
        fv = extract(snap, "cup", "dining table", 1e-6)
        m = to_masked(fv)
        assert list(m.x_ids) == [ENTITY_INDEX["<empty>"]]

    def test_flipping_sentinel_leaves_unmasked_projection_unchanged(self, rng):
        values = rng.normal(size=12)
        mask = rng.random(12) > 0.4
        values = np.where(mask, values, 0.0)
        a = MaskedInput(values, mask, np.array([1]), 0)
        poked = values.copy()
        poked[~mask] = 77.0
        b = MaskedInput(poked, mask, np.array([1]), 0)
        np.testing.assert_array_equal(a.n_values[a.n_mask], b.n_values[b.n_mask])
        scaler = FeatureScaler.fit([a])
        np.testing.assert_array_equal(
            scaler.transform(a).n_values, scaler.transform(b).n_values
        )


class TestScaler:
    def test_standardizes_unmasked_columns(self, rng):
        inputs = []
        for _ in range(50):
            values = rng.normal(loc=3.0, scale=2.0, size=12)
            inputs.append(MaskedInput(values, np.ones(12, bool), np.array([0]), 0))
        scaler = FeatureScaler.fit(inputs)
        transformed = np.stack([scaler.transform(m).n_values for m in inputs])
        np.testing.assert_allclose(transformed.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(transformed.std(axis=0), 1.0, atol=1e-10)

    def test_all_masked_column_stays_at_sentinel(self):
        mask = np.ones(12, bool)
        mask[3] = False
        inputs = [
            MaskedInput(np.where(mask, float(i), 0.0), mask, np.array([0]), 0)
            for i in range(5)
        ]
        scaler = FeatureScaler.fit(inputs)
        out = scaler.transform(inputs[0])
        assert out.n_values[3] == 0.0

    def test_constant_column_keeps_unit_scale(self):
        inputs = [
            MaskedInput(np.full(12, 2.5), np.ones(12, bool), np.array([0]), 0)
            for _ in range(4)
        ]
        scaler = FeatureScaler.fit(inputs)
        assert (scaler.std == 1.0).all()
        np.testing.assert_allclose(scaler.transform(inputs[0]).n_values, 0.0)


class TestFeatureSlots:
    def test_slot_order_and_entity_tokens(self):
        episode = forward_fill(make_episode(FailureScenario.OCCLUDED))
        fv = extract(episode.snapshots[-1], "cup", "dining table", 1.0)
        slots = feature_slots(fv)
        assert len(slots) == 12
        assert slots[0] == fv.rel_a_goal
        assert slots[11] == 1.0  # o_p
        assert ENTITY_TOKENS[0] == "<empty>"
        assert all(name in ENTITY_INDEX for name in fv.x_entities)
