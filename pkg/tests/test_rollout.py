import numpy as np
import pytest

from zoomrl.errors import BadLetter, BadShape, NoBoxedAnswer, NoJsonFound
from zoomrl.geometry import BBox, InvalidReason, Size, bbox_contains
from zoomrl.imaging import ImagingConfig
from zoomrl.policy import (
    FeatureLayout,
    GroundAction,
    PolicySpec,
    init_params,
)
from zoomrl.rewards import RewardConfig
from zoomrl.rng import member_stream, stream
from zoomrl.rollout import (
    Mode,
    Provenance,
    RunCfg,
    Termination,
    crop_from_original,
    make_bundle,
    parse_boxed_answer,
    parse_coordinates_json,
    render_transcript,
    run_group,
    run_multiturn_rollout,
    run_rollout,
    run_singleturn_rollout,
)
from zoomrl.taskgen import GenConfig, QuestionKind, gen_count_task, gen_needle_task, oracle_answer


ICFG = ImagingConfig()  # 16384 budget, cell 4, align 4


@pytest.fixture(scope="module")
def env():
    gen = GenConfig(seed=42)
    task = gen_needle_task(gen, 3)
    bundle = make_bundle(task, task.image_ref, ICFG)
    layout = FeatureLayout(token_dim=ICFG.feature_dim)
    spec = PolicySpec(feature_dim=layout.dim, bins=8, choices=4, hidden=32)
    params = init_params(spec, stream(5, "init"))
    run_cfg = RunCfg(imaging=ICFG, bins=8, layout=layout)
    return task, bundle, params, run_cfg


def forced_cfg(run_cfg, action):
    from dataclasses import replace

    return replace(run_cfg, ground_override=lambda task: action)


class TestMultiturn:
    def test_two_turns_exactly(self, env):
        task, bundle, params, run_cfg = env
        traj = run_multiturn_rollout(params, bundle, run_cfg, member_stream(1, 0))
        assert traj.k_g == 2
        assert len(traj.turns) == 2
        assert isinstance(traj.turns[0].atoms[0][0], GroundAction)
        assert traj.terminated_by is Termination.ANSWER
        assert traj.final_answer is not None

    def test_deterministic(self, env):
        task, bundle, params, run_cfg = env
        t1 = run_multiturn_rollout(params, bundle, run_cfg, member_stream(7, 3))
        t2 = run_multiturn_rollout(params, bundle, run_cfg, member_stream(7, 3))
        assert t1.final_answer == t2.final_answer
        assert t1.ground_action == t2.ground_action
        assert t1.turns[0].logprob == t2.turns[0].logprob
        v1 = t1.state.visuals()[1]
        v2 = t2.state.visuals()[1]
        assert np.array_equal(v1.image.pixels, v2.image.pixels)

    def test_reversed_box_falls_back(self, env):
        task, bundle, params, run_cfg = env
        cfg = forced_cfg(run_cfg, GroundAction(5, 0, 2, 7))  # bx1 > bx2
        traj = run_multiturn_rollout(params, bundle, cfg, member_stream(1, 0))
        assert not traj.validity.valid
        assert traj.validity.reason is InvalidReason.DEGENERATE_ORDER
        second = traj.state.visuals()[1]
        assert second.provenance is Provenance.RESIZED
        assert np.array_equal(second.image.pixels, bundle.input_entry.image.pixels)
        assert traj.k_g == 2 and traj.terminated_by is Termination.ANSWER

    def test_forced_target_cell_crop_is_answerable(self, env):
        task, bundle, params, run_cfg = env
        # force the box to the target's cell neighborhood, in input-frame bins
        bins = run_cfg.bins
        w_in, h_in = bundle.input_entry.frame
        sx = w_in / task.original_size.width
        cx1 = int(task.target_bbox.x1 * sx // (w_in / bins))
        cy1 = int(task.target_bbox.y1 * sx // (h_in / bins))
        cx2 = min(cx1 + 1, bins - 1)
        cy2 = min(cy1 + 1, bins - 1)
        cfg = forced_cfg(run_cfg, GroundAction(cx1, cy1, cx2, cy2))
        traj = run_multiturn_rollout(params, bundle, cfg, member_stream(1, 0))
        assert traj.validity.valid
        assert bbox_contains(traj.grounding_bbox_original, task.target_bbox)
        crop = bundle.original.crop(traj.crop_rect)
        assert oracle_answer(task, crop, 1.0) == task.answer_index

    def test_crop_provenance_byte_equality(self, env):
        task, bundle, params, run_cfg = env
        cfg = forced_cfg(run_cfg, GroundAction(1, 2, 4, 5))
        traj = run_multiturn_rollout(params, bundle, cfg, member_stream(2, 0))
        assert traj.validity.valid
        entry = traj.state.visuals()[1]
        assert entry.provenance is Provenance.CROP
        recomputed = crop_from_original(bundle.original, entry.source_rect, ICFG)
        assert np.array_equal(entry.image.pixels, recomputed.pixels)

    def test_fallback_totality_sample(self, env):
        task, bundle, params, run_cfg = env
        rng = np.random.default_rng(0)
        for _ in range(60):
            bins = rng.integers(0, 8, size=4)
            cfg = forced_cfg(run_cfg, GroundAction(*bins))
            traj = run_multiturn_rollout(params, bundle, cfg, member_stream(3, 0))
            assert traj.k_g == 2
            assert len(traj.state.visuals()) == 2
            second = traj.state.visuals()[1]
            if traj.validity.valid:
                assert second.provenance is Provenance.CROP
            else:
                assert second.provenance is Provenance.RESIZED

    def test_generalized_history_growth(self, env):
        from dataclasses import replace

        task, bundle, params, run_cfg = env
        cfg = replace(run_cfg, max_turns=4, layout=FeatureLayout(token_dim=6, turn_slots=4))
        spec = PolicySpec(feature_dim=cfg.layout.dim, bins=8, choices=4, hidden=16)
        p = init_params(spec, stream(6, "init"))
        traj = run_multiturn_rollout(p, bundle, cfg, member_stream(4, 0))
        # turns 1..3 ground (+2 entries each), turn 4 answers (+1)
        assert traj.k_g == 4
        assert traj.terminated_by is Termination.ANSWER
        assert len(traj.state.entries) == 1 + 3 * 2 + 1

    def test_turn_limit_termination(self, env):
        from dataclasses import replace

        task, bundle, params, run_cfg = env
        cfg = replace(
            run_cfg,
            max_turns=3,
            answer_turn=5,
            layout=FeatureLayout(token_dim=6, turn_slots=3),
        )
        spec = PolicySpec(feature_dim=cfg.layout.dim, bins=8, choices=4, hidden=16)
        p = init_params(spec, stream(6, "init"))
        traj = run_multiturn_rollout(p, bundle, cfg, member_stream(4, 0))
        assert traj.terminated_by is Termination.TURN_LIMIT
        assert traj.final_answer is None
        assert traj.k_g == 3


class TestSingleturn:
    def test_one_turn_with_grounding_record(self, env):
        task, bundle, params, run_cfg = env
        traj = run_singleturn_rollout(params, bundle, run_cfg, member_stream(9, 0))
        assert traj.k_g == 1 and len(traj.turns) == 1
        assert traj.terminated_by is Termination.ANSWER
        assert traj.validity is not None
        assert traj.ground_bbox_input is not None
        assert traj.crop_rect is None
        assert len(traj.turns[0].atoms) == 2

    def test_deterministic(self, env):
        task, bundle, params, run_cfg = env
        t1 = run_singleturn_rollout(params, bundle, run_cfg, member_stream(11, 2))
        t2 = run_singleturn_rollout(params, bundle, run_cfg, member_stream(11, 2))
        assert t1.final_answer == t2.final_answer
        assert t1.ground_action == t2.ground_action


class TestGroup:
    def test_baseline_is_mean(self, env):
        task, bundle, params, run_cfg = env
        group = run_group(
            params, bundle, 8, Mode.MULTITURN, run_cfg, RewardConfig(), group_seed=123
        )
        assert len(group.trajectories) == 8
        assert group.baseline == pytest.approx(float(np.mean(group.rewards)))

    def test_members_independent_but_reproducible(self, env):
        task, bundle, params, run_cfg = env
        g1 = run_group(params, bundle, 4, Mode.MULTITURN, run_cfg, RewardConfig(), 99)
        g2 = run_group(params, bundle, 4, Mode.MULTITURN, run_cfg, RewardConfig(), 99)
        for a, b in zip(g1.trajectories, g2.trajectories):
            assert a.ground_action == b.ground_action and a.final_answer == b.final_answer
        actions = {t.ground_action for t in g1.trajectories}
        assert len(actions) > 1  # astronomically unlikely to coincide

    def test_group_size_minimum(self, env):
        task, bundle, params, run_cfg = env
        with pytest.raises(ValueError):
            run_group(params, bundle, 1, Mode.MULTITURN, run_cfg, RewardConfig(), 1)


class TestCountRollouts:
    def test_point_proposals(self):
        gen = GenConfig(
            image_size=Size(512, 512), glyph_side=48, distractor_count=4,
            count_range=(2, 5), seed=9,
        )
        task = gen_count_task(gen, 1)
        bundle = make_bundle(task, task.image_ref, ICFG)
        layout = FeatureLayout(token_dim=ICFG.feature_dim)
        spec = PolicySpec(feature_dim=layout.dim, bins=8, choices=4, hidden=16)
        params = init_params(spec, stream(7, "init"))
        run_cfg = RunCfg(imaging=ICFG, bins=8, layout=layout)
        traj = run_singleturn_rollout(params, bundle, run_cfg, member_stream(5, 0))
        assert traj.k_g == 1
        assert len(traj.points_original) <= task.gt_count
        assert len(traj.turns[0].atoms) == task.gt_count + 1
        for x, y in traj.points_original:
            assert 0 <= x < 512 and 0 <= y < 512


class TestTranscripts:
    def test_valid_crop_transcript_round_trip(self, env):
        task, bundle, params, run_cfg = env
        cfg = forced_cfg(run_cfg, GroundAction(1, 1, 5, 5))
        traj = run_multiturn_rollout(params, bundle, cfg, member_stream(21, 0))
        text = render_transcript(traj, task)
        assert "cropped region" in text
        box = parse_coordinates_json(text)
        assert box.as_tuple() == traj.ground_bbox_input.as_tuple()
        letter = parse_boxed_answer(text)
        assert ord(letter) - 65 == traj.final_answer

    def test_invalid_box_fallback_notice(self, env):
        task, bundle, params, run_cfg = env
        cfg = forced_cfg(run_cfg, GroundAction(6, 0, 1, 5))
        traj = run_multiturn_rollout(params, bundle, cfg, member_stream(22, 0))
        text = render_transcript(traj, task)
        assert "invalid" in text
        assert "original image is returned" in text

    def test_singleturn_transcript(self, env):
        task, bundle, params, run_cfg = env
        traj = run_singleturn_rollout(params, bundle, run_cfg, member_stream(23, 0))
        text = render_transcript(traj, task)
        assert parse_coordinates_json(text).as_tuple() == traj.ground_bbox_input.as_tuple()
        assert ord(parse_boxed_answer(text)) - 65 == traj.final_answer


class TestParsers:
    def test_plain_object(self):
        assert parse_coordinates_json('{"bbox_2d": [1, 2, 3, 4]}').as_tuple() == (1, 2, 3, 4)

    def test_embedded_object(self):
        text = 'prefix {"bbox_2d":[1,2,3,4]} suffix'
        assert parse_coordinates_json(text).as_tuple() == (1, 2, 3, 4)

    def test_wrong_arity(self):
        with pytest.raises(BadShape):
            parse_coordinates_json('{"bbox_2d": [1, 2, 3]}')

    def test_non_numeric(self):
        with pytest.raises(BadShape):
            parse_coordinates_json('{"bbox_2d": [1, 2, "x", 4]}')

    def test_no_json(self):
        with pytest.raises(NoJsonFound):
            parse_coordinates_json("answer is C")

    def test_first_bbox_object_wins(self):
        text = '{"bbox_2d": [9, 9, 9, 9]} and {"bbox_2d": [1, 1, 1, 1]}'
        assert parse_coordinates_json(text).as_tuple() == (9, 9, 9, 9)

    def test_boxed_basic(self):
        assert parse_boxed_answer("thus \\boxed{C}") == "C"

    def test_boxed_last_wins(self):
        assert parse_boxed_answer("\\boxed{A} ... \\boxed{D}") == "D"

    def test_boxed_missing(self):
        with pytest.raises(NoBoxedAnswer):
            parse_boxed_answer("answer is C")

    def test_boxed_bad_letter(self):
        with pytest.raises(BadLetter):
            parse_boxed_answer("\\boxed{Z}")
