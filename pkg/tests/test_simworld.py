"""Billiards physics, rendering, ground-truth annotations and dataset persistence."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpin.numcore import Rng
from rpin.simworld import (Action, BallState, SimConfig, WorldState, apply_action, decode_episode, encode_episode,
                           gen_dataset, generate_episode, gt_box, gt_boxes, gt_mask, init_random, load_dataset,
                           render, render_arrays, rollout, step, step_with_contacts, verify_dataset)
from rpin.simworld.render import BACKGROUND, ball_color


def world(*balls, size=64):
    return WorldState(tuple(BallState(*b, color_index=k) for k, b in enumerate(balls)), size, size)


def speeds(state):
    return [math.hypot(b.vx, b.vy) for b in state.balls]


class TestInit:
    def test_single_ball_in_bounds(self):
        s = init_random(SimConfig(m=1), Rng(0))
        b = s.balls[0]
        assert 2 <= b.x <= 62 and 2 <= b.y <= 62

    def test_no_overlap(self):
        for seed in range(20):
            s = init_random(SimConfig(), Rng(seed))
            arr = s.as_array()
            for i in range(3):
                for j in range(i + 1, 3):
                    assert np.hypot(*(arr[i, :2] - arr[j, :2])) >= 4

    def test_same_seed_same_state(self):
        assert init_random(SimConfig(), Rng(7)) == init_random(SimConfig(), Rng(7))

    def test_one_ball_moves_with_canonical_speed(self):
        s = init_random(SimConfig(), Rng(3))
        moving = [sp for sp in speeds(s) if sp > 0]
        assert len(moving) == 1
        assert min(abs(moving[0] - m) for m in (2, 3, 4, 5, 6)) < 1e-12

    def test_crowded_board_rejected(self):
        with pytest.raises(ValueError):
            init_random(SimConfig(m=40, radius=6.0), Rng(0))


class TestStep:
    def test_rest_unchanged(self):
        s = world((32.0, 32.0, 0.0, 0.0, 2.0))
        assert step(s).balls == s.balls

    def test_wall_mirror(self):
        s = step(world((61.0, 32.0, 3.0, 0.0, 2.0)))
        b = s.balls[0]
        assert b.x == pytest.approx(60.0, abs=1e-12) and b.y == 32.0
        assert (b.vx, b.vy) == (-3.0, 0.0)

    def test_head_on_swap(self):
        s = world((30.0, 32.0, 2.0, 0.0, 2.0), (36.0, 32.0, -2.0, 0.0, 2.0))
        s2, contacts = step_with_contacts(s)
        assert contacts == [(0, 1)]
        assert s2.balls[0].vx == pytest.approx(-2.0) and s2.balls[1].vx == pytest.approx(2.0)
        assert s2.balls[0].x < 32.0 - 1e-9 and s2.balls[1].x > 34.0

    def test_time_index_advances(self):
        assert step(world((10.0, 10.0, 1.0, 0.0, 2.0))).time_index == 1

    def test_momentum_conserved_without_walls(self):
        s = world((20.0, 30.0, 2.0, 0.5, 2.0), (30.0, 31.0, -1.0, 0.0, 2.0))
        for _ in range(4):
            s2 = step(s)
            np.testing.assert_allclose(s2.momentum(), s.momentum(), atol=1e-12)
            s = s2

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_wall_preserves_speed(self, seed):
        r = np.random.default_rng(seed)
        theta = r.uniform(0, 2 * np.pi)
        sp = r.uniform(1, 6)
        s = world((r.uniform(2, 62), r.uniform(2, 62), sp * np.cos(theta), sp * np.sin(theta), 2.0))
        for _ in range(30):
            s = step(s)
            assert speeds(s)[0] == pytest.approx(sp, rel=1e-12)
            b = s.balls[0]
            assert 2 <= b.x <= 62 and 2 <= b.y <= 62


class TestRollout:
    def test_T1(self):
        s = world((32.0, 32.0, 1.0, 0.0, 2.0))
        assert rollout(s, 1).states == [s]

    def test_bad_T(self):
        with pytest.raises(ValueError):
            rollout(world((32.0, 32.0, 0.0, 0.0, 2.0)), 0)

    def test_energy_conserved(self):
        for seed in range(10):
            ep = generate_episode(SimConfig(), seed)
            e0 = ep.states[0].kinetic_energy()
            assert abs(ep.states[-1].kinetic_energy() - e0) <= 1e-6 * e0

    def test_markov_suffix(self):
        ep = generate_episode(SimConfig(), 4)
        again = rollout(ep.states[40], 60)
        assert again.states == ep.states[40:]

    def test_reversibility_without_collisions(self):
        s0 = world((10.0, 12.0, 2.5, 1.5, 2.0), (50.0, 50.0, 0.0, 0.0, 2.0))
        ep = rollout(s0, 21)
        assert not any(ep.contacts)
        last = ep.states[-1]
        back = WorldState(tuple(BallState(b.x, b.y, -b.vx, -b.vy, b.radius, b.color_index) for b in last.balls))
        end = rollout(back, 21).states[-1]
        np.testing.assert_allclose(end.as_array()[:, :2], s0.as_array()[:, :2], atol=1e-3)


class TestRender:
    def test_no_balls(self):
        img = render(WorldState((), 8, 8))
        np.testing.assert_allclose(img, np.broadcast_to(np.array(BACKGROUND, np.float32)[:, None, None], (3, 8, 8)))

    def test_point_in_disk(self):
        img = render(world((32.0, 32.0, 0.0, 0.0, 2.0)))
        np.testing.assert_allclose(img[:, 31, 31], ball_color(0))
        np.testing.assert_allclose(img[:, 40, 40], BACKGROUND)

    def test_pure_function(self):
        s = generate_episode(SimConfig(), 1).states[10]
        assert np.array_equal(render(s), render(s))

    def test_batched_matches_single(self):
        ep = generate_episode(SimConfig(), 2)
        arr = ep.as_array()[:3]
        batch = render_arrays(arr[..., :2], arr[..., 4])
        for t in range(3):
            np.testing.assert_array_equal(batch[t], render(ep.states[t]))


class TestAnnotations:
    def test_gt_box(self):
        assert gt_box(BallState(10.0, 20.0, radius=2.0)) == (10.0, 20.0, 4.0, 4.0)

    def test_gt_boxes_square_inside_image(self):
        arr = generate_episode(SimConfig(), 0).as_array()
        boxes = gt_boxes(arr)
        assert np.all(boxes[..., 2] == boxes[..., 3])
        assert np.all(boxes[..., 0] - boxes[..., 2] / 2 >= -1e-9)
        assert np.all(boxes[..., 0] + boxes[..., 2] / 2 <= 64 + 1e-9)

    def test_mask_tight_box(self):
        b = BallState(20.0, 20.0, radius=2.0)
        mask = gt_mask(b, gt_box(b))
        assert mask.shape == (21, 21)
        assert mask[10, 10] == 1
        assert mask[0, 0] == mask[0, 20] == mask[20, 0] == mask[20, 20] == 0

    def test_mask_inside_and_outside(self):
        b = BallState(20.0, 20.0, radius=2.0)
        assert gt_mask(b, (20.0, 20.0, 1.0, 1.0)).all()
        assert not gt_mask(b, (40.0, 40.0, 4.0, 4.0)).any()


class TestActions:
    def test_zero_magnitude(self):
        s = world((20.0, 20.0, 0.0, 0.0, 2.0))
        assert apply_action(s, 0, Action(3, 0.0)) == s

    def test_theta_zero(self):
        s = apply_action(world((20.0, 20.0, 0.0, 0.0, 2.0)), 0, Action(0, 3.0))
        assert s.balls[0].velocity == pytest.approx((3.0, 0.0))

    def test_canonical_speeds(self):
        s = world((20.0, 20.0, 0.0, 0.0, 2.0))
        for mag in (2, 3, 4, 5, 6):
            for i in range(12):
                assert speeds(apply_action(s, 0, Action(i, float(mag))))[0] == pytest.approx(mag)

    def test_errors(self):
        s = world((20.0, 20.0, 0.0, 0.0, 2.0))
        with pytest.raises(ValueError):
            apply_action(s, 1, Action(0, 2.0))
        with pytest.raises(ValueError):
            apply_action(world((20.0, 20.0, 1.0, 0.0, 2.0)), 0, Action(0, 2.0))


class TestDataset:
    def test_single_episode_manifest(self, tmp_path):
        manifest = gen_dataset(SimConfig(), 1, 0, tmp_path / "d")
        assert len(manifest["episodes"]) == 1
        ds = load_dataset(tmp_path / "d")
        assert ds.states.shape == (1, 100, 3, 5) and ds.T_ep == 100 and ds.m == 3

    def test_byte_identical_regeneration(self, tmp_path):
        gen_dataset(SimConfig(), 2, 5, tmp_path / "a")
        gen_dataset(SimConfig(), 2, 5, tmp_path / "b")
        for name in ("manifest.json", "episode_00000.simb", "episode_00001.simb"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resimulation_bitwise(self, tmp_path):
        gen_dataset(SimConfig(), 3, 11, tmp_path / "d")
        assert verify_dataset(tmp_path / "d") == []

    def test_tamper_detected(self, tmp_path):
        gen_dataset(SimConfig(), 2, 11, tmp_path / "d")
        f = tmp_path / "d" / "episode_00001.simb"
        blob = bytearray(f.read_bytes())
        blob[40] ^= 1
        f.write_bytes(bytes(blob))
        assert verify_dataset(tmp_path / "d") == [1]

    def test_codec_roundtrip_and_errors(self):
        arr = generate_episode(SimConfig(T_ep=5), 0).as_array().astype(np.float32)
        blob = encode_episode(arr, 64, 64)
        back, w, h = decode_episode(blob)
        assert np.array_equal(back, arr) and (w, h) == (64, 64)
        with pytest.raises(ValueError):
            decode_episode(b"XXXX" + blob[4:])
        with pytest.raises(ValueError):
            decode_episode(blob[:-4])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_manifest_config(self, tmp_path):
        gen_dataset(SimConfig(m=5), 1, 0, tmp_path / "d")
        cfg = json.loads((tmp_path / "d" / "manifest.json").read_text())["config"]
        assert cfg["m"] == 5 and cfg["T_ep"] == 100
