import numpy as np
import pytest

from viewfuse.consistency import (
    ConsistencyConfig,
    label_regions,
    prune_cross_frame,
    prune_single_pixel,
    prune_single_region,
    run_consistency,
    vote_cross_frame,
)
from viewfuse.errors import ConfigError

from . import naive
from .conftest import overlapping_cameras, random_consistency_case as random_case


class TestConfig:
    def test_published_defaults(self):
        cfg = ConsistencyConfig()
        assert cfg.alpha == 0.05
        assert cfg.beta_percent == 30.0
        assert cfg.max_region_fraction == 0.5
        assert cfg.connectivity == 4

    def test_validation(self):
        with pytest.raises(ConfigError):
            ConsistencyConfig(alpha=0.0)
        with pytest.raises(ConfigError):
            ConsistencyConfig(beta_percent=100.0)
        with pytest.raises(ConfigError):
            ConsistencyConfig(max_region_fraction=0.0)
        with pytest.raises(ConfigError):
            ConsistencyConfig(connectivity=6)
        with pytest.raises(ConfigError):
            ConsistencyConfig(region_rule="median")


class TestPruneSinglePixel:
    def test_rule_table(self):
        cfg = ConsistencyConfig()
        captured = np.array([[2.0, 2.0, 0.0]])
        inpainted = np.array([[2.5, 1.5, 1.0]])
        holes = np.ones((1, 3), bool)
        out = prune_single_pixel(captured, inpainted, holes, cfg)
        assert out[0, 0] == 2.5   # behind the capture: kept
        assert out[0, 1] == 0.0   # in front: pruned
        assert out[0, 2] == 0.0   # empty capture: pruned
    def test_equal_depth_survives(self):
        cfg = ConsistencyConfig()
        captured = np.array([[3.0]])
        inpainted = np.array([[3.0]])
        out = prune_single_pixel(captured, inpainted, np.ones((1, 1), bool), cfg)
        assert out[0, 0] == 3.0

    def test_non_hole_pixels_carry_through(self):
        cfg = ConsistencyConfig()
        captured = np.array([[2.0, 2.0]])
        inpainted = np.array([[1.0, 1.0]])
        holes = np.array([[True, False]])
        out = prune_single_pixel(captured, inpainted, holes, cfg)
        assert out[0, 0] == 0.0
        assert out[0, 1] == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        cfg = ConsistencyConfig()
        captured = rng.uniform(0, 4, (10, 10))
        inpainted = rng.uniform(0, 4, (10, 10))
        holes = rng.random((10, 10)) < 0.5
        once = prune_single_pixel(captured, inpainted, holes, cfg)
        twice = prune_single_pixel(captured, once, holes, cfg)
        assert np.array_equal(once, twice)


class TestPruneSingleRegion:
    def test_passing_region_kept(self):
        cfg = ConsistencyConfig()
        captured = np.full((6, 6), 2.0)
        inpainted = np.full((6, 6), 3.0)
        holes = np.zeros((6, 6), bool)
        holes[1:3, 1:3] = True
        after_pixel = prune_single_pixel(captured, inpainted, holes, cfg)
        out = prune_single_region(captured, inpainted, after_pixel, holes, cfg)
        assert np.all(out[holes] == 3.0)

    def test_half_image_rule(self):
        cfg = ConsistencyConfig()
        captured = np.full((8, 8), 2.0)
        inpainted = np.full((8, 8), 5.0)  # far behind: depth rule passes
        holes = np.zeros((8, 8), bool)
        holes[:, :5] = True  # 62% of the image
        after_pixel = prune_single_pixel(captured, inpainted, holes, cfg)
        out = prune_single_region(captured, inpainted, after_pixel, holes, cfg)
        assert np.all(out[holes] == 0.0)

    def test_mean_rule_kills_whole_region(self):
        # some pixels pass the per-pixel rule but the region mean fails
        cfg = ConsistencyConfig()
        captured = np.full((4, 6), 2.0)
        inpainted = np.full((4, 6), 2.0)
        holes = np.zeros((4, 6), bool)
        holes[1, 1:5] = True
        inpainted[1, 1] = 2.5            # passes alone
        inpainted[1, 2:5] = 1.0          # drags the mean below the capture
        after_pixel = prune_single_pixel(captured, inpainted, holes, cfg)
        assert after_pixel[1, 1] == 2.5
        out = prune_single_region(captured, inpainted, after_pixel, holes, cfg)
        assert np.all(out[holes] == 0.0)
        # oracle: explicit mean comparison
        valid = holes & (captured > 0) & (inpainted > 0)
        assert inpainted[valid].mean() <= captured[valid].mean() - 0  # fails the rule

    def test_two_regions_independent(self):
        cfg = ConsistencyConfig()
        captured = np.full((6, 10), 2.0)
        inpainted = np.full((6, 10), 2.0)
        holes = np.zeros((6, 10), bool)
        holes[1:3, 1:3] = True     # region A: behind, kept
        holes[1:3, 6:8] = True     # region B: in front, killed
        inpainted[1:3, 1:3] = 3.0
        inpainted[1:3, 6:8] = 1.0
        after_pixel = prune_single_pixel(captured, inpainted, holes, cfg)
        out = prune_single_region(captured, inpainted, after_pixel, holes, cfg)
        assert np.all(out[1:3, 1:3] == 3.0)
        assert np.all(out[1:3, 6:8] == 0.0)


class TestLabelRegions:
    def test_connectivity_choice(self):
        mask = np.array([[1, 0], [0, 1]], dtype=bool)
        four = label_regions(mask, ConsistencyConfig(connectivity=4))
        eight = label_regions(mask, ConsistencyConfig(connectivity=8))
        assert four.n_regions == 2
        assert eight.n_regions == 1
        assert four.counts.sum() == mask.sum()


class TestCrossFrameStages:
    def test_single_frame_passthrough(self):
        rng = np.random.default_rng(1)
        cams = overlapping_cameras(rng, 1)
        d = rng.uniform(1, 3, (8, 8))
        holes = np.ones((8, 8), bool)
        cfg = ConsistencyConfig()
        out3 = prune_cross_frame([d], [d], [d], [holes], cams, cfg)
        assert np.array_equal(out3[0], d)
        out4 = vote_cross_frame([d], [d], [holes], [holes], cams, cfg)
        assert np.array_equal(out4[0], d)

    def test_voting_threshold_strict(self):
        # engineered counts: r = 0.4 keeps at beta 30, r = 0.2 prunes; the
        # boundary r == beta is pruned (strict inequality)
        cfg = ConsistencyConfig(beta_percent=30.0)
        num = np.array([[4, 2, 3]])
        den = np.array([[10, 10, 10]])
        keep = 100.0 * num > cfg.beta_percent * den
        assert keep.tolist() == [[True, False, False]]

    def test_order_independence_of_voting(self, small_bundle):
        cluttered, clean = small_bundle
        from viewfuse.masks import ProjectionConfig, project_masks

        masks = project_masks(cluttered.mesh, cluttered.frames,
                              ProjectionConfig(), update_frames=False)
        captured = [f.captured_depth.values for f in cluttered.frames]
        inpainted = []
        for f in range(cluttered.n_frames):
            d = captured[f].copy()
            d[masks[f]] = clean.frames[f].captured_depth.values[masks[f]]
            inpainted.append(d)
        cams = [f.camera for f in cluttered.frames]
        cfg = ConsistencyConfig()
        after_cross = prune_cross_frame(captured, inpainted, inpainted, masks, cams, cfg)
        full = vote_cross_frame(inpainted, after_cross, masks, masks, cams, cfg)
        # frame 0's vote must not change when other frames' stage-4 outputs do
        con3_mangled = [after_cross[0]] + [np.zeros_like(c) for c in after_cross[1:]]
        partial = vote_cross_frame(inpainted, con3_mangled, masks, masks, cams, cfg)
        assert np.array_equal(full[0], partial[0])


class TestBruteForceEquivalence:
    @pytest.mark.parametrize("seed", range(12))
    def test_small_random_cases(self, seed):
        captured, inpainted, holes, cams = random_case(seed)
        cfg = ConsistencyConfig()
        stage_maps, _ = run_consistency(captured, inpainted, holes, holes, cams, cfg, threads=1)

        ref1 = [naive.prune_single_pixel_naive(c, p, h, cfg)
                for c, p, h in zip(captured, inpainted, holes)]
        ref2 = [naive.prune_single_region_naive(c, p, r1, h, cfg)
                for c, p, r1, h in zip(captured, inpainted, ref1, holes)]
        ref3 = naive.prune_cross_frame_naive(captured, inpainted, ref2, holes, cams, cfg)
        ref4 = naive.vote_cross_frame_naive(inpainted, ref3, holes, holes, cams, cfg)
        for f in range(len(captured)):
            assert np.array_equal(stage_maps[f][0], ref1[f]), f"stage1 frame {f}"
            assert np.array_equal(stage_maps[f][1], ref2[f]), f"stage2 frame {f}"
            assert np.array_equal(stage_maps[f][2], ref3[f]), f"stage3 frame {f}"
            assert np.array_equal(stage_maps[f][3], ref4[f]), f"stage4 frame {f}"


class TestStageMonotonicity:
    @pytest.mark.parametrize("seed", range(5))
    def test_valid_sets_shrink(self, seed):
        captured, inpainted, holes, cams = random_case(seed, n_frames=3, width=12, height=10)
        cfg = ConsistencyConfig()
        stage_maps, _ = run_consistency(captured, inpainted, holes, holes, cams, cfg)
        for f, maps in enumerate(stage_maps):
            prev = inpainted[f] > 0
            for stage in maps:
                cur = stage > 0
                assert not np.any(cur & ~prev)
                prev = cur

    def test_stages_idempotent(self):
        captured, inpainted, holes, cams = random_case(99)
        cfg = ConsistencyConfig()
        after_cross = prune_cross_frame(captured, inpainted, inpainted, holes, cams, cfg)
        con3_again = prune_cross_frame(captured, inpainted, after_cross, holes, cams, cfg)
        for a, b in zip(after_cross, con3_again):
            assert np.array_equal(a, b)


class TestAblationSwitches:
    def test_disabled_stages_pass_through(self):
        captured, inpainted, holes, cams = random_case(7)
        cfg = ConsistencyConfig()
        all_off = frozenset({"single-prune", "cross-prune", "voting"})
        stage_maps, counts = run_consistency(captured, inpainted, holes, holes, cams, cfg,
                                             disabled=all_off)
        for f, maps in enumerate(stage_maps):
            for m in maps:
                assert np.array_equal(m, inpainted[f])
        assert all(c.evaluated == c.after_vote for c in counts if c.evaluated)
