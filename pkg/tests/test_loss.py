import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewfuse.errors import ConfigError
from viewfuse.loss import LossConfig, PredictionSet, area_sensitive_ce, combined_loss, instance_weight
from viewfuse.scene import LabeledMesh


def mesh_from_counts(counts, clutter=None):
    if clutter is None:
        clutter = [i % 2 == 1 for i in range(len(counts))]
    verts, inst, clut = [], [], []
    for i, n in enumerate(counts):
        for j in range(n):
            verts.append([i, j, 0.0])
            inst.append(i)
            clut.append(clutter[i])
    return LabeledMesh(vertices=np.asarray(verts, dtype=float),
                       triangles=np.zeros((0, 3), dtype=np.int32),
                       instance_id=np.asarray(inst), clutter=np.asarray(clut))


def random_predictions(mesh, rng, correct_prob=None):
    n = mesh.n_vertices
    if correct_prob is None:
        p_true = rng.uniform(0.05, 0.95, size=n)
    else:
        p_true = np.full(n, correct_prob)
    true_class = mesh.clutter.astype(int)
    probs = np.zeros((n, 2))
    probs[np.arange(n), true_class] = p_true
    probs[np.arange(n), 1 - true_class] = 1.0 - p_true
    return PredictionSet.from_mesh_labels(mesh, probs)


class TestInstanceWeight:
    def test_k_zero_is_one(self):
        for median, n in ((1, 1), (200, 50), (3, 1000)):
            assert instance_weight(n, median, 0.0) == 1.0

    def test_direct_substitution(self):
        assert instance_weight(50, 200, 1.0) == 4.0

    def test_fractional_power(self):
        # oracle: exp(k * ln(median/n))
        expected = np.exp(1.5 * np.log(100 / 400))
        assert instance_weight(400, 100, 1.5) == pytest.approx(expected, rel=1e-12)
        assert instance_weight(400, 100, 1.5) == pytest.approx(0.125, rel=1e-12)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            instance_weight(0, 10, 1.0)
        with pytest.raises(ValueError):
            instance_weight(-3, 10, 1.0)


class TestAreaSensitiveCE:
    def test_perfect_predictions_near_zero(self):
        mesh = mesh_from_counts([4, 6, 10])
        preds = random_predictions(mesh, None, correct_prob=1.0)
        loss, _ = area_sensitive_ce(preds, LossConfig(k=1.0))
        assert 0.0 <= loss <= 1e-10

    def test_k_zero_equals_mean_cross_entropy(self):
        rng = np.random.default_rng(0)
        mesh = mesh_from_counts([3, 9, 27, 5])
        preds = random_predictions(mesh, rng)
        loss, _ = area_sensitive_ce(preds, LossConfig(k=0.0))
        p_true = np.sum(preds.probabilities * preds.labels_onehot, axis=1)
        assert loss == pytest.approx(float(np.mean(-np.log(p_true))), abs=1e-12)

    def test_weight_ratio_between_instances(self):
        # uniform p=0.5 everywhere: per-instance mean contribution ratio is
        # the weight ratio (1000/10)^k; oracle = explicit double loop
        mesh = mesh_from_counts([10, 1000], clutter=[False, True])
        n = mesh.n_vertices
        probs = np.full((n, 2), 0.5)
        preds = PredictionSet.from_mesh_labels(mesh, probs)
        for k in (0.5, 1.0, 2.0):
            _, contribs = area_sensitive_ce(preds, LossConfig(k=k))
            by_id = {c.instance_id: c for c in contribs}
            mean_small = by_id[0].weighted / by_id[0].vertex_count
            mean_big = by_id[1].weighted / by_id[1].vertex_count
            assert mean_small / mean_big == pytest.approx((1000 / 10) ** k, rel=1e-9)

        # explicit double-loop oracle for k=1
        _, contribs = area_sensitive_ce(preds, LossConfig(k=1.0))
        stats = {c.instance_id: c for c in contribs}
        median = 10  # lower median of [10, 1000]
        expected_total = 0.0
        for inst in (0, 1):
            sel = mesh.instance_id == inst
            w = (median / sel.sum()) ** 1.0
            s = 0.0
            for p in np.full(int(sel.sum()), 0.5):
                s += -np.log(p)
            expected_total += w * s
        loss, _ = area_sensitive_ce(preds, LossConfig(k=1.0))
        assert loss == pytest.approx(expected_total / n, rel=1e-12)

    def test_prediction_length_mismatch(self):
        mesh = mesh_from_counts([4, 4])
        with pytest.raises(Exception):
            PredictionSet.from_mesh_labels(mesh, np.full((3, 2), 0.5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_loss_nonnegative_and_finite(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 40, size=rng.integers(1, 6)).tolist()
        mesh = mesh_from_counts(counts)
        preds = random_predictions(mesh, rng)
        loss, _ = area_sensitive_ce(preds, LossConfig(k=float(rng.uniform(0, 3))))
        assert np.isfinite(loss) and loss >= 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 5))
    def test_duplicating_instances_preserves_loss(self, seed, copies):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 30, size=3).tolist()
        mesh1 = mesh_from_counts(counts)
        preds1 = random_predictions(mesh1, np.random.default_rng(seed + 1))
        mesh2 = mesh_from_counts(counts * copies, clutter=[i % 2 == 1 for i in range(3)] * copies)
        probs2 = np.tile(preds1.probabilities, (copies, 1))
        preds2 = PredictionSet.from_mesh_labels(mesh2, probs2)
        cfg = LossConfig(k=1.0)
        loss1, _ = area_sensitive_ce(preds1, cfg)
        loss2, _ = area_sensitive_ce(preds2, cfg)
        assert loss2 == pytest.approx(loss1, rel=1e-9)

    def test_monotone_in_k_for_small_and_large_instances(self):
        rng = np.random.default_rng(3)
        mesh = mesh_from_counts([5, 50, 500])  # median 50
        preds = random_predictions(mesh, rng)
        ks = [0.0, 0.5, 1.0, 1.5, 2.0]
        small, large = [], []
        for k in ks:
            _, contribs = area_sensitive_ce(preds, LossConfig(k=k))
            by_id = {c.instance_id: c for c in contribs}
            small.append(by_id[0].weighted)
            large.append(by_id[2].weighted)
        assert all(b > a for a, b in zip(small, small[1:]))
        assert all(b < a for a, b in zip(large, large[1:]))


class TestCombinedLoss:
    def test_lambda_zero(self):
        assert combined_loss(1.7, 99.0, LossConfig(lambda_2d=0.0)) == 1.7

    def test_paper_weighting(self):
        assert combined_loss(1.0, 2.0, LossConfig(lambda_2d=0.3)) == pytest.approx(1.6)

    def test_equal_losses_double(self):
        for value in (0.1, 2.0):
            assert combined_loss(value, value, LossConfig(lambda_2d=1.0)) == pytest.approx(2 * value)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            combined_loss(float("nan"), 1.0, LossConfig())
        with pytest.raises(ValueError):
            combined_loss(1.0, float("inf"), LossConfig())


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(k=-0.1)
    with pytest.raises(ConfigError):
        LossConfig(epsilon=0.5)


def test_published_defaults():
    cfg = LossConfig()
    assert cfg.k == 1.0
    assert cfg.lambda_2d == 0.3
