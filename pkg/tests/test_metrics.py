import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepgrasp.evaluation import jaccard, point_metric, rect_metric, recognition_accuracy, split_folds
from deepgrasp.geometry import clip_convex, intersection_area, point_in_convex, polygon_area
from deepgrasp.network import NetworkParams
from deepgrasp.patch import ModalityMask, NormStats
from deepgrasp.rects import GraspRect, angle_distance, normalize_angle
from deepgrasp.rgbd import AnnotatedScene, RgbdImage


def random_rect(rng, spread=10.0):
    return GraspRect(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(0, math.pi),
                     rng.uniform(2, 20), rng.uniform(2, 20))


def monte_carlo_jaccard(a, b, n=100_000, rng=None):
    rng = rng or np.random.default_rng(0)
    pts = np.vstack([a.corners(), b.corners()])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    s = rng.uniform(lo, hi, size=(n, 2))
    ia = point_in_convex(s, a.corners())
    ib = point_in_convex(s, b.corners())
    return (ia & ib).sum() / max((ia | ib).sum(), 1)


class TestRects:
    def test_angle_normalized(self):
        assert GraspRect(0, 0, -0.1, 1, 1).angle == pytest.approx(math.pi - 0.1)
        assert GraspRect(0, 0, math.pi, 1, 1).angle == 0.0
        assert GraspRect(0, 0, 7.0, 1, 1).angle == pytest.approx(7.0 - 2 * math.pi)

    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValueError):
            GraspRect(0, 0, 0, 0, 1)
        with pytest.raises(ValueError):
            GraspRect(0, 0, 0, 1, -2)

    def test_corners_and_plates(self):
        r = GraspRect(10, 20, 0.0, 8, 4)
        np.testing.assert_allclose(r.corners(), [[6, 18], [14, 18], [14, 22], [6, 22]])
        left, right = r.plate_centers()
        np.testing.assert_allclose(left, [10, 18])
        np.testing.assert_allclose(right, [10, 22])
        a, b = r.plate_segments()
        np.testing.assert_allclose(a, [[6, 18], [14, 18]])
        np.testing.assert_allclose(b, [[6, 22], [14, 22]])

    @given(st.floats(0, math.pi), st.floats(1, 30), st.floats(1, 30))
    def test_from_vertices_inverts_corners(self, a, ln, wd):
        r = GraspRect(3.0, -2.0, a, ln, wd)
        back = GraspRect.from_vertices(r.corners())
        np.testing.assert_allclose(back.corners(), r.corners(), atol=1e-9)

    def test_angle_distance_periodic(self):
        assert angle_distance(0.1, math.pi - 0.1) == pytest.approx(0.2)
        assert angle_distance(0.3, 0.3 + math.pi) == pytest.approx(0.0, abs=1e-12)
        assert normalize_angle(-math.pi / 2) == pytest.approx(math.pi / 2)


class TestGeometry:
    def test_shoelace(self):
        assert polygon_area([[0, 0], [4, 0], [4, 3], [0, 3]]) == 12
        assert polygon_area([[0, 0], [0, 3], [4, 3], [4, 0]]) == -12  # signed by orientation

    def test_clip_squares(self):
        poly = clip_convex([[0, 0], [2, 0], [2, 2], [0, 2]], [[1, 1], [3, 1], [3, 3], [1, 3]])
        assert polygon_area(poly) == pytest.approx(1.0)

    def test_disjoint(self):
        assert intersection_area([[0, 0], [1, 0], [1, 1], [0, 1]], [[5, 5], [6, 5], [6, 6], [5, 6]]) == 0.0

    def test_orientation_does_not_matter(self):
        a = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
        b = np.array([[1, 0], [3, 0], [3, 2], [1, 2]], float)
        assert intersection_area(a, b) == pytest.approx(intersection_area(a[::-1], b[::-1]))


class TestJaccard:
    def test_identity(self):
        r = GraspRect(5, 5, 0.7, 10, 4)
        assert jaccard(r, r) == pytest.approx(1.0)

    def test_disjoint(self):
        assert jaccard(GraspRect(0, 0, 0, 2, 2), GraspRect(10, 10, 0, 2, 2)) == 0.0

    def test_third(self):
        assert jaccard(GraspRect(0, 0, 0, 1, 1), GraspRect(0.5, 0, 0, 1, 1)) == pytest.approx(1 / 3, abs=1e-12)

    def test_zero_area_rejected(self):
        class Flat:
            area = 0.0
        with pytest.raises(ValueError):
            jaccard(Flat(), GraspRect(0, 0, 0, 1, 1))

    def test_monte_carlo(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            a = random_rect(rng, 4)
            b = random_rect(rng, 4)
            worst = max(worst, abs(jaccard(a, b) - monte_carlo_jaccard(a, b, rng=rng)))
        assert worst < 0.01

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50)
    def test_symmetric_bounded_rigid_invariant(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_rect(rng), random_rect(rng)
        j = jaccard(a, b)
        assert 0.0 <= j <= 1.0
        assert jaccard(b, a) == pytest.approx(j, abs=1e-12)
        t, dx, dy = rng.uniform(0, 2 * math.pi), rng.uniform(-50, 50), rng.uniform(-50, 50)
        c, s = math.cos(t), math.sin(t)

        def move(r):
            return GraspRect(c * r.cx - s * r.cy + dx, s * r.cx + c * r.cy + dy, r.angle + t, r.len, r.wid)
        assert jaccard(move(a), move(b)) == pytest.approx(j, abs=1e-9)


class TestRectMetric:
    def test_equal(self):
        r = GraspRect(5, 5, 0.3, 10, 6)
        assert rect_metric(r, [r])

    def test_rotated_40(self):
        r = GraspRect(5, 5, 0.3, 10, 6)
        assert not rect_metric(GraspRect(5, 5, 0.3 + math.radians(40), 10, 6), [r])

    def test_rotated_30_boundary_passes(self):
        r = GraspRect(5, 5, 0.3, 10, 10)
        assert rect_metric(GraspRect(5, 5, 0.3 + math.radians(30), 10, 10), [r])

    def test_third_overlap(self):
        assert rect_metric(GraspRect(0.5, 0, 0, 1, 1), [GraspRect(0, 0, 0, 1, 1)])

    def test_low_overlap_fails(self):
        assert not rect_metric(GraspRect(0.8, 0, 0, 1, 1), [GraspRect(0, 0, 0, 1, 1)])

    def test_empty_gts(self):
        assert not rect_metric(GraspRect(0, 0, 0, 1, 1), [])

    def test_pi_periodicity(self):
        gt = GraspRect(0, 0, 0.05, 10, 4)
        assert rect_metric(GraspRect(0, 0, math.pi - 0.05, 10, 4), [gt])


class TestPointMetric:
    def test_coincident(self):
        assert point_metric(GraspRect(1, 1, 0, 4, 4), [GraspRect(1, 1, 1.0, 8, 2)], 2.0)

    def test_far(self):
        assert not point_metric(GraspRect(5, 1, 0, 4, 4), [GraspRect(1, 1, 0, 4, 4)], 2.0)

    def test_inclusive_boundary(self):
        assert point_metric(GraspRect(3, 1, 0, 4, 4), [GraspRect(1, 1, 0, 4, 4)], 2.0)

    def test_default_quarter_diagonal(self):
        gt = GraspRect(0, 0, 0, 30, 40)  # diagonal 50
        assert point_metric(GraspRect(12.5, 0, 0, 5, 5), [gt])
        assert not point_metric(GraspRect(12.6, 0, 0, 5, 5), [gt])


def _scenes(n, per_object=1):
    img = RgbdImage(np.zeros((7, 4, 4)), np.ones((4, 4), bool))
    return [AnnotatedScene(img, [], [], k // per_object, k) for k in range(n)]


class TestFolds:
    def test_image_wise_partition(self):
        folds = split_folds(_scenes(23), "image_wise", 5, seed=3)
        flat = sorted(i for f in folds for i in f)
        assert flat == list(range(23))
        assert [len(f) for f in folds] == [5, 5, 5, 4, 4]

    def test_object_wise(self):
        scenes = _scenes(30, per_object=3)
        folds = split_folds(scenes, "object_wise", 5, seed=1)
        owners = {}
        for f, idx in enumerate(folds):
            for i in idx:
                assert owners.setdefault(scenes[i].object_id, f) == f
        assert all(len({scenes[i].object_id for i in f}) == 2 for f in folds)
        assert sorted(i for f in folds for i in f) == list(range(30))

    def test_deterministic(self):
        assert split_folds(_scenes(12), "image_wise", 3, 9) == split_folds(_scenes(12), "image_wise", 3, 9)
        assert split_folds(_scenes(12), "image_wise", 3, 9) != split_folds(_scenes(12), "image_wise", 3, 10)

    def test_too_few_objects(self):
        with pytest.raises(ValueError):
            split_folds(_scenes(8, per_object=2), "object_wise", 5)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            split_folds(_scenes(8), "by_colour", 2)


def _stripe_scene():
    """Bright Y on the left half, dark on the right; positives sit left."""
    H = W = 60
    ch = np.zeros((7, H, W))
    ch[1, :, :30] = 1.0
    img = RgbdImage(ch, np.ones((H, W), bool))
    pos = [GraspRect(12, y, 0.0, 12, 12) for y in (10, 30, 50)]
    neg = [GraspRect(47, y, 0.0, 12, 12) for y in (10, 30)]
    return AnnotatedScene(img, pos, neg, 0, 0)


def _net(W1, w3, b3=0.0, K=2):
    m = ModalityMask.for_patch()
    return NetworkParams(W1, np.zeros(W1.shape[1]), np.eye(W1.shape[1], K), np.zeros(K), w3, b3, m,
                         NormStats.identity(), 24, 2.0)


class TestRecognition:
    def test_oracle_net(self):
        W1 = np.zeros((4032, 2))
        W1[576:1152, 0] = 0.05  # Y plane
        # h2 is about sigmoid(1) = 0.731 on the bright half and sigmoid(0.5) = 0.622 on the dark one
        net = _net(W1, np.array([1000.0, 0.0]), b3=-680.0)
        acc, n = recognition_accuracy(net, [_stripe_scene()])
        assert n == 5 and acc == 1.0

    def test_constant_half_predicts_negative(self):
        net = _net(np.zeros((4032, 2)), np.zeros(2))
        acc, n = recognition_accuracy(net, [_stripe_scene()])
        assert acc == pytest.approx(2 / 5)
