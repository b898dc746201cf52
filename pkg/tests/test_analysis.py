import math

import numpy as np
import pytest

from hycone.analysis import (
    EmbeddingIndex,
    classify,
    estimate_root,
    interpolate_steps,
    retrieve,
    root_distance_proxy,
    root_distance_stats,
    stats_hist_csv,
    stats_summary_csv,
    traverse,
    with_root,
)
from hycone.entailment import ConeParams, entailment_loss_pair
from hycone.geometry import (
    Curvature,
    HyperbolicPoint,
    TangentVector,
    exp_map_origin,
    lorentz_distance,
)
from hycone.losses import LossParams

C1 = Curvature(1.0)


def ray_point(radius, dim=2, axis=0):
    v = np.zeros(dim)
    v[axis] = radius
    return exp_map_origin(TangentVector(v), C1)


def lorentz_index(points, labels, c=1.0, root=False):
    idx = EmbeddingIndex(
        space="lorentz",
        curvature=c,
        vectors=np.stack([p.space for p in points]),
        labels=tuple(labels),
    )
    return with_root(idx) if root else idx


class TestEstimateRoot:
    def test_lorentz_root_is_origin(self):
        idx = lorentz_index([ray_point(1.0), ray_point(2.0)], [("text", "a"), ("text", "b")])
        np.testing.assert_array_equal(estimate_root(idx), np.zeros(2))

    def test_sphere_root_normalized_mean(self):
        idx = EmbeddingIndex(
            space="sphere", curvature=None,
            vectors=np.array([[1.0, 0.0], [0.0, 1.0]]),
            labels=(("text", "a"), ("text", "b")),
        )
        np.testing.assert_allclose(estimate_root(idx), [1 / math.sqrt(2)] * 2, atol=1e-12)

    def test_sphere_degenerate_mean_rejected(self):
        idx = EmbeddingIndex(
            space="sphere", curvature=None,
            vectors=np.array([[1.0, 0.0], [-1.0, 0.0]]),
            labels=(("text", "a"), ("text", "b")),
        )
        with pytest.raises(ValueError, match="degenerate"):
            estimate_root(idx)

    def test_empty_rejected(self):
        idx = EmbeddingIndex(space="lorentz", curvature=1.0,
                             vectors=np.zeros((0, 2)), labels=())
        with pytest.raises(ValueError, match="empty"):
            estimate_root(idx)


class TestIndexValidation:
    def test_label_count_must_match(self):
        with pytest.raises(ValueError, match="label count"):
            EmbeddingIndex(space="lorentz", curvature=1.0,
                           vectors=np.zeros((2, 2)), labels=(("text", "a"),))

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError, match="unknown label class"):
            EmbeddingIndex(space="lorentz", curvature=1.0,
                           vectors=np.zeros((1, 2)), labels=(("caption", "a"),))

    def test_sphere_norms_checked(self):
        with pytest.raises(ValueError, match="norm"):
            EmbeddingIndex(space="sphere", curvature=None,
                           vectors=np.array([[2.0, 0.0]]), labels=(("text", "a"),))


class TestRootDistanceStats:
    def test_lorentz_proxy_values(self):
        pts = [ray_point(0.0), ray_point(1.0)]
        idx = lorentz_index(pts, [("text", "o"), ("image", "p")])
        prox = root_distance_proxy(idx)
        assert prox[0] == 0.0
        assert prox[1] == pytest.approx(math.sinh(1.0), abs=1e-12)

    def test_sphere_proxy_range(self):
        vecs = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        idx = EmbeddingIndex(
            space="sphere", curvature=None, vectors=vecs,
            labels=(("root", "[ROOT]"), ("text", "same"), ("text", "anti"), ("image", "orth")),
            root_id=0,
        )
        prox = root_distance_proxy(idx)
        assert prox[1] == 0.0          # equal to the root
        assert prox[2] == 1.0          # antipodal
        assert prox[3] == 0.5

    def test_single_point_histogram(self):
        idx = lorentz_index([ray_point(0.0)], [("text", "o")])
        stats = root_distance_stats(idx)
        s = stats["text"]
        assert s.count == 1 and s.mean == 0.0
        assert list(s.hist_counts) == [1]
        hist = stats_hist_csv(stats)
        assert hist.splitlines()[1] == "text,0,0,1"
        summary = stats_summary_csv(stats)
        assert summary.splitlines()[0].startswith("class,count,mean,std")


class TestInterpolateSteps:
    def test_lorentz_endpoints_and_linearity(self):
        y = exp_map_origin(TangentVector([1.4, -0.8]), C1)
        idx = lorentz_index([y], [("image", "y")], root=True)
        steps = interpolate_steps(y.space, idx, steps=50)
        assert len(steps) == 50
        np.testing.assert_array_equal(steps[0], y.space)
        np.testing.assert_array_equal(steps[-1], np.zeros(2))
        o = exp_map_origin(TangentVector([0.0, 0.0]), C1)
        d_full = lorentz_distance(o, y)
        for k, sp in enumerate(steps):
            t = k / 49.0
            d = lorentz_distance(o, HyperbolicPoint(space=sp, curv=C1))
            assert abs(d - (1 - t) * d_full) < 1e-8

    def test_sphere_unit_norms(self):
        vecs = np.array([[1.0, 0.0], [0.0, 1.0]])
        idx = with_root(EmbeddingIndex(space="sphere", curvature=None, vectors=vecs,
                                       labels=(("text", "a"), ("image", "b"))))
        steps = interpolate_steps(vecs[1], idx, steps=20)
        for sp in steps:
            assert abs(np.linalg.norm(sp) - 1.0) < 1e-9

    def test_sphere_antipodal_rejected(self):
        vecs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        idx = EmbeddingIndex(
            space="sphere", curvature=None, vectors=vecs,
            labels=(("root", "[ROOT]"), ("image", "anti"), ("text", "t")), root_id=0,
        )
        with pytest.raises(ValueError, match="zero"):
            interpolate_steps(vecs[1], idx, steps=21)


class TestTraverse:
    def fixture_index(self):
        # two texts on one outbound ray: t_deep entails radii (1.5, inf),
        # t_shallow radii (0.5, inf); verified through the public pair loss
        t_shallow, t_deep = ray_point(0.5), ray_point(1.5)
        cones = ConeParams()
        assert entailment_loss_pair(t_deep, ray_point(2.5), cones) == 0.0
        assert entailment_loss_pair(t_shallow, ray_point(1.0), cones) == 0.0
        assert entailment_loss_pair(t_deep, ray_point(1.0), cones) > 0.0
        return lorentz_index(
            [t_shallow, t_deep], [("text", "shallow"), ("text", "deep")], root=True
        )

    def test_constructed_ancestor_chain(self):
        idx = self.fixture_index()
        y = ray_point(2.5)
        res = traverse(y.space, idx, steps=50)
        assert res.unique == ("deep", "shallow", "[ROOT]")
        ks = [k for k, _ in res.steps]
        assert ks == sorted(ks)

    def test_terminates_at_root_with_origin_special_case(self):
        idx = self.fixture_index()
        res = traverse(ray_point(2.5).space, idx, steps=10)
        assert res.steps[-1][1] == "[ROOT]"
        assert res.unique[-1] == "[ROOT]"

    def test_proxy_nonincreasing(self):
        idx = self.fixture_index()
        steps = interpolate_steps(ray_point(2.5).space, idx, steps=50)
        norms = [np.linalg.norm(s) for s in steps]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_sphere_bypasses_cone_filter(self):
        # nearest-by-cosine text wins; no cone filter is applied on the sphere
        vecs = np.array([
            [0.0, 1.0],                          # query image
            [math.sin(0.05), math.cos(0.05)],    # text right next to it
            [1.0, 0.0],                          # distant text pulls ROOT away
        ])
        idx = with_root(EmbeddingIndex(
            space="sphere", curvature=None, vectors=vecs,
            labels=(("image", "img"), ("text", "near"), ("text", "far")),
        ))
        res = traverse(vecs[0], idx, steps=5)
        assert res.steps[0][1] == "near"
        assert res.unique[-1] == "[ROOT]"

    def test_requires_root_entry(self):
        idx = lorentz_index([ray_point(1.0)], [("text", "t")])
        with pytest.raises(ValueError, match="ROOT"):
            traverse(ray_point(1.0).space, idx)

    def test_cone_slack_relaxes_filter(self):
        t = ray_point(1.5)
        idx = lorentz_index([t], [("text", "t")], root=True)
        y = ray_point(1.2)     # just above the apex: outside the strict cone
        strict = traverse(y.space, idx, steps=2)
        relaxed = traverse(y.space, idx, steps=2, cone_slack=3.2)
        assert strict.steps[0][1] == "[ROOT]"
        assert relaxed.steps[0][1] == "t"


class TestRetrieve:
    def random_index(self, rng, n=12):
        pts = [exp_map_origin(TangentVector(rng.standard_normal(3)), C1) for _ in range(n)]
        return lorentz_index(pts, [("text", f"t{i}") for i in range(n)])

    def test_self_retrieval_first(self):
        rng = np.random.default_rng(0)
        idx = self.random_index(rng)
        hits = retrieve(idx.vectors[4], idx, k=3)
        assert hits[0].row == 4

    def test_matches_distance_order(self):
        rng = np.random.default_rng(1)
        idx = self.random_index(rng)
        q = exp_map_origin(TangentVector(rng.standard_normal(3)), C1)
        hits = retrieve(q.space, idx, k=idx.count)
        dists = [
            lorentz_distance(q, HyperbolicPoint(space=v, curv=C1)) for v in idx.vectors
        ]
        np.testing.assert_array_equal([h.row for h in hits], np.argsort(dists, kind="stable"))

    def test_prefix_stability(self):
        rng = np.random.default_rng(2)
        idx = self.random_index(rng)
        q = rng.standard_normal(3)
        full = [h.row for h in retrieve(q, idx, k=idx.count)]
        for k in (1, 3, 7):
            assert [h.row for h in retrieve(q, idx, k=k)] == full[:k]

    def test_k_zero_empty(self):
        rng = np.random.default_rng(3)
        idx = self.random_index(rng)
        assert retrieve(np.zeros(3), idx, k=0) == []

    def test_calibrated_scores_sum_to_one(self):
        rng = np.random.default_rng(4)
        idx = self.random_index(rng)
        hits = retrieve(rng.standard_normal(3), idx, k=idx.count, calibrated=True, tau=0.07)
        assert sum(h.score for h in hits) == pytest.approx(1.0, abs=1e-12)

    def test_k_bounds(self):
        rng = np.random.default_rng(5)
        idx = self.random_index(rng)
        with pytest.raises(ValueError):
            retrieve(np.zeros(3), idx, k=idx.count + 1)


class TestClassify:
    def test_single_prompt_equals_no_ensembling(self):
        params = LossParams.init(2)
        img = exp_map_origin(TangentVector([1.0, 0.2]), params.curv())
        a = classify(img, {"cat": [np.array([1.0, 0.0])]}, params)
        b = classify(img, {"cat": [np.array([1.0, 0.0])] * 3}, params)
        assert a.scores == b.scores

    def test_two_class_fixture(self):
        # class embeddings verified nearer/farther via lorentz distance
        params = LossParams(log_inv_temp=0.0, log_curv=0.0,
                            log_scale_img=0.0, log_scale_txt=0.0)
        curv = params.curv()
        img = exp_map_origin(TangentVector([1.0, 0.0]), curv)
        a_vecs = [np.array([0.9, 0.1]), np.array([1.1, -0.1])]
        b_vecs = [np.array([-1.0, 0.0])]
        a_pt = exp_map_origin(TangentVector(np.mean(a_vecs, axis=0)), curv)
        b_pt = exp_map_origin(TangentVector(np.mean(b_vecs, axis=0)), curv)
        assert lorentz_distance(img, a_pt) < lorentz_distance(img, b_pt)
        res = classify(img, {"a": a_vecs, "b": b_vecs}, params)
        assert res.predicted == "a"
        assert res.scores["a"] > res.scores["b"]

    def test_empty_class_rejected(self):
        params = LossParams.init(2)
        img = exp_map_origin(TangentVector([1.0, 0.0]), params.curv())
        with pytest.raises(ValueError, match="no prompt"):
            classify(img, {"cat": []}, params)

    def test_sphere_image(self):
        params = LossParams.init(2)
        res = classify(np.array([1.0, 0.0]),
                       {"x": [np.array([2.0, 0.0])], "y": [np.array([0.0, 3.0])]},
                       params)
        assert res.predicted == "x"
        assert res.scores["x"] == pytest.approx(1.0, abs=1e-12)


class TestEdgeContracts:
    def test_with_root_idempotent(self):
        idx = lorentz_index([ray_point(1.0)], [("text", "t")], root=True)
        again = with_root(idx)
        assert again is idx

    def test_stats_empty_index_rejected(self):
        idx = EmbeddingIndex(space="lorentz", curvature=1.0,
                             vectors=np.zeros((0, 2)), labels=())
        with pytest.raises(ValueError, match="empty"):
            root_distance_stats(idx)

    def test_interpolate_needs_two_steps(self):
        idx = lorentz_index([ray_point(1.0)], [("text", "t")], root=True)
        with pytest.raises(ValueError, match="steps"):
            interpolate_steps(ray_point(1.0).space, idx, steps=1)

    def test_calibrated_sphere_rejected(self):
        idx = EmbeddingIndex(space="sphere", curvature=None,
                             vectors=np.array([[1.0, 0.0]]), labels=(("text", "t"),))
        with pytest.raises(ValueError, match="calibrated"):
            retrieve(np.array([1.0, 0.0]), idx, k=1, calibrated=True)

    def test_classify_curvature_mismatch(self):
        params = LossParams.init(2)          # c = 1 after clamping
        img = exp_map_origin(TangentVector([1.0, 0.0]), Curvature(2.0))
        with pytest.raises(ValueError, match="curvature"):
            classify(img, {"a": [np.array([1.0, 0.0])]}, params)
