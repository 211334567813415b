"""NMS, view selection, feature aggregation, SMS, label assignment, and
principal-axis correction against direct-computation oracles."""

import numpy as np
import pytest

from ov3dis.bitset import SuperpointSet
from ov3dis.classify import (
    aggregate_feature, assign_labels, combine_and_nms,
    principal_axis_correction, select_views, similarity, sms_filter,
)
from ov3dis.errors import PowerIterationError, StructureError
from ov3dis.proposals import Proposal3D, SOURCE_IMAGE, SOURCE_POINTCLOUD
from ov3dis.scene import FrameProjection

N = 40


def mask_of(ids):
    m = np.zeros(N, dtype=bool)
    m[list(ids)] = True
    return m


def img_prop(pid, ids):
    return Proposal3D(pid, mask_of(ids), SOURCE_IMAGE,
                      superpoints=SuperpointSet.from_ids(N, list(ids)))


def pc_prop(pid, ids):
    return Proposal3D(pid, mask_of(ids), SOURCE_POINTCLOUD)


class TestCombineAndNms:
    def test_pointcloud_priority_on_duplicates(self):
        ids = range(0, 10)
        out = combine_and_nms([img_prop(0, ids)], [pc_prop(5, ids)])
        assert len(out) == 1 and out[0].source == SOURCE_POINTCLOUD

    def test_disjoint_concatenation(self):
        image = [img_prop(0, range(0, 5)), img_prop(1, range(10, 15))]
        pc = [pc_prop(2, range(20, 30))]
        out = combine_and_nms(image, pc)
        assert len(out) == 3
        assert out[0].source == SOURCE_POINTCLOUD  # priority first

    def test_near_duplicates_match_greedy_oracle(self):
        # three proposals sharing 30 points with one private point each:
        # pairwise IoU 30/32 = 0.9375... too low; share 30 of 31 against a
        # common base instead: IoU(base+{i}, base+{j}) = 30/32. Use a wider
        # shared core so the ratio clears 0.95: 60 shared, 1 private each
        # -> IoU = 60/62 ~ 0.968 > 0.95.
        base = set(range(0, 36))
        trio = [img_prop(i, sorted(base | {36 + i})) for i in range(3)]
        # 36/38 ~ 0.947 < 0.95 would survive; verify the strict boundary by
        # construction with a larger universe below
        out = combine_and_nms(trio, [])
        assert [p.proposal_id for p in out] == [0, 1, 2]

        big = set(range(0, 60))
        masks = [np.zeros(70, dtype=bool) for _ in range(3)]
        props = []
        for i, m in enumerate(masks):
            m[sorted(big | {60 + i})] = True
            props.append(Proposal3D(i, m, SOURCE_IMAGE))
        out = combine_and_nms(props, [])
        # greedy oracle: order (-count, id) = [0, 1, 2]; 1 and 2 hit
        # IoU 60/62 > 0.95 against kept 0
        assert [p.proposal_id for p in out] == [0]

    def test_no_surviving_pair_above_threshold(self):
        rng = np.random.default_rng(0)
        image = [img_prop(i, np.flatnonzero(rng.random(N) < 0.5)) for i in range(6)]
        pc = [pc_prop(10 + i, np.flatnonzero(rng.random(N) < 0.5)) for i in range(3)]
        out = combine_and_nms(image, pc)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                inter = np.count_nonzero(out[i].point_mask & out[j].point_mask)
                union = np.count_nonzero(out[i].point_mask | out[j].point_mask)
                assert inter / union <= 0.95


def projections_with_visibility(vis_by_frame):
    return {
        fid: FrameProjection(fid, np.zeros(N, np.int64), np.zeros(N, np.int64),
                             np.ones(N), np.asarray(vis, dtype=bool))
        for fid, vis in vis_by_frame.items()
    }


class TestSelectViews:
    def test_single_fully_visible_frame(self):
        p = img_prop(0, range(0, 10))
        projections = projections_with_visibility({
            3: mask_of(range(0, 10)),
            4: np.zeros(N, dtype=bool),
        })
        sel = select_views(p, projections, top_v=20)
        assert sel.views == [(3, 1.0)]  # alpha=0 frames excluded

    def test_ordering_and_truncation(self):
        p = img_prop(0, range(0, 10))
        projections = projections_with_visibility({
            0: mask_of(range(0, 5)),    # alpha 0.5
            1: mask_of(range(0, 8)),    # alpha 0.8
            2: mask_of(range(0, 5)),    # alpha 0.5, tie with frame 0
            3: mask_of(range(0, 2)),    # alpha 0.2
        })
        sel = select_views(p, projections, top_v=3)
        assert sel.views == [(1, 0.8), (0, 0.5), (2, 0.5)]

    def test_alpha_matches_per_point_recount(self):
        rng = np.random.default_rng(8)
        ids = np.flatnonzero(rng.random(N) < 0.4)
        p = img_prop(0, ids)
        vis = {f: rng.random(N) < 0.5 for f in range(6)}
        sel = select_views(p, projections_with_visibility(vis), top_v=10)
        for frame_id, alpha in sel.views:
            expected = sum(1 for i in ids if vis[frame_id][i]) / len(ids)
            assert alpha == expected


class ConstProvider:
    def __init__(self, table, dim):
        self.table = table
        self.dim = dim

    def view_feature(self, proposal, frame_id, scale):
        return self.table.get((frame_id, scale))

    def text_features(self, queries):
        raise NotImplementedError


class TestAggregateFeature:
    def test_identical_features_return_that_feature(self):
        u = np.zeros(8)
        u[2] = 1.0
        p = img_prop(0, range(4))
        sel = select_views(p, projections_with_visibility(
            {0: mask_of(range(4)), 1: mask_of(range(2))}), top_v=5)
        provider = ConstProvider({(f, l): u for f in range(2) for l in range(3)}, 8)
        feat = aggregate_feature(p, sel, provider, scale_levels=3)
        assert not feat.unclassifiable
        assert np.allclose(feat.values, u, atol=1e-12)

    def test_single_view_single_scale(self):
        f = np.ones(4) / 2.0
        p = img_prop(0, range(4))
        sel = select_views(p, projections_with_visibility({0: mask_of(range(4))}), 5)
        feat = aggregate_feature(p, sel, ConstProvider({(0, 0): f}, 4), scale_levels=1)
        assert np.allclose(feat.values, f / np.linalg.norm(f), atol=1e-15)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(5)
        dim = 16
        p = img_prop(0, range(10))
        vis = {f: mask_of(range(0, 10 - f)) for f in range(3)}  # alphas 1.0, .9, .8
        sel = select_views(p, projections_with_visibility(vis), top_v=3)
        table = {}
        for f in range(3):
            for l in range(3):
                v = rng.normal(size=dim)
                table[(f, l)] = v / np.linalg.norm(v)
        feat = aggregate_feature(p, sel, ConstProvider(table, dim), scale_levels=3)

        total = np.zeros(dim)
        for frame_id, alpha in sel.views:
            for l in range(3):
                total += table[(frame_id, l)] * alpha
        expected = total / np.linalg.norm(total)
        assert np.linalg.norm(feat.values - expected) < 1e-9
        assert abs(np.linalg.norm(feat.values) - 1.0) < 1e-9

    def test_empty_selection_unclassifiable(self):
        p = img_prop(0, range(4))
        sel = select_views(p, projections_with_visibility({0: np.zeros(N, bool)}), 5)
        feat = aggregate_feature(p, sel, ConstProvider({}, 4), scale_levels=3)
        assert feat.unclassifiable
        assert np.all(feat.values == 0)

    def test_provider_failure_skipped_and_logged(self):
        u = np.array([1.0, 0, 0, 0])
        p = img_prop(0, range(4))
        sel = select_views(p, projections_with_visibility({0: mask_of(range(4))}), 5)
        provider = ConstProvider({(0, 0): u}, 4)  # scales 1, 2 missing
        feat = aggregate_feature(p, sel, provider, scale_levels=3)
        assert not feat.unclassifiable
        assert feat.skipped_views == [(0, 1), (0, 2)]
        assert np.allclose(feat.values, u)


class TestSimilarity:
    def test_matching_row_is_one(self):
        f = np.array([[1.0, 0, 0]])
        t = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        sim = similarity(f, t)
        assert sim[0, 0] == 1.0 and sim[0, 1] == 0.0

    def test_random_matches_dot_oracle(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(5, 9))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        t = rng.normal(size=(4, 9))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        sim = similarity(f, t)
        for i in range(5):
            for j in range(4):
                assert sim[i, j] == pytest.approx(float(np.dot(f[i], t[j])), abs=1e-12)
        assert np.all(np.abs(sim) <= 1 + 1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(StructureError):
            similarity(np.ones((2, 3)), np.ones((2, 4)))


SQRT_TWO_THIRDS = float(np.sqrt(2.0 / 3.0))


class TestSms:
    def test_worked_zero_one_two_example(self):
        # single query column {0, 1, 2}: mu = 1, sigma = sqrt(2/3)
        sim = np.array([[0.0], [1.0], [2.0]])
        kept, stats = sms_filter(sim, tau_sms=0.0)
        assert stats.mu[0] == 1.0
        assert stats.sigma[0] == pytest.approx(SQRT_TWO_THIRDS, abs=1e-12)
        assert stats.sms[2] == pytest.approx((2.0 - 1.0) / SQRT_TWO_THIRDS, abs=1e-9)
        assert stats.sms[2] == pytest.approx(1.224744871, abs=1e-6)

    def test_degenerate_sigma_keeps(self):
        sim = np.full((4, 2), 0.5)
        kept, stats = sms_filter(sim, tau_sms=10.0)
        assert kept == [0, 1, 2, 3]
        assert np.all(np.isnan(stats.sms))

    def test_minus_infinity_removes_nothing(self):
        rng = np.random.default_rng(2)
        sim = rng.uniform(-1, 1, size=(6, 3))
        kept, _ = sms_filter(sim, tau_sms=-np.inf)
        assert kept == list(range(6))

    def test_removal_is_strict_below(self):
        sim = np.array([[0.0], [1.0], [2.0]])
        z = (0.0 - 1.0) / SQRT_TWO_THIRDS
        kept, _ = sms_filter(sim, tau_sms=z)   # equality: kept
        assert kept == [0, 1, 2]
        kept, _ = sms_filter(sim, tau_sms=z + 1e-12)
        assert kept == [1, 2]

    def test_standardized_columns_mean_zero_std_one(self):
        rng = np.random.default_rng(3)
        sim = rng.uniform(-1, 1, size=(50, 4))
        _, stats = sms_filter(sim, 0.0)
        for c in range(4):
            z = (sim[:, c] - stats.mu[c]) / stats.sigma[c]
            assert abs(z.mean()) < 1e-9
            assert abs(np.sqrt(np.mean(z**2)) - 1.0) < 1e-9

    def test_affine_invariance_single_query(self):
        # scaling and shifting the lone query column leaves removals fixed
        rng = np.random.default_rng(4)
        col = rng.uniform(-1, 1, size=(12, 1))
        kept_a, _ = sms_filter(col, tau_sms=0.5)
        kept_b, _ = sms_filter(col * 3.7 + 0.2, tau_sms=0.5)
        assert kept_a == kept_b


class TestAssignLabels:
    def test_top1_one_prediction_per_kept(self):
        sim = np.array([[0.3, 0.9], [0.8, 0.1], [0.5, 0.5]])
        preds = assign_labels(sim, [0, 1, 2], "top1")
        assert [(p.proposal_index, p.query_index) for p in preds] == \
               [(0, 1), (1, 0), (2, 0)]  # row 2 tie: lower query index
        assert all(p.confidence == 1.0 for p in preds)

    def test_topk_largest_cells(self):
        sim = np.array([[0.9, 0.1, 0.5], [0.8, 0.7, 0.2]])
        preds = assign_labels(sim, [0, 1], "topk", top_k=4)
        cells = [(p.proposal_index, p.query_index) for p in preds]
        # sort oracle: values 0.9, 0.8, 0.7, 0.5
        assert cells == [(0, 0), (1, 0), (1, 1), (0, 2)]

    def test_single_cell_both_protocols(self):
        sim = np.array([[0.4]])
        assert len(assign_labels(sim, [0], "top1")) == 1
        assert len(assign_labels(sim, [0], "topk", top_k=300)) == 1

    def test_skips_filtered_rows(self):
        sim = np.array([[0.9, 0.1], [0.8, 0.7]])
        preds = assign_labels(sim, [1], "top1")
        assert [(p.proposal_index, p.query_index) for p in preds] == [(1, 0)]


class TestPrincipalAxis:
    def test_axis_matches_eigensolver_oracle(self):
        rng = np.random.default_rng(6)
        visual = rng.normal(size=(10, 8))
        text = rng.normal(size=(4, 8))
        result = principal_axis_correction(visual, text)
        gram = visual.T @ visual
        w, v = np.linalg.eigh(gram)
        dominant = v[:, np.argmax(w)]
        assert abs(abs(np.dot(result.axis, dominant)) - 1.0) < 1e-6

    def test_orthogonal_feature_unchanged(self):
        # rank-1 visual matrix: the dominant direction is exact, so a
        # perpendicular text vector must come back untouched
        axis = np.zeros(6)
        axis[0] = 1.0
        ortho = np.zeros(6)
        ortho[1] = 1.0
        visual = np.stack([axis, axis * 0.9])
        result = principal_axis_correction(visual, ortho[None, :])
        assert np.allclose(result.text[0], ortho, atol=1e-12)
        assert result.text_ok[0]

    def test_parallel_feature_flagged(self):
        axis = np.zeros(5)
        axis[2] = 1.0
        visual = np.stack([axis, axis * 0.5])
        result = principal_axis_correction(visual, axis[None, :])
        assert not result.visual_ok[0] and not result.visual_ok[1]
        assert not result.text_ok[0]
        assert np.all(result.visual == 0)

    def test_renormalized_survivors(self):
        rng = np.random.default_rng(9)
        visual = rng.normal(size=(6, 7))
        result = principal_axis_correction(visual, rng.normal(size=(3, 7)))
        for row, ok in zip(result.visual, result.visual_ok):
            if ok:
                assert abs(np.linalg.norm(row) - 1.0) < 1e-9

    def test_nonconvergence_raises_with_iteration_count(self):
        # Engineer the spectrum against the fixed deterministic start: put
        # two close singular values (ratio 0.999 in the Gram operator) on a
        # plane where the start sits at 45 degrees. The angle decays by
        # ~0.1% per iteration, so 1000 iterations cannot reach tol=1e-8.
        from ov3dis.classify import _AXIS_SEED
        rng = np.random.Generator(np.random.Philox(key=_AXIS_SEED))
        v0 = rng.normal(size=6)
        v0 /= np.linalg.norm(v0)
        x = np.zeros(6)
        x[int(np.argmin(np.abs(v0)))] = 1.0
        x = x - np.dot(x, v0) * v0
        x /= np.linalg.norm(x)
        e1 = (v0 + x) / np.sqrt(2.0)
        e2 = (v0 - x) / np.sqrt(2.0)
        visual = np.stack([e1, e2 * np.sqrt(0.999)])
        with pytest.raises(PowerIterationError) as err:
            principal_axis_correction(visual, e1[None, :])
        assert err.value.iterations == 1000
        assert err.value.residual > 1e-8

    def test_requires_two_rows(self):
        with pytest.raises(StructureError):
            principal_axis_correction(np.ones((1, 4)), np.ones((1, 4)))
