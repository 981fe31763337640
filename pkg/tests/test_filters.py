import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfinet import tensor as T
from sfinet.backbone import ConfigError
from sfinet.filters import (AmbiguityParams, NoiseParams, ambiguity_map, ambiguity_mask,
                            apply_mask, class_maps, filter_loss, filter_stage,
                            noise_select, topk_weights, validate_filter_ratios)
from sfinet.tensor import Tensor

from conftest import assert_grads_match


# --- naive full-sort references, kept deliberately independent ------------

def naive_mask(scores: np.ndarray, gamma1: float) -> np.ndarray:
    """Rank every cell by (score, row-major position); keep the lowest."""
    w, h = scores.shape
    cells = sorted(((scores[x, y], x * h + y) for x in range(w) for y in range(h)))
    keep = math.floor((1.0 - gamma1) * w * h)
    mask = np.zeros(w * h)
    for _, flat in cells[:keep]:
        mask[flat] = 1.0
    return mask.reshape(w, h)


def naive_select(masked_maps: np.ndarray, gamma2: float, mask: np.ndarray | None) -> list[int]:
    """Sort candidates by (-score, position), take the keep quota."""
    w, h, n = masked_maps.shape
    scores = masked_maps.mean(axis=2).ravel()
    flats = range(w * h) if mask is None else [i for i in range(w * h) if mask.ravel()[i] > 0.5]
    ranked = sorted(flats, key=lambda i: (-scores[i], i))
    return ranked[: math.floor((1.0 - gamma2) * w * h)]


class TestParams:
    def test_invalid_rejected(self):
        with pytest.raises(ConfigError):
            AmbiguityParams(k=1)
        with pytest.raises(ConfigError):
            AmbiguityParams(beta_h=0.9, beta_l=0.95)
        with pytest.raises(ConfigError):
            AmbiguityParams(gamma1=0.0)
        with pytest.raises(ConfigError):
            NoiseParams(gamma2=1.0)

    def test_gamma1_above_gamma2_rejected(self):
        with pytest.raises(ConfigError, match="gamma1"):
            validate_filter_ratios(AmbiguityParams(gamma1=0.3), NoiseParams(gamma2=0.2),
                                   [(4, 4, 8)])


class TestClassMaps:
    def test_zero_weights(self, rng):
        f = Tensor(rng.standard_normal((3, 3, 4)))
        cm = class_maps(f, Tensor(np.zeros((4, 5))))
        npt.assert_array_equal(cm.maps.data, 0.0)
        npt.assert_array_equal(cm.coarse.data, 0.0)

    def test_single_pixel_coarse_equals_that_pixel(self, rng):
        f = Tensor(rng.standard_normal((1, 1, 4)))
        cm = class_maps(f, Tensor(rng.standard_normal((4, 6))))
        npt.assert_allclose(cm.coarse.data, cm.maps.data[0, 0], rtol=1e-15)

    def test_coarse_matches_hand_pooling(self, rng):
        f = rng.standard_normal((2, 2, 3))
        proj = np.zeros((3, 5))
        proj[:3, :3] = np.eye(3)  # identity-extended weights
        cm = class_maps(Tensor(f), Tensor(proj))
        expected = np.concatenate([f.mean(axis=(0, 1)), [0.0, 0.0]])
        npt.assert_allclose(cm.coarse.data, expected, rtol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(T.ShapeError):
            class_maps(Tensor(rng.standard_normal((2, 2, 3))), Tensor(np.zeros((4, 5))))


class TestTopkWeights:
    def test_table_defaults_exact(self):
        _, w = topk_weights(np.array([0.4, 0.3, 0.2, 0.1]), AmbiguityParams())
        npt.assert_allclose(w, [1.10, 1.05, 1.00, 0.95], atol=1e-12)

    def test_k2_endpoints_exact(self):
        _, w = topk_weights(np.array([1.0, 2.0]), AmbiguityParams(k=2))
        assert w[0] == 1.1 and w[1] == 0.95

    def test_hand_sorted_indices(self):
        idx, _ = topk_weights(np.array([0.1, 0.9, 0.5]), AmbiguityParams(k=2))
        assert idx == [1, 2]

    def test_ties_prefer_lower_class_index(self):
        idx, _ = topk_weights(np.array([0.5, 0.7, 0.5, 0.7]), AmbiguityParams(k=3))
        assert idx == [1, 3, 0]

    def test_spacing_constant_for_k_2_to_8(self):
        for k in range(2, 9):
            p = np.linspace(1.0, 0.0, max(k, 8))
            _, w = topk_weights(p, AmbiguityParams(k=k))
            assert w[0] == 1.1 and w[-1] == 0.95
            npt.assert_allclose(np.diff(w), -(1.1 - 0.95) / (k - 1), atol=1e-12)

    def test_k_exceeding_classes_rejected(self):
        with pytest.raises(ConfigError):
            topk_weights(np.array([1.0, 2.0]), AmbiguityParams(k=3))


class TestAmbiguityMap:
    def test_identical_slices_scale_by_mean_weight(self, rng):
        x = rng.standard_normal((3, 3))
        maps = np.stack([x, x, x], axis=2)
        out = ambiguity_map(Tensor(maps), [0, 2], np.array([1.1, 0.95]))
        npt.assert_allclose(out.data, x * (1.1 + 0.95) / 2, rtol=1e-12)

    def test_hand_value_ones_and_zeros(self):
        maps = np.stack([np.ones((2, 2)), np.zeros((2, 2))], axis=2)
        out = ambiguity_map(Tensor(maps), [0, 1], np.array([1.1, 0.95]))
        npt.assert_allclose(out.data, np.full((2, 2), 0.55), rtol=1e-12)

    def test_only_selected_slices_matter(self, rng):
        maps = rng.standard_normal((3, 3, 5))
        out1 = ambiguity_map(Tensor(maps), [0, 2], np.array([1.1, 0.95])).data
        shuffled = maps.copy()
        shuffled[:, :, [1, 3, 4]] = maps[:, :, [4, 1, 3]]
        out2 = ambiguity_map(Tensor(shuffled), [0, 2], np.array([1.1, 0.95])).data
        npt.assert_array_equal(out1, out2)


class TestAmbiguityMask:
    def test_hand_case_drops_highest(self):
        scores = np.array([[0.1, 0.9], [0.5, 0.7]])
        mask = ambiguity_mask(Tensor(scores), 0.25)
        npt.assert_array_equal(mask.data, [[1.0, 0.0], [1.0, 1.0]])

    def test_constant_map_drops_last_row_major_cell(self):
        mask = ambiguity_mask(Tensor(np.ones((2, 2))), 0.25)
        npt.assert_array_equal(mask.data, [[1.0, 1.0], [1.0, 0.0]])

    @given(st.integers(2, 8), st.integers(2, 8),
           st.floats(0.01, 0.6), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_cardinality_contract(self, w, h, gamma1, seed):
        scores = np.random.default_rng(seed).standard_normal((w, h))
        keep = math.floor((1.0 - gamma1) * w * h)
        if keep <= 0 or keep >= w * h:
            return
        mask = ambiguity_mask(Tensor(scores), gamma1)
        assert int(mask.data.sum()) == keep

    @given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_positive_scaling_leaves_mask_unchanged(self, c, seed):
        scores = np.random.default_rng(seed).standard_normal((4, 5))
        a = ambiguity_mask(Tensor(scores), 0.3).data
        b = ambiguity_mask(Tensor(scores * c), 0.3).data
        npt.assert_array_equal(a, b)

    def test_degenerate_requests_rejected(self):
        with pytest.raises(ConfigError, match="degenerate"):
            ambiguity_mask(Tensor(np.ones((2, 2))), 0.9999)  # keeps 0
        with pytest.raises(ConfigError):
            ambiguity_mask(Tensor(np.ones((20, 20))), 1e-17)  # rounds to keeping all

    def test_mask_is_constant_not_differentiable(self, rng):
        scores = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        mask = ambiguity_mask(scores, 0.3)
        assert not mask.requires_grad


class TestApplyMask:
    def test_all_ones_identity(self, rng):
        maps = Tensor(rng.standard_normal((3, 3, 4)))
        feats = Tensor(rng.standard_normal((3, 3, 6)))
        m2, f2 = apply_mask(Tensor(np.ones((3, 3))), maps, feats)
        npt.assert_array_equal(m2.data, maps.data)
        npt.assert_array_equal(f2.data, feats.data)

    def test_single_zero_clears_all_channels(self, rng):
        feats = Tensor(rng.standard_normal((3, 3, 6)))
        mask = np.ones((3, 3))
        mask[1, 2] = 0.0
        _, f2 = apply_mask(Tensor(mask), Tensor(rng.standard_normal((3, 3, 2))), feats)
        npt.assert_array_equal(f2.data[1, 2], np.zeros(6))

    def test_reapplying_is_noop(self, rng):
        maps = Tensor(rng.standard_normal((3, 3, 4)))
        feats = Tensor(rng.standard_normal((3, 3, 6)))
        mask = ambiguity_mask(Tensor(rng.standard_normal((3, 3))), 0.3)
        m2, f2 = apply_mask(mask, maps, feats)
        m3, f3 = apply_mask(mask, m2, f2)
        npt.assert_array_equal(m3.data, m2.data)
        npt.assert_array_equal(f3.data, f2.data)


class TestNoiseSelect:
    def test_hand_case(self):
        # scores per position: 3, 1, 4, 2 -> keep [2, 0]
        maps = np.array([3.0, 1.0, 4.0, 2.0]).reshape(2, 2, 1)
        feats = np.arange(8, dtype=float).reshape(2, 2, 2)
        sel = noise_select(Tensor(maps), Tensor(feats), 0.5)
        assert sel.indices == [2, 0]
        npt.assert_array_equal(sel.selected.data, feats.reshape(4, 2)[[2, 0]])

    def test_all_equal_scores_keep_first_flat_indices(self):
        maps = np.ones((2, 3, 2))
        feats = np.arange(12, dtype=float).reshape(2, 3, 2)
        sel = noise_select(Tensor(maps), Tensor(feats), 0.5)
        assert sel.indices == [0, 1, 2]

    @given(st.integers(2, 6), st.integers(2, 6),
           st.floats(0.05, 0.8), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_cardinality_contract(self, w, h, gamma2, seed):
        g = np.random.default_rng(seed)
        keep = math.floor((1.0 - gamma2) * w * h)
        if keep < 1:
            return
        sel = noise_select(Tensor(g.standard_normal((w, h, 3))),
                           Tensor(g.standard_normal((w, h, 5))), gamma2)
        assert len(sel.indices) == keep
        assert sel.selected.shape == (keep, 5)

    def test_mask_restriction_guarantees_membership(self, rng):
        for _ in range(50):
            maps = Tensor(rng.standard_normal((3, 4, 2)))
            mask = ambiguity_mask(Tensor(rng.standard_normal((3, 4))), 0.25)
            masked_maps, masked_feats = apply_mask(mask, maps, Tensor(rng.standard_normal((3, 4, 5))))
            sel = noise_select(masked_maps, masked_feats, 0.4, keep_mask=mask)
            flat = mask.data.ravel()
            assert all(flat[i] == 1.0 for i in sel.indices)

    def test_quota_infeasible_rejected(self, rng):
        mask = Tensor(np.zeros((2, 2)))
        with pytest.raises(ConfigError, match="unmasked"):
            noise_select(Tensor(rng.standard_normal((2, 2, 2))),
                         Tensor(rng.standard_normal((2, 2, 3))), 0.2, keep_mask=mask)


class TestOracleEquivalence:
    def test_mask_matches_naive_reference(self, rng):
        for _ in range(100):
            w, h = rng.integers(2, 9, size=2)
            gamma1 = float(rng.uniform(0.05, 0.6))
            keep = math.floor((1.0 - gamma1) * w * h)
            if keep <= 0 or keep >= w * h:
                continue
            scores = rng.standard_normal((w, h))
            if rng.random() < 0.3:  # force ties
                scores = np.round(scores, 1)
            npt.assert_array_equal(ambiguity_mask(Tensor(scores), gamma1).data,
                                   naive_mask(scores, gamma1))

    def test_select_matches_naive_reference(self, rng):
        for _ in range(100):
            w, h = rng.integers(2, 7, size=2)
            gamma2 = float(rng.uniform(0.05, 0.7))
            if math.floor((1.0 - gamma2) * w * h) < 1:
                continue
            maps = rng.standard_normal((int(w), int(h), 3))
            if rng.random() < 0.3:
                maps = np.round(maps, 1)
            feats = rng.standard_normal((int(w), int(h), 4))
            use_mask = rng.random() < 0.5
            mask = None
            if use_mask:
                gamma1 = min(0.3, gamma2)
                if math.floor((1.0 - gamma1) * w * h) in (0, w * h):
                    use_mask = False
                else:
                    mask = ambiguity_mask(Tensor(rng.standard_normal((int(w), int(h)))), gamma1)
            sel = noise_select(Tensor(maps), Tensor(feats), gamma2,
                               keep_mask=mask if use_mask else None)
            expected = naive_select(maps, gamma2, mask.data if use_mask else None)
            assert sel.indices == expected


class TestSelectedRegionInvariance:
    def test_perturbing_dropped_positions_leaves_g_unchanged(self, rng):
        feats = rng.standard_normal((4, 4, 6))
        maps = Tensor(rng.standard_normal((4, 4, 3)))
        mask = ambiguity_mask(Tensor(rng.standard_normal((4, 4))), 0.25)
        mm, mf = apply_mask(mask, maps, Tensor(feats))
        sel = noise_select(mm, mf, 0.25, keep_mask=mask)
        dropped = sorted(set(range(16)) - set(sel.indices))
        perturbed = feats.copy().reshape(16, 6)
        perturbed[dropped] += rng.standard_normal((len(dropped), 6)) * 10
        _, mf2 = apply_mask(mask, maps, Tensor(perturbed.reshape(4, 4, 6)))
        sel2 = noise_select(mm, mf2, 0.25, keep_mask=mask)
        assert sel2.indices == sel.indices
        npt.assert_array_equal(sel2.selected.data, sel.selected.data)


class TestFilterLoss:
    def test_uniform_predictions_give_stages_times_log_n(self, rng):
        n = 5
        gs = [Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((2, 6)))]
        classifiers = [Tensor(np.zeros((3, n))), Tensor(np.zeros((6, n)))]
        loss = filter_loss(gs, classifiers, 2, n)
        npt.assert_allclose(loss.item(), 2 * np.log(n), rtol=1e-12)

    def test_single_stage_two_classes_uniform(self, rng):
        loss = filter_loss([Tensor(rng.standard_normal((3, 4)))], [Tensor(np.zeros((4, 2)))], 0, 2)
        npt.assert_allclose(loss.item(), np.log(2), rtol=1e-12)

    def test_growing_margin_drives_loss_to_zero(self):
        g = Tensor(np.ones((2, 2)))
        losses = []
        for margin in (5.0, 10.0, 20.0):
            cls = np.zeros((2, 3))
            cls[:, 1] = margin / 2  # true-class logit = margin after the row mean
            losses.append(filter_loss([g], [Tensor(cls)], 1, 3).item())
        assert losses[0] > losses[1] > losses[2] > 0
        assert losses[2] < 1e-8

    def test_label_out_of_range(self, rng):
        with pytest.raises(ConfigError):
            filter_loss([Tensor(rng.standard_normal((2, 2)))], [Tensor(np.zeros((2, 3)))], 3, 3)


class TestEndToEndDifferentiability:
    def test_filter_loss_gradient_reaches_backbone(self, rng):
        from sfinet.backbone import Backbone, BackboneConfig

        cfg = BackboneConfig(input_size=(8, 8), strides=(2, 2), channels=(4, 6))
        bb = Backbone(cfg, rng)
        amb = AmbiguityParams(k=2, gamma1=0.1)
        noise = NoiseParams(gamma2=0.2)
        projs = [Tensor(rng.standard_normal((4, 3)) * 0.5, requires_grad=True),
                 Tensor(rng.standard_normal((6, 3)) * 0.5, requires_grad=True)]
        clss = [Tensor(rng.standard_normal((4, 3)) * 0.5, requires_grad=True),
                Tensor(rng.standard_normal((6, 3)) * 0.5, requires_grad=True)]
        img = rng.standard_normal((8, 8, 3))

        def loss():
            stages = bb.forward(Tensor(img))
            selected = []
            for st_, proj in zip(stages, projs):
                _, art = filter_stage(st_.features, proj, amb, noise)
                selected.append(art.selected_features)
            return filter_loss(selected, clss, 1, 3)

        params = dict(bb.parameters())
        params.update({f"cls{i}": c for i, c in enumerate(clss)})
        assert_grads_match(loss, params, tol=1e-4)
