"""Model construction, forward passes and kernels."""

import numpy as np
import pytest

from models import autodiff as ad
from models.networks import (
    DppLstmModel,
    DppLstmSingleModel,
    MlpFrameModel,
    MlpShotModel,
    ModelKind,
    NetworkConfig,
    VsLstmModel,
    baseline_predict,
    build_model,
    dpp_nll_graph,
    dpplstm_build_kernel,
    dpplstm_single_build_kernel,
    model_from_checkpoint,
    square_loss_graph,
    vslstm_predict,
    window_features,
)
from models.annotations import Segmentation
from utils.errors import ContractError, InvalidTargetError, ShapeError


@pytest.fixture
def cfg():
    return NetworkConfig(feature_dim=3, hidden_size=4, mlp_hidden=5, embed_dim=3)


class TestConfig:
    def test_window_must_be_odd(self):
        with pytest.raises(ContractError):
            NetworkConfig(feature_dim=3, window_k=4)

    def test_dict_round_trip(self, cfg):
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


class TestVsLstm:
    def test_zero_weights_give_half(self, cfg, rng):
        model = VsLstmModel.zeros(cfg)
        np.testing.assert_allclose(vslstm_predict(model, rng.normal(size=(7, 3))).values, 0.5)

    def test_scores_in_unit_interval(self, cfg, rng):
        model = VsLstmModel.initialize(cfg, seed=4, scale=2.0)
        scores = vslstm_predict(model, 5 * rng.normal(size=(12, 3))).values
        assert scores.shape == (12,)
        assert np.all((scores > 0) & (scores < 1))

    def test_matches_plain_forward(self, cfg, rng):
        model = VsLstmModel.initialize(cfg, seed=1)
        x = rng.normal(size=(5, 3))
        h_fwd, h_bwd = ad.bilstm_forward(model.bilstm, x)
        expected = ad.mlp_forward(model.f_i, np.hstack([h_fwd, h_bwd, x]))[:, 0]
        np.testing.assert_allclose(vslstm_predict(model, x).values, expected, atol=1e-14)

    def test_feature_dim_checked(self, cfg):
        with pytest.raises(ShapeError):
            vslstm_predict(VsLstmModel.zeros(cfg), np.zeros((4, 2)))

    def test_seeded_initialisation(self, cfg):
        a = VsLstmModel.initialize(cfg, seed=9)
        b = VsLstmModel.initialize(cfg, seed=9)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert np.all(a.params["bilstm.fwd.w_f"][:, -1] == 1.0)


class TestDppLstm:
    def test_kernel_elements(self, cfg, rng):
        model = DppLstmModel.initialize(cfg, seed=2, scale=0.5)
        x = rng.normal(size=(6, 3))
        kernel = dpplstm_build_kernel(model, x)
        h_fwd, h_bwd = ad.bilstm_forward(model.bilstm, x)
        joint = np.hstack([h_fwd, h_bwd, x])
        y = ad.mlp_forward(model.f_i, joint)[:, 0]
        phi = ad.mlp_forward(model.f_s, joint)
        for t in range(6):
            for u in range(6):
                assert kernel.l[t, u] == pytest.approx(y[t] * y[u] * float(phi[t] @ phi[u]), rel=1e-12, abs=1e-15)

    def test_kernel_is_psd(self, cfg, rng):
        for seed in range(5):
            model = DppLstmModel.initialize(cfg, seed=seed, scale=1.0)
            assert dpplstm_build_kernel(model, rng.normal(size=(10, 3))).is_psd()

    def test_single_head_kernel_is_gram(self, cfg, rng):
        model = DppLstmSingleModel.initialize(cfg, seed=3, scale=0.5)
        x = rng.normal(size=(5, 3))
        h_fwd, h_bwd = ad.bilstm_forward(model.bilstm, x)
        phi = ad.mlp_forward(model.f_s, np.hstack([h_fwd, h_bwd, x]))
        np.testing.assert_allclose(dpplstm_single_build_kernel(model, x).l, phi @ phi.T, atol=1e-14)

    def test_dpplstm_also_predicts_importance(self, cfg, rng):
        model = DppLstmModel.initialize(cfg, seed=0)
        assert vslstm_predict(model, rng.normal(size=(4, 3))).n_frames == 4

    def test_empty_keyframes_rejected(self, cfg, rng):
        with pytest.raises(InvalidTargetError):
            dpp_nll_graph(DppLstmModel.zeros(cfg), rng.normal(size=(4, 3)), [])

    def test_vslstm_has_no_kernel(self, cfg, rng):
        with pytest.raises(ContractError):
            dpp_nll_graph(VsLstmModel.zeros(cfg), rng.normal(size=(4, 3)), [0])


class TestLosses:
    def test_constant_half_targets_zero_loss(self, cfg, rng):
        loss = square_loss_graph(VsLstmModel.zeros(cfg), rng.normal(size=(6, 3)), np.full(6, 0.5))
        assert float(loss.value) == pytest.approx(0.0, abs=1e-15)

    def test_targets_out_of_range(self, cfg, rng):
        with pytest.raises(InvalidTargetError):
            square_loss_graph(VsLstmModel.zeros(cfg), rng.normal(size=(3, 3)), np.array([0.1, 1.5, 0.2]))

    def test_single_head_has_no_importance(self, cfg, rng):
        with pytest.raises(ContractError):
            square_loss_graph(DppLstmSingleModel.zeros(cfg), rng.normal(size=(3, 3)), np.zeros(3))


class TestBaselines:
    def test_window_features(self):
        x = np.arange(8.0).reshape(4, 2)
        w = window_features(x, 3)
        assert w.shape == (4, 6)
        np.testing.assert_array_equal(w[0], [0, 1, 0, 1, 2, 3])
        np.testing.assert_array_equal(w[2], [2, 3, 4, 5, 6, 7])
        np.testing.assert_array_equal(w[3], [4, 5, 6, 7, 6, 7])

    def test_window_of_one_is_identity(self, rng):
        x = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(window_features(x, 1), x)

    def test_shot_baseline_scores_segments(self, cfg, rng):
        model = MlpShotModel.initialize(cfg, seed=0)
        seg = Segmentation((0, 3, 5), 8)
        scores = baseline_predict(model, rng.normal(size=(8, 3)), seg)
        assert scores.shape == (3,)
        with pytest.raises(ContractError):
            baseline_predict(model, rng.normal(size=(8, 3)))

    def test_frame_baseline_scores_frames(self, cfg, rng):
        model = MlpFrameModel.zeros(cfg)
        np.testing.assert_allclose(baseline_predict(model, rng.normal(size=(6, 3))), 0.5)

    def test_shot_loss_uses_segment_means(self, cfg, rng):
        model = MlpShotModel.zeros(cfg)
        seg = Segmentation((0, 2), 4)
        loss = square_loss_graph(model, rng.normal(size=(4, 3)), np.array([0.0, 1.0, 1.0, 1.0]), seg)
        assert float(loss.value) == pytest.approx(0.125)


class TestPersistence:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_checkpoint_restores_model(self, kind, cfg):
        model = build_model(kind, cfg, seed=5)
        restored = model_from_checkpoint(model.to_checkpoint({"epoch": 3}))
        assert type(restored) is type(model)
        assert restored.params.keys() == model.params.keys()
        for name in model.params:
            np.testing.assert_array_equal(restored.params[name], model.params[name])

    def test_load_params_keeps_identity(self, cfg):
        model = VsLstmModel.initialize(cfg, seed=1)
        array = model.params["f_i.0.weight"]
        model.load_params(VsLstmModel.initialize(cfg, seed=2).params)
        assert model.params["f_i.0.weight"] is array
        np.testing.assert_array_equal(array, VsLstmModel.initialize(cfg, seed=2).params["f_i.0.weight"])

    def test_load_params_shape_mismatch(self, cfg):
        other = VsLstmModel.initialize(NetworkConfig(feature_dim=2), seed=0)
        with pytest.raises(ShapeError):
            VsLstmModel.zeros(cfg).load_params(other.params)

    def test_copy_is_independent(self, cfg):
        model = VsLstmModel.initialize(cfg, seed=1)
        clone = model.copy()
        clone.params["f_i.1.bias"] += 1.0
        assert not np.array_equal(clone.params["f_i.1.bias"], model.params["f_i.1.bias"])
