import numpy as np
import pytest

from models.annotations import ImportanceCurve, Segmentation, budget_frames
from models.dpp import DppKernel, map_greedy
from models.networks import DppLstmModel, ModelKind, NetworkConfig, build_model
from models.temporal import kts_segment
from utils.errors import ContractError, ShapeError
from viewmodels.summary_viewmodel import (
    dpplstm_summarize,
    random_scores_summary,
    summarize,
    summary_from_scores,
    vslstm_summarize,
)


@pytest.fixture
def net_cfg():
    return NetworkConfig(feature_dim=4, hidden_size=4, mlp_hidden=4, embed_dim=3, init_scale=0.5)


class TestBudget:
    @pytest.mark.parametrize("kind", list(ModelKind))
    @pytest.mark.parametrize("fraction", [0.05, 0.15, 0.5])
    def test_every_model_respects_budget(self, kind, fraction, net_cfg, small_corpus):
        model = build_model(kind, net_cfg, seed=1)
        for record in small_corpus.records[:3]:
            summary = summarize(model, record.features, record.segmentation, fraction, record.video_id)
            assert summary.keyshots.duration <= budget_frames(record.n_frames, fraction)
            assert summary.video_id == record.video_id
            assert summary.n_frames == record.n_frames

    def test_random_summary_respects_budget(self, rng):
        for _ in range(20):
            n = int(rng.integers(10, 120))
            seg = kts_segment(rng.normal(size=(n, 3)), 10)
            summary = random_scores_summary(seg, 0.15, rng)
            assert summary.keyshots.duration <= budget_frames(n, 0.15)


class TestSummaries:
    def test_from_scores(self, format_fixture):
        summary = summary_from_scores(format_fixture.scores, format_fixture.segmentation, 5 / 6, "v")
        assert summary.keyshots == format_fixture.keyshots
        assert summary.keyframes == format_fixture.keyframes
        assert summary.budget_frames == 5

    def test_dpp_keyframes_come_from_greedy_map(self, net_cfg, rng):
        model = DppLstmModel.initialize(net_cfg, seed=3, scale=1.0)
        x = 3.0 * rng.normal(size=(30, 4))
        seg = kts_segment(x, 5)
        summary = dpplstm_summarize(model, x, seg, 0.3)
        kernel = DppKernel(model.graph(x)["kernel"].value)
        assert list(summary.keyframes.frames) == map_greedy(kernel)

    def test_random_summary_is_seeded(self):
        seg = Segmentation((0, 4, 9, 15), 20)
        a = random_scores_summary(seg, 0.3, np.random.default_rng(5))
        b = random_scores_summary(seg, 0.3, np.random.default_rng(5))
        assert a == b

    def test_segmentation_length_checked(self, net_cfg, rng):
        model = build_model(ModelKind.VSLSTM, net_cfg)
        with pytest.raises(ShapeError):
            vslstm_summarize(model, rng.normal(size=(10, 4)), Segmentation((0,), 9))

    def test_unknown_model(self, format_fixture):
        with pytest.raises(ContractError):
            summarize(object(), np.zeros((6, 4)), format_fixture.segmentation)

    def test_scores_outside_range_rejected(self, format_fixture):
        with pytest.raises(ContractError):
            summary_from_scores(ImportanceCurve(np.full(6, 1.5)), format_fixture.segmentation, 0.5)
