import numpy as np
import pytest
import torch

from mmtcn.backbone import ImuEncoder, Radar3dConfig, RadarEncoder, TcnConfig
from mmtcn.data import LogitSequence, MealSession, ValidationError
from mmtcn.fusion import FusionHead
from mmtcn.inference import RoutingError, decode_labels, predict_session, read_predictions, write_predictions
from mmtcn.mae import mae_like
from mmtcn.models import MultimodalFramework, UnimodalModel, prepare_session
from mmtcn.preprocess import WindowSpec

TCN = TcnConfig(2, 3, 64, (1, 2))
RADAR = Radar3dConfig(stages=((2, 3, (2, 2, 1)),), input_pool=(4, 4), temporal=TCN)


@pytest.fixture
def framework():
    torch.manual_seed(0)
    imu = UnimodalModel("imu", ImuEncoder(12, TCN))
    radar = UnimodalModel("radar", RadarEncoder(RADAR))
    return MultimodalFramework(imu, radar, mae_like(imu.encoder), mae_like(radar.encoder), FusionHead("cma")).eval()


def test_decode_ties_go_to_lower_class():
    p = np.array([[0.4, 0.3, 0.2], [0.4, 0.3, 0.4], [0.2, 0.4, 0.4]])
    assert decode_labels(p).labels.tolist() == [0, 2, 1]
    assert decode_labels(LogitSequence(p, is_probability=True)).labels.tolist() == [0, 2, 1]


@pytest.mark.parametrize("availability", ["both", "imu_only", "radar_only"])
def test_prediction_covers_session(framework, make_session, availability):
    s = make_session(n=130)
    p, y = predict_session(s, framework, availability, WindowSpec(50, 50))
    assert p.values.shape == (3, 130) and len(y) == 130
    np.testing.assert_allclose(p.values.sum(0), 1.0, atol=1e-6)
    assert np.array_equal(y.labels, p.values.argmax(0))


def test_single_window_matches_direct_forward(framework, make_session):
    s = make_session(n=60)
    p, _ = predict_session(s, framework, "both", WindowSpec(60, 60))
    prepared = prepare_session(s, framework.prep)
    with torch.no_grad():
        direct = framework(torch.tensor(prepared.radar.data)[None], torch.tensor(prepared.imu.data)[None])
    np.testing.assert_allclose(p.values, direct[0].double().numpy(), rtol=1e-6)


def test_overlapping_windows_blend(framework, make_session):
    s = make_session(n=130)
    p, _ = predict_session(s, framework, "both", WindowSpec(50, 25))
    assert p.values.shape == (3, 130)
    np.testing.assert_allclose(p.values.sum(0), 1.0, atol=1e-9)


def test_routing_errors(framework, make_session):
    imu_only = make_session(n=60, radar=False)
    with pytest.raises(RoutingError, match="radar"):
        predict_session(imu_only, framework, "radar_only")
    with pytest.raises(RoutingError):
        predict_session(imu_only, framework, "both")
    predict_session(imu_only, framework, "imu_only", WindowSpec(50, 50))
    with pytest.raises(RoutingError):
        predict_session(make_session(n=60), framework.imu, "radar_only")
    with pytest.raises(ValidationError):
        predict_session(make_session(n=60), framework, "neither")


def test_extra_streams_are_ignored(framework, make_session):
    s = make_session(n=60)
    a, _ = predict_session(s, framework, "imu_only", WindowSpec(60, 60))
    b, _ = predict_session(MealSession(s.session_id, s.labels, None, s.imu, s.meta), framework, "imu_only",
                          WindowSpec(60, 60))
    np.testing.assert_array_equal(a.values, b.values)


def test_unimodal_prediction(framework, make_session):
    p, y = predict_session(make_session(n=70), framework.radar, "radar_only", WindowSpec(50, 50))
    assert p.values.shape == (3, 70)


def test_predictions_csv_round_trip(framework, make_session, tmp_path):
    p, y = predict_session(make_session(n=55), framework, "both", WindowSpec(50, 50))
    path = write_predictions(tmp_path / "s0.csv", p, y)
    probs, labels = read_predictions(path)
    np.testing.assert_allclose(probs, p.values, atol=1e-6)
    assert labels == y
    (tmp_path / "empty.csv").write_text("frame,p_other,p_eat,p_drink,label\n")
    with pytest.raises(ValidationError):
        read_predictions(tmp_path / "empty.csv")
