import math

import numpy as np
import pytest

import stretchtime as st


def test_flow_is_symplectic_and_matches_oracle():
    band = st.HamiltonianBand(0.3, -0.7, 0.4)
    j = np.array([[0.0, 1.0], [-1.0, 0.0]])
    for t in (-3.0, 0.0, 1e-7, 2.5, 40.0):
        s = st.flow_matrix(band, t)
        assert np.abs(s.T @ j @ s - j).max() < 1e-10
        assert np.abs(s - st.expm_oracle(st.generator(band), t)).max() < 1e-8


def test_isotropic_band_is_a_rotation():
    w, t = 0.37, 5.0
    s = st.flow_matrix(st.HamiltonianBand.isotropic(w), t)
    rot = np.array([[math.cos(w * t), math.sin(w * t)], [-math.sin(w * t), math.cos(w * t)]])
    assert np.abs(s - rot).max() < 1e-12
    assert np.abs(st.rope_flow(w, t) - rot).max() < 1e-12


def test_band_coefficients_round_trip():
    band = st.HamiltonianBand.from_coefficients(2.0, 0.5, 0.3)
    assert band.a == pytest.approx(2.0)
    assert band.b == pytest.approx(0.5)
    assert band.c == pytest.approx(0.3)
    assert band.omega == pytest.approx(math.sqrt(1.0 - 0.09))


def test_feasibility():
    w = 2 * math.pi / 24
    kind, theta = st.rope_feasibility_check([1.0, 3.0, 5.0, 7.0], w)
    assert kind == "feasible" and theta == pytest.approx(2 * w)
    assert st.rope_feasibility_check([1.0, 2.0, 4.0], w) == ("infeasible", 1, 2)
    warped = st.oscillating_warp_grid(200, 0.5, 50.0)
    assert st.rope_feasibility_check(warped, w)[0] == "infeasible"


def test_generate_shape_and_determinism():
    a = st.generate("synthetic.length = 300\nsynthetic.channels = 2\n")
    b = st.generate("synthetic.length = 300\nsynthetic.channels = 2\n")
    assert a.shape == (300, 2)
    assert np.array_equal(a, b)


def test_fresh_model_forecasts_persistence():
    cfg = "model.lookback = 16\nmodel.horizon = 8\nmodel.d_model = 16\nmodel.n_heads = 2\nsynthetic.channels = 2\n"
    model = st.Model(cfg, seed=1)
    x = np.random.default_rng(0).normal(size=(16, 2))
    y = model.forward(x)
    assert y.shape == (8, 2)
    assert np.allclose(y, np.broadcast_to(x[-1], (8, 2)), atol=1e-12)
    assert sum(p.size for p in model.parameters().values()) == model.parameter_count
    with pytest.raises(Exception):
        model.forward(np.zeros((15, 2)))


def test_config_round_trip_and_errors():
    text = st.resolve_config("model.pe_mode = rope\n")
    assert "model.pe_mode = rope" in text
    assert "model.pe_mode" in st.config_keys()
    with pytest.raises(Exception, match="<python>:1"):
        st.resolve_config("model.colour = blue\n")


def test_train_and_reload(tmp_path):
    cfg = (
        "synthetic.length = 400\nsynthetic.channels = 2\nmodel.lookback = 16\nmodel.horizon = 8\n"
        "model.d_model = 8\nmodel.n_heads = 2\ntrain.effective_batch = 16\ntrain.physical_batch = 8\n"
        "train.max_epochs = 1\ntrain.train_stride = 4\ntrain.learning_rate = 0.01\n"
    )
    rows = st.train(cfg, tmp_path)
    assert [r["horizon"] for r in rows] == [8]
    assert math.isfinite(rows[0]["mse"])
    model = st.Model.load(tmp_path / "T8" / "checkpoint.txt")
    assert (model.lookback, model.horizon, model.channels) == (16, 8, 2)


def test_verify_suite_passes():
    rows = st.verify()
    assert len(rows) >= 15
    failed = [r["check"] for r in rows if not r["pass"]]
    assert not failed, failed
