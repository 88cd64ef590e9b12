import numpy as np
import pytest

import usev


def test_framing_round_trip():
    x = np.arange(1.0, 5.0)
    frames = usev.frame_signal(x, 2, 1)
    assert frames.tolist() == [[1, 2], [2, 3], [3, 4]]
    assert usev.overlap_add(np.ones((2, 2)), 1).tolist() == [1, 2, 1]


def test_snr_scaling():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(500), rng.standard_normal(400)
    scaled = usev.scale_to_snr(a, b, -10.0)
    assert abs(usev.measure_snr_db(a, scaled) + 10.0) < 1e-9


def test_scenarios():
    t = np.zeros(400, bool)
    i = np.zeros(400, bool)
    t[:200] = True
    i[100:300] = True
    assert usev.label_scenarios(t, i) == [
        (0, 100, "SQ"), (100, 200, "SS"), (200, 300, "QS"), (300, 400, "QQ")]
    assert usev.overlap_ratio(t, i) == pytest.approx(1 / 3)
    assert usev.overlap_ratio(np.zeros(5, bool), np.zeros(5, bool)) is None
    assert usev.overlap_bucket(None) == "TA"


def test_loss_and_metric_closed_forms():
    z = np.zeros(100)
    assert usev.loss_energy(z) == -80.0
    assert usev.power_db_per_s(z, 8000) == -80.0
    assert usev.EPSILON == 1e-8
    assert usev.loss_differentiated(z, z, ["QQ"] * 100) == pytest.approx(-0.4)
    s = np.zeros(10)
    s[0] = 1.0
    assert usev.si_sdr(s, s) == pytest.approx(80.0, rel=1e-8)
    assert usev.loss_sdr(s, s) == pytest.approx(-80.0)
    with pytest.raises(usev.UsevError):
        usev.loss_sdr(s, np.zeros(3))


def test_clip_and_model(tmp_path):
    clip = usev.generate_clip(7, 0)
    assert clip["mixture"].shape == clip["target"].shape
    assert len(clip["labels"]) == clip["mixture"].size
    model = usev.Model("desk", seed=1)
    out = model(clip["mixture"], clip["visemes"])
    assert out.shape == clip["mixture"].shape
    model.save(tmp_path / "m.ckpt")
    again = usev.Model.load(tmp_path / "m.ckpt")
    np.testing.assert_array_equal(again(clip["mixture"], clip["visemes"]), out)
    assert model.parameter_count() == 152457


def test_simulate_and_load(tmp_path):
    assert usev.simulate(tmp_path / "c", 3, seed=4) == 3
    clips = usev.load_corpus(tmp_path / "c" / "manifest.jsonl")
    assert [c["id"] for c in clips] == ["clip000000", "clip000001", "clip000002"]


def test_gradcheck():
    ok, errs = usev.gradcheck("ops", 1)
    assert ok
    assert max(errs.values()) <= 1e-5
