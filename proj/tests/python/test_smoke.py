import math

import numpy as np
import pytest

import moe_depth as md


def test_softmax_sums_to_one():
    logits = np.random.default_rng(0).normal(size=(4, 5, 6))
    w = md.gate_softmax(logits, 0.7)
    assert w.shape == (4, 5, 6)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    ref = np.exp(logits / 0.7)
    np.testing.assert_allclose(w, ref / ref.sum(axis=0), rtol=1e-12)


def test_single_expert_nll_is_gaussian():
    rng = np.random.default_rng(1)
    mu = rng.normal(size=(1, 4, 4))
    gt = rng.normal(size=(4, 4))
    loss, grad_mu, _ = md.mixture_nll(mu, np.zeros((1, 4, 4)), 1.0, gt, 0.5)
    ref = np.mean((gt - mu[0]) ** 2 / (2 * 0.25) + 0.5 * math.log(2 * math.pi * 0.25))
    assert loss == pytest.approx(ref, rel=1e-12)
    assert grad_mu.shape == mu.shape


def test_uniform_gate_entropy():
    h, grad, hmap = md.gate_entropy(np.zeros((4, 3, 3)), 1.0)
    assert h == pytest.approx(math.log(4))
    np.testing.assert_allclose(hmap, math.log(4))
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_scene_and_metrics():
    s = md.generate_scene(5, height=32, width=32)
    assert s["input"].shape == (3, 32, 32)
    assert s["depth"].shape == (32, 32)
    assert s["edges"].dtype == bool
    r = md.boundary_metrics(s["edges"], s["edges"])
    assert r["f1"] == 1.0
    d = md.depth_metrics(s["depth"], s["depth"])
    assert d["abs_rel"] == 0.0
    pts = md.unproject(s["depth"], *s["intrinsics"])
    assert pts.shape == (32 * 32, 3)
    assert md.detect_flying_points(np.ones((8, 8)), 8.0, 8.0, 3.5, 3.5)[0] == 0


def test_bad_shapes_raise():
    with pytest.raises(ValueError):
        md.mixture_nll(np.zeros((2, 3, 3)), np.zeros((2, 4, 4)), 1.0, np.zeros((3, 3)))


def test_cli(tmp_path):
    code, _, err = md.run_cli(["frobnicate"])
    assert code == 2 and err
    code, _, err = md.run_cli(["gen", "--out", str(tmp_path / "d"), "--count", "2", "--height", "16", "--width", "16"])
    assert code == 0, err
    assert (tmp_path / "d").is_dir()
