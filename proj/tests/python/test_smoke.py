"""Smoke tests for the Python module: importability, primitive semantics,
metric sanity and a miniature end-to-end train/infer cycle."""

import os

import numpy as np
import pytest

import mevo


def test_identity_grid_corners():
    g = mevo.identity_grid(2, 2)
    assert g.shape == (2, 2, 2)
    assert np.allclose(g[0, 0], [-1.0, -1.0])
    assert np.allclose(g[1, 1], [1.0, 1.0])


def test_warp_zero_flow_is_identity():
    img = np.random.RandomState(0).rand(8, 10, 3)
    out = mevo.warp(img, np.zeros((8, 10, 2)))
    assert np.array_equal(out, img)


def test_soft_argmax_center():
    hm = np.zeros((1, 5, 5))
    hm[0, 2, 2] = 1.0
    kps = mevo.soft_argmax(hm)
    assert np.allclose(kps, [[0.0, 0.0]])


def test_gaussian_heatmap_round_trip():
    kps = np.array([[0.25, -0.4]])
    hm = mevo.gaussian_heatmap(kps, 0.05, 33, 33)
    rec = mevo.soft_argmax(hm)
    assert np.allclose(rec, kps, atol=1e-2)


def test_pyramid_levels():
    img = np.full((16, 16, 3), 0.5)
    pyr = mevo.downsample_pyramid(img, 3)
    assert [p.shape[0] for p in pyr] == [16, 8, 4]
    assert np.allclose(pyr[2], 0.5)


def test_metrics_basics():
    rs = np.random.RandomState(1)
    a = rs.rand(32, 32, 3)
    assert mevo.l1(a, a) == 0.0
    assert mevo.psnr(a, a) == 99.0
    assert abs(mevo.ssim(a, a) - 1.0) < 1e-9
    assert abs(mevo.ms_ssim(a, a, levels=2) - 1.0) < 1e-9
    assert abs(mevo.csim(a, a) - 1.0) < 1e-9


def test_fid_closed_form():
    a = [[-1.0], [0.0], [1.0]]
    b = [[0.0], [1.0], [2.0]]
    assert abs(mevo.fid_from_embeddings(a, b) - 1.0) < 1e-8


def test_sprite_clip_determinism():
    c1 = mevo.generate_sprite_clip(9, length=3, frame_size=64)
    c2 = mevo.generate_sprite_clip(9, length=3, frame_size=64)
    for f1, f2 in zip(c1["frames"], c2["frames"]):
        assert np.array_equal(f1, f2)
    assert c1["keypoints"][0].shape[1] == 2


def test_train_and_infer_cycle(tmp_path):
    data = tmp_path / "data"
    ckpt = tmp_path / "model.ckpt"
    mevo.make_dataset(str(data), seed=3, train=2, test=1, frame_size=64, clip_length=6)

    config = "\n".join(
        [
            "frame_size 64",
            "num_keypoints 4",
            "base_channels 4",
            "n_refs 1",
            "iterations 2",
            "seed 5",
            "ode_steps 2",
        ]
    )
    losses = mevo.train(str(data), str(ckpt), config)
    assert len(losses) == 2
    assert all(np.isfinite(losses))

    model = mevo.Model(str(ckpt))
    assert model.iteration == 2

    clip_dir = data / "test" / "id_00002" / "clip_00"
    result = model.reconstruct(str(clip_dir), n_refs=1, seed=1)
    assert len(result["frames"]) == 5
    assert result["metrics"]["l1"]["direction"] == "down"
    assert np.isfinite(result["metrics"]["fid"]["value"])

    frame = result["frames"][0]
    assert frame.shape == (64, 64, 3)
    assert frame.min() >= 0.0 and frame.max() <= 1.0

    kps = model.keypoints(frame)
    assert kps.shape == (4, 2)
    out = model.synthesize(frame, [frame], frame)
    assert out.shape == (64, 64, 3)


def test_env_seed_override(tmp_path):
    data = tmp_path / "data"
    mevo.make_dataset(str(data), seed=3, train=1, test=1, frame_size=64, clip_length=4)
    config = "\n".join(
        ["frame_size 64", "num_keypoints 3", "base_channels 4", "n_refs 0",
         "iterations 1", "seed 5", "ode_steps 1"]
    )
    base = mevo.train(str(data), str(tmp_path / "a.ckpt"), config)
    os.environ["MOTION_EVOLVE_SEED"] = "99"
    try:
        overridden = mevo.train(str(data), str(tmp_path / "b.ckpt"), config)
    finally:
        del os.environ["MOTION_EVOLVE_SEED"]
    assert base != overridden
