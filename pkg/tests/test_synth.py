import math

import numpy as np
import pytest

from centerdepth.geometry import Cuboid3D
from centerdepth.kitti_io import load_dataset, read_label_file, read_split
from centerdepth.synth import (
    NoiseModel,
    SceneSpec,
    generate_dataset,
    generate_scene,
    make_rng,
    mc_iou,
    perturb,
    reference_ap,
    write_dataset,
)
from test_evaluation import car, dontcare


def test_scene_determinism():
    a, _ = generate_scene(SceneSpec(seed=11), frame_index=3)
    b, _ = generate_scene(SceneSpec(seed=11), frame_index=3)
    c, _ = generate_scene(SceneSpec(seed=11), frame_index=4)
    assert a == b
    assert a != c


def test_streams_are_independent():
    x = make_rng(1, 2, 0).random(4)
    assert np.array_equal(x, make_rng(1, 2, 0).random(4))
    assert not np.array_equal(x, make_rng(1, 2, 1).random(4))


def test_empty_scene():
    labels, _ = generate_scene(SceneSpec(seed=0, n_objects=(0, 0)))
    assert labels == []


def test_scene_constraints():
    spec = SceneSpec(seed=5, depth_range=(8, 60))
    for f in range(20):
        labels, calib = generate_scene(spec, f)
        assert spec.n_objects[0] <= len(labels) <= spec.n_objects[1]
        for lab in labels:
            assert 8 <= lab.location[2] <= 60
            cx = (lab.bbox2d[0] + lab.bbox2d[2]) / 2
            cy = (lab.bbox2d[1] + lab.bbox2d[3]) / 2
            assert 0 <= cx <= calib.image_width - 1 and 0 <= cy <= calib.image_height - 1
            assert 0 <= lab.truncation <= 1 and 0 <= lab.occlusion <= 3
        depths = [lab.location[2] for lab in labels]
        assert depths == sorted(depths)


def test_perturb_zero_noise():
    labels, calib = generate_scene(SceneSpec(seed=2))
    preds = perturb(labels, NoiseModel(), seed=9, calib=calib)
    assert len(preds) == len(labels)
    for p, g in zip(preds, labels):
        assert p.score == 1.0
        assert (p.location, p.dimensions, p.rotation_y, p.bbox2d) == (g.location, g.dimensions, g.rotation_y, g.bbox2d)


def test_perturb_rates_and_reproducibility():
    labels, calib = generate_scene(SceneSpec(seed=2, n_objects=(6, 6)))
    assert perturb(labels, NoiseModel(fn_rate=1.0), seed=1, calib=calib) == []
    noise = NoiseModel(center_px_sigma=2, depth_rel_sigma=0.05, yaw_sigma=0.1, dim_rel_sigma=0.05, fp_rate=0.5)
    a = perturb(labels, noise, seed=1, calib=calib)
    assert a == perturb(labels, noise, seed=1, calib=calib)
    assert all(0 < p.score <= 1 for p in a)
    with pytest.raises(ValueError):
        NoiseModel(fn_rate=1.5)


def test_mc_iou():
    a = Cuboid3D((0, 1, 20), (1.5, 2.0, 4.0), 0.7)
    n = 200_000
    se = math.sqrt(1.0 / n)
    assert mc_iou(a, a, n, seed=0) == pytest.approx(1.0, abs=3 * se)
    far = Cuboid3D((10, 1, 40), (1.5, 2.0, 4.0), 0.7)
    assert mc_iou(a, far, n, seed=0) == 0.0
    # axis-aligned footprints 2 x 4 shifted by 1 m along x: 6 / (8 + 8 - 6)
    b = Cuboid3D((1, 1, 20), (1.5, 2.0, 4.0), 0.0)
    c = Cuboid3D((0, 1, 20), (1.5, 2.0, 4.0), 0.0)
    assert abs(mc_iou(b, c, 10**6, seed=4) - 0.6) < 2e-3
    # same footprint, half the height shared: 3D IoU 1/3
    d = Cuboid3D((0, 0.25, 20), (1.5, 2.0, 4.0), 0.0)
    e = Cuboid3D((0, 1.0, 20), (1.5, 2.0, 4.0), 0.0)
    assert abs(mc_iou(d, e, 10**6, seed=4, mode="3d") - 1 / 3) < 2e-3
    assert abs(mc_iou(b, c, 10**6, seed=4, stratified=False) - 0.6) < 2e-3
    with pytest.raises(ValueError):
        mc_iou(a, a, 0)


def test_reference_ap_hand_cases():
    g = {"000000": [car()]}
    assert reference_ap(g, {"000000": [car(score=0.9), car(box=(300, 100, 400, 160), loc=(5, 1.6, 30), score=0.8)]},
                        "2d", 0.7) == 1.0
    two = {"000000": [car(), car(box=(300, 100, 400, 160), loc=(5, 1.6, 30))]}
    assert reference_ap(two, {"000000": [car(score=0.9)]}, "2d", 0.7) == 6 / 11
    assert reference_ap(g, {"000000": []}, "bev", 0.7) == 0.0
    assert reference_ap({}, {}, "bev", 0.7) == 0.0
    dc = {"000000": [dontcare((500, 100, 600, 160)), car()]}
    det = {"000000": [car(score=0.9), car(box=(510, 105, 590, 155), loc=(9, 1.6, 25), score=0.95)]}
    assert reference_ap(dc, det, "2d", 0.7) == 1.0


def test_write_dataset_parses_back(tmp_path):
    frames = generate_dataset(SceneSpec(seed=3), 4)
    write_dataset(tmp_path, frames)
    ids = read_split(tmp_path / "val.txt")
    assert ids == sorted(frames)
    loaded = load_dataset(tmp_path / "label_2", tmp_path / "calib", ids)
    for fr in loaded:
        labels, _ = frames[fr.frame_id]
        assert len(fr.labels) == len(labels)
        for a, b in zip(fr.labels, labels):
            assert np.allclose(a.location, b.location, atol=0.005)
    assert read_label_file(tmp_path / "label_2" / f"{ids[0]}.txt") == list(loaded[0].labels)
