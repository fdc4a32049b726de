import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from centerdepth.depth_codec import DepJointConfig, DiscretizationConfig, EigenConfig, eigen_inverse
from centerdepth.geometry import Cuboid3D, amodal_bbox, cuboid_center, project, wrap_angle
from centerdepth.kitti_io import CameraCalibration, ObjectLabel
from centerdepth.synth import SceneSpec, generate_scene
from centerdepth.targets import (
    FeatureGridMeta,
    RawInstanceHeads,
    ReferenceAreaConfig,
    decode_objects,
    decode_orientation,
    encode_orientation,
    encode_targets,
    gaussian_heatmap,
    gaussian_kernel,
    gaussian_radius,
    quantization_offset,
    ra_aggregate,
    rasterize_reference_areas,
    raw_heads_from_targets,
    reference_area,
    splat_sigma,
)

META = FeatureGridMeta(1242, 375, 4)


def test_grid_dims_ceil():
    assert (META.grid_width, META.grid_height) == (311, 94)
    assert (FeatureGridMeta(8, 8, 4).grid_width, FeatureGridMeta(9, 8, 4).grid_width) == (2, 3)
    with pytest.raises(ValueError):
        FeatureGridMeta(10, 10, 0)


def test_single_splat_peak():
    hm = gaussian_heatmap([(402.0, 122.0)], [(60.0, 40.0)], [0], META, 3)
    assert hm.shape == (3, 94, 311)
    assert hm[0].max() == 1.0
    assert np.unravel_index(hm[0].argmax(), hm[0].shape) == (30, 100)
    assert hm[1].max() == 0 and hm[2].max() == 0


def test_duplicate_splat_idempotent():
    one = gaussian_heatmap([(402.0, 122.0)], [(60.0, 40.0)], [0], META, 1)
    two = gaussian_heatmap([(402.0, 122.0)] * 2, [(60.0, 40.0)] * 2, [0, 0], META, 1)
    assert np.array_equal(one, two)


def test_splat_closed_form():
    for radius in (1, 3, 6):
        k = gaussian_kernel(radius)
        sigma = splat_sigma(radius)
        for r in range(radius + 1):
            assert k[radius, radius + r] == pytest.approx(math.exp(-r * r / (2 * sigma * sigma)), rel=1e-15)


def test_overlapping_splats_max_merge():
    a = gaussian_heatmap([(400.0, 120.0)], [(80.0, 80.0)], [0], META, 1)
    b = gaussian_heatmap([(420.0, 120.0)], [(80.0, 80.0)], [0], META, 1)
    both = gaussian_heatmap([(400.0, 120.0), (420.0, 120.0)], [(80.0, 80.0)] * 2, [0, 0], META, 1)
    assert np.array_equal(both, np.maximum(a, b))


def test_gaussian_radius_positive_and_monotone():
    radii = [gaussian_radius(s, s) for s in (4, 8, 16, 32)]
    assert all(r > 0 for r in radii)
    assert radii == sorted(radii)


def test_splat_at_image_edge():
    hm = gaussian_heatmap([(1241.9, 374.9)], [(100.0, 100.0)], [0], META, 1)
    assert hm[0, 93, 310] == 1.0


def test_quantization_offset():
    assert quantization_offset((100, 50), META) == (0.0, 0.5)
    assert quantization_offset((100.75, 50.25), FeatureGridMeta(1242, 375, 1)) == (0.75, 0.25)
    assert quantization_offset((100, 50), FeatureGridMeta(1242, 375, 1)) == (0.0, 0.0)


@given(st.floats(0, 1241.99), st.floats(0, 374.99), st.sampled_from([1, 2, 4, 8]))
def test_quantization_reconstructs(x, y, stride):
    meta = FeatureGridMeta(1242, 375, stride)
    dx, dy = quantization_offset((x, y), meta)
    assert 0 <= dx < 1 and 0 <= dy < 1
    assert (math.floor(x / stride) + dx) * stride == pytest.approx(x, abs=1e-9)
    assert (math.floor(y / stride) + dy) * stride == pytest.approx(y, abs=1e-9)


def test_reference_area():
    assert reference_area((10, 20, 30, 60), ReferenceAreaConfig(1.0)) == (10, 20, 30, 60)
    assert reference_area((45, 40, 55, 60), ReferenceAreaConfig(0.4)) == pytest.approx((48, 46, 52, 54))
    with pytest.raises(ValueError):
        ReferenceAreaConfig(0.0)


def test_rasterize_disjoint_nested_ties():
    meta = FeatureGridMeta(200, 100, 4)
    cfg = ReferenceAreaConfig(1.0)
    owner = rasterize_reference_areas([(0, 0, 20, 20), (100, 40, 120, 60)], [10, 10], meta, cfg)
    assert set(np.unique(owner[0:6, 0:6])) == {0}
    assert set(np.unique(owner[10:16, 25:31])) == {1}
    assert (owner >= 0).sum() == 36 + 36
    nested = rasterize_reference_areas([(0, 0, 80, 80), (20, 20, 40, 40)], [40, 10], meta, cfg)
    assert set(np.unique(nested[5:11, 5:11])) == {1}
    assert nested[0, 0] == 0
    tied = rasterize_reference_areas([(0, 0, 80, 80), (20, 20, 40, 40)], [10, 10], meta, cfg)
    assert set(np.unique(tied[5:11, 5:11])) == {0}


def test_rasterize_tiny_ra_single_cell():
    meta = FeatureGridMeta(200, 100, 4)
    owner = rasterize_reference_areas([(40, 40, 50, 50)], [5], meta, ReferenceAreaConfig(1e-6))
    assert (owner == 0).sum() == 1 and owner[11, 11] == 0


def test_ra_aggregate():
    assert ra_aggregate([4.2]) == 4.2
    assert ra_aggregate([1, 2, 3]) == 2
    assert ra_aggregate([3, 1, 2]) == ra_aggregate([1, 2, 3])
    with pytest.raises(ValueError):
        ra_aggregate([])


@given(st.floats(-math.pi, math.pi))
def test_orientation_roundtrip(alpha):
    assert abs(wrap_angle(decode_orientation(encode_orientation(alpha)) - alpha)) < 1e-9


def _label(cub, calib, cls="Car"):
    box = amodal_bbox(calib, cub, clip=True)
    return ObjectLabel(cls, 0.0, 0, 0.0, box, cub.dimensions, cub.location, cub.yaw)


CODECS = [EigenConfig(), DiscretizationConfig(1, 91, 80, "lid"), DiscretizationConfig(1, 91, 80, "sid"),
          DepJointConfig(0.7, 0.3, 0, 90)]


@pytest.mark.parametrize("codec", CODECS, ids=lambda c: getattr(c, "strategy", c.name))
@pytest.mark.parametrize("gamma", [None, 0.4])
def test_encode_decode_roundtrip(codec, gamma):
    ra = ReferenceAreaConfig(gamma) if gamma else None
    for seed in range(5):
        labels, calib = generate_scene(SceneSpec(seed=seed, depth_range=(5, 80)))
        meta = FeatureGridMeta.for_calib(calib)
        targets = encode_targets(labels, calib, meta, codec, ra)
        assert targets.dropped == 0
        decoded = decode_objects(raw_heads_from_targets(targets), calib, meta, codec)
        assert len(decoded) == len(labels)
        for inst, (lab, cub) in zip(targets.instances, decoded):
            gt = labels[inst.label_index]
            assert np.allclose(cub.location, gt.location, atol=1e-6)
            assert abs(wrap_angle(cub.yaw - gt.rotation_y)) < 1e-9
            assert cub.dimensions == gt.dimensions
            assert lab.bbox2d == pytest.approx(gt.bbox2d, abs=1e-9)
            assert lab.score == 1.0


def test_near_boundary_object_still_encoded(kitti_calib):
    # projected 3D center falls left of the image, visible 2D box does not
    cub = Cuboid3D((-6.5, 1.6, 5.5), (1.5, 1.7, 4.2), 0.3)
    u, _ = project(kitti_calib, cuboid_center(cub))
    assert u < 0
    lab = _label(cub, kitti_calib)
    targets = encode_targets([lab], kitti_calib, META, EigenConfig())
    assert targets.dropped == 0 and len(targets.instances) == 1
    (_, out), = decode_objects(raw_heads_from_targets(targets), kitti_calib, META, EigenConfig())
    assert np.allclose(out.location, cub.location, atol=1e-6)


def test_empty_labels():
    t = encode_targets([], CameraCalibration(np.eye(3, 4)), META, EigenConfig())
    assert t.instances == [] and t.dropped == 0 and t.heatmap.max() == 0


def test_drops_are_counted(kitti_calib):
    ok = Cuboid3D((0, 1.6, 20), (1.5, 1.7, 4.2), 0.3)
    far = Cuboid3D((0, 1.6, 95), (1.5, 1.7, 4.2), 0.3)
    labels = [_label(ok, kitti_calib), _label(far, kitti_calib)]
    t = encode_targets(labels, kitti_calib, META, DiscretizationConfig(1, 91, 80, "lid"))
    assert len(t.instances) == 1 and t.drops["depth_out_of_range"] == 1
    dontcare = ObjectLabel("DontCare", -1, -1, -10, (1, 1, 5, 5), (-1, -1, -1), (-1000, -1000, -1000), -10)
    t = encode_targets([dontcare], kitti_calib, META, EigenConfig())
    assert t.instances == []


def test_hand_built_instance():
    f = 500.0
    calib = CameraCalibration(np.array([[f, 0, 0, 0], [0, f, 0, 0], [0, 0, 1, 0]]))
    raw = RawInstanceHeads(cell=(10, 10), offset2d=(0.5, 0.5), wh=(20.0, 10.0), offset3d=(8.0, -4.0),
                           depth=eigen_inverse(20.0), dims=(1.5, 1.6, 4.0),
                           rotation=encode_orientation(0.0))
    (lab, cub), = decode_objects([raw], calib, META, EigenConfig())
    # c2d = (42, 42), c3d = (50, 38); bottom center sits h/2 below the volumetric center
    assert cub.location == pytest.approx((50 * 20 / f, 38 * 20 / f + 0.75, 20.0))
    assert lab.bbox2d == pytest.approx((32, 37, 52, 47))
    (_, base), = decode_objects([raw], calib, META, EigenConfig(), use_offset3d=False)
    assert base.location == pytest.approx((42 * 20 / f, 42 * 20 / f + 0.75, 20.0))
