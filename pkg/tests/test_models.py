"""Volumes, phantoms and instrument meshes."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from xrpose.instruments import (InstrumentMesh, VoxelizationWarning, edge_counts, load_off, make_instrument,
                                place_instrument, save_off, transform_mesh, voxelize_and_combine)
from xrpose.phantoms import (GRID_DIMS, MU_INSIDE, MU_SHELL, PRESETS, SPHERE_OUTER_MM, SPHERE_SHELL_MM,
                             build_phantom, layered_slab_layers, nominal_poses, validity_polygons)
from xrpose.volume import Volume, load_volume, resample, save_volume


def _cube_mesh(lo, hi):
    v = np.array([[x, y, z] for x in (lo, hi) for y in (lo, hi) for z in (lo, hi)], dtype=float)
    faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
             (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    t = np.array(faces)
    m = InstrumentMesh(v, t, np.zeros(3), np.array([1.0, 0, 0]), "cube")
    if m.signed_volume() < 0:
        m.triangles = t[:, ::-1].copy()
    return m


def _axis(points):
    c = points - points.mean(axis=0)
    return np.linalg.svd(c, full_matrices=False)[2][0]


# ---------------------------------------------------------------- volumes

def test_volume_rejects_negative_mu():
    with pytest.raises(ValueError):
        Volume(-np.ones((2, 2, 2)), (1, 1, 1))


def test_volume_roundtrip_file(tmp_path):
    v = build_phantom(1, "layered-slab")
    back = load_volume(save_volume(v, tmp_path / "slab"))
    assert back.dims == v.dims and back.spacing == v.spacing and back.origin == v.origin
    np.testing.assert_array_equal(back.data, v.data.astype(np.float32))


def test_resample_constant_stays_constant():
    v = Volume(np.full((4, 5, 6), 0.03), (1.0, 1.0, 1.0))
    r = resample(v, (-2.0, 0.3, 1.1), (0.7, 0.7, 0.7), (9, 9, 9))
    np.testing.assert_allclose(r.data, 0.03, rtol=0, atol=1e-15)


# ---------------------------------------------------------------- phantoms

def test_shell_sphere_by_definition():
    v = build_phantom(5, "shell-sphere")
    idx = np.indices(v.dims).reshape(3, -1).T
    r = np.linalg.norm(idx * v.spacing[0] + np.array(v.origin), axis=1)
    d = v.data.ravel()
    assert np.all(d[r > SPHERE_OUTER_MM] == 0)
    assert np.all(d[r < SPHERE_OUTER_MM - SPHERE_SHELL_MM] == MU_INSIDE)
    shell = (r <= SPHERE_OUTER_MM) & (r >= SPHERE_OUTER_MM - SPHERE_SHELL_MM)
    assert np.all(d[shell] == MU_SHELL)


@pytest.mark.parametrize("preset", PRESETS)
def test_phantom_deterministic_and_bounded(preset):
    a, b = build_phantom(3, preset), build_phantom(3, preset)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.dims == GRID_DIMS
    assert a.data.min() >= 0 and a.data.max() <= 0.1


def test_perlin_seeds_differ():
    assert not np.array_equal(build_phantom(0, "perlin-bone").data, build_phantom(1, "perlin-bone").data)


def test_layered_slab_mean_matches_layer_table():
    layers = layered_slab_layers(7)
    expected = sum(n * mu for n, mu in layers) / sum(n for n, _ in layers)
    assert build_phantom(7, "layered-slab").data.mean() == pytest.approx(expected, abs=1e-12)


def test_unknown_preset():
    with pytest.raises(ValueError):
        build_phantom(0, "banana")


def test_validity_polygons_are_grid_faces(bone):
    polys = validity_polygons(bone)
    lo, hi = bone.extent
    assert np.all(polys.lower[:, 2] == lo[2]) and np.all(polys.upper[:, 2] == hi[2])


@pytest.mark.parametrize("kind", ["screw", "drill", "robot"])
def test_nominal_poses_are_rotations_inside_grid(bone, kind):
    poses = nominal_poses("perlin-bone", kind)
    assert len(poses) == 20
    lo, hi = bone.extent
    for pos, R in poses:
        assert np.all(pos > lo) and np.all(pos < hi)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        # the instrument points inwards
        assert np.dot(R[:, 0], pos) < 0


# ---------------------------------------------------------------- instruments

@pytest.mark.parametrize("kind", ["screw", "drill", "robot"])
def test_meshes_are_watertight_and_outward(kind):
    m = make_instrument(kind, bend=10.0 if kind == "robot" else 0.0)
    for c in range(len(m.components)):
        assert np.all(edge_counts(m, c) == 2)
    assert m.signed_volume() > 0


def test_screw_bounding_box_diagonal():
    lo, hi = make_instrument("screw").bounds
    assert np.linalg.norm(hi - lo) == pytest.approx(6.5, abs=1e-9)


def test_robot_bend_zero_collinear():
    m = make_instrument("robot", bend=0.0)
    a1 = _axis(m.vertices[m.component_vertex_ids(1)])
    a2 = _axis(m.vertices[m.component_vertex_ids(2)])
    assert abs(abs(np.dot(a1, a2)) - 1.0) < 1e-12


@pytest.mark.parametrize("bend", [20.0, -12.5])
def test_robot_bend_angle_between_axes(bend):
    m = make_instrument("robot", bend=bend)
    a1 = _axis(m.vertices[m.component_vertex_ids(1)])
    a2 = _axis(m.vertices[m.component_vertex_ids(2)])
    ang = np.degrees(np.arccos(np.clip(abs(np.dot(a1, a2)), -1, 1)))
    assert ang == pytest.approx(abs(bend), abs=1e-9)


def test_robot_bend_limit():
    with pytest.raises(ValueError):
        make_instrument("robot", bend=31.0)


def test_identity_transform():
    m = make_instrument("drill")
    t = transform_mesh(m, np.zeros(3), np.eye(3))
    np.testing.assert_array_equal(t.vertices, m.vertices)
    np.testing.assert_array_equal(t.triangles, m.triangles)


def test_translation_moves_origin():
    m = make_instrument("screw")
    t = transform_mesh(m, [10.0, 0, 0], np.eye(3))
    np.testing.assert_array_equal(t.origin - m.origin, [10.0, 0, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rotation_preserves_distances(seed):
    m = make_instrument("robot", bend=15.0)
    R = Rotation.random(random_state=seed).as_matrix()
    t = transform_mesh(m, [1.0, -2.0, 3.0], R)
    d0 = np.linalg.norm(m.vertices[:, None] - m.vertices[None], axis=-1)
    d1 = np.linalg.norm(t.vertices[:, None] - t.vertices[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_transform_rejects_reflection():
    with pytest.raises(ValueError):
        transform_mesh(make_instrument("screw"), np.zeros(3), np.diag([1.0, 1.0, -1.0]))


def test_off_roundtrip(tmp_path):
    m = make_instrument("robot", bend=5.0)
    save_off(m, tmp_path / "r.off")
    v, t = load_off(tmp_path / "r.off")
    np.testing.assert_array_equal(v, m.vertices)
    np.testing.assert_array_equal(t, m.triangles)


# ---------------------------------------------------------------- voxelization

def test_mesh_outside_volume_leaves_it_unchanged():
    v = Volume(np.full((8, 8, 8), 0.02), (1.0, 1.0, 1.0))
    far = _cube_mesh(100.0, 105.0)
    with pytest.warns(VoxelizationWarning):
        out = voxelize_and_combine(v, far)
    np.testing.assert_array_equal(out.data, v.data)


def test_cube_voxel_count_matches_volume():
    v = Volume(np.zeros((20, 20, 20)), (1.0, 1.0, 1.0))
    cube = _cube_mesh(2.25, 12.25)  # 10 mm edge, not aligned with voxel centres
    out = voxelize_and_combine(v, cube, 0.5)
    count = int((out.data == 0.5).sum())
    analytic = 10**3
    assert abs(count - analytic) <= 6 * 10**2
    assert count == 10**3  # centres 3..12 on each axis


def test_instrument_overrides_bone():
    v = Volume(np.full((20, 20, 20), 0.05), (1.0, 1.0, 1.0))
    out = voxelize_and_combine(v, _cube_mesh(4.5, 8.5), 0.5)
    assert out.data[6, 6, 6] == 0.5
    assert out.data[0, 0, 0] == 0.05
    assert out.meta["instrument_voxels"] == 4**3


def test_placed_screw_voxelizes_inside_phantom(bone):
    pos, R = nominal_poses("perlin-bone", "screw")[0]
    mesh = place_instrument(make_instrument("screw"), pos, R)
    out = voxelize_and_combine(bone, mesh)
    assert out.meta["instrument_voxels"] > 0
    np.testing.assert_array_equal(out.data[out.data != 0.5], bone.data[out.data != 0.5])
