import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panolight.geometry import (FACE_DOWN, FACE_FORWARD, FACE_RIGHT, GeometryError, Intrinsics,
                                atlas_to_cubemap, backproject, cubemap_atlas, cubemap_texel_dirs,
                                cubemap_to_dir, cubemap_to_equirect, dir_to_cubemap,
                                dir_to_equirect, equirect_pixel_dirs, equirect_to_cubemap,
                                equirect_to_dir, load_cubemap, project, save_cubemap,
                                solid_angle_weights, texel_solid_angles)

coord = st.floats(-1, 1, allow_nan=False)


def _unit(x, y, z):
    v = np.array([x, y, z])
    n = np.linalg.norm(v)
    return v / n if n > 1e-3 else np.array([0.0, 0.0, -1.0])


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord)
def test_equirect_roundtrip(x, y, z):
    d = _unit(x, y, z)
    u, v = dir_to_equirect(d)
    assert 0 <= u < 1 and 0 <= v <= 1
    np.testing.assert_allclose(equirect_to_dir(u, v), d, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord)
def test_cubemap_roundtrip(x, y, z):
    d = _unit(x, y, z)
    face, s, t = dir_to_cubemap(d)
    np.testing.assert_allclose(cubemap_to_dir(face, s, t), d, atol=1e-12)


def test_conventions():
    # straight ahead is -Z, the center of the panorama and of the -Z face
    u, v = dir_to_equirect(np.array([0.0, 0.0, -1.0]))
    assert (u, v) == (0.5, 0.5)
    face, s, t = dir_to_cubemap(np.array([0.0, 0.0, -1.0]))
    assert (face, s, t) == (5, 0.5, 0.5)
    np.testing.assert_allclose(equirect_to_dir(0.5, 0.0), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(equirect_to_dir(0.75, 0.5), [1, 0, 0], atol=1e-15)
    # poles map to u = 0.5
    assert dir_to_equirect(np.array([0.0, -1.0, 0.0]))[0] == 0.5


def test_face_frames_are_right_handed_and_orthonormal():
    for f, r, b in zip(FACE_FORWARD, FACE_RIGHT, FACE_DOWN):
        m = np.stack([f, r, b])
        np.testing.assert_allclose(m @ m.T, np.eye(3))
        # right x up points back toward the viewer
        np.testing.assert_allclose(np.cross(r, -b), -f)


def test_face_tie_breaks_to_earlier_face():
    face, _, _ = dir_to_cubemap(np.array([1.0, 1.0, 0.0]))
    assert face == 0
    face, _, _ = dir_to_cubemap(np.array([0.0, -1.0, -1.0]))
    assert face == 3


def test_texel_dirs_pick_their_own_face():
    d = cubemap_texel_dirs(8)
    face, s, t = dir_to_cubemap(d)
    np.testing.assert_array_equal(face, np.arange(6)[:, None, None] * np.ones((1, 8, 8)))
    c = (np.arange(8) + 0.5) / 8
    np.testing.assert_allclose(s[0], np.broadcast_to(c, (8, 8)))
    np.testing.assert_allclose(t[0], np.broadcast_to(c[:, None], (8, 8)))


def test_pixel_dirs_are_unit():
    d = equirect_pixel_dirs(16, 8)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0)


def test_solid_angles():
    w = texel_solid_angles(64, 32)
    assert w.shape == (32, 1)
    np.testing.assert_allclose(w.sum() * 64, 4 * np.pi, rtol=1e-12)
    cw = solid_angle_weights(32)
    np.testing.assert_allclose(cw, cw[::-1])
    # band area ~ cos(latitude) * d_theta * d_phi for fine grids
    np.testing.assert_allclose(w[:, 0], cw * (np.pi / 32) * (2 * np.pi / 64), rtol=2e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 64), st.floats(0, 48), st.floats(0.1, 50))
def test_project_backproject(px, py, depth):
    K = Intrinsics(50.0, 55.0, 31.5, 24.2, 64, 48)
    p = backproject(px, py, depth, K)
    qx, qy, qd = project(p, K)
    assert abs(qx - px) < 1e-9 and abs(qy - py) < 1e-9 and abs(qd - depth) < 1e-9 * depth


def test_project_rejects_points_behind():
    K = Intrinsics.from_fov(8, 8, 60)
    with pytest.raises(GeometryError):
        project(np.array([0.0, 0.0, 1.0]), K)
    px, _, d = project(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), K, check=False)
    assert np.isnan(d[0]) and d[1] == 1.0 and px[1] == 4.0
    with pytest.raises(GeometryError):
        backproject(1.0, 1.0, 0.0, K)


def test_intrinsics_validation_and_file(tmp_path):
    with pytest.raises(GeometryError):
        Intrinsics(-1, 1, 1, 1, 4, 4)
    with pytest.raises(GeometryError):
        Intrinsics(1, 1, 5, 1, 4, 4)
    K = Intrinsics.from_fov(64, 48, 60)
    K.to_file(tmp_path / "k.txt")
    assert len((tmp_path / "k.txt").read_text().split()) == 5
    assert Intrinsics.from_file(tmp_path / "k.txt", 64, 48) == K
    (tmp_path / "k4.txt").write_text("10 10 2 2\n")
    assert Intrinsics.from_file(tmp_path / "k4.txt", 4, 4).fx == 10
    (tmp_path / "skew.txt").write_text("10 10 2 2 0.5\n")
    with pytest.raises(GeometryError):
        Intrinsics.from_file(tmp_path / "skew.txt", 4, 4)
    (tmp_path / "bad.txt").write_text("10 10 2\n")
    with pytest.raises(GeometryError):
        Intrinsics.from_file(tmp_path / "bad.txt", 4, 4)


def test_fov_focal_length():
    K = Intrinsics.from_fov(100, 100, 90)
    assert abs(K.fx - 50) < 1e-12


def _smooth_pano(w, h):
    d = equirect_pixel_dirs(w, h)
    return (0.5 + 0.3 * d[..., [0, 1, 2]] * d[..., [1, 2, 0]] + 0.1 * d).astype(np.float32)


def test_constant_survives_resampling():
    pano = np.full((32, 64, 3), 0.25, np.float32)
    cube = equirect_to_cubemap(pano, 16)
    np.testing.assert_allclose(cube, 0.25, atol=1e-6)
    np.testing.assert_allclose(cubemap_to_equirect(cube, 64, 32), 0.25, atol=1e-6)


def test_mask_channel_is_binary():
    pano = _smooth_pano(64, 32)
    mask = np.zeros((32, 64), bool)
    mask[:, :32] = True
    cube = equirect_to_cubemap(pano, 16, mask)
    assert cube.shape == (6, 16, 16, 4)
    assert set(np.unique(cube[..., 3])) == {0.0, 1.0}
    back, m = cubemap_to_equirect(cube[..., :3], 64, 32, cube[..., 3])
    assert (m == mask).mean() > 0.97


def test_resampling_validation():
    with pytest.raises(GeometryError):
        equirect_to_cubemap(np.zeros((10, 30)), 4)
    with pytest.raises(GeometryError):
        cubemap_to_equirect(np.zeros((5, 4, 4)), 8, 4)


def test_atlas_and_files(tmp_path, rng):
    cube = rng.uniform(size=(6, 4, 4, 3)).astype(np.float32)
    atlas = cubemap_atlas(cube)
    assert atlas.shape == (8, 12, 3)
    np.testing.assert_array_equal(atlas[4:8, 4:8], cube[4])
    np.testing.assert_array_equal(atlas_to_cubemap(atlas), cube)
    paths = save_cubemap(str(tmp_path / "env"), cube, "pfm")
    assert [p.rsplit("_", 1)[1] for p in paths] == ["px.pfm", "nx.pfm", "py.pfm", "ny.pfm",
                                                    "pz.pfm", "nz.pfm", "atlas.pfm"]
    np.testing.assert_array_equal(load_cubemap(str(tmp_path / "env"), "pfm"), cube)
