import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from profilecal.cloud import LaserProfile, PointCloud, load_cloud, merge_clouds, save_cloud, transform_cloud
from profilecal.errors import FrameMismatchError, InvalidArgumentError, PlyParseError
from profilecal.geometry import RigidTransform, compose, translate

from conftest import random_rotation


def random_cloud(rng, n=50, frame="B", intensity=True):
    return PointCloud(rng.uniform(-500, 500, (n, 3)), rng.random(n) if intensity else None, frame)


def test_identity_transform_keeps_cloud(rng):
    c = random_cloud(rng)
    out = transform_cloud(RigidTransform.identity(), c, "B")
    np.testing.assert_array_equal(out.points, c.points)
    np.testing.assert_array_equal(out.intensity, c.intensity)
    assert out.frame == "B"


def test_translate_single_point():
    out = transform_cloud(translate(0, 0, 10), PointCloud([[0, 0, 0]]), "B")
    np.testing.assert_array_equal(out.points, [[0, 0, 10]])


def test_transform_and_back(rng):
    c = random_cloud(rng, frame="S")
    H = RigidTransform(random_rotation(rng), rng.normal(size=3) * 100)
    back = transform_cloud(H.inverse(), transform_cloud(H, c, "B"), "S")
    np.testing.assert_allclose(back.points, c.points, atol=1e-12)
    assert back.frame == "S"


@given(st.integers(0, 2**32 - 1))
def test_transform_composition(seed):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, 20)
    H1 = RigidTransform(random_rotation(rng), rng.normal(size=3) * 100)
    H2 = RigidTransform(random_rotation(rng), rng.normal(size=3) * 100)
    a = transform_cloud(H2, transform_cloud(H1, c, "X"), "Y")
    b = transform_cloud(compose(H2, H1), c, "Y")
    np.testing.assert_allclose(a.points, b.points, atol=1e-9)


def test_merge_with_empty(rng):
    c = random_cloud(rng, 1)
    m = merge_clouds([c, PointCloud.empty("B", with_intensity=True)])
    np.testing.assert_array_equal(m.points, c.points)


def test_merge_counts(rng):
    m = merge_clouds([random_cloud(rng, n) for n in (10, 20, 30)])
    assert len(m) == 60


def test_merge_frame_mismatch(rng):
    with pytest.raises(FrameMismatchError):
        merge_clouds([random_cloud(rng, frame="B"), random_cloud(rng, frame="S")])


@given(st.permutations(range(4)))
def test_merge_order_insensitive(order):
    rng = np.random.default_rng(7)
    clouds = [random_cloud(rng, n) for n in (3, 5, 7, 11)]
    a = merge_clouds(clouds)
    b = merge_clouds([clouds[i] for i in order])

    def key(c):
        rows = np.column_stack([c.points, c.intensity])
        return rows[np.lexsort(rows.T[::-1])]

    np.testing.assert_array_equal(key(a), key(b))


def test_merge_drops_partial_intensity(rng):
    m = merge_clouds([random_cloud(rng, 5), random_cloud(rng, 5, intensity=False)])
    assert not m.has_intensity


def test_cloud_validation():
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.zeros((2, 3)), [0.5, 1.5])
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.zeros((2, 3)), frame="")
    with pytest.raises(InvalidArgumentError):
        PointCloud([[np.inf, 0, 0]])


def test_profile_must_lie_in_sensor_plane():
    LaserProfile([[1, 0, 200], [2, 5e-10, 201]])
    with pytest.raises(InvalidArgumentError):
        LaserProfile([[1, 1e-6, 200]])
    assert LaserProfile([[1, 0, 200]]).as_cloud().frame == "S"


# --- PLY ------------------------------------------------------------------------------

def test_ply_round_trip(tmp_path, rng):
    c = random_cloud(rng, 1000, frame="C")
    save_cloud(c, tmp_path / "c.ply")
    d = load_cloud(tmp_path / "c.ply")
    np.testing.assert_allclose(d.points, c.points, atol=1e-6)
    np.testing.assert_allclose(d.intensity, c.intensity, atol=1e-9)
    assert d.frame == "C"


def test_ply_round_trip_is_exact(tmp_path, rng):
    c = random_cloud(rng, 100)
    save_cloud(c, tmp_path / "c.ply")
    np.testing.assert_array_equal(load_cloud(tmp_path / "c.ply").points, c.points)


def test_ply_header_layout(tmp_path):
    save_cloud(PointCloud([[1, 2, 3]], [0.5], "B"), tmp_path / "c.ply")
    lines = (tmp_path / "c.ply").read_text().splitlines()
    assert lines[:3] == ["ply", "format ascii 1.0", "comment frame B"]
    i = lines.index("element vertex 1")
    assert lines[i + 1:i + 6] == ["property float x", "property float y", "property float z",
                                  "property float intensity", "end_header"]
    assert lines[i + 6].split() == ["1", "2", "3", "0.5"]


def test_empty_cloud_file(tmp_path):
    save_cloud(PointCloud.empty("S"), tmp_path / "e.ply")
    assert "element vertex 0" in (tmp_path / "e.ply").read_text()
    e = load_cloud(tmp_path / "e.ply")
    assert len(e) == 0 and e.frame == "S"


def test_missing_intensity_round_trips_as_absent(tmp_path, rng):
    c = random_cloud(rng, 5, intensity=False)
    save_cloud(c, tmp_path / "c.ply")
    assert not load_cloud(tmp_path / "c.ply").has_intensity


def _ply(body, n=5):
    return ("ply\nformat ascii 1.0\nelement vertex %d\nproperty float x\nproperty float y\n"
            "property float z\nproperty float intensity\nend_header\n" % n) + body


def test_short_file_reports_line(tmp_path):
    p = tmp_path / "short.ply"
    p.write_text(_ply("0 0 0 1\n" * 4))
    with pytest.raises(PlyParseError, match="line"):
        load_cloud(p)


def test_non_numeric_row_reports_line(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text(_ply("0 0 0 1\n0 0 0 1\n0 x 0 1\n0 0 0 1\n0 0 0 1\n"))
    with pytest.raises(PlyParseError) as err:
        load_cloud(p)
    assert err.value.line == 11


def test_malformed_header(tmp_path):
    p = tmp_path / "h.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(PlyParseError, match="line 2"):
        load_cloud(p)
    p.write_text("not a ply\n")
    with pytest.raises(PlyParseError, match="line 1"):
        load_cloud(p)
