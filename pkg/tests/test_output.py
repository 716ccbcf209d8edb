import numpy as np
import pytest

from morphpd.mesh import generate_structured_quad_mesh
from morphpd.output import crack_series, crack_speed, extract_crack_tips, track_tips, write_snapshot, write_timing

meshio = pytest.importorskip("meshio")


def test_single_element_snapshot(tmp_path):
    mesh = generate_structured_quad_mesh(((0.0, 0.0), (1.0, 1.0)), 1.0)
    u = np.arange(8, dtype=float)
    path = write_snapshot(tmp_path / "one.vtk", mesh, u, [0.25], [1.0], [7.5], "one")
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[1] == "one"
    assert "POINTS 4 double" in lines and "CELLS 1 5" in lines
    assert lines[lines.index("CELLS 1 5") + 1] == "4 0 1 3 2"
    assert lines[lines.index("CELL_TYPES 1") + 1] == "9"
    m = meshio.read(path)
    assert np.allclose(m.point_data["displacement"][:, :2], u.reshape(-1, 2))
    assert m.cell_data["phi"][0][0] == 0.25 and m.cell_data["sigma_v"][0][0] == 7.5
    with pytest.raises(ValueError):
        write_snapshot(tmp_path / "bad.vtk", mesh, u, [0.1, 0.2], [1.0])


def test_snapshot_reload_cell_count(tmp_path):
    mesh = generate_structured_quad_mesh(((0.0, 0.0), (6.0, 4.0)), 0.5)
    ne = mesh.n_elements
    write_snapshot(tmp_path / "s.vtk", mesh, np.zeros(mesh.n_dofs), np.zeros(ne), np.zeros(ne))
    m = meshio.read(tmp_path / "s.vtk")
    assert sum(len(c.data) for c in m.cells) == ne
    assert len(m.points) == mesh.n_nodes


@pytest.fixture(scope="module")
def grid():
    return generate_structured_quad_mesh(((0.0, 0.0), (40.0, 40.0)), 1.0)


def test_no_damage_no_tips(grid):
    assert extract_crack_tips(np.zeros(grid.n_elements), grid).shape == (0, 2)


def test_straight_band_has_one_tip(grid):
    c = grid.centroids
    phi = ((np.abs(c[:, 1] - 20.0) < 0.6) & (c[:, 0] < 25.0)).astype(float)
    tips = extract_crack_tips(phi, grid, seeds=[(0.0, 20.0)], min_branch=4.0)
    assert tips.shape == (1, 2)
    assert tips[0] == pytest.approx([24.5, 20.5], abs=1.0)


def test_y_shape_has_two_tips(grid):
    c = grid.centroids
    stem = (np.abs(c[:, 0] - 20.0) < 0.6) & (c[:, 1] < 20.0)
    t = c[:, 1] - 20.0
    arm1 = (t >= 0) & (t < 12) & (np.abs(c[:, 0] - 20.0 - t) < 0.8)
    arm2 = (t >= 0) & (t < 12) & (np.abs(c[:, 0] - 20.0 + t) < 0.8)
    phi = (stem | arm1 | arm2).astype(float)
    tips = extract_crack_tips(phi, grid, seeds=[(20.0, 0.0)], min_branch=6.0)
    assert len(tips) == 2
    assert sorted(np.round(tips[:, 0]).tolist()) == pytest.approx([9.0, 31.0], abs=1.5)
    assert np.all(tips[:, 1] > 29.0)
    # short stubs do not count as branches
    assert len(extract_crack_tips(phi, grid, seeds=[(20.0, 0.0)], min_branch=20.0)) == 1


def test_speed_examples():
    dt_out = 0.04e-6
    still = [np.array([[1.0, 1.0]])] * 4
    _, v = crack_speed(still, dt_out)
    assert all(s[0] == 0.0 for s in v)
    moving = [np.array([[0.124 * k, 0.0]]) for k in range(5)]
    _, v = crack_speed(moving, dt_out)
    assert np.allclose(np.concatenate(v), 3.1e6)


def test_tracking_keeps_ids_across_branching():
    series = [np.array([[0.0, 0.0]]), np.array([[0.0, 1.0]]), np.array([[-1.0, 2.0], [1.0, 2.0]])]
    ids, raw = track_tips(series)
    assert ids[0].tolist() == [0] and ids[1].tolist() == [0]
    assert sorted(ids[2].tolist()) == [0, 1]
    assert np.isnan(raw[0][0]) and raw[1][0] == pytest.approx(1.0)
    assert np.isnan(raw[2]).sum() == 1


def test_series_csv_and_timing(tmp_path):
    s = crack_series([0, 25], [0.0, 1e-6], [np.zeros((0, 2)), np.array([[1.0, 2.0]])], 1e-6)
    s.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "step,t,tip_id,x,y,v_c" and len(lines) == 2
    assert s.tip_counts.tolist() == [0, 1]

    class R:
        def __init__(self, k):
            self.step, self.t, self.n_dofs, self.n_broken, self.wall_ms = k, k * 1e-8, 10, 0, 0.5

    write_timing(tmp_path / "t.csv", [R(1), R(2)])
    assert (tmp_path / "t.csv").read_text().splitlines()[1].startswith("1,1e-08,10,0,")
