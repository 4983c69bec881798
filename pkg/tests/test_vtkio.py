import numpy as np
import pytest

from driftdg.mesh import build_structured_unit_square
from driftdg.vtkio import read_vtk, write_vtk


def test_roundtrip_scalar(tmp_path):
    from driftdg.mesh import Mesh
    mesh = Mesh([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)],
                [(0, 1, 4), (1, 2, 4)])
    values = np.array([0.25, -1.5])
    path = tmp_path / "out.vtk"
    write_vtk(mesh, {"u": values}, path)
    pts, cells, data = read_vtk(path)
    assert len(pts) == 5
    assert cells.shape == (2, 3)
    assert np.array_equal(data["u"], values)
    assert np.array_equal(cells, mesh.elements)


def test_roundtrip_vector_z_padding(tmp_path):
    mesh = build_structured_unit_square(2)
    vec = np.linspace(0.0, 1.0, 2 * mesh.n_elements).reshape(-1, 2)
    path = tmp_path / "vec.vtk"
    write_vtk(mesh, {"p": vec}, path)
    _, _, data = read_vtk(path)
    assert data["p"].shape == (mesh.n_elements, 3)
    assert np.array_equal(data["p"][:, :2], vec)
    assert np.all(data["p"][:, 2] == 0.0)


def test_byte_stable(tmp_path):
    mesh = build_structured_unit_square(3)
    rng = np.random.default_rng(7)
    fields = {"u": rng.standard_normal(mesh.n_elements),
              "p": rng.standard_normal((mesh.n_elements, 2))}
    p1 = tmp_path / "a.vtk"
    p2 = tmp_path / "b.vtk"
    write_vtk(mesh, fields, p1)
    write_vtk(mesh, fields, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_field_length_validated(tmp_path):
    mesh = build_structured_unit_square(1)
    with pytest.raises(ValueError, match="length"):
        write_vtk(mesh, {"u": np.zeros(3)}, tmp_path / "bad.vtk")


def test_unwritable_path():
    mesh = build_structured_unit_square(1)
    with pytest.raises(OSError):
        write_vtk(mesh, {"u": np.zeros(2)}, "/nonexistent-dir/out.vtk")
