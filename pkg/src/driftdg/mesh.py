"""Conforming triangulations of polygons with face topology and boundary tags.

A Mesh is immutable after construction.  Faces are stored once, with a global
orientation (first-to-second stored vertex) that fixes the parametrization
trace unknowns live on; each element records, for each of its three local
edges, the global face id and whether its local direction agrees with the
global one.
"""

import io
from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

_TAG_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}
_TAG_IDS = {v: k for k, v in _TAG_NAMES.items()}

# Local edge ell of triangle (v0, v1, v2) runs from vertex ell to (ell+1) % 3.
_EDGE_ENDS = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class ElementGeometry:
    """Affine geometry of one element (reference triangle {(0,0),(1,0),(0,1)})."""

    element_id: int
    origin: np.ndarray        # physical image of (0,0)
    jacobian: np.ndarray      # (2,2), columns = edge vectors from vertex 0
    inv_jacobian: np.ndarray  # (2,2)
    det_jacobian: float       # positive for CCW elements
    normals: np.ndarray       # (3,2) outward unit normals per local edge
    face_lengths: np.ndarray  # (3,)
    diameter: float           # h_K = longest edge

    def map_to_physical(self, ref_pts):
        ref_pts = np.asarray(ref_pts, dtype=float)
        return self.origin[None, :] + ref_pts @ self.jacobian.T

    def map_to_reference(self, phys_pts):
        phys_pts = np.asarray(phys_pts, dtype=float)
        return (phys_pts - self.origin[None, :]) @ self.inv_jacobian.T


class Mesh:
    """Triangulation with face topology, boundary tags, per-element geometry.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counterclockwise vertex ids
    faces : (nf, 2) int array; the stored order (v0, v1) is the global
        parametrization of the face
    face_tags : (nf,) int array of INTERIOR / DIRICHLET / NEUMANN
    face_elements : (nf, 2) int array, adjacent element ids (-1 = none)
    face_local : (nf, 2) int array, local edge index within each adjacent element
    elem_faces : (ne, 3) int array, global face id of each local edge
    elem_flip : (ne, 3) bool array, True when the local edge direction opposes
        the global face orientation
    """

    def __init__(self, vertices, elements, boundary_tag=DIRICHLET, _face_tags=None):
        vertices = np.asarray(vertices, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        if not np.all(np.isfinite(vertices)):
            raise ValueError("non-finite vertex coordinates")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must be an (ne, 3) index array")

        # Enforce counterclockwise orientation (positive signed area).
        p0 = vertices[elements[:, 0]]
        p1 = vertices[elements[:, 1]]
        p2 = vertices[elements[:, 2]]
        twice_area = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
        if np.any(twice_area == 0.0):
            bad = int(np.nonzero(twice_area == 0.0)[0][0])
            raise ValueError(f"degenerate (zero-area) element {bad}")
        flip = twice_area < 0.0
        if np.any(flip):
            elements = elements.copy()
            elements[flip, 1], elements[flip, 2] = elements[flip, 2], elements[flip, 1]

        self.vertices = vertices
        self.elements = elements
        self.n_vertices = len(vertices)
        self.n_elements = len(elements)
        self._build_faces()
        if _face_tags is not None:
            self.face_tags = np.asarray(_face_tags, dtype=np.int64).copy()
        else:
            self.face_tags = np.where(self.face_elements[:, 1] < 0,
                                      boundary_tag, INTERIOR)
        self._build_geometry()
        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)
        self.face_tags.setflags(write=False)

    def _build_faces(self):
        edge_map = {}
        faces = []
        face_elements = []
        face_local = []
        ne = self.n_elements
        elem_faces = np.empty((ne, 3), dtype=np.int64)
        elem_flip = np.zeros((ne, 3), dtype=bool)
        for e in range(ne):
            tri = self.elements[e]
            for ell, (a, b) in enumerate(_EDGE_ENDS):
                va, vb = int(tri[a]), int(tri[b])
                key = (min(va, vb), max(va, vb))
                fid = edge_map.get(key)
                if fid is None:
                    fid = len(faces)
                    edge_map[key] = fid
                    faces.append((va, vb))
                    face_elements.append([e, -1])
                    face_local.append([ell, -1])
                    elem_flip[e, ell] = False
                else:
                    if face_elements[fid][1] != -1:
                        raise ValueError(f"face {key} shared by more than two elements")
                    face_elements[fid][1] = e
                    face_local[fid][1] = ell
                    elem_flip[e, ell] = (faces[fid] != (va, vb))
                elem_faces[e, ell] = fid
        self.faces = np.asarray(faces, dtype=np.int64)
        self.face_elements = np.asarray(face_elements, dtype=np.int64)
        self.face_local = np.asarray(face_local, dtype=np.int64)
        self.elem_faces = elem_faces
        self.elem_flip = elem_flip
        self.n_faces = len(faces)
        for arr in (self.faces, self.face_elements, self.face_local,
                    self.elem_faces, self.elem_flip):
            arr.setflags(write=False)

    def _build_geometry(self):
        verts = self.vertices[self.elements]          # (ne, 3, 2)
        origin = verts[:, 0, :]
        J = np.stack([verts[:, 1, :] - verts[:, 0, :],
                      verts[:, 2, :] - verts[:, 0, :]], axis=-1)  # (ne, 2, 2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / detJ
        Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
        Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
        Jinv[:, 1, 1] = J[:, 0, 0] / detJ
        edges = np.stack([verts[:, 1] - verts[:, 0],
                          verts[:, 2] - verts[:, 1],
                          verts[:, 0] - verts[:, 2]], axis=1)     # (ne, 3, 2)
        lengths = np.linalg.norm(edges, axis=-1)
        normals = np.stack([edges[..., 1], -edges[..., 0]], axis=-1) / lengths[..., None]
        self.elem_origin = origin
        self.jacobians = J
        self.inv_jacobians = Jinv
        self.det_jacobians = detJ
        self.normals = normals
        self.face_lengths_per_element = lengths
        self.h_per_element = lengths.max(axis=1)
        self.h_max = float(self.h_per_element.max())
        self.quasi_uniformity = float(self.h_per_element.max() / self.h_per_element.min())
        self.element_areas = 0.5 * detJ
        for arr in (self.elem_origin, self.jacobians, self.inv_jacobians,
                    self.det_jacobians, self.normals,
                    self.face_lengths_per_element, self.h_per_element,
                    self.element_areas):
            arr.setflags(write=False)

    def face_midpoints(self):
        return 0.5 * (self.vertices[self.faces[:, 0]] + self.vertices[self.faces[:, 1]])

    def face_points(self, face_ids, s):
        """Physical points on faces at global parameters s (one s-array per call)."""
        a = self.vertices[self.faces[face_ids, 0]]
        b = self.vertices[self.faces[face_ids, 1]]
        s = np.asarray(s, dtype=float)
        return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]

    def boundary_faces(self):
        return np.nonzero(self.face_elements[:, 1] < 0)[0]

    def interior_faces(self):
        return np.nonzero(self.face_elements[:, 1] >= 0)[0]


def compute_geometry(mesh, element_id):
    """Per-element affine map data, outward normals, face lengths, diameter."""
    if element_id < 0 or element_id >= mesh.n_elements:
        raise IndexError(f"element {element_id} out of range")
    detJ = float(mesh.det_jacobians[element_id])
    if detJ <= 0.0:
        raise ValueError(f"degenerate element {element_id}")
    return ElementGeometry(
        element_id=element_id,
        origin=mesh.elem_origin[element_id],
        jacobian=mesh.jacobians[element_id],
        inv_jacobian=mesh.inv_jacobians[element_id],
        det_jacobian=detJ,
        normals=mesh.normals[element_id],
        face_lengths=mesh.face_lengths_per_element[element_id],
        diameter=float(mesh.h_per_element[element_id]),
    )


def build_structured_unit_square(n):
    """Uniform triangulation of [0,1]^2: n x n cells split along the
    lower-left to upper-right diagonal; 2 n^2 triangles, h_max = sqrt(2)/n.

    All boundary faces are tagged Dirichlet.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    elements = []
    for i in range(n):
        for j in range(n):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            elements.append((v00, v10, v11))  # below the diagonal
            elements.append((v00, v11, v01))  # above the diagonal
    return Mesh(vertices, np.asarray(elements))


def refine_uniform(mesh):
    """Midpoint (red) refinement: each triangle into 4 congruent children.

    Boundary tags are inherited: both children of a boundary face keep the
    parent's tag.
    """
    nv = mesh.n_vertices
    mid_id = {}
    new_vertices = [mesh.vertices]
    mids = np.empty(mesh.n_faces, dtype=np.int64)
    coords = 0.5 * (mesh.vertices[mesh.faces[:, 0]] + mesh.vertices[mesh.faces[:, 1]])
    for f in range(mesh.n_faces):
        mids[f] = nv + f
    new_vertices.append(coords)
    vertices = np.vstack(new_vertices)

    elements = np.empty((4 * mesh.n_elements, 3), dtype=np.int64)
    for e in range(mesh.n_elements):
        v0, v1, v2 = mesh.elements[e]
        m01 = mids[mesh.elem_faces[e, 0]]
        m12 = mids[mesh.elem_faces[e, 1]]
        m20 = mids[mesh.elem_faces[e, 2]]
        elements[4 * e + 0] = (v0, m01, m20)
        elements[4 * e + 1] = (m01, v1, m12)
        elements[4 * e + 2] = (m20, m12, v2)
        elements[4 * e + 3] = (m01, m12, m20)
    fine = Mesh(vertices, elements)

    # Children of parent boundary face (va, vb) are (va, m) and (m, vb).
    tag_of_pair = {}
    for f in mesh.boundary_faces():
        va, vb = mesh.faces[f]
        m = mids[f]
        t = int(mesh.face_tags[f])
        tag_of_pair[(min(va, m), max(va, m))] = t
        tag_of_pair[(min(vb, m), max(vb, m))] = t
    tags = fine.face_tags.copy()
    for f in fine.boundary_faces():
        va, vb = fine.faces[f]
        key = (min(va, vb), max(va, vb))
        if key in tag_of_pair:
            tags[f] = tag_of_pair[key]
    return Mesh(vertices, elements, _face_tags=tags)


def tag_boundary(mesh, predicate):
    """Retag boundary faces; interior faces are untouched.

    `predicate(midpoint, (pa, pb))` returns "dirichlet" or "neumann" (or the
    numeric tag) for each boundary face.
    """
    tags = mesh.face_tags.copy()
    mids = mesh.face_midpoints()
    for f in mesh.boundary_faces():
        pa = mesh.vertices[mesh.faces[f, 0]]
        pb = mesh.vertices[mesh.faces[f, 1]]
        tag = predicate(mids[f], (pa, pb))
        if isinstance(tag, str):
            tag = _TAG_IDS.get(tag.lower())
            if tag is None:
                raise ValueError(f"unknown tag {tag!r} from predicate")
        if tag == INTERIOR:
            raise ValueError(f"predicate returned 'interior' for boundary face {f}")
        tags[f] = tag
    return Mesh(mesh.vertices, mesh.elements, _face_tags=tags)


def read_mesh_text(source, boundary_tag=DIRICHLET):
    """Read the plain-text mesh format: "nv ne" header, nv "x y" lines,
    ne "v0 v1 v2" lines (0-based indices)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        try:
            with open(source) as fh:
                text = fh.read()
        except (OSError, ValueError):
            text = source
    tokens = text.split()
    if len(tokens) < 2:
        raise ValueError("mesh text too short")
    nv, ne = int(tokens[0]), int(tokens[1])
    need = 2 + 2 * nv + 3 * ne
    if len(tokens) < need:
        raise ValueError(f"mesh text truncated: expected {need} tokens, got {len(tokens)}")
    coords = np.asarray(tokens[2:2 + 2 * nv], dtype=float).reshape(nv, 2)
    conn = np.asarray(tokens[2 + 2 * nv:need], dtype=np.int64).reshape(ne, 3)
    return Mesh(coords, conn, boundary_tag=boundary_tag)


def write_mesh_text(mesh):
    """Serialize a mesh in the plain-text import format."""
    out = io.StringIO()
    out.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
    for x, y in mesh.vertices:
        out.write(f"{float(x)!r} {float(y)!r}\n")
    for v0, v1, v2 in mesh.elements:
        out.write(f"{int(v0)} {int(v1)} {int(v2)}\n")
    return out.getvalue()
