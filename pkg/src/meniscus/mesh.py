"""Triangular meshes with face connectivity, subdomain labels and boundary tags."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh cannot be constructed from the given data."""


class BoundaryTag(enum.IntEnum):
    PorousWall = 0
    FluidWall = 1
    Inflow = 2
    Outflow = 3
    Interface = 4
    Free = 5


class Subdomain(enum.IntEnum):
    POROUS = 0
    FLUID = 1


INTERIOR = -1

# local face i is opposite local vertex i
_LOCAL_FACES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D simplicial mesh.

    Faces are stored once. ``face_elements[f] = (left, right)`` with
    ``right == -1`` on the boundary, and ``face_normals[f]`` is the unit
    normal pointing from left to right (outward on the boundary).
    ``face_tags`` holds a :class:`BoundaryTag` value for boundary and
    interface faces and ``INTERIOR`` otherwise.
    """

    vertices: np.ndarray
    elements: np.ndarray
    subdomains: np.ndarray
    faces: np.ndarray
    face_elements: np.ndarray
    face_normals: np.ndarray
    face_measures: np.ndarray
    face_tags: np.ndarray
    element_faces: np.ndarray
    element_face_signs: np.ndarray
    areas: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_elements[:, 1] < 0)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_elements[:, 1] >= 0)

    @property
    def face_midpoints(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the three barycentric coordinates, shape (ne, 3, 2)."""
        if "grads" not in self._cache:
            x = self.vertices[self.elements]
            jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
            inv = np.linalg.inv(jac)
            g = np.empty((self.n_elements, 3, 2))
            g[:, 1:] = inv
            g[:, 0] = -inv.sum(axis=1)
            self._cache["grads"] = g
        return self._cache["grads"]

    @property
    def measure(self) -> float:
        return float(self.areas.sum())

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.face_tags == int(tag))

    def tag_measure(self, tag: BoundaryTag) -> float:
        return float(self.face_measures[self.faces_with_tag(tag)].sum())

    def has_subdomain(self, label: Subdomain) -> bool:
        return bool(np.any(self.subdomains == int(label)))

    def max_face_diameter(self) -> float:
        return float(self.face_measures.max())

    def tag_vertices(self, *tags: BoundaryTag) -> np.ndarray:
        sel = np.isin(self.face_tags, [int(t) for t in tags])
        return np.unique(self.faces[sel])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.vertices, self.elements, self.subdomains, self.face_tags):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def element_adjacency_components(self) -> np.ndarray:
        """Connected-component label per element (face-neighbour graph)."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        inner = self.interior_faces
        left, right = self.face_elements[inner].T
        graph = coo_matrix(
            (np.ones(len(inner)), (left, right)),
            shape=(self.n_elements, self.n_elements),
        )
        _, labels = connected_components(graph, directed=False)
        return labels

    def submesh(self, label: Subdomain) -> tuple["Mesh", np.ndarray, np.ndarray]:
        """Extract the elements carrying ``label``.

        Returns ``(mesh, element_map, vertex_map)`` where the maps give the
        parent index of every submesh element and vertex. Faces on the cut
        keep the parent tag, so interface faces stay tagged ``Interface``.
        """
        elem_map = np.flatnonzero(self.subdomains == int(label))
        if len(elem_map) == 0:
            raise MeshError(f"no elements with subdomain {Subdomain(label).name}")
        vert_map = np.unique(self.elements[elem_map])
        renumber = np.full(self.n_vertices, -1)
        renumber[vert_map] = np.arange(len(vert_map))
        spec = {}
        for f in np.flatnonzero(self.face_tags != INTERIOR):
            a, b = renumber[self.faces[f]]
            if a >= 0 and b >= 0:
                spec[frozenset((int(a), int(b)))] = BoundaryTag(self.face_tags[f])
        sub = build_mesh(
            self.vertices[vert_map],
            renumber[self.elements[elem_map]],
            self.subdomains[elem_map],
            spec,
        )
        return sub, elem_map, vert_map


BoundarySpec = (
    Callable[[np.ndarray, np.ndarray, int], "BoundaryTag | None"]
    | Mapping[frozenset, BoundaryTag]
    | None
)


def _signed_areas(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    x = vertices[elements]
    d1 = x[:, 1] - x[:, 0]
    d2 = x[:, 2] - x[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(
    vertices,
    elements,
    subdomains=None,
    boundary_spec: BoundarySpec = None,
    *,
    reorient: bool = False,
) -> Mesh:
    """Build a :class:`Mesh` and its face table.

    ``boundary_spec`` is either a mapping from unordered vertex pairs
    (``frozenset``) to tags, or a callable ``(midpoint, normal, subdomain)``
    returning a tag or ``None``. Untagged boundary faces become ``Free``.
    Interior faces separating the two subdomains are tagged ``Interface``.
    With ``reorient=True`` clockwise elements are flipped instead of rejected.
    """
    vertices = np.array(vertices, dtype=float)
    elements = np.array(elements, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (n, 2)")
    if elements.ndim != 2 or elements.shape[1] != 3 or len(elements) == 0:
        raise MeshError("need at least one triangle given as a vertex index triple")
    nv, ne = len(vertices), len(elements)
    bad = np.flatnonzero((elements < 0).any(axis=1) | (elements >= nv).any(axis=1))
    if len(bad):
        raise MeshError(f"element {bad[0]} references a vertex outside [0, {nv})")
    if subdomains is None:
        subdomains = np.zeros(ne, dtype=np.int64)
    subdomains = np.asarray(subdomains, dtype=np.int64).copy()
    if subdomains.shape != (ne,):
        raise MeshError("one subdomain label per element required")

    keys = np.sort(elements, axis=1)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = np.sort(first[counts > 1])[0]
        raise MeshError(f"element {dup} is duplicated")

    areas = _signed_areas(vertices, elements)
    if reorient:
        flip = areas < 0
        elements[flip] = elements[flip][:, [0, 2, 1]]
        areas = np.abs(areas)
    nonpos = np.flatnonzero(areas <= 0)
    if len(nonpos):
        raise MeshError(
            f"element {nonpos[0]} is inverted or degenerate (signed area {areas[nonpos[0]]:.3e})"
        )

    # every element contributes three oriented edges; pair them up
    local = elements[:, _LOCAL_FACES]  # (ne, 3, 2)
    edges = local.reshape(-1, 2)
    ekeys = np.sort(edges, axis=1)
    uniq, inverse, counts = np.unique(ekeys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        f = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"face {tuple(uniq[f])} is shared by more than two elements")
    nf = len(uniq)
    owner = np.repeat(np.arange(ne), 3)
    slot = np.tile(np.arange(3), ne)
    order = np.argsort(inverse, kind="stable")
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    face_elements = np.full((nf, 2), -1, dtype=np.int64)
    face_slots = np.full((nf, 2), -1, dtype=np.int64)
    first = order[start]
    face_elements[:, 0] = owner[first]
    face_slots[:, 0] = slot[first]
    pair = counts == 2
    second = order[start[pair] + 1]
    face_elements[pair, 1] = owner[second]
    face_slots[pair, 1] = slot[second]

    left = face_elements[:, 0]
    faces = local[left, face_slots[:, 0]]
    d = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    measures = np.hypot(d[:, 0], d[:, 1])
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / measures[:, None]

    element_faces = np.empty((ne, 3), dtype=np.int64)
    element_faces[owner, slot] = inverse
    signs = np.where(face_elements[element_faces, 0] == np.arange(ne)[:, None], 1, -1)

    tags = np.full(nf, INTERIOR, dtype=np.int64)
    boundary = face_elements[:, 1] < 0
    inner = ~boundary
    cut = inner & (subdomains[left] != subdomains[np.maximum(face_elements[:, 1], 0)])
    tags[cut] = BoundaryTag.Interface
    mids = vertices[faces].mean(axis=1)
    for f in np.flatnonzero(boundary):
        tag = None
        if callable(boundary_spec):
            tag = boundary_spec(mids[f], normals[f], int(subdomains[left[f]]))
        elif boundary_spec is not None:
            tag = boundary_spec.get(frozenset((int(faces[f, 0]), int(faces[f, 1]))))
        tags[f] = BoundaryTag.Free if tag is None else BoundaryTag(tag)

    for arr in (vertices, elements, subdomains, faces, face_elements, normals, measures,
                tags, element_faces, signs, areas):
        arr.setflags(write=False)
    return Mesh(vertices, elements, subdomains, faces, face_elements, normals, measures,
                tags, element_faces, signs, areas)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children (edge midpoints)."""
    nv = mesh.n_vertices
    mids = mesh.vertices[mesh.faces].mean(axis=1)
    vertices = np.vstack([mesh.vertices, mids])
    v = mesh.elements
    m = nv + mesh.element_faces  # m[:, i] is the midpoint opposite vertex i
    children = np.concatenate([
        np.stack([v[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], v[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], v[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ])
    subdomains = np.tile(mesh.subdomains, 4)
    spec = {}
    for f in np.flatnonzero(mesh.face_elements[:, 1] < 0):
        a, b = mesh.faces[f]
        tag = BoundaryTag(mesh.face_tags[f])
        spec[frozenset((int(a), nv + int(f)))] = tag
        spec[frozenset((nv + int(f), int(b)))] = tag
    return build_mesh(vertices, children, subdomains, spec)


GEOMETRIES = ("unit-square-porous", "channel-over-porous", "channel")
_EDGES = ("left", "right", "bottom", "top")


def _grid(nx, ny, x0, x1, y0, y1):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return pts, tris


def structured_generator(
    nx: int,
    ny: int,
    geometry: str = "unit-square-porous",
    *,
    ny_fluid: int | None = None,
    length: float = 1.0,
    height: float = 1.0,
    fluid_height: float | None = None,
    edge_tags: Mapping[str, BoundaryTag] | None = None,
) -> Mesh:
    """Structured triangulation of the desk-scale geometries.

    ``unit-square-porous``: ``[0, length] x [0, height]``, porous, every
    boundary face ``PorousWall`` unless overridden by ``edge_tags`` (keys
    ``left``/``right``/``bottom``/``top``).

    ``channel-over-porous``: porous block ``[0, L] x [0, H]`` with ``ny``
    rows under a fluid channel of ``ny_fluid`` rows and height
    ``fluid_height``. Inflow/Outflow are the left/right channel edges, the
    channel top is ``FluidWall``, the rest of the porous exterior
    ``PorousWall``.

    ``channel``: fluid-only rectangle with Inflow left, Outflow right,
    FluidWall top and bottom (``edge_tags`` may override).
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    if geometry not in GEOMETRIES:
        raise MeshError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")
    edge_tags = dict(edge_tags or {})
    unknown = set(edge_tags) - set(_EDGES)
    if unknown:
        raise MeshError(f"unknown edge names {sorted(unknown)}")
    tol = 1e-10 * max(length, height)

    if geometry == "channel-over-porous":
        nyf = ny if ny_fluid is None else ny_fluid
        hf = height if fluid_height is None else fluid_height
        if nyf < 1 or hf <= 0:
            raise MeshError("channel needs ny_fluid >= 1 and fluid_height > 0")
        # uniform spacing per block, then stitch along y = height
        pts_p, tri_p = _grid(nx, ny, 0.0, length, 0.0, height)
        pts_f, tri_f = _grid(nx, nyf, 0.0, length, height, height + hf)
        shared = nx + 1
        offset = len(pts_p) - shared
        remap = np.arange(len(pts_f)) + offset
        remap[:shared] = np.arange(len(pts_p) - shared, len(pts_p))
        pts = np.vstack([pts_p, pts_f[shared:]])
        tris = np.vstack([tri_p, remap[tri_f]])
        sub = np.concatenate([np.zeros(len(tri_p)), np.ones(len(tri_f))]).astype(int)

        def spec(mid, normal, label):
            x, y = mid
            if label == Subdomain.FLUID:
                if abs(x) < tol:
                    return BoundaryTag.Inflow
                if abs(x - length) < tol:
                    return BoundaryTag.Outflow
                return BoundaryTag.FluidWall
            return BoundaryTag.PorousWall

        return build_mesh(pts, tris, sub, spec)

    pts, tris = _grid(nx, ny, 0.0, length, 0.0, height)
    if geometry == "channel":
        sub = np.full(len(tris), int(Subdomain.FLUID))
        defaults = {"left": BoundaryTag.Inflow, "right": BoundaryTag.Outflow,
                    "bottom": BoundaryTag.FluidWall, "top": BoundaryTag.FluidWall}
    else:
        sub = np.zeros(len(tris), dtype=int)
        defaults = dict.fromkeys(_EDGES, BoundaryTag.PorousWall)
    defaults.update(edge_tags)

    def spec(mid, normal, label):
        x, y = mid
        if abs(x) < tol:
            return defaults["left"]
        if abs(x - length) < tol:
            return defaults["right"]
        if abs(y) < tol:
            return defaults["bottom"]
        return defaults["top"]

    return build_mesh(pts, tris, sub, spec)


def disjoint_union(meshes, shifts) -> Mesh:
    """Place several meshes side by side as one mesh without shared faces."""
    verts, elems, subs, spec = [], [], [], {}
    offset = 0
    for mesh, shift in zip(meshes, shifts):
        verts.append(mesh.vertices + np.asarray(shift, dtype=float))
        elems.append(mesh.elements + offset)
        subs.append(mesh.subdomains)
        for f in mesh.boundary_faces:
            a, b = mesh.faces[f] + offset
            spec[frozenset((int(a), int(b)))] = BoundaryTag(mesh.face_tags[f])
        offset += mesh.n_vertices
    return build_mesh(np.vstack(verts), np.vstack(elems), np.concatenate(subs), spec)
