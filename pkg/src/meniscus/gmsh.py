"""Reader and writer for a subset of the ASCII Gmsh MSH 2.2 format.

Supported blocks are ``$MeshFormat``, ``$PhysicalNames``, ``$Nodes`` and
``$Elements``; element types 1 (2-node line) and 2 (3-node triangle).
Other element types are skipped. The first tag of an element is its
physical group.

Physical groups are resolved by name when ``$PhysicalNames`` is present:
triangle groups named ``porous``/``Omega_p`` or ``fluid``/``Omega_f`` give
the subdomain, line groups named after a :class:`BoundaryTag` member give
the boundary tag. Without names the numeric convention is: triangle group
1 porous, 2 fluid; line group ``n`` is ``BoundaryTag(n)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import INTERIOR, BoundaryTag, Mesh, MeshError, Subdomain, build_mesh

_SUBDOMAIN_NAMES = {
    "porous": Subdomain.POROUS, "omega_p": Subdomain.POROUS,
    "fluid": Subdomain.FLUID, "omega_f": Subdomain.FLUID,
}
_SUBDOMAIN_IDS = {Subdomain.POROUS: 1, Subdomain.FLUID: 2}
_TAG_ID_OFFSET = 10  # keeps line groups clear of the triangle group ids


def _sections(lines):
    out, i = {}, 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise MeshError(f"unterminated ${name} block at line {i + 1}")
            out[name] = (i + 2, lines[i + 1:j])
            i = j + 1
        else:
            i += 1
    return out


def read_msh(path) -> Mesh:
    lines = Path(path).read_text().splitlines()
    sec = _sections(lines)
    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in sec:
            raise MeshError(f"missing ${required} block")
    version = sec["MeshFormat"][1][0].split()
    if not version[0].startswith("2.2") or version[1] != "0":
        raise MeshError(f"only ASCII MSH 2.2 is supported, got version {version[0]}")

    names = {}
    if "PhysicalNames" in sec:
        for raw in sec["PhysicalNames"][1][1:]:
            dim, tag, name = raw.split(maxsplit=2)
            names[(int(dim), int(tag))] = name.strip().strip('"')

    first, body = sec["Nodes"]
    n = int(body[0])
    node_ids = np.empty(n, dtype=np.int64)
    coords = np.empty((n, 2))
    for k, raw in enumerate(body[1:n + 1]):
        parts = raw.split()
        node_ids[k] = int(parts[0])
        coords[k] = float(parts[1]), float(parts[2])
    index = {int(nid): k for k, nid in enumerate(node_ids)}

    tris, subs, lines_tagged = [], [], {}
    first, body = sec["Elements"]
    for offset, raw in enumerate(body[1:int(body[0]) + 1]):
        parts = [int(p) for p in raw.split()]
        etype, ntags = parts[1], parts[2]
        phys = parts[3] if ntags else 0
        nodes = parts[3 + ntags:]
        try:
            local = [index[v] for v in nodes]
        except KeyError as exc:
            raise MeshError(f"line {first + 1 + offset}: unknown node {exc.args[0]}") from None
        if etype == 2:
            tris.append(local[:3])
            subs.append(_subdomain_for(phys, names))
        elif etype == 1:
            lines_tagged[frozenset(local[:2])] = _tag_for(phys, names)
    if not tris:
        raise MeshError("no triangles in $Elements")
    return build_mesh(coords, tris, subs, lines_tagged, reorient=True)


def _subdomain_for(phys, names):
    name = names.get((2, phys))
    if name is not None:
        try:
            return _SUBDOMAIN_NAMES[name.lower()]
        except KeyError:
            raise MeshError(f"unknown subdomain name {name!r}") from None
    return Subdomain.FLUID if phys == 2 else Subdomain.POROUS


def _tag_for(phys, names):
    name = names.get((1, phys))
    if name is not None:
        try:
            return BoundaryTag[name]
        except KeyError:
            raise MeshError(f"unknown boundary tag name {name!r}") from None
    try:
        return BoundaryTag(phys - _TAG_ID_OFFSET if phys >= _TAG_ID_OFFSET else phys)
    except ValueError:
        raise MeshError(f"line physical group {phys} does not map to a boundary tag") from None


def write_msh(mesh: Mesh, path) -> None:
    """Write ``mesh`` with named physical groups for subdomains and tags."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames"]
    groups = [(2, _SUBDOMAIN_IDS[Subdomain(s)], "Omega_p" if s == 0 else "Omega_f")
              for s in np.unique(mesh.subdomains)]
    tags = sorted({int(t) for t in mesh.face_tags if t != INTERIOR})
    groups += [(1, t + _TAG_ID_OFFSET, BoundaryTag(t).name) for t in tags]
    out.append(str(len(groups)))
    out += [f'{d} {i} "{name}"' for d, i, name in groups]
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x!r} {y!r} 0" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements"]
    tagged = np.flatnonzero(mesh.face_tags != INTERIOR)
    out.append(str(len(tagged) + mesh.n_elements))
    k = 1
    for f in tagged:
        a, b = mesh.faces[f] + 1
        g = int(mesh.face_tags[f]) + _TAG_ID_OFFSET
        out.append(f"{k} 1 2 {g} {g} {a} {b}")
        k += 1
    for e, (a, b, c) in enumerate(mesh.elements + 1):
        g = _SUBDOMAIN_IDS[Subdomain(mesh.subdomains[e])]
        out.append(f"{k} 2 2 {g} {g} {a} {b} {c}")
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")
