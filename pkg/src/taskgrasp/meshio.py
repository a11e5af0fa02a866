"""OBJ and binary little-endian PLY mesh loading/saving."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .geometry import GeometryError, TriMesh


class MeshFormatError(GeometryError):
    pass


def load_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise MeshFormatError(f"{path}: no vertices")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    atomic_write_text(path, "\n".join(lines) + "\n")


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def load_ply(path) -> TriMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n") :]
    if "format binary_little_endian 1.0" not in header:
        raise MeshFormatError(f"{path}: only binary_little_endian PLY is supported")
    elements: list[tuple[str, int, list]] = []
    for line in header:
        parts = line.split()
        if parts[:1] == ["element"]:
            elements.append((parts[1], int(parts[2]), []))
        elif parts[:1] == ["property"] and elements:
            elements[-1][2].append(parts[1:])
    pos = 0
    verts = faces = None
    for name, count, props in elements:
        if name == "vertex":
            fmt = "<" + "".join(_PLY_TYPES[p[0]] for p in props)
            size = struct.calcsize(fmt)
            names = [p[-1] for p in props]
            rows = [struct.unpack_from(fmt, body, pos + i * size) for i in range(count)]
            pos += count * size
            arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
            verts = arr[:, [names.index("x"), names.index("y"), names.index("z")]]
        elif name == "face":
            prop = props[0]
            if prop[0] != "list":
                raise MeshFormatError(f"{path}: face element must be a list property")
            cfmt, ifmt = "<" + _PLY_TYPES[prop[1]], "<" + _PLY_TYPES[prop[2]]
            csize, isize = struct.calcsize(cfmt), struct.calcsize(ifmt)
            out = []
            for _ in range(count):
                (n,) = struct.unpack_from(cfmt, body, pos)
                pos += csize
                idx = struct.unpack_from("<" + _PLY_TYPES[prop[2]] * n, body, pos)
                pos += n * isize
                for k in range(1, n - 1):
                    out.append([idx[0], idx[k], idx[k + 1]])
            faces = np.array(out, dtype=np.int64).reshape(-1, 3)
        else:
            fmt = "<" + "".join(_PLY_TYPES[p[0]] for p in props)
            pos += count * struct.calcsize(fmt)
    if verts is None:
        raise MeshFormatError(f"{path}: no vertex element")
    return TriMesh(verts, faces if faces is not None else np.zeros((0, 3), np.int64))


def save_ply(path, mesh: TriMesh) -> None:
    head = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    body = mesh.vertices.astype("<f4").tobytes()
    fb = np.empty(len(mesh.faces), dtype=[("n", "u1"), ("i", "<i4", 3)])
    fb["n"] = 3
    fb["i"] = mesh.faces
    from .container import atomic_write_bytes

    atomic_write_bytes(path, head + body + fb.tobytes())


def load_mesh(path, require_watertight: bool = False) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        mesh = load_obj(path)
    elif suffix == ".ply":
        mesh = load_ply(path)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh format {suffix!r}")
    if require_watertight and not mesh.watertight:
        raise MeshFormatError(f"{path}: mesh has non-manifold or open edges")
    return mesh
