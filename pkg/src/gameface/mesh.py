"""Triangle-mesh representation, OBJ I/O, normals, and similarity alignment.

Conventions:
  * vertices are float64 ``(N, 3)`` arrays in model units,
  * triangles are int64 ``(T, 3)`` arrays of 0-based vertex indices,
  * UVs are per-vertex float64 ``(N, 2)`` arrays in [0, 1]^2 (``None`` when
    the source file carries no texture coordinates).

OBJ files with per-corner UVs are normalized on load: a vertex referenced
with two different ``vt`` indices is duplicated so that every vertex owns a
single UV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import ParseError, ValidationError

_UNIT_TOL = 1e-6


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= n:
                raise ValidationError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValidationError("triangle with repeated vertex index")
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
            if len(self.uvs) != n:
                raise ValidationError("uv count differs from vertex count")
            if self.uvs.size and (self.uvs.min() < 0.0 or self.uvs.max() > 1.0):
                raise ValidationError("uv coordinates outside [0, 1]")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValidationError("normal count differs from vertex count")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > _UNIT_TOL):
                raise ValidationError("normals are not unit length")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def diameter(self) -> float:
        """Length of the bounding-box diagonal."""
        if not len(self.vertices):
            return 0.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass
class LandmarkCorrespondence:
    """Paired vertex indices: ``pairs[k] = (source index, target index)``.

    Source indexes the morphable-model mesh, target the game mesh.
    """

    pairs: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(np.unique(self.pairs[:, 0])) != len(self.pairs):
            raise ValidationError("duplicate source landmark index")
        if len(np.unique(self.pairs[:, 1])) != len(self.pairs):
            raise ValidationError("duplicate target landmark index")

    @property
    def count(self) -> int:
        return len(self.pairs)

    @property
    def source_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    def validate_for(self, source_vertex_count: int, target_vertex_count: int) -> None:
        if self.pairs.size == 0:
            raise ValidationError("empty landmark correspondence")
        if self.pairs[:, 0].min() < 0 or self.pairs[:, 0].max() >= source_vertex_count:
            raise ValidationError("source landmark index out of range")
        if self.pairs[:, 1].min() < 0 or self.pairs[:, 1].max() >= target_vertex_count:
            raise ValidationError("target landmark index out of range")


def load_landmarks(path: str | Path) -> LandmarkCorrespondence:
    """Read a landmark-pair file: ``{"pairs": [[src, dst], ...]}``."""
    with open(path, "rb") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "pairs" not in data:
        raise ValidationError(f"{path}: expected an object with a 'pairs' key")
    return LandmarkCorrespondence(np.asarray(data["pairs"]))


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.scale = float(self.scale)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValidationError("rotation is not orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ValidationError("rotation has negative determinant")

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))


def _parse_face_corner(token: str, n_vertices: int, n_uvs: int, line_no: int):
    """Return (vertex index, uv index or None), both 0-based."""
    parts = token.split("/")
    try:
        vi = int(parts[0])
    except ValueError:
        raise ParseError(f"bad face token {token!r}", line_no) from None
    if vi < 0:
        vi += n_vertices + 1
    if not 1 <= vi <= n_vertices:
        raise ValidationError(f"line {line_no}: vertex index {parts[0]} out of range")
    ti = None
    if len(parts) > 1 and parts[1]:
        try:
            ti = int(parts[1])
        except ValueError:
            raise ParseError(f"bad face token {token!r}", line_no) from None
        if ti < 0:
            ti += n_uvs + 1
        if not 1 <= ti <= n_uvs:
            raise ValidationError(f"line {line_no}: uv index {parts[1]} out of range")
        ti -= 1
    return vi - 1, ti


def load_obj(source: IO[bytes] | IO[str] | str | Path) -> Mesh:
    """Parse an ASCII OBJ stream or file into a :class:`Mesh`.

    Supports ``v``, ``vt`` and ``f`` records with ``v``, ``v/vt``, ``v//vn``
    and ``v/vt/vn`` corner syntax; polygons are fan-triangulated. Vertices
    referenced with conflicting ``vt`` indices are duplicated so UVs become
    per-vertex.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="ascii", errors="replace") as fh:
            lines = fh.readlines()
    else:
        raw = source.read()
        if isinstance(raw, bytes):
            raw = raw.decode("ascii", errors="replace")
        lines = raw.splitlines()

    positions: list[tuple[float, float, float]] = []
    texcoords: list[tuple[float, float]] = []
    corners: list[tuple[int, int, int | None, int | None, int | None, int | None]] = []
    face_tokens: list[tuple[int, list[str]]] = []

    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        tag = fields[0]
        if tag == "v":
            if len(fields) < 4:
                raise ParseError("vertex record needs 3 coordinates", line_no)
            try:
                positions.append((float(fields[1]), float(fields[2]), float(fields[3])))
            except ValueError:
                raise ParseError("non-numeric vertex coordinate", line_no) from None
        elif tag == "vt":
            if len(fields) < 3:
                raise ParseError("texture record needs 2 coordinates", line_no)
            try:
                texcoords.append((float(fields[1]), float(fields[2])))
            except ValueError:
                raise ParseError("non-numeric texture coordinate", line_no) from None
        elif tag == "f":
            if len(fields) < 4:
                raise ParseError("face record needs at least 3 corners", line_no)
            face_tokens.append((line_no, fields[1:]))
        # vn, o, g, s, usemtl, mtllib records are ignored.

    n_v, n_t = len(positions), len(texcoords)
    vertices = [np.array(p) for p in positions]
    uv_of_vertex: list[int | None] = [None] * n_v
    remap: dict[tuple[int, int], int] = {}
    triangles: list[tuple[int, int, int]] = []
    has_uvs = n_t > 0

    def resolve(vi: int, ti: int | None) -> int:
        if ti is None:
            return vi
        if uv_of_vertex[vi] is None:
            uv_of_vertex[vi] = ti
            return vi
        if uv_of_vertex[vi] == ti:
            return vi
        key = (vi, ti)
        if key not in remap:
            vertices.append(vertices[vi].copy())
            uv_of_vertex.append(ti)
            remap[key] = len(vertices) - 1
        return remap[key]

    for line_no, tokens in face_tokens:
        resolved = [resolve(*_parse_face_corner(t, n_v, n_t, line_no)) for t in tokens]
        for k in range(1, len(resolved) - 1):
            tri = (resolved[0], resolved[k], resolved[k + 1])
            if len(set(tri)) < 3:
                raise ValidationError(f"line {line_no}: degenerate face corner repetition")
            triangles.append(tri)

    uvs = None
    if has_uvs:
        uvs = np.zeros((len(vertices), 2))
        for i, ti in enumerate(uv_of_vertex):
            if ti is not None:
                uvs[i] = texcoords[ti]

    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        triangles=np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
        uvs=uvs,
    )


def save_obj(mesh: Mesh, target: IO[str] | str | Path) -> None:
    """Write an ASCII OBJ with full float precision (round-trip safe)."""

    def emit(fh: IO[str]) -> None:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        if mesh.uvs is not None:
            for uv in mesh.uvs:
                fh.write(f"vt {uv[0]:.17g} {uv[1]:.17g}\n")
            for t in mesh.triangles:
                fh.write(f"f {t[0]+1}/{t[0]+1} {t[1]+1}/{t[1]+1} {t[2]+1}/{t[2]+1}\n")
        else:
            for t in mesh.triangles:
                fh.write(f"f {t[0]+1} {t[1]+1} {t[2]+1}\n")

    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="ascii", newline="\n") as fh:
            emit(fh)
    else:
        emit(target)


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted per-vertex normals; degenerate accumulations fall back to +Z."""
    if mesh.triangle_count < 1:
        raise ValidationError("mesh has no triangles")
    v = mesh.vertices
    t = mesh.triangles
    # Cross product magnitude is twice the triangle area, so summing raw
    # cross products area-weights the average for free.
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], face_n)
    lengths = np.linalg.norm(acc, axis=1)
    degenerate = lengths < 1e-20
    acc[degenerate] = (0.0, 0.0, 1.0)
    lengths[degenerate] = 1.0
    return acc / lengths[:, None]


def procrustes_align(
    source: np.ndarray, target: np.ndarray, with_scale: bool = True
) -> SimilarityTransform:
    """Closed-form similarity transform minimizing sum ||s R x + t - y||^2.

    Reflections are excluded by flipping the sign of the smallest singular
    vector when the cross-covariance has negative determinant.
    """
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if source.shape != target.shape:
        raise ValidationError("source and target point counts differ")
    n = len(source)
    if n < 3:
        raise ValidationError("need at least 3 point pairs")

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t

    cov = xt.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    scale_span = max(np.linalg.norm(xs, axis=1).max(), 1e-300)
    if d[1] <= 1e-12 * scale_span**2:
        raise ValidationError("degenerate (collinear or coincident) point configuration")

    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rotation = u @ np.diag(sign) @ vt

    if with_scale:
        var_s = (xs**2).sum() / n
        scale = float((d * sign).sum() / var_s)
        if scale <= 0:
            raise ValidationError("degenerate configuration: non-positive scale")
    else:
        scale = 1.0
    translation = mu_t - scale * rotation @ mu_s
    return SimilarityTransform(scale, rotation, translation)
