"""Point cloud and mesh data handling.

Covers the file formats the tools speak (OFF meshes, plain-text XYZ clouds),
surface sampling, unit-box normalization, random rigid perturbations,
additive noise, and the simulated single-viewpoint visibility filter.

Randomness policy: every random operation takes an explicit integer seed and
draws from a counter-based Philox generator, so results are reproducible
across runs and platforms. Sub-streams are derived with spawn keys rather
than by arithmetic on seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import se3
from .errors import DegenerateCloud, DegenerateMesh, EmptyVisibleSet, ParseError

# Direction of the simulated sensor axis used by the visibility filter.
VIEW_AXIS = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
VIEW_AXIS.setflags(write=False)

# Offset along VIEW_AXIS applied before thresholding depths.
VIEW_OFFSET = 2.0

VISIBILITY_MODES = ("depth", "componentwise")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed``, optionally on a derived sub-stream.

    ``make_rng(s)`` and ``make_rng(s, k)`` are independent streams; the same
    arguments always reproduce the same sequence.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministically derive an independent integer seed from a master seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh: (V, 3) float vertices, (F, 3) int face indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of vertex range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


def _off_tokens(text: str):
    """Yield (token, line_number) for OFF content, skipping comments/blanks."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for tok in body.split():
            yield tok, lineno


def parse_off(text: str) -> TriangleMesh:
    """Parse OFF mesh text.

    Accepts the common header variants: the ``OFF`` keyword on its own line,
    or fused with the counts (``OFF 8 6 0`` on one line). Faces with more
    than three vertices are fanned into triangles.
    """
    toks = _off_tokens(text)

    def take(what: str) -> tuple[str, int]:
        try:
            return next(toks)
        except StopIteration:
            raise ParseError(f"unexpected end of file while reading {what}") from None

    first, lineno = take("header")
    if first.startswith("OFF"):
        rest = first[3:]
        if rest:
            # Header fused directly onto the vertex count, e.g. "OFF8".
            toks = _prepend((rest, lineno), toks)
    else:
        raise ParseError("missing OFF header", lineno)

    def take_int(what: str) -> int:
        tok, ln = take(what)
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"expected integer {what}, got {tok!r}", ln) from None

    def take_float(what: str) -> float:
        tok, ln = take(what)
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"expected number for {what}, got {tok!r}", ln) from None

    n_vertices = take_int("vertex count")
    n_faces = take_int("face count")
    take_int("edge count")

    vertices = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        for j in range(3):
            vertices[i, j] = take_float(f"vertex {i}")

    triangles: list[tuple[int, int, int]] = []
    for i in range(n_faces):
        k = take_int(f"size of face {i}")
        if k < 3:
            raise ParseError(f"face {i} has {k} vertices; need at least 3")
        idx = [take_int(f"index of face {i}") for _ in range(k)]
        for j in idx:
            if not 0 <= j < n_vertices:
                raise ParseError(f"face {i} references vertex {j} of {n_vertices}")
        for a, b in zip(idx[1:-1], idx[2:]):
            triangles.append((idx[0], a, b))

    faces = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(vertices=vertices, faces=faces)


def _prepend(item, iterator):
    yield item
    yield from iterator


def load_off(path) -> TriangleMesh:
    """Read an OFF mesh from a file path."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_off(fh.read())


def parse_xyz(text: str) -> np.ndarray:
    """Parse a plain-text cloud: one ``x y z`` triple per line.

    Blank lines and ``#`` comments are skipped; any other malformed line
    raises ParseError with its line number.
    """
    rows: list[tuple[float, float, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 values, got {len(parts)}", lineno)
        try:
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {body!r}", lineno) from None
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def format_xyz(cloud) -> str:
    """Render a cloud as XYZ text. repr() keeps float64 round-trips exact."""
    cloud = _as_cloud(cloud, allow_empty=True)
    lines = [f"{float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in cloud]
    return "\n".join(lines) + ("\n" if lines else "")


def load_xyz(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_xyz(fh.read())


def save_xyz(path, cloud) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_xyz(cloud))


def _as_cloud(points, allow_empty: bool = False) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {points.shape}")
    if not allow_empty and len(points) == 0:
        raise DegenerateCloud("point cloud is empty")
    return points


def sample_surface(mesh: TriangleMesh, n_points: int, seed: int) -> np.ndarray:
    """Sample n_points uniformly by area from a mesh surface.

    Faces are chosen with probability proportional to area, and points are
    placed uniformly within each chosen triangle via the reflection trick,
    so the density is uniform over the surface regardless of triangulation.
    """
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if len(areas) == 0 or total <= 0.0:
        raise DegenerateMesh("mesh has no faces with positive area")

    rng = make_rng(seed)
    chosen = rng.choice(len(areas), size=n_points, p=areas / total)
    u = rng.random(n_points)
    v = rng.random(n_points)
    # Fold samples from the unit square back into the triangle.
    outside = u + v > 1.0
    u[outside] = 1.0 - u[outside]
    v[outside] = 1.0 - v[outside]
    return (
        a[chosen]
        + u[:, None] * (b[chosen] - a[chosen])
        + v[:, None] * (c[chosen] - a[chosen])
    )


def normalize_unit_box(cloud) -> np.ndarray:
    """Scale and translate a cloud so it sits in [0, 1]^3.

    A single uniform scale is used for all axes, chosen so the longest axis
    spans exactly [0, 1]; each axis is anchored at 0. Raises DegenerateCloud
    when the cloud has zero extent.
    """
    cloud = _as_cloud(cloud)
    mins = cloud.min(axis=0)
    extent = float((cloud.max(axis=0) - mins).max())
    if extent <= 0.0:
        raise DegenerateCloud("cloud has zero extent; cannot normalize")
    return (cloud - mins) / extent


def subtract_mean(cloud) -> tuple[np.ndarray, np.ndarray]:
    """Return (centered cloud, centroid)."""
    cloud = _as_cloud(cloud)
    mean = cloud.mean(axis=0)
    return cloud - mean, mean


@dataclass(frozen=True)
class PerturbationSpec:
    """Range specification for random rigid perturbations.

    Angles are degrees. A draw picks a uniform rotation axis, a uniform
    angle in ``rot_range``, a uniform translation direction, and a uniform
    translation magnitude in ``trans_range``.
    """

    rot_range: tuple[float, float] = (0.0, 45.0)
    trans_range: tuple[float, float] = (0.0, 0.8)
    rng_seed: int = 0

    def __post_init__(self):
        rot_lo, rot_hi = self.rot_range
        trans_lo, trans_hi = self.trans_range
        if not 0.0 <= rot_lo <= rot_hi:
            raise ValueError(f"invalid rotation range {self.rot_range}")
        if rot_hi > 180.0:
            raise ValueError("rotation range upper bound must not exceed 180 degrees")
        if not 0.0 <= trans_lo <= trans_hi:
            raise ValueError(f"invalid translation range {self.trans_range}")


def _random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def random_transform(spec: PerturbationSpec) -> np.ndarray:
    """Draw a random rigid transform from a PerturbationSpec."""
    rng = make_rng(spec.rng_seed)
    axis = _random_unit_vector(rng)
    angle = math.radians(rng.uniform(spec.rot_range[0], spec.rot_range[1]))
    direction = _random_unit_vector(rng)
    magnitude = rng.uniform(spec.trans_range[0], spec.trans_range[1])

    g = se3.exp_map(np.concatenate([axis * angle, np.zeros(3)]))
    g[:3, 3] = direction * magnitude
    return g


def add_gaussian_noise(cloud, sd: float, seed: int) -> np.ndarray:
    """Add iid zero-mean Gaussian noise with the given sd to every coordinate."""
    cloud = _as_cloud(cloud)
    if sd < 0.0:
        raise ValueError("noise sd must be non-negative")
    if sd == 0.0:
        return cloud.copy()
    rng = make_rng(seed)
    return cloud + rng.normal(scale=sd, size=cloud.shape)


def visible_mask(cloud, mode: str = "depth") -> np.ndarray:
    """Boolean mask of points kept by the simulated single-viewpoint sensor.

    The cloud is shifted by VIEW_OFFSET along VIEW_AXIS and points on the
    near side of the mean are kept:

    * ``depth``: keep points whose depth along VIEW_AXIS is strictly below
      the mean depth. Because a common shift cancels on both sides of the
      comparison, this selection depends only on the shape of the cloud,
      not on where it sits.
    * ``componentwise``: keep points strictly below the per-axis mean on all
      three coordinates simultaneously (a stricter corner-like cut).
    """
    cloud = _as_cloud(cloud)
    if mode not in VISIBILITY_MODES:
        raise ValueError(f"unknown visibility mode {mode!r}; use one of {VISIBILITY_MODES}")
    shifted = cloud + VIEW_OFFSET * VIEW_AXIS
    if mode == "depth":
        depth = shifted @ VIEW_AXIS
        keep = depth < depth.mean()
    else:
        keep = np.all(shifted < shifted.mean(axis=0), axis=1)
    if not keep.any():
        raise EmptyVisibleSet(f"visibility mode {mode!r} removed every point")
    return keep


def visible_subset(cloud, mode: str = "depth") -> np.ndarray:
    """The subset of a cloud kept by the visibility filter (see visible_mask)."""
    cloud = _as_cloud(cloud)
    return cloud[visible_mask(cloud, mode)]


def box_mesh(extents=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Axis-aligned box with one corner at the origin and the given extents."""
    ex, ey, ez = (float(e) for e in extents)
    if min(ex, ey, ez) <= 0.0:
        raise ValueError("box extents must be positive")
    corners = np.array([
        [0, 0, 0], [ex, 0, 0], [0, ey, 0], [ex, ey, 0],
        [0, 0, ez], [ex, 0, ez], [0, ey, ez], [ex, ey, ez],
    ], dtype=float)
    quads = [
        (0, 1, 3, 2),  # bottom
        (4, 6, 7, 5),  # top
        (0, 4, 5, 1),  # front
        (2, 3, 7, 6),  # back
        (0, 2, 6, 4),  # left
        (1, 5, 7, 3),  # right
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriangleMesh(vertices=corners, faces=np.asarray(faces, dtype=np.int64))


def blob_mesh(seed: int = 7, subdivisions: int = 2) -> TriangleMesh:
    """Lumpy closed surface: a subdivided icosahedron with radial bumps.

    Useful as a generic asymmetric test shape; the bump field breaks every
    rotational symmetry so registration problems built on it have unique
    answers.
    """
    vertices, faces = _icosphere(subdivisions)
    rng = make_rng(seed)
    coeff = rng.normal(scale=0.06, size=(3, 3, 3))
    radial = 1.0 + np.einsum(
        "ijk,ni,nj,nk->n",
        coeff,
        np.stack([np.ones(len(vertices)), vertices[:, 0], vertices[:, 1]], axis=1),
        np.stack([np.ones(len(vertices)), vertices[:, 1], vertices[:, 2]], axis=1),
        np.stack([np.ones(len(vertices)), vertices[:, 2], vertices[:, 0]], axis=1),
    )
    radial = np.clip(radial, 0.5, 1.5)
    stretched = vertices * radial[:, None] * np.array([1.0, 0.8, 0.6])
    return TriangleMesh(vertices=stretched, faces=faces)


def _icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    vert_list = [tuple(v) for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = np.asarray(vert_list[i]) + np.asarray(vert_list[j])
            m /= np.linalg.norm(m)
            cache[key] = len(vert_list)
            vert_list.append(tuple(m))
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.asarray(vert_list, dtype=float), np.asarray(faces, dtype=np.int64)


def format_off(mesh: TriangleMesh) -> str:
    """Render a mesh as OFF text."""
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [f"{float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"3 {int(a)} {int(b)} {int(c)}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def save_off(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_off(mesh))
