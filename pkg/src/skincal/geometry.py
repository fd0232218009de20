"""Taxel layouts, triangulated skin meshes and piecewise-linear pressure fields.

A skin patch is described in a flat (u, v) parameter plane measured in meters.
Taxel centers are triangulated (Delaunay) and the resulting facets carry the
pressure interpolant and the surface normals used for force integration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import DegenerateLayout, OutOfDomain, ParseError

TAXELS_PER_MODULE = 10
LAYOUT_VERSION = 1

# slot -> (column, row) on the 4/3/2/1 lattice; row 0 is the module base
_SLOT_LATTICE = [(c, r) for r in range(4) for c in range(4 - r)]


@dataclass(frozen=True)
class TriangleModule:
    module_id: int
    origin: tuple[float, float]
    orientation: float = 0.0
    cut_mask: tuple[bool, ...] = (False,) * TAXELS_PER_MODULE

    def __post_init__(self):
        object.__setattr__(self, "orientation", float(self.orientation) % (2.0 * math.pi))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        mask = tuple(bool(b) for b in self.cut_mask)
        if len(mask) != TAXELS_PER_MODULE:
            raise DegenerateLayout(
                f"module {self.module_id}: cut_mask needs {TAXELS_PER_MODULE} entries, got {len(mask)}"
            )
        object.__setattr__(self, "cut_mask", mask)


@dataclass(frozen=True)
class TaxelLayout:
    triangles: tuple[TriangleModule, ...]
    units_per_side: float

    def __post_init__(self):
        object.__setattr__(self, "triangles", tuple(self.triangles))
        ids = [t.module_id for t in self.triangles]
        if len(set(ids)) != len(ids):
            raise DegenerateLayout(f"duplicate module ids in layout: {sorted(ids)}")

    @property
    def n_taxels(self) -> int:
        return TAXELS_PER_MODULE * len(self.triangles)

    def taxel_positions(self) -> np.ndarray:
        """(u, v) of every taxel, ids assigned module by module in slot order."""
        local = canonical_module_positions(self.units_per_side)
        out = np.empty((self.n_taxels, 2))
        for k, tri in enumerate(self.triangles):
            c, s = math.cos(tri.orientation), math.sin(tri.orientation)
            rot = np.array([[c, -s], [s, c]])
            out[k * 10:(k + 1) * 10] = local @ rot.T + np.asarray(tri.origin)
        return out

    def cut_flags(self) -> np.ndarray:
        return np.array([b for tri in self.triangles for b in tri.cut_mask], dtype=bool)

    def module_ids(self) -> list[int]:
        return [tri.module_id for tri in self.triangles]


def canonical_module_positions(side: float) -> np.ndarray:
    """Ten taxel centers of one module in its local frame.

    The module outline is the triangle (0,0), (side,0), (side/2, side*sqrt(3)/2).
    Taxels sit on a 4/3/2/1 triangular lattice of pitch side/4 whose outline
    shares the module centroid, so neighbouring modules never share a taxel.
    """
    pitch = side / 4.0
    height = side * math.sqrt(3.0) / 2.0
    centroid = np.array([side / 2.0, height / 3.0])
    # base-left lattice corner: module corner pulled 25% toward the centroid
    corner = 0.25 * centroid
    e1 = np.array([pitch, 0.0])
    e2 = np.array([pitch / 2.0, pitch * math.sqrt(3.0) / 2.0])
    return np.array([corner + c * e1 + r * e2 for c, r in _SLOT_LATTICE])


def strip_layout(rows: list[int], side: float = 0.03, cut: dict[int, list[int]] | None = None) -> TaxelLayout:
    """Tile modules in rows of alternating up/down triangles (a parallelogram band).

    ``rows`` gives the number of modules per row; ``cut`` maps module id to the
    slots that are flagged cut.
    """
    cut = cut or {}
    height = side * math.sqrt(3.0) / 2.0
    tris = []
    mid = 0
    for r, count in enumerate(rows):
        shift = r * side / 2.0
        for k in range(count):
            m = k // 2
            if k % 2 == 0:
                origin, orient = (m * side + shift, r * height), 0.0
            else:
                origin, orient = (m * side + 1.5 * side + shift, r * height + height), math.pi
            mask = [False] * TAXELS_PER_MODULE
            for slot in cut.get(mid, ()):
                mask[slot] = True
            tris.append(TriangleModule(mid, origin, orient, tuple(mask)))
            mid += 1
    return TaxelLayout(tuple(tris), side)


def forearm_layout(side: float = 0.03) -> TaxelLayout:
    """Default 23-module (230 taxel) forearm-scale patch.

    The four base taxels of the up-facing modules on the bottom row are cut.
    """
    rows = [8, 8, 7]
    cut = {mid: [0, 1, 2, 3] for mid in range(0, rows[0], 2)}
    return strip_layout(rows, side, cut)


@dataclass(frozen=True)
class PatchFrame:
    """Rigid transform placing the (u, v) plane in 3-D: x = R @ (u, v, 0) + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ValueError("patch frame rotation must be a proper rotation matrix")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    def apply(self, points3: np.ndarray) -> np.ndarray:
        return points3 @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class SkinMesh:
    taxel_positions: np.ndarray   # (N, 2) u, v
    facets: np.ndarray            # (M, 3) vertex indices, counter-clockwise in (u, v)
    normals: np.ndarray           # (M, 3) unit vectors
    areas: np.ndarray             # (M,) m^2, measured on the 3-D facet
    patch_frame: PatchFrame
    cut: np.ndarray               # (N,) bool
    vertices3d: np.ndarray        # (N, 3)

    @property
    def n_taxels(self) -> int:
        return len(self.taxel_positions)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    def total_area(self) -> float:
        return float(self.areas.sum())

    def vertex_areas(self) -> np.ndarray:
        """Median-dual (tributary) area of every taxel: one third of each adjacent facet."""
        out = np.zeros(self.n_taxels)
        np.add.at(out, self.facets.ravel(), np.repeat(self.areas / 3.0, 3))
        return out

    def geometry_hash(self) -> str:
        """Stable hex digest of the (u, v) taxel positions and the facet list."""
        cached = self.__dict__.get("_hash")
        if cached is not None:
            return cached
        payload = {
            "positions": [[f"{u:.12e}", f"{v:.12e}"] for u, v in self.taxel_positions],
            "facets": self.facets.tolist(),
        }
        blob = json.dumps(payload, separators=(",", ":")).encode()
        digest = hashlib.sha256(blob).hexdigest()
        object.__setattr__(self, "_hash", digest)
        return digest

    def with_frame(self, frame: PatchFrame) -> "SkinMesh":
        heights = self._heights()
        return _assemble(self.taxel_positions, self.facets, frame, self.cut, heights)

    def _heights(self) -> np.ndarray:
        local = (self.vertices3d - self.patch_frame.translation) @ self.patch_frame.rotation
        return local[:, 2]


def _assemble(positions, facets, frame, cut, heights) -> SkinMesh:
    local = np.column_stack([positions, heights])
    verts = frame.apply(local)
    a, b, c = (verts[facets[:, k]] for k in range(3))
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=1)
    normals = cross / norm[:, None]
    areas = 0.5 * norm
    arrays = [positions, facets, normals, areas, cut, verts]
    for arr in arrays:
        arr.setflags(write=False)
    return SkinMesh(positions, facets, normals, areas, frame, cut, verts)


def build_mesh(layout: TaxelLayout, frame: PatchFrame | None = None,
               heights: np.ndarray | None = None) -> SkinMesh:
    """Triangulate the taxel centers of ``layout``.

    ``heights`` optionally displaces each taxel along the patch normal to model
    a gently curved patch; facet normals then follow the displaced facets.
    """
    if layout.n_taxels == 0:
        raise DegenerateLayout("layout has no taxels")
    pos = layout.taxel_positions()
    return mesh_from_points(pos, layout.cut_flags(), frame, heights)


def mesh_from_points(positions, cut=None, frame: PatchFrame | None = None,
                     heights=None) -> SkinMesh:
    pos = np.array(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    if n < 3:
        raise DegenerateLayout(f"need at least 3 taxels, got {n}")
    scale = float(np.ptp(pos, axis=0).max())
    if scale <= 0.0:
        raise DegenerateLayout("all taxels coincide")
    # coincident taxels: compare on a grid far below any physical pitch
    keys = np.round(pos / (scale * 1e-9)).astype(np.int64)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    if (counts > 1).any():
        raise DegenerateLayout(f"coincident taxels near index {int(first[counts > 1][0])}")
    try:
        tri = Delaunay(pos)
    except Exception as exc:  # qhull raises on fully collinear input
        raise DegenerateLayout(f"taxels cannot be triangulated: {exc}") from exc
    facets = np.asarray(tri.simplices, dtype=np.int64)
    a, b, c = (pos[facets[:, k]] for k in range(3))
    signed = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    flip = signed < 0
    facets[flip] = facets[flip][:, [0, 2, 1]]
    # qhull can emit flat slivers on co-circular input; they carry no area
    keep = np.abs(signed) > 1e-12 * scale * scale
    facets = facets[keep]
    if len(facets) == 0:
        raise DegenerateLayout("taxels are collinear")
    cut = np.zeros(n, dtype=bool) if cut is None else np.array(cut, dtype=bool)
    heights = np.zeros(n) if heights is None else np.array(heights, dtype=float)
    return _assemble(pos, facets, frame or PatchFrame(), cut, heights)


def facet_area_normal(mesh: SkinMesh, facet_index: int) -> tuple[float, np.ndarray]:
    if not 0 <= facet_index < mesh.n_facets:
        raise IndexError(f"facet index {facet_index} out of range [0, {mesh.n_facets})")
    return float(mesh.areas[facet_index]), mesh.normals[facet_index].copy()


def barycentric(mesh: SkinMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Locate (u, v) points; returns (facet index, barycentric weights).

    Raises OutOfDomain if any point lies outside every facet.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pos = mesh.taxel_positions
    a = pos[mesh.facets[:, 0]]
    b = pos[mesh.facets[:, 1]]
    c = pos[mesh.facets[:, 2]]
    d = (b[:, 1] - c[:, 1]) * (a[:, 0] - c[:, 0]) + (c[:, 0] - b[:, 0]) * (a[:, 1] - c[:, 1])
    dx = pts[:, None, 0] - c[None, :, 0]
    dy = pts[:, None, 1] - c[None, :, 1]
    l1 = ((b[:, 1] - c[:, 1]) * dx + (c[:, 0] - b[:, 0]) * dy) / d
    l2 = ((c[:, 1] - a[:, 1]) * dx + (a[:, 0] - c[:, 0]) * dy) / d
    l3 = 1.0 - l1 - l2
    lam = np.stack([l1, l2, l3], axis=-1)          # (P, M, 3)
    worst = lam.min(axis=-1)                        # most negative weight per facet
    idx = worst.argmax(axis=1)
    best = worst[np.arange(len(pts)), idx]
    if (best < -1e-9).any():
        bad = pts[int(np.argmin(best))]
        raise OutOfDomain(f"point ({bad[0]:.6g}, {bad[1]:.6g}) lies outside the skin mesh")
    return idx, lam[np.arange(len(pts)), idx]


def interpolate_pressure(mesh: SkinMesh, taxel_pressures, point) -> float | np.ndarray:
    """Piecewise-linear pressure at ``point`` (a single (u, v) or an array of them)."""
    p = np.asarray(taxel_pressures, dtype=float)
    if p.shape != (mesh.n_taxels,):
        raise ValueError(f"expected {mesh.n_taxels} taxel pressures, got shape {p.shape}")
    single = np.ndim(point) == 1
    idx, lam = barycentric(mesh, point)
    vals = np.einsum("pk,pk->p", lam, p[mesh.facets[idx]])
    return float(vals[0]) if single else vals


# --- circular footprints -------------------------------------------------

def _segment_in_circle(ax, ay, bx, by, r):
    """Signed area of disk(0, r) intersected with triangle (0, A, B)."""
    def sector(px, py, qx, qy):
        return 0.5 * r * r * math.atan2(px * qy - py * qx, px * qx + py * qy)

    def tri(px, py, qx, qy):
        return 0.5 * (px * qy - py * qx)

    dx, dy = bx - ax, by - ay
    qa = dx * dx + dy * dy
    if qa == 0.0:
        return 0.0
    qb = 2.0 * (ax * dx + ay * dy)
    qc = ax * ax + ay * ay - r * r
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return sector(ax, ay, bx, by)
    sq = math.sqrt(disc)
    t1 = max(0.0, min(1.0, (-qb - sq) / (2.0 * qa)))
    t2 = max(0.0, min(1.0, (-qb + sq) / (2.0 * qa)))
    # clamped ends must be the exact vertices; rounding residue next to the
    # center would otherwise give an arbitrary sector angle
    p1 = (ax, ay) if t1 == 0.0 else (bx, by) if t1 == 1.0 else (ax + t1 * dx, ay + t1 * dy)
    p2 = (ax, ay) if t2 == 0.0 else (bx, by) if t2 == 1.0 else (ax + t2 * dx, ay + t2 * dy)
    return sector(ax, ay, *p1) + tri(*p1, *p2) + sector(*p2, bx, by)


def polygon_disk_area(polygon, center, radius) -> float:
    """Exact area of a simple polygon intersected with a disk."""
    cx, cy = center
    pts = [(x - cx, y - cy) for x, y in polygon]
    total = 0.0
    for (ax, ay), (bx, by) in zip(pts, pts[1:] + pts[:1]):
        total += _segment_in_circle(ax, ay, bx, by, radius)
    return abs(total)


def disk_coverage(mesh: SkinMesh, center, radius) -> np.ndarray:
    """Covered area of each taxel's median-dual cell by a disk, in m^2 (parameter plane)."""
    pos = mesh.taxel_positions
    covered = np.zeros(mesh.n_taxels)
    cx, cy = center
    for f in mesh.facets:
        v = pos[f]
        lo, hi = v.min(axis=0), v.max(axis=0)
        if lo[0] > cx + radius or hi[0] < cx - radius or lo[1] > cy + radius or hi[1] < cy - radius:
            continue
        g = v.mean(axis=0)
        for k in range(3):
            a, b, c = v[k], v[(k + 1) % 3], v[(k + 2) % 3]
            quad = [tuple(a), tuple((a + b) / 2), tuple(g), tuple((a + c) / 2)]
            covered[f[k]] += polygon_disk_area(quad, center, radius)
    return covered


def parameter_vertex_areas(mesh: SkinMesh) -> np.ndarray:
    """Median-dual areas measured in the flat (u, v) plane."""
    pos = mesh.taxel_positions
    a, b, c = (pos[mesh.facets[:, k]] for k in range(3))
    area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    out = np.zeros(mesh.n_taxels)
    np.add.at(out, mesh.facets.ravel(), np.repeat(area / 3.0, 3))
    return out


# --- layout files ----------------------------------------------------------

def layout_to_dict(layout: TaxelLayout) -> dict:
    return {
        "version": LAYOUT_VERSION,
        "units_per_side": layout.units_per_side,
        "triangles": [
            {
                "id": t.module_id,
                "origin": list(t.origin),
                "orientation": t.orientation,
                "cut_mask": list(t.cut_mask),
            }
            for t in layout.triangles
        ],
    }


def layout_from_dict(doc: dict) -> TaxelLayout:
    if doc.get("version") != LAYOUT_VERSION:
        raise ParseError(f"unsupported layout version {doc.get('version')!r}")
    try:
        tris = [
            TriangleModule(int(t["id"]), tuple(t["origin"]), float(t["orientation"]), tuple(t["cut_mask"]))
            for t in doc["triangles"]
        ]
        return TaxelLayout(tuple(tris), float(doc["units_per_side"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad layout document: {exc}") from exc


def save_layout(layout: TaxelLayout, path) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout), indent=2) + "\n", encoding="utf-8")


def load_layout(path) -> TaxelLayout:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), exc.lineno) from exc
    return layout_from_dict(doc)
