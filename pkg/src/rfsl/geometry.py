"""Scene geometry: perimeter networks, body footprints and Fresnel regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from .errors import InvalidSpacingError

SPEED_OF_LIGHT = 299_792_458.0


def wavelength_of(frequency_hz: float) -> float:
    return SPEED_OF_LIGHT / frequency_hz


@dataclass(frozen=True)
class TargetParams:
    """Pose and body size of one subject standing on the floor."""

    x: float
    y: float
    orientation: float
    height: float
    width_ap: float
    width_lat: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("target height must be positive")
        if self.width_lat < 0 or self.width_ap < 0:
            raise ValueError("target widths must be non-negative")
        if self.width_lat > self.width_ap:
            raise ValueError("lateral width cannot exceed anteroposterior width")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SubjectProfile:
    name: str
    height: float
    width_ap: float
    width_lat: float

    def place(self, x: float, y: float, orientation: float = 0.0) -> TargetParams:
        return TargetParams(x, y, orientation, self.height, self.width_ap, self.width_lat)


SUBJECTS = {
    "A": SubjectProfile("A", 2.0, 0.65, 0.25),
    "B": SubjectProfile("B", 1.6, 0.55, 0.25),
    "C": SubjectProfile("C", 1.4, 0.55, 0.25),
}


@dataclass(frozen=True)
class Ellipse2D:
    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    azimuth: float

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        c, s = math.cos(self.azimuth), math.sin(self.azimuth)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        if self.semi_minor == 0:
            return (v == 0) & (np.abs(u) <= self.semi_major)
        return (u / self.semi_major) ** 2 + (v / self.semi_minor) ** 2 <= 1.0


@dataclass(frozen=True)
class MembershipConfig:
    overlap_threshold: float = 0.5
    footprint_samples: int = 256

    def __post_init__(self):
        if not 0 < self.overlap_threshold <= 1:
            raise ValueError("overlap_threshold must lie in (0, 1]")
        if self.footprint_samples < 32:
            raise ValueError("footprint_samples must be at least 32")


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Sensing graph: nodes on a horizontal plane and directed links."""

    node_positions: np.ndarray
    links: tuple[tuple[int, int], ...]
    area: tuple[float, float]
    node_height: float
    node_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        pos = np.array(self.node_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("node_positions must be an (n, 3) array")
        pos.flags.writeable = False
        object.__setattr__(self, "node_positions", pos)
        links = tuple((int(u), int(v)) for u, v in self.links)
        n = len(pos)
        seen = set()
        for u, v in links:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"link ({u}, {v}) references a missing node")
            if (u, v) in seen:
                raise ValueError(f"duplicate link ({u}, {v})")
            seen.add((u, v))
        object.__setattr__(self, "links", links)
        ids = tuple(str(i) for i in self.node_ids) or tuple(str(i) for i in range(n))
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("node_ids must be unique and one per node")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))

    def __eq__(self, other):
        if not isinstance(other, NetworkGraph):
            return NotImplemented
        return (
            np.array_equal(self.node_positions, other.node_positions)
            and self.links == other.links
            and self.area == other.area
            and self.node_height == other.node_height
            and self.node_ids == other.node_ids
        )

    __hash__ = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def adjacency(self) -> np.ndarray:
        d = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int8)
        for u, v in self.links:
            d[u, v] = 1
        d.flags.writeable = False
        return d

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.links:
            out[u].append(v)
        return tuple(tuple(sorted(nb)) for nb in out)

    @property
    def max_degree(self) -> int:
        return max((len(nb) for nb in self.neighbors), default=0)

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {link: i for i, link in enumerate(self.links)}

    @cached_property
    def pairs(self) -> np.ndarray:
        """Unordered node pairs (u < v) touched by at least one link."""
        return np.array(sorted({(min(u, v), max(u, v)) for u, v in self.links}), dtype=int).reshape(-1, 2)

    @cached_property
    def link_pair(self) -> np.ndarray:
        """For every directed link, the row of ``pairs`` it belongs to."""
        lookup = {tuple(p): i for i, p in enumerate(self.pairs.tolist())}
        return np.array([lookup[(min(u, v), max(u, v))] for u, v in self.links], dtype=int)

    @cached_property
    def feature_slots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row, column, link) triples placing link values into node features."""
        rows, cols, idx = [], [], []
        for u, nb in enumerate(self.neighbors):
            for j, v in enumerate(nb):
                rows.append(u)
                cols.append(j)
                idx.append(self.link_index[(u, v)])
        return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(idx, dtype=int)

    def link_endpoints(self, link: int) -> tuple[np.ndarray, np.ndarray]:
        u, v = self.links[link]
        return self.node_positions[u], self.node_positions[v]


def _perimeter_point(s: float, w: float, h: float) -> tuple[float, float]:
    # counter-clockwise walk from (0, 0)
    if s < w:
        return (s, 0.0)
    s -= w
    if s < h:
        return (w, s)
    s -= h
    if s < w:
        return (w - s, h)
    s -= w
    return (0.0, h - s)


def build_perimeter_network(
    area_w: float,
    area_h: float,
    *,
    spacing: float | None = None,
    n_nodes: int | None = None,
    node_height: float = 1.0,
    links: str | Sequence[tuple[int, int]] = "all-pairs",
) -> NetworkGraph:
    """Place nodes along the perimeter of a rectangle.

    With ``spacing`` every side gets ``round(side / spacing)`` nodes starting at
    the side's origin corner. With ``n_nodes`` the nodes are spread evenly along
    the whole perimeter, which reproduces counts that do not divide by four.
    """
    if area_w <= 0 or area_h <= 0:
        raise ValueError("area dimensions must be positive")
    if (spacing is None) == (n_nodes is None):
        raise ValueError("give exactly one of spacing or n_nodes")
    corners = [(0.0, 0.0), (area_w, 0.0), (area_w, area_h), (0.0, area_h)]
    xy: list[tuple[float, float]] = []
    if spacing is not None:
        if spacing <= 0 or spacing >= min(area_w, area_h):
            raise InvalidSpacingError(f"spacing {spacing} m must be in (0, {min(area_w, area_h)})")
        for i, side in enumerate((area_w, area_h, area_w, area_h)):
            count = int(round(side / spacing))
            x0, y0 = corners[i]
            x1, y1 = corners[(i + 1) % 4]
            for k in range(count):
                t = k / count
                xy.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
    else:
        perimeter = 2 * (area_w + area_h)
        xy = [_perimeter_point(k * perimeter / n_nodes, area_w, area_h) for k in range(n_nodes)]
    if len(xy) < 2:
        raise InvalidSpacingError(f"only {len(xy)} node(s) fit on the perimeter")
    pos = np.array([(x, y, node_height) for x, y in xy])
    n = len(pos)
    if isinstance(links, str):
        if links != "all-pairs":
            raise ValueError(f"unknown link rule {links!r}")
        link_list = [(u, v) for u in range(n) for v in range(n) if u != v]
    else:
        link_list = list(links)
    return NetworkGraph(pos, tuple(link_list), (area_w, area_h), node_height)


def link_azimuth(tx, rx) -> float:
    return math.atan2(rx[1] - tx[1], rx[0] - tx[0])


def fresnel_floor_ellipse(link: int, graph: NetworkGraph, wavelength: float) -> Ellipse2D:
    """Floor projection of the first Fresnel ellipsoid of a link."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    tx, rx = graph.link_endpoints(link)
    d = float(np.linalg.norm(rx - tx))
    a = (d + wavelength / 2) / 2
    b = 0.5 * math.sqrt(wavelength * d + wavelength**2 / 4)
    center = ((tx[0] + rx[0]) / 2, (tx[1] + rx[1]) / 2)
    return Ellipse2D(center, a, b, link_azimuth(tx, rx))


def footprint_ellipse(target: TargetParams) -> Ellipse2D:
    return Ellipse2D(target.position, target.width_ap / 2, target.width_lat / 2, target.orientation)


def effective_width(target: TargetParams, link_azimuth: float) -> float:
    """Width of the footprint projected across the link direction."""
    psi = target.orientation - link_azimuth
    a, b = target.width_ap / 2, target.width_lat / 2
    return 2 * math.sqrt((a * math.sin(psi)) ** 2 + (b * math.cos(psi)) ** 2)


@lru_cache(maxsize=16)
def unit_disk_samples(n: int) -> np.ndarray:
    """Deterministic equal-area points in the unit disk (sunflower lattice)."""
    i = np.arange(n)
    r = np.sqrt((i + 0.5) / n)
    theta = i * math.pi * (3 - math.sqrt(5))
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    pts.flags.writeable = False
    return pts


def footprint_samples(target: TargetParams, n: int) -> np.ndarray:
    unit = unit_disk_samples(n)
    c, s = math.cos(target.orientation), math.sin(target.orientation)
    lx = unit[:, 0] * target.width_ap / 2
    ly = unit[:, 1] * target.width_lat / 2
    return np.column_stack([target.x + c * lx - s * ly, target.y + s * lx + c * ly])


def overlap_fraction(target: TargetParams, link: int, graph: NetworkGraph, wavelength: float,
                     cfg: MembershipConfig = MembershipConfig()) -> float:
    region = fresnel_floor_ellipse(link, graph, wavelength)
    inside = region.contains(footprint_samples(target, cfg.footprint_samples))
    return int(inside.sum()) / cfg.footprint_samples


def fresnel_membership(target: TargetParams, link: int, graph: NetworkGraph, wavelength: float,
                       cfg: MembershipConfig = MembershipConfig()) -> bool:
    """True when at least ``overlap_threshold`` of the footprint lies in the link's Fresnel region."""
    return overlap_fraction(target, link, graph, wavelength, cfg) >= cfg.overlap_threshold


def targets_array(targets: Sequence[TargetParams]) -> np.ndarray:
    """Stack targets as rows of (x, y, orientation, height, width_ap, width_lat)."""
    if not targets:
        return np.zeros((0, 6))
    return np.array([(t.x, t.y, t.orientation, t.height, t.width_ap, t.width_lat) for t in targets], dtype=float)


def pair_fresnel_regions(graph: NetworkGraph, wavelength: float) -> np.ndarray:
    """Per unordered pair: centre x, centre y, azimuth, semi-major, semi-minor."""
    p = graph.node_positions[graph.pairs[:, 0]]
    q = graph.node_positions[graph.pairs[:, 1]]
    d = np.linalg.norm(q - p, axis=1)
    a = (d + wavelength / 2) / 2
    b = 0.5 * np.sqrt(wavelength * d + wavelength**2 / 4)
    az = np.arctan2(q[:, 1] - p[:, 1], q[:, 0] - p[:, 0])
    return np.column_stack([(p[:, 0] + q[:, 0]) / 2, (p[:, 1] + q[:, 1]) / 2, az, a, b])


def pair_membership(graph: NetworkGraph, targets: Sequence[TargetParams] | np.ndarray, wavelength: float,
                    cfg: MembershipConfig = MembershipConfig(), regions: np.ndarray | None = None) -> np.ndarray:
    """Boolean (n_targets, n_pairs) membership matrix over unordered pairs.

    Same decision as :func:`fresnel_membership`, vectorised with a bounding
    test that skips pairs whose region cannot touch the footprint.
    """
    arr = targets if isinstance(targets, np.ndarray) else targets_array(targets)
    if regions is None:
        regions = pair_fresnel_regions(graph, wavelength)
    n_t, n_p = len(arr), len(regions)
    out = np.zeros((n_t, n_p), dtype=bool)
    if n_t == 0 or n_p == 0:
        return out
    unit = unit_disk_samples(cfg.footprint_samples)
    cx, cy, az, ra, rb = regions.T
    ca, sa = np.cos(az), np.sin(az)
    need = math.ceil(cfg.overlap_threshold * cfg.footprint_samples - 1e-9)
    for i, (x, y, phi, _h, w1, w2) in enumerate(arr):
        dx, dy = x - cx, y - cy
        u = dx * ca + dy * sa
        v = -dx * sa + dy * ca
        reach = w1 / 2
        cand = np.nonzero((np.abs(u) <= ra + reach) & (np.abs(v) <= rb + reach))[0]
        if len(cand) == 0:
            continue
        c, s = math.cos(phi), math.sin(phi)
        lx = unit[:, 0] * w1 / 2
        ly = unit[:, 1] * w2 / 2
        px = x + c * lx - s * ly
        py = y + s * lx + c * ly
        ddx = px[None, :] - cx[cand, None]
        ddy = py[None, :] - cy[cand, None]
        uu = ddx * ca[cand, None] + ddy * sa[cand, None]
        vv = -ddx * sa[cand, None] + ddy * ca[cand, None]
        inside = (uu / ra[cand, None]) ** 2 + (vv / rb[cand, None]) ** 2 <= 1.0
        out[i, cand] = inside.sum(axis=1) >= need
    return out


def sample_targets(n: int, area: tuple[float, float], profile: SubjectProfile,
                   rng_seed) -> list[TargetParams]:
    """Uniform positions over the area and uniform orientations in [0, 2*pi)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(rng_seed)
    xy = rng.uniform((0.0, 0.0), area, size=(n, 2))
    phi = rng.uniform(0.0, 2 * math.pi, size=n)
    return [profile.place(float(x), float(y), float(p)) for (x, y), p in zip(xy, phi)]
