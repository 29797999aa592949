"""Scalar diffraction by absorbing sheets.

The field behind a thin absorbing sheet, relative to free space, is

    E / E0 = 1 - j (d / lam) * integral over sheet of exp(-j k (r1 + r2 - d)) / (r1 r2) dT

evaluated here with a midpoint rule on a rectangular grid whose step is a
fixed fraction of the wavelength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import fresnel

from .errors import DegenerateGeometryError, InfiniteAttenuationError, QuadratureOverflowError
from .geometry import TargetParams, effective_width, link_azimuth

# |E/E0| floor used before taking logs in composed pipelines (120 dB)
RATIO_FLOOR = 1e-6
_PLANE_TOL = 1e-9


@dataclass(frozen=True)
class LinkGeometry:
    tx_position: tuple[float, float, float]
    rx_position: tuple[float, float, float]

    def __post_init__(self):
        tx = tuple(float(c) for c in self.tx_position)
        rx = tuple(float(c) for c in self.rx_position)
        object.__setattr__(self, "tx_position", tx)
        object.__setattr__(self, "rx_position", rx)
        if self.length_d <= 0:
            raise DegenerateGeometryError("link endpoints coincide")

    @property
    def length_d(self) -> float:
        return math.dist(self.tx_position, self.rx_position)

    @property
    def azimuth(self) -> float:
        return link_azimuth(self.tx_position, self.rx_position)

    def swapped(self) -> "LinkGeometry":
        return LinkGeometry(self.rx_position, self.tx_position)


@dataclass(frozen=True)
class AbsorbingSheet:
    """Vertical rectangle standing on the floor.

    ``center`` is the floor point under the middle of the sheet; the sheet
    spans ``width`` horizontally (perpendicular to its normal) and rises from
    z = 0 to ``height``.
    """

    center: tuple[float, float]
    width: float
    height: float
    normal_azimuth: float

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise ValueError("sheet dimensions must be non-negative")


@dataclass(frozen=True)
class QuadratureConfig:
    step_fraction: float = 0.125
    max_elements: int = 5_000_000

    def __post_init__(self):
        if not 0 < self.step_fraction <= 0.25:
            raise ValueError("step_fraction must lie in (0, 0.25]")
        if self.max_elements < 10_000:
            raise ValueError("max_elements must be at least 10000")


@njit(cache=True)
def _sheet_integral(tx, rx, cx, cy, tdx, tdy, width, height, n_u, n_z, k, d):
    du = width / n_u
    dz = height / n_z
    re = 0.0
    im = 0.0
    for i in range(n_u):
        u = -0.5 * width + (i + 0.5) * du
        px = cx + u * tdx
        py = cy + u * tdy
        h1 = (px - tx[0]) ** 2 + (py - tx[1]) ** 2
        h2 = (px - rx[0]) ** 2 + (py - rx[1]) ** 2
        for j in range(n_z):
            z = (j + 0.5) * dz
            r1 = math.sqrt(h1 + (z - tx[2]) ** 2)
            r2 = math.sqrt(h2 + (z - rx[2]) ** 2)
            ph = k * (r1 + r2 - d)
            w = 1.0 / (r1 * r2)
            re += w * math.cos(ph)
            im -= w * math.sin(ph)
    return complex(re, im) * (du * dz)


@njit(cache=True)
def _batch_ratios(tx, rx, cx, cy, az, width, height, n_u, n_z, k):
    # status: 0 computed, 1 sheet does not separate the endpoints, 2 degenerate
    n = tx.shape[0]
    out = np.ones(n, dtype=np.complex128)
    status = np.zeros(n, dtype=np.int8)
    for p in range(n):
        nx = math.cos(az[p])
        ny = math.sin(az[p])
        s1 = (tx[p, 0] - cx[p]) * nx + (tx[p, 1] - cy[p]) * ny
        s2 = (rx[p, 0] - cx[p]) * nx + (rx[p, 1] - cy[p]) * ny
        if abs(s1) < _PLANE_TOL or abs(s2) < _PLANE_TOL:
            # an endpoint in the sheet plane is only fatal when it touches the sheet itself
            e = tx[p] if abs(s1) < _PLANE_TOL else rx[p]
            u = -(e[0] - cx[p]) * ny + (e[1] - cy[p]) * nx
            if abs(u) <= 0.5 * width[p] + _PLANE_TOL and -_PLANE_TOL <= e[2] <= height[p] + _PLANE_TOL:
                status[p] = 2
            else:
                status[p] = 1
            continue
        if s1 * s2 > 0 or n_u[p] == 0 or n_z[p] == 0:
            status[p] = 1
            continue
        d = math.sqrt((rx[p, 0] - tx[p, 0]) ** 2 + (rx[p, 1] - tx[p, 1]) ** 2 + (rx[p, 2] - tx[p, 2]) ** 2)
        acc = _sheet_integral(tx[p], rx[p], cx[p], cy[p], -ny, nx, width[p], height[p], n_u[p], n_z[p], k, d)
        out[p] = 1.0 - 1j * (d * k / (2.0 * math.pi)) * acc
    return out, status


def grid_shape(width: float, height: float, wavelength: float, quad: QuadratureConfig) -> tuple[int, int]:
    step = quad.step_fraction * wavelength
    n_u = math.ceil(width / step - 1e-9) if width > 0 else 0
    n_z = math.ceil(height / step - 1e-9) if height > 0 else 0
    return n_u, n_z


def sheet_ratios(tx, rx, centers, azimuths, widths, heights, wavelength: float,
                 quad: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Field ratios for many (link, sheet) combinations at once.

    Arrays are aligned: ``tx``/``rx`` are (n, 3), ``centers`` is (n, 2) and the
    rest are length n. Sheets whose plane does not separate the two endpoints
    leave the direct path untouched and yield exactly 1.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    tx = np.ascontiguousarray(tx, dtype=float).reshape(-1, 3)
    rx = np.ascontiguousarray(rx, dtype=float).reshape(-1, 3)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    widths = np.asarray(widths, dtype=float).ravel()
    heights = np.asarray(heights, dtype=float).ravel()
    step = quad.step_fraction * wavelength
    n_u = np.where(widths > 0, np.ceil(widths / step - 1e-9), 0).astype(np.int64)
    n_z = np.where(heights > 0, np.ceil(heights / step - 1e-9), 0).astype(np.int64)
    too_big = n_u * n_z > quad.max_elements
    if too_big.any():
        worst = int((n_u * n_z).max())
        raise QuadratureOverflowError(f"sheet needs {worst} elements, limit is {quad.max_elements}")
    ratios, status = _batch_ratios(
        tx, rx, np.ascontiguousarray(centers[:, 0]), np.ascontiguousarray(centers[:, 1]),
        np.asarray(azimuths, dtype=float).ravel(), widths, heights, n_u, n_z, 2 * math.pi / wavelength,
    )
    if (status == 2).any():
        raise DegenerateGeometryError("a link endpoint lies on the absorbing sheet")
    return ratios


def field_ratio(link: LinkGeometry, sheet: AbsorbingSheet, wavelength: float,
                quad: QuadratureConfig = QuadratureConfig()) -> complex:
    """E/E0 on ``link`` with ``sheet`` present."""
    r = sheet_ratios(link.tx_position, link.rx_position, sheet.center, [sheet.normal_azimuth],
                     [sheet.width], [sheet.height], wavelength, quad)
    return complex(r[0])


def attenuation_db(ratio: complex) -> float:
    mag = abs(ratio)
    if mag == 0:
        raise InfiniteAttenuationError("field ratio is zero")
    return -10.0 * math.log10(mag * mag)


def clamped_attenuation_db(ratio) -> np.ndarray:
    mag = np.maximum(np.abs(ratio), RATIO_FLOOR)
    return -20.0 * np.log10(mag)


def target_sheet(link: LinkGeometry, target: TargetParams) -> AbsorbingSheet:
    """Sheet standing at the target, facing along the link."""
    az = link.azimuth
    return AbsorbingSheet(target.position, effective_width(target, az), target.height, az)


def single_target_attenuation(link: LinkGeometry, target: TargetParams, wavelength: float,
                              quad: QuadratureConfig = QuadratureConfig()) -> float:
    ratio = field_ratio(link, target_sheet(link, target), wavelength, quad)
    return float(clamped_attenuation_db(ratio))


def knife_edge_oracle(nu: float) -> float:
    """Classical knife-edge loss in dB from the Fresnel integrals."""
    s, c = fresnel(nu)
    mag2 = 0.5 * ((0.5 - c) ** 2 + (0.5 - s) ** 2)
    return float(-10.0 * np.log10(mag2))


def fresnel_parameter(edge_offset: float, d1: float, d2: float, wavelength: float) -> float:
    return edge_offset * math.sqrt(2 * (d1 + d2) / (wavelength * d1 * d2))


def half_plane_ratio(nu: float, distance: float, wavelength: float, quad: QuadratureConfig = QuadratureConfig(),
                     extent: float = 15.0) -> complex:
    """Quadrature estimate of a semi-infinite screen whose edge sits ``nu`` above the midpoint LOS.

    The screen is a finite sheet reaching ``extent`` below the link and
    ``extent`` to either side. Four sheets whose outer edges differ by a
    quarter wavelength in path are averaged, which cancels the spurious
    contributions of those outer edges and leaves the half-plane response.
    """
    e = nu / math.sqrt(2 * distance / (wavelength * (distance / 2) ** 2))
    out = 0j
    for dz in (0.0, wavelength / 4):
        for dw in (0.0, wavelength / 2):
            h = extent + dz
            link = LinkGeometry((0.0, 0.0, h), (distance, 0.0, h))
            sheet = AbsorbingSheet((distance / 2, 0.0), 2 * extent + dw, h + e, 0.0)
            out += field_ratio(link, sheet, wavelength, quad)
    return out / 4
