"""Precomputed resampling tables between ERP rasters and tangent patches.

Forward grids (ERP -> tangent) are total: every tangent pixel has a source.
Inverse grids (tangent -> ERP) carry a validity mask because an ERP pixel is
only reachable from planes whose footprint contains it, and blend weights for
the overlapping planes.

Conventions:
* ERP pixel (i, j) is centered at phi = pi/2 - (i+0.5)*pi/H,
  theta = (j+0.5)*2*pi/W - pi. ERP rasters are 2:1 (W = 2H).
* Tangent pixel (u, v) of a plane with FOV f is centered at plane coordinates
  x = -s + (v+0.5)*2s/p, y = s - (u+0.5)*2s/p with s = tan(f/2); row 0 is the
  local north edge.
* Resampling is bilinear, with longitude wrap-around and pole clamping on the
  ERP side and edge clamping on the tangent side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gnomonic import gnomonic_forward_arrays, gnomonic_inverse_arrays
from .layout import TangentLayout

# cos c must clear this to count as inside the hemisphere; keeps the map
# numerically sane at grazing angles
_COS_C_MIN = 1e-9


def _check_erp_dims(erp_h: int, erp_w: int):
    if erp_w != 2 * erp_h:
        raise ValueError(f"ERP raster must be 2:1, got {erp_h}x{erp_w}")


def erp_pixel_angles(erp_h: int, erp_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center (phi, theta) meshgrids, each of shape (H, W)."""
    _check_erp_dims(erp_h, erp_w)
    phi = np.pi / 2 - (np.arange(erp_h) + 0.5) * np.pi / erp_h
    theta = (np.arange(erp_w) + 0.5) * 2.0 * np.pi / erp_w - np.pi
    return np.meshgrid(phi, theta, indexing="ij")


def _patch_plane_coords(fov_deg: float, patch_px: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Plane-coordinate meshgrids (x, y) for a p x p patch, plus the half-extent s."""
    s = math.tan(math.radians(fov_deg) / 2.0)
    p = patch_px
    x = -s + (np.arange(p) + 0.5) * 2.0 * s / p
    y = s - (np.arange(p) + 0.5) * 2.0 * s / p
    xx = np.broadcast_to(x[None, :], (p, p)).copy()
    yy = np.broadcast_to(y[:, None], (p, p)).copy()
    return xx, yy, s


@dataclass(frozen=True)
class SamplingGrid:
    """Fractional source coordinates for one resampling direction.

    direction "forward": arrays are (T, p, p); rows/cols index into the ERP
    raster and phi/theta record the sphere direction of each tangent pixel.
    All entries are valid.

    direction "inverse": arrays are (H, W, T); u/v are fractional tangent-patch
    coordinates and valid marks ERP pixels inside each plane's footprint.
    """

    direction: str
    num_planes: int
    patch_px: int
    erp_h: int
    erp_w: int
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    phi: np.ndarray | None = None
    theta: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    valid: np.ndarray | None = None


@dataclass(frozen=True)
class OverlapWeights:
    """Per-pixel blend weights across tangent planes, shape (H, W, T).

    ``w`` is zero exactly where a pixel is outside the plane's footprint.
    ``raw_total`` keeps the unnormalized per-pixel weight mass so consistency
    masks can still be derived after normalization.
    """

    w: np.ndarray
    normalized: bool
    raw_total: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.w.sum(axis=2) > 0.0

    @property
    def coverage_fraction(self) -> float:
        return float(self.covered.mean())

    def overlap_count(self) -> np.ndarray:
        return (self.w > 0.0).sum(axis=2)

    def normalize(self) -> "OverlapWeights":
        if self.normalized:
            return self
        total = self.w.sum(axis=2, keepdims=True)
        norm = self.w / np.where(total > 0.0, total, 1.0)
        return OverlapWeights(w=norm, normalized=True, raw_total=self.raw_total)

    def consistency_mask(self, mode: str) -> np.ndarray:
        """Per-pixel scalar weights in [0, 1] for the consistency loss.

        Modes: "none" (all ones), "binary" (1 where >= 2 planes overlap),
        "count" (overlap count scaled to max 1), "blend" (raw weight mass
        scaled to max 1).
        """
        h, wdt = self.w.shape[:2]
        if mode == "none":
            return np.ones((h, wdt))
        if mode == "binary":
            return (self.overlap_count() >= 2).astype(float)
        if mode == "count":
            counts = self.overlap_count().astype(float)
            peak = counts.max()
            return counts / peak if peak > 0 else counts
        if mode == "blend":
            peak = self.raw_total.max()
            return self.raw_total / peak if peak > 0 else self.raw_total.copy()
        raise ValueError(f"unknown consistency mask mode {mode!r}")


def build_forward_grid(layout: TangentLayout, erp_h: int, erp_w: int) -> SamplingGrid:
    """Source table for ERP -> tangent resampling, one entry per tangent pixel."""
    _check_erp_dims(erp_h, erp_w)
    t = layout.num_planes
    p = layout.patch_px
    xx, yy, _ = _patch_plane_coords(layout.fov_deg, p)
    phi = np.empty((t, p, p))
    theta = np.empty((t, p, p))
    for k, c in enumerate(layout.centers):
        phi[k], theta[k] = gnomonic_inverse_arrays(c.phi, c.theta, xx, yy)
    rows = (np.pi / 2 - phi) / np.pi * erp_h - 0.5
    cols = (theta + np.pi) / (2.0 * np.pi) * erp_w - 0.5
    return SamplingGrid(
        direction="forward",
        num_planes=t,
        patch_px=p,
        erp_h=erp_h,
        erp_w=erp_w,
        rows=rows,
        cols=cols,
        phi=phi,
        theta=theta,
    )


def build_inverse_grid(
    layout: TangentLayout,
    erp_h: int,
    erp_w: int,
    patch_px: int | None = None,
    normalize: bool = True,
) -> tuple[SamplingGrid, OverlapWeights]:
    """Sampling table and blend weights for tangent -> ERP resampling.

    ``patch_px`` overrides the layout's patch side when the tangent stack being
    backprojected has a different resolution (e.g. decoded saliency patches).
    Weights follow a raised cosine in angular distance from each plane center,
    reaching zero at the footprint corner, and are normalized per covered pixel
    unless ``normalize`` is False.
    """
    _check_erp_dims(erp_h, erp_w)
    t = layout.num_planes
    p = layout.patch_px if patch_px is None else patch_px
    ph, th = erp_pixel_angles(erp_h, erp_w)
    s = math.tan(math.radians(layout.fov_deg) / 2.0)
    ang_max = math.atan(math.sqrt(2.0) * s)

    u = np.zeros((erp_h, erp_w, t))
    v = np.zeros((erp_h, erp_w, t))
    valid = np.zeros((erp_h, erp_w, t), dtype=bool)
    w = np.zeros((erp_h, erp_w, t))
    for k, c in enumerate(layout.centers):
        x, y, cos_c = gnomonic_forward_arrays(c.phi, c.theta, ph, th)
        inside = (cos_c > _COS_C_MIN) & (np.abs(x) <= s) & (np.abs(y) <= s)
        u[:, :, k] = np.where(inside, (s - y) / (2.0 * s) * p - 0.5, 0.0)
        v[:, :, k] = np.where(inside, (x + s) / (2.0 * s) * p - 0.5, 0.0)
        valid[:, :, k] = inside
        ang = np.arccos(np.clip(cos_c, -1.0, 1.0))
        falloff = 0.5 * (1.0 + np.cos(np.pi * np.minimum(ang / ang_max, 1.0)))
        w[:, :, k] = np.where(inside, falloff, 0.0)

    raw_total = w.sum(axis=2)
    # a pixel strictly inside a footprint always has positive weight; the
    # corner-exact case (inside but zero mass) falls back to a uniform split
    degenerate = (raw_total == 0.0) & valid.any(axis=2)
    if degenerate.any():
        counts = valid.sum(axis=2)
        w[degenerate] = valid[degenerate] / counts[degenerate, None]
        raw_total = w.sum(axis=2)

    grid = SamplingGrid(
        direction="inverse",
        num_planes=t,
        patch_px=p,
        erp_h=erp_h,
        erp_w=erp_w,
        u=u,
        v=v,
        valid=valid,
    )
    weights = OverlapWeights(w=w, normalized=False, raw_total=raw_total)
    if normalize:
        weights = weights.normalize()
    return grid, weights


def _bilinear_wrap_gather(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) or (H, W) at fractional coords; columns wrap, rows clamp."""
    single = img.ndim == 2
    if single:
        img = img[None]
    h, wdt = img.shape[1:]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0w = c0 % wdt
    c1w = (c0 + 1) % wdt
    out = (
        img[:, r0c, c0w] * ((1 - fr) * (1 - fc))
        + img[:, r0c, c1w] * ((1 - fr) * fc)
        + img[:, r1c, c0w] * (fr * (1 - fc))
        + img[:, r1c, c1w] * (fr * fc)
    )
    return out[0] if single else out


def project_erp_to_tangent(erp: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    """Resample an ERP image to the tangent stack.

    ``erp`` is (H, W) or (C, H, W); the result is (T, p, p) or (T, C, p, p).
    """
    if grid.direction != "forward":
        raise ValueError("project_erp_to_tangent needs a forward grid")
    h, wdt = erp.shape[-2:]
    if (h, wdt) != (grid.erp_h, grid.erp_w):
        raise ValueError(
            f"ERP dims {h}x{wdt} do not match grid {grid.erp_h}x{grid.erp_w}"
        )
    out = _bilinear_wrap_gather(erp, grid.rows, grid.cols)
    if erp.ndim == 3:
        out = np.moveaxis(out, 1, 0)  # (C, T, p, p) -> (T, C, p, p)
    return out


def _tangent_corner_terms(grid: SamplingGrid, k: int):
    """Corner indices and bilinear factors for plane k's valid ERP pixels."""
    p = grid.patch_px
    mask = grid.valid[:, :, k]
    uf = grid.u[:, :, k][mask]
    vf = grid.v[:, :, k][mask]
    u0 = np.floor(uf).astype(np.int64)
    v0 = np.floor(vf).astype(np.int64)
    fu = uf - u0
    fv = vf - v0
    u0c = np.clip(u0, 0, p - 1)
    u1c = np.clip(u0 + 1, 0, p - 1)
    v0c = np.clip(v0, 0, p - 1)
    v1c = np.clip(v0 + 1, 0, p - 1)
    corners = (
        (u0c, v0c, (1 - fu) * (1 - fv)),
        (u0c, v1c, (1 - fu) * fv),
        (u1c, v0c, fu * (1 - fv)),
        (u1c, v1c, fu * fv),
    )
    return mask, corners


def backproject_tangent_to_erp(
    stack: np.ndarray, grid: SamplingGrid, weights: OverlapWeights
) -> np.ndarray:
    """Blend a tangent stack back onto the ERP raster.

    ``stack`` is (T, p, p) or (T, C, p, p). Covered pixels receive the
    weight-blended bilinear samples of the covering planes; uncovered pixels
    are zero. Weights must be normalized.
    """
    if grid.direction != "inverse":
        raise ValueError("backproject_tangent_to_erp needs an inverse grid")
    if not weights.normalized:
        raise ValueError("overlap weights must be normalized before backprojection")
    single = stack.ndim == 3
    if single:
        stack = stack[:, None]
    t, c, p, _ = stack.shape
    if t != grid.num_planes or p != grid.patch_px:
        raise ValueError(
            f"stack ({t} planes, patch {p}) does not match grid "
            f"({grid.num_planes} planes, patch {grid.patch_px})"
        )
    out = np.zeros((c, grid.erp_h, grid.erp_w))
    for k in range(t):
        mask, corners = _tangent_corner_terms(grid, k)
        wk = weights.w[:, :, k][mask]
        acc = np.zeros((c, mask.sum()))
        for u_idx, v_idx, factor in corners:
            acc += stack[k][:, u_idx, v_idx] * factor
        out[:, mask] += wk * acc
    return out[0] if single else out


def backproject_vjp(
    grad_erp: np.ndarray, grid: SamplingGrid, weights: OverlapWeights
) -> np.ndarray:
    """Adjoint of backproject_tangent_to_erp: scatter an ERP cotangent back to the stack."""
    if not weights.normalized:
        raise ValueError("overlap weights must be normalized")
    single = grad_erp.ndim == 2
    if single:
        grad_erp = grad_erp[None]
    c = grad_erp.shape[0]
    t, p = grid.num_planes, grid.patch_px
    grad_stack = np.zeros((t, c, p, p))
    for k in range(t):
        mask, corners = _tangent_corner_terms(grid, k)
        g = grad_erp[:, mask] * weights.w[:, :, k][mask]
        for u_idx, v_idx, factor in corners:
            flat = u_idx * p + v_idx
            contrib = g * factor
            for ch in range(c):
                grad_stack[k, ch] += np.bincount(
                    flat, weights=contrib[ch], minlength=p * p
                ).reshape(p, p)
    return grad_stack[:, 0] if single else grad_stack


def angular_coordinate_maps(layout: TangentLayout) -> np.ndarray:
    """Per-plane (phi, theta) of every tangent pixel, shape (T, 2, p, p)."""
    xx, yy, _ = _patch_plane_coords(layout.fov_deg, layout.patch_px)
    t, p = layout.num_planes, layout.patch_px
    maps = np.empty((t, 2, p, p))
    for k, c in enumerate(layout.centers):
        maps[k, 0], maps[k, 1] = gnomonic_inverse_arrays(c.phi, c.theta, xx, yy)
    return maps
