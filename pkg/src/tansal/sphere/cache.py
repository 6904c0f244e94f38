"""Disk cache for resampling grids.

Building inverse grids at full ERP resolution is the slow part of pipeline
startup, so computed grids are stored as .npz files keyed by a hash of the
layout and raster geometry. Stale-format or corrupted entries are silently
recomputed and rewritten; the cache is an accelerator, never a source of
truth.
"""

from __future__ import annotations

import hashlib
import os
import tempfile

import numpy as np

from .grids import OverlapWeights, SamplingGrid, build_forward_grid, build_inverse_grid
from .layout import TangentLayout, layout_to_json

# bump when the on-disk schema or any grid-construction convention changes
CACHE_FORMAT_VERSION = 1


def _cache_key(layout: TangentLayout, erp_h: int, erp_w: int, decode_px: int) -> str:
    desc = f"v{CACHE_FORMAT_VERSION}|{layout_to_json(layout)}|{erp_h}|{erp_w}|{decode_px}"
    return hashlib.sha256(desc.encode("utf-8")).hexdigest()[:32]


def _pack(forward: SamplingGrid, inverse: SamplingGrid, weights: OverlapWeights) -> dict:
    return {
        "version": np.array([CACHE_FORMAT_VERSION], dtype=np.int64),
        "fwd_rows": forward.rows,
        "fwd_cols": forward.cols,
        "fwd_phi": forward.phi,
        "fwd_theta": forward.theta,
        "inv_u": inverse.u,
        "inv_v": inverse.v,
        "inv_valid": inverse.valid,
        "inv_patch": np.array([inverse.patch_px], dtype=np.int64),
        "w": weights.w,
        "w_raw_total": weights.raw_total,
        "dims": np.array([forward.num_planes, forward.patch_px, forward.erp_h, forward.erp_w], dtype=np.int64),
    }


def _unpack(data) -> tuple[SamplingGrid, SamplingGrid, OverlapWeights]:
    if int(data["version"][0]) != CACHE_FORMAT_VERSION:
        raise ValueError("cache format version mismatch")
    t, p, h, wdt = (int(x) for x in data["dims"])
    forward = SamplingGrid(
        direction="forward",
        num_planes=t,
        patch_px=p,
        erp_h=h,
        erp_w=wdt,
        rows=data["fwd_rows"],
        cols=data["fwd_cols"],
        phi=data["fwd_phi"],
        theta=data["fwd_theta"],
    )
    inverse = SamplingGrid(
        direction="inverse",
        num_planes=t,
        patch_px=int(data["inv_patch"][0]),
        erp_h=h,
        erp_w=wdt,
        u=data["inv_u"],
        v=data["inv_v"],
        valid=data["inv_valid"],
    )
    weights = OverlapWeights(w=data["w"], normalized=True, raw_total=data["w_raw_total"])
    if forward.rows.shape != (t, p, p) or weights.w.shape != (h, wdt, t):
        raise ValueError("cache entry has inconsistent shapes")
    return forward, inverse, weights


def grids_for_layout(
    layout: TangentLayout,
    erp_h: int,
    erp_w: int,
    decode_px: int | None = None,
    cache_dir: str | None = None,
) -> tuple[SamplingGrid, SamplingGrid, OverlapWeights]:
    """Forward grid, inverse grid and normalized weights, cached when possible.

    ``decode_px`` sets the tangent-side resolution of the inverse grid when
    the maps being blended back are not at the layout's native patch size.
    """
    p_inv = layout.patch_px if decode_px is None else decode_px
    path = None
    if cache_dir is not None:
        key = _cache_key(layout, erp_h, erp_w, p_inv)
        path = os.path.join(cache_dir, f"grid_{key}.npz")
        if os.path.exists(path):
            try:
                with np.load(path) as data:
                    return _unpack(data)
            except Exception:
                # damaged or stale entry: fall through and rebuild
                try:
                    os.remove(path)
                except OSError:
                    pass

    forward = build_forward_grid(layout, erp_h, erp_w)
    inverse, weights = build_inverse_grid(layout, erp_h, erp_w, patch_px=p_inv)

    if path is not None:
        tmp = None
        try:
            os.makedirs(cache_dir, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".npz.tmp")
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **_pack(forward, inverse, weights))
            os.replace(tmp, path)
        except OSError:
            # read-only cache locations just lose the speedup
            if tmp is not None and os.path.exists(tmp):
                os.remove(tmp)
    return forward, inverse, weights
