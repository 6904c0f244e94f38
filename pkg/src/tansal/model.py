"""Viewport-token transformer for omnidirectional saliency.

A clip of ERP frames is resampled onto tangent planes, each patch is encoded
by a frozen random conv stack into one token per (frame, viewport) pair, and
a factored transformer alternates attention across frames (per viewport, with
rotary frame embeddings) and across viewports (per frame, with spherical
position embeddings added once up front). The last frame's tokens are decoded
back to tangent saliency patches and blended onto the ERP raster with the
overlap weights, giving a normalized saliency distribution.

The factoring is the point: joint attention over all F*T tokens scores
(F*T)^2 query-key pairs per block, the factored form only T*F^2 + F*T^2.
An instrumentation counter tracks the pairs actually evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sphere import (
    OverlapWeights,
    SamplingGrid,
    TangentLayout,
    angular_coordinate_maps,
    backproject_tangent_to_erp,
    backproject_vjp,
    build_forward_grid,
    build_inverse_grid,
    grids_for_layout,
    project_erp_to_tangent,
)

ATTENTION_SCHEMES = ("vsta", "vsa_only", "joint")
ROTARY_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; T (planes) comes from the layout."""

    num_frames: int = 8
    embed_dim: int = 512
    heads: int = 8
    depth: int = 6
    patch_px: int = 224
    feat_hw: int = 7
    in_channels: int = 1

    def __post_init__(self):
        if self.num_frames < 1 or self.depth < 1:
            raise ValueError("num_frames and depth must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if (self.embed_dim // self.heads) % 2:
            raise ValueError("head dim must be even for rotary pairing")
        factor, fh = self.patch_px, self.feat_hw
        if factor % fh:
            raise ValueError("patch_px must be a multiple of feat_hw")
        ratio = factor // fh
        if ratio < 2 or ratio & (ratio - 1):
            raise ValueError(
                f"patch {self.patch_px} -> features {fh} needs a power-of-two "
                "downsampling factor"
            )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def halvings(self) -> int:
        return int(math.log2(self.patch_px // self.feat_hw))

    @property
    def decoder_out(self) -> int:
        return self.feat_hw * 8

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "depth": self.depth,
            "patch_px": self.patch_px,
            "feat_hw": self.feat_hw,
            "in_channels": self.in_channels,
        }


@dataclass
class Counters:
    """Instrumentation: query-key pairs scored and tangent sets projected."""

    qk_pairs: int = 0
    tangent_sets: int = 0
    augmented_tangent_sets: int = 0

    def reset(self):
        self.qk_pairs = 0
        self.tangent_sets = 0
        self.augmented_tangent_sets = 0


def attention_pair_count(f: int, t: int, scheme: str) -> int:
    """Closed-form (query, key) pair count per transformer block."""
    if f < 1 or t < 1:
        raise ValueError("F and T must be >= 1")
    if scheme == "joint":
        return (f * t) ** 2
    if scheme == "vsa_only":
        return f * t * t
    if scheme == "vsta":
        return t * f * f + f * t * t
    raise ValueError(f"unknown attention scheme {scheme!r}")


# -- parameter helpers ---------------------------------------------------------


def _normal(rng: np.random.Generator, shape, std: float, trainable: bool = True) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=trainable)


def _zeros(shape, trainable: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=trainable)


def _ones(shape, trainable: bool = True) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=trainable)


def _channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Layer norm over the channel axis of an (N, C, H, W) map."""
    moved = x.transpose(0, 2, 3, 1)
    return ad.layer_norm(moved, gamma, beta).transpose(0, 3, 1, 2)


# -- frozen encoder --------------------------------------------------------------


class FrozenEncoder:
    """Randomly initialized conv stack, never trained.

    A stem conv is followed by one (pool, conv, relu) stage per halving, so a
    p x p patch becomes a (D, feat_hw, feat_hw) feature map.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        d, halvings = config.embed_dim, config.halvings
        widths = [max(8, d >> (halvings - i)) for i in range(halvings)] + [d]
        self.params = {}
        c_in = config.in_channels
        for i, c_out in enumerate(widths):
            std = math.sqrt(2.0 / (c_in * 9))
            self.params[f"conv{i}_w"] = _normal(rng, (c_out, c_in, 3, 3), std, trainable=False)
            self.params[f"conv{i}_b"] = _zeros((c_out,), trainable=False)
            c_in = c_out
        self.n_stages = len(widths)

    def __call__(self, patches: np.ndarray) -> np.ndarray:
        """(N, C, p, p) float array -> (N, D, feat_hw, feat_hw) features."""
        n, c, p, _ = patches.shape
        if c != self.config.in_channels or p != self.config.patch_px:
            raise ValueError(
                f"encoder expects (N, {self.config.in_channels}, "
                f"{self.config.patch_px}, {self.config.patch_px}), got {patches.shape}"
            )
        with ad.no_grad():
            x = Tensor(patches)
            for i in range(self.n_stages):
                if i > 0:
                    x = ad.avg_pool2d(x, 2)
                x = ad.conv2d(
                    x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"], padding=1
                ).relu()
        return x.data


# -- attention ---------------------------------------------------------------------


def rotary_tables(n: int, head_dim: int, base: float = ROTARY_BASE):
    """cos/sin tables of shape (n, head_dim // 2) indexed by position."""
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half) * 2.0 / head_dim)
    angles = np.outer(np.arange(n), inv_freq)
    return np.cos(angles), np.sin(angles)


def _apply_rotary(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate feature pairs of (B, h, N, dh) by per-position angles."""
    half = x.shape[-1] // 2
    x1 = x[..., :half]
    x2 = x[..., half:]
    c = Tensor(cos)
    s = Tensor(sin)
    return ad.concat([x1 * c - x2 * s, x1 * s + x2 * c], axis=-1)


class MultiHeadAttention:
    """Standard QKV attention over (B, N, D); B independent token groups."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, rotary: bool):
        d = config.embed_dim
        self.heads = config.heads
        self.rotary = rotary
        self.params = {
            "wq": _normal(rng, (d, d), 0.02),
            "wk": _normal(rng, (d, d), 0.02),
            "wv": _normal(rng, (d, d), 0.02),
            "wo": _normal(rng, (d, d), 0.02),
            "bq": _zeros((d,)),
            "bk": _zeros((d,)),
            "bv": _zeros((d,)),
            "bo": _zeros((d,)),
        }

    def __call__(self, x: Tensor, counters: Counters | None = None,
                 rotary_tabs=None) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        dh = d // h
        p = self.params

        def split(t):
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q = split(x @ p["wq"] + p["bq"])
        k = split(x @ p["wk"] + p["bk"])
        v = split(x @ p["wv"] + p["bv"])
        if self.rotary:
            if rotary_tabs is None:
                raise ValueError("rotary attention needs cos/sin tables")
            cos, sin = rotary_tabs
            q = _apply_rotary(q, cos, sin)
            k = _apply_rotary(k, cos, sin)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        if counters is not None:
            # token-position pairs, shared across heads
            counters.qk_pairs += b * n * n
        att = ad.softmax(scores, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return out @ p["wo"] + p["bo"]


class FeedForward:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.params = {
            "w1": _normal(rng, (d, 4 * d), 0.02),
            "b1": _zeros((4 * d,)),
            "w2": _normal(rng, (4 * d, d), 0.02),
            "b2": _zeros((d,)),
        }

    def __call__(self, x: Tensor) -> Tensor:
        p = self.params
        return (x @ p["w1"] + p["b1"]).gelu() @ p["w2"] + p["b2"]


class TransformerBlock:
    """Pre-norm residual block; sublayers depend on the attention scheme.

    vsta:     temporal attention (per viewport, rotary over frames),
              then spatial attention (per frame), then the MLP.
    vsa_only: spatial attention, then the MLP.
    joint:    one attention over all F*T tokens, then the MLP.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator, scheme: str):
        d = config.embed_dim
        self.scheme = scheme
        self.subs = {}
        if scheme == "vsta":
            self.temporal = MultiHeadAttention(config, rng, rotary=True)
            self.subs["temporal"] = self.temporal
        if scheme == "joint":
            self.joint = MultiHeadAttention(config, rng, rotary=False)
            self.subs["joint"] = self.joint
        if scheme in ("vsta", "vsa_only"):
            self.spatial = MultiHeadAttention(config, rng, rotary=False)
            self.subs["spatial"] = self.spatial
        self.mlp = FeedForward(config, rng)
        self.norms = {}
        for name in (*self.subs, "mlp"):
            self.norms[f"{name}_g"] = _ones((d,))
            self.norms[f"{name}_b"] = _zeros((d,))

    def _normed(self, x: Tensor, name: str) -> Tensor:
        return ad.layer_norm(x, self.norms[f"{name}_g"], self.norms[f"{name}_b"])

    def __call__(self, tokens: Tensor, counters: Counters, rotary_tabs) -> Tensor:
        """Tokens are (S, F, T, D); S independent tangent sets share weights.

        Attention always batches over (set, other axis), so tokens from
        different sets never attend to each other.
        """
        s, f, t, d = tokens.shape
        x = tokens
        if self.scheme == "vsta":
            # frames attend within each viewport: batch axis is (set, viewport)
            per_vp = self._normed(x, "temporal").transpose(0, 2, 1, 3).reshape(s * t, f, d)
            out = self.temporal(per_vp, counters, rotary_tabs)
            x = x + out.reshape(s, t, f, d).transpose(0, 2, 1, 3)
        if self.scheme == "joint":
            flat = self._normed(x, "joint").reshape(s, f * t, d)
            x = x + self.joint(flat, counters).reshape(s, f, t, d)
        if self.scheme in ("vsta", "vsa_only"):
            # viewports attend within each frame: batch axis is (set, frame)
            per_frame = self._normed(x, "spatial").reshape(s * f, t, d)
            x = x + self.spatial(per_frame, counters).reshape(s, f, t, d)
        x = x + self.mlp(self._normed(x, "mlp"))
        return x

    def named_params(self, prefix: str) -> dict:
        out = {}
        for sub_name, sub in (*self.subs.items(), ("mlp", self.mlp)):
            for k, v in sub.params.items():
                out[f"{prefix}/{sub_name}/{k}"] = v
        for k, v in self.norms.items():
            out[f"{prefix}/norm/{k}"] = v
        return out


class SphericalEmbed:
    """Affine map from pooled per-plane angular coordinates to token space."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.embed_dim
        n_in = 2 * config.feat_hw * config.feat_hw
        self.n_in = n_in
        self.params = {
            "w": _normal(rng, (n_in, d), 0.02),
            "b": _zeros((d,)),
        }

    def __call__(self, coords: np.ndarray) -> Tensor:
        if coords.ndim != 2 or coords.shape[1] != self.n_in:
            raise ValueError(
                f"expected pooled coordinates (T, {self.n_in}), got {coords.shape}"
            )
        return Tensor(coords) @ self.params["w"] + self.params["b"]


class Decoder:
    """Per-plane upsampling head: feat_hw grid to an 8x larger saliency patch.

    Three doubling stages (upsample, conv, channel norm, gelu), one
    resolution-preserving refinement stage, then a 1x1 conv and softplus.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.embed_dim
        widths = [d, max(d // 2, 8), max(d // 4, 8), max(d // 8, 8)]
        self.params = {}
        for i in range(3):
            std = math.sqrt(2.0 / (widths[i] * 9))
            self.params[f"up{i}_w"] = _normal(rng, (widths[i + 1], widths[i], 3, 3), std)
            self.params[f"up{i}_b"] = _zeros((widths[i + 1],))
            self.params[f"up{i}_g"] = _ones((widths[i + 1],))
            self.params[f"up{i}_n"] = _zeros((widths[i + 1],))
        c = widths[3]
        self.params["refine_w"] = _normal(rng, (c, c, 3, 3), math.sqrt(2.0 / (c * 9)))
        self.params["refine_b"] = _zeros((c,))
        self.params["refine_g"] = _ones((c,))
        self.params["refine_n"] = _zeros((c,))
        self.params["head_w"] = _normal(rng, (1, c, 1, 1), math.sqrt(2.0 / c))
        self.params["head_b"] = _zeros((1,))
        self.config = config

    def __call__(self, tokens: Tensor, skip: Tensor) -> Tensor:
        """tokens (T, D) + skip (T, D, fh, fh) -> saliency patches (T, 8*fh, 8*fh)."""
        t, d = tokens.shape
        fh = self.config.feat_hw
        if skip.shape != (t, d, fh, fh):
            raise ValueError(f"skip features {skip.shape} do not match tokens ({t}, {d})")
        p = self.params
        x = tokens.reshape(t, d, 1, 1) + skip
        for i in range(3):
            x = ad.upsample_nearest2x(x)
            x = ad.conv2d(x, p[f"up{i}_w"], p[f"up{i}_b"], padding=1)
            x = _channel_layer_norm(x, p[f"up{i}_g"], p[f"up{i}_n"]).gelu()
        x = ad.conv2d(x, p["refine_w"], p["refine_b"], padding=1)
        x = _channel_layer_norm(x, p["refine_g"], p["refine_n"]).gelu()
        x = ad.conv2d(x, p["head_w"], p["head_b"])
        out = self.config.decoder_out
        return x.softplus().reshape(t, out, out)


# -- geometry bundle -----------------------------------------------------------


@dataclass
class PlaneGeometry:
    """Everything the pipeline needs for one tangent layout."""

    layout: TangentLayout
    forward_grid: SamplingGrid
    inverse_grid: SamplingGrid
    weights: OverlapWeights
    pooled_coords: np.ndarray  # (T, 2 * feat_hw^2) for the position embedding


def _pool_block_mean(maps: np.ndarray, out_hw: int) -> np.ndarray:
    t, c, p, _ = maps.shape
    k = p // out_hw
    return maps.reshape(t, c, out_hw, k, out_hw, k).mean(axis=(3, 5))


def pooled_angular_coords(layout: TangentLayout, feat_hw: int) -> np.ndarray:
    """Average-pooled (phi, theta) grids, theta unwrapped around each center.

    Unwrapping keeps planes that straddle the longitude seam from averaging
    +pi with -pi into a bogus midpoint.
    """
    maps = angular_coordinate_maps(layout)  # (T, 2, p, p)
    t = maps.shape[0]
    unwrapped = maps.copy()
    for k in range(t):
        center = layout.centers[k].theta
        rel = np.mod(maps[k, 1] - center + np.pi, 2.0 * np.pi) - np.pi
        unwrapped[k, 1] = center + rel
    pooled = _pool_block_mean(unwrapped, feat_hw)
    return pooled.reshape(t, -1)


def backproject_op(stack: Tensor, grid: SamplingGrid, weights: OverlapWeights) -> Tensor:
    """Differentiable tangent-to-ERP blending; the op is linear so the VJP is its adjoint."""
    data = backproject_tangent_to_erp(stack.data, grid, weights)

    def vjp(g):
        return (backproject_vjp(g, grid, weights),)

    return ad.make_node(data, (stack,), vjp, "backproject")


# -- the pipeline -----------------------------------------------------------------


class Pipeline:
    """End-to-end saliency predictor for one ERP clip."""

    def __init__(self, config: ModelConfig, layout: TangentLayout, erp_h: int,
                 erp_w: int, seed: int = 0, cache_dir: str | None = None,
                 scheme: str = "vsta"):
        if scheme not in ATTENTION_SCHEMES:
            raise ValueError(f"unknown attention scheme {scheme!r}")
        if layout.patch_px != config.patch_px:
            raise ValueError(
                f"layout patch {layout.patch_px} differs from model patch {config.patch_px}"
            )
        self.config = config
        self.erp_h = erp_h
        self.erp_w = erp_w
        self.scheme = scheme
        self.cache_dir = cache_dir
        self.counters = Counters()
        rng = np.random.default_rng(seed)
        self.encoder = FrozenEncoder(config, rng)
        self.embed = SphericalEmbed(config, rng)
        self.blocks = [
            TransformerBlock(config, rng, scheme) for _ in range(config.depth)
        ]
        self.final_norm_g = _ones((config.embed_dim,))
        self.final_norm_b = _zeros((config.embed_dim,))
        self.decoder = Decoder(config, rng)
        self.rotary = rotary_tables(config.num_frames, config.head_dim)
        self.geometry = self.build_geometry(layout)

    # geometry ------------------------------------------------------------

    def build_geometry(self, layout: TangentLayout) -> PlaneGeometry:
        if layout.patch_px != self.config.patch_px:
            layout = replace(layout, patch_px=self.config.patch_px)
        if self.cache_dir is not None:
            fwd, inv, weights = grids_for_layout(
                layout, self.erp_h, self.erp_w,
                decode_px=self.config.decoder_out, cache_dir=self.cache_dir,
            )
        else:
            fwd = build_forward_grid(layout, self.erp_h, self.erp_w)
            inv, weights = build_inverse_grid(
                layout, self.erp_h, self.erp_w, patch_px=self.config.decoder_out
            )
        return PlaneGeometry(
            layout=layout,
            forward_grid=fwd,
            inverse_grid=inv,
            weights=weights,
            pooled_coords=pooled_angular_coords(layout, self.config.feat_hw),
        )

    # parameters ------------------------------------------------------------

    def named_parameters(self) -> dict:
        """Trainable tensors only; the frozen encoder is excluded."""
        out = {}
        for k, v in self.embed.params.items():
            out[f"embed/{k}"] = v
        for i, block in enumerate(self.blocks):
            out.update(block.named_params(f"block{i}"))
        out["final_norm/g"] = self.final_norm_g
        out["final_norm/b"] = self.final_norm_b
        for k, v in self.decoder.params.items():
            out[f"decoder/{k}"] = v
        return out

    def all_tensors(self) -> dict:
        """Trainable parameters plus the frozen encoder, for checkpointing."""
        out = dict(self.named_parameters())
        for k, v in self.encoder.params.items():
            out[f"encoder/{k}"] = v
        return out

    def save(self, path: str, extra_meta: dict | None = None):
        meta = {"config": self.config.to_dict(), "scheme": self.scheme}
        if extra_meta:
            meta.update(extra_meta)
        ad.save_checkpoint(path, self.all_tensors(), meta)

    def load(self, path: str) -> dict:
        arrays, meta = ad.load_checkpoint(path)
        ad.assign_checkpoint(self.all_tensors(), arrays)
        return meta

    # forward ------------------------------------------------------------

    def encode_clip(self, frames: np.ndarray, geometries):
        """Project + encode every set at once.

        (F, H, W) frames and S geometries become tokens (S, F, T, D) and
        features (S, F, T, D, fh, fh) through a single encoder call.
        """
        cfg = self.config
        f = frames.shape[0]
        if f != cfg.num_frames:
            raise ValueError(f"clip has {f} frames, model expects {cfg.num_frames}")
        if frames.shape[1:] != (self.erp_h, self.erp_w):
            raise ValueError(
                f"frames are {frames.shape[1:]}, pipeline is {(self.erp_h, self.erp_w)}"
            )
        s = len(geometries)
        t = geometries[0].layout.num_planes
        p = cfg.patch_px
        stack = np.empty((s, f, t, cfg.in_channels, p, p))
        for k, geom in enumerate(geometries):
            for i in range(f):
                stack[k, i, :, 0] = project_erp_to_tangent(frames[i], geom.forward_grid)
        feats = self.encoder(stack.reshape(s * f * t, cfg.in_channels, p, p))
        feats = feats.reshape(s, f, t, cfg.embed_dim, cfg.feat_hw, cfg.feat_hw)
        tokens = feats.mean(axis=(4, 5))
        return tokens, feats

    def _decoded_multi(self, frames: np.ndarray, geometries) -> list[Tensor]:
        """Shared trunk: per-set decoded tangent stacks, each (T, out, out)."""
        tokens_np, feats = self.encode_clip(frames, geometries)
        s, f, t, d = tokens_np.shape
        pos = ad.stack([self.embed(g.pooled_coords) for g in geometries])
        x = Tensor(tokens_np) + pos.reshape(s, 1, t, d)
        for block in self.blocks:
            x = block(x, self.counters, self.rotary)
        x = ad.layer_norm(x, self.final_norm_g, self.final_norm_b)
        last = x[:, f - 1].reshape(s * t, d)
        skip = Tensor(feats[:, f - 1].reshape(s * t, d,
                                              self.config.feat_hw, self.config.feat_hw))
        decoded = self.decoder(last, skip)
        return [decoded[k * t:(k + 1) * t] for k in range(s)]

    def _forward_multi(self, frames: np.ndarray, geometries) -> list[Tensor]:
        out = []
        for geom, decoded in zip(geometries, self._decoded_multi(frames, geometries)):
            erp = backproject_op(decoded, geom.inverse_grid, geom.weights)
            out.append(erp / erp.sum())
        return out

    def forward(self, frames: np.ndarray, geometry: PlaneGeometry | None = None,
                augmented: bool = False) -> Tensor:
        """Full pipeline; returns a saliency Tensor (H, W) summing to 1."""
        geometry = geometry or self.geometry
        if augmented:
            self.counters.augmented_tangent_sets += 1
        else:
            self.counters.tangent_sets += 1
        return self._forward_multi(frames, [geometry])[0]

    def forward_pair(self, frames: np.ndarray, geom_b: PlaneGeometry,
                     geom_a: PlaneGeometry | None = None):
        """Predictions from two tangent sets through shared weights.

        When the sets have equal plane counts the whole trunk runs as one
        batched pass (attention batches per set, so tokens never cross),
        which is what keeps the second set far cheaper than a second full
        prediction. Unequal counts fall back to two passes.
        """
        geom_a = geom_a or self.geometry
        self.counters.tangent_sets += 1
        self.counters.augmented_tangent_sets += 1
        if geom_a.layout.num_planes == geom_b.layout.num_planes:
            a, b = self._forward_multi(frames, [geom_a, geom_b])
        else:
            a = self._forward_multi(frames, [geom_a])[0]
            b = self._forward_multi(frames, [geom_b])[0]
        return a, b

    def predict(self, frames: np.ndarray, geometry: PlaneGeometry | None = None,
                augmented: bool = False) -> np.ndarray:
        with ad.no_grad():
            out = self.forward(frames, geometry, augmented=augmented)
        return out.data

    def decoded_tangent(self, frames: np.ndarray,
                        geometry: PlaneGeometry | None = None) -> np.ndarray:
        """The per-plane saliency patches before blending, for diagnostics."""
        geometry = geometry or self.geometry
        with ad.no_grad():
            decoded = self._decoded_multi(frames, [geometry])[0]
        return decoded.data


# -- fusion and baselines ----------------------------------------------------------


def late_fuse(p: np.ndarray, p_prime: np.ndarray) -> np.ndarray:
    """Pointwise product of two normalized maps, renormalized."""
    if p.shape != p_prime.shape:
        raise ValueError("fusion inputs must share dimensions")
    fused = p * p_prime
    total = fused.sum()
    if total <= 0.0:
        raise ValueError("degenerate fusion: the predictions have disjoint support")
    return fused / total


def ema_baseline(predictions, decay: float) -> np.ndarray:
    """Exponential moving average over consecutive predictions, renormalized."""
    if len(predictions) == 0:
        raise ValueError("no predictions to aggregate")
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must be in (0, 1]")
    n = len(predictions)
    weights = np.array([decay ** (n - 1 - i) for i in range(n)])
    weights = weights / weights.sum()
    out = np.zeros_like(np.asarray(predictions[0], dtype=float))
    for w, pred in zip(weights, predictions):
        out = out + w * np.asarray(pred, dtype=float)
    return out / out.sum()


def plane_samples(stack: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    """Per-plane bilinear values on the ERP raster, (H, W, T); zero outside each footprint."""
    t, p, _ = stack.shape
    out = np.zeros((grid.erp_h, grid.erp_w, t))
    for k in range(t):
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
        img = stack[k]
        out[mask, k] = (
            img[u0c, v0c] * (1 - fu) * (1 - fv)
            + img[u0c, v1c] * (1 - fu) * fv
            + img[u1c, v0c] * fu * (1 - fv)
            + img[u1c, v1c] * fu * fv
        )
    return out


def seam_discrepancy(stack: np.ndarray, grid: SamplingGrid,
                     weights: OverlapWeights) -> float:
    """Mean absolute disagreement between overlapping planes' predictions.

    Per-plane values are scaled by the blended map's total mass so the
    statistic compares normalized predictions, then averaged over all plane
    pairs at every pixel covered by at least two planes.
    """
    total = backproject_tangent_to_erp(stack, grid, weights).sum()
    if total <= 0:
        raise ValueError("cannot normalize an all-zero prediction")
    values = plane_samples(stack, grid) / total
    valid = grid.valid
    t = valid.shape[2]
    diff_sum = np.zeros((grid.erp_h, grid.erp_w))
    pair_count = np.zeros((grid.erp_h, grid.erp_w))
    for a in range(t):
        for b in range(a + 1, t):
            both = valid[:, :, a] & valid[:, :, b]
            diff_sum[both] += np.abs(values[:, :, a][both] - values[:, :, b][both])
            pair_count[both] += 1
    overlap = pair_count > 0
    if not overlap.any():
        raise ValueError("layout has no overlapping planes")
    return float((diff_sum[overlap] / pair_count[overlap]).mean())
