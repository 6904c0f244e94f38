"""Clip file I/O and the synthetic spherical-Gaussian dataset generator.

Frames are 8-bit PNG or PGM, density maps are grayscale PFM (little-endian
float32, bottom-to-top rows per the format), fixation maps are PGM with 255 at
fixated pixels. A clip on disk is a directory

    clip_name/
        frames/0000.png ...
        density/0000.pfm ...
        fixations/0000.pgm ...
        manifest.json

The synthetic generator renders drifting spherical Gaussian sources; the
ground-truth density uses great-circle distance so targets stay correct under
ERP distortion, which is exactly what the tangent-plane pipeline should
exploit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .sphere import erp_pixel_angles

DEFAULT_FIXATIONS_PER_FRAME = 31


class AspectRatioError(ValueError):
    """Raised when an ERP raster is not 2:1."""


def _check_aspect(shape):
    if len(shape) != 2 or shape[1] != 2 * shape[0]:
        raise AspectRatioError(f"expected a 2:1 ERP raster, got shape {shape}")


# -- low-level formats -------------------------------------------------------


def write_pfm(path: str, arr: np.ndarray):
    """Grayscale PFM, float32 little-endian, rows stored bottom-to-top."""
    arr32 = np.asarray(arr, dtype="<f4")
    if arr32.ndim != 2:
        raise ValueError("PFM writer takes a 2-D map")
    h, w = arr32.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr32).tobytes())


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM (magic {magic!r})")
        try:
            w, h = (int(tok) for tok in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise ValueError(f"{path}: malformed PFM header") from exc
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read(4 * w * h)
    if len(raw) != 4 * w * h:
        raise ValueError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float64)


def _read_gray_image(path: str) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float64) / 255.0


def _write_gray_image(path: str, arr: np.ndarray):
    quantized = np.clip(np.asarray(arr, dtype=float), 0.0, 1.0)
    img = Image.fromarray(np.round(quantized * 255.0).astype(np.uint8), mode="L")
    img.save(path)


def read_frame(path: str) -> np.ndarray:
    """Load an ERP raster as float64; PNG/PGM scale to [0,1], PFM stays raw."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        arr = read_pfm(path)
    elif ext in (".png", ".pgm"):
        arr = _read_gray_image(path)
    else:
        raise ValueError(f"unsupported frame format {ext!r}")
    _check_aspect(arr.shape)
    return arr


def write_frame(path: str, arr: np.ndarray):
    arr = np.asarray(arr, dtype=float)
    _check_aspect(arr.shape)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        write_pfm(path, arr)
    elif ext in (".png", ".pgm"):
        _write_gray_image(path, arr)
    else:
        raise ValueError(f"unsupported frame format {ext!r}")


# simple dark-to-hot color ramp for visualizing saliency
_HEAT_ANCHORS = np.array([
    [0.00, 0.00, 0.20],
    [0.05, 0.05, 0.90],
    [0.00, 0.80, 0.95],
    [0.10, 0.90, 0.10],
    [0.95, 0.90, 0.10],
    [0.95, 0.10, 0.05],
    [1.00, 1.00, 1.00],
])


def save_heatmap_png(path: str, arr: np.ndarray):
    """Peak-normalized false-color rendering of a saliency map."""
    arr = np.asarray(arr, dtype=float)
    peak = arr.max()
    norm = arr / peak if peak > 0 else arr
    stops = np.linspace(0.0, 1.0, len(_HEAT_ANCHORS))
    rgb = np.stack(
        [np.interp(norm, stops, _HEAT_ANCHORS[:, ch]) for ch in range(3)], axis=-1
    )
    Image.fromarray(np.round(rgb * 255.0).astype(np.uint8), mode="RGB").save(path)


# -- synthetic scenes ---------------------------------------------------------


@dataclass(frozen=True)
class SourceSpec:
    """One drifting spherical Gaussian: start direction, drift, shape."""

    phi: float
    theta: float
    axis: tuple
    drift_rate: float  # radians per frame along the great circle
    angular_std: float  # radians
    amplitude: float

    def __post_init__(self):
        if not 0.0 < self.angular_std <= math.pi / 4:
            raise ValueError("angular std must be in (0, pi/4]")
        if self.amplitude <= 0.0:
            raise ValueError("amplitude must be positive")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    sources: tuple
    seed: int = 0


def random_scene(num_sources: int, seed: int) -> SyntheticSceneSpec:
    """Draw a reproducible scene: centers, drift axes and shapes from one seed."""
    rng = np.random.default_rng(seed)
    sources = []
    for _ in range(num_sources):
        phi = math.asin(rng.uniform(-0.95, 0.95))  # keep sources off the poles
        theta = rng.uniform(-math.pi, math.pi)
        axis = rng.normal(size=3)
        axis = axis / np.linalg.norm(axis)
        sources.append(
            SourceSpec(
                phi=phi,
                theta=theta,
                axis=tuple(float(a) for a in axis),
                drift_rate=float(rng.uniform(0.01, 0.05)),
                angular_std=float(rng.uniform(0.12, 0.35)),
                amplitude=float(rng.uniform(0.5, 1.0)),
            )
        )
    return SyntheticSceneSpec(sources=tuple(sources), seed=seed)


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * float(axis @ v) * (1.0 - c)


def source_position(src: SourceSpec, frame_idx: int) -> tuple:
    """(phi, theta) of the source after drifting frame_idx steps."""
    v = np.array([
        math.cos(src.phi) * math.cos(src.theta),
        math.cos(src.phi) * math.sin(src.theta),
        math.sin(src.phi),
    ])
    axis = np.asarray(src.axis, dtype=float)
    v = _rotate_about(v, axis / np.linalg.norm(axis), src.drift_rate * frame_idx)
    v = v / np.linalg.norm(v)
    return math.asin(max(-1.0, min(1.0, v[2]))), math.atan2(v[1], v[0])


def _pixel_unit_vectors(erp_h: int, erp_w: int) -> np.ndarray:
    ph, th = erp_pixel_angles(erp_h, erp_w)
    return np.stack(
        [np.cos(ph) * np.cos(th), np.cos(ph) * np.sin(th), np.sin(ph)], axis=-1
    )


def density_for_frame(spec: SyntheticSceneSpec, frame_idx: int,
                      erp_h: int, erp_w: int) -> np.ndarray:
    """Sum of spherical Gaussians by great-circle distance, normalized to 1."""
    if not spec.sources:
        raise ValueError("scene has no sources")
    vecs = _pixel_unit_vectors(erp_h, erp_w)
    dens = np.zeros((erp_h, erp_w))
    for src in spec.sources:
        phi, theta = source_position(src, frame_idx)
        center = np.array([
            math.cos(phi) * math.cos(theta),
            math.cos(phi) * math.sin(theta),
            math.sin(phi),
        ])
        # chord length -> central angle; accurate near zero where it matters
        chord = np.linalg.norm(vecs - center, axis=-1)
        dist = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
        dens += src.amplitude * np.exp(-0.5 * (dist / src.angular_std) ** 2)
    return dens / dens.sum()


def sample_fixations(density: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Flat pixel indices drawn from the density (with replacement)."""
    p = np.asarray(density, dtype=float).ravel()
    return rng.choice(p.size, size=n, p=p / p.sum())


def generate_synthetic_clip(spec: SyntheticSceneSpec, num_frames: int,
                            erp_h: int, erp_w: int,
                            fixations_per_frame: int = DEFAULT_FIXATIONS_PER_FRAME):
    """Render frames, densities and fixation maps; fully determined by the seed."""
    if not spec.sources:
        raise ValueError("scene has no sources")
    if num_frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(spec.seed)
    ph, th = erp_pixel_angles(erp_h, erp_w)
    c0, c1, c2 = rng.uniform(0, 2 * math.pi, size=3)
    background = (
        0.3
        + 0.08 * np.sin(th + c0) * np.cos(ph + c1)
        + 0.05 * np.sin(2.0 * th + c2)
    )
    frames = np.empty((num_frames, erp_h, erp_w))
    densities = np.empty((num_frames, erp_h, erp_w))
    fixations = np.zeros((num_frames, erp_h, erp_w))
    for t in range(num_frames):
        dens = density_for_frame(spec, t, erp_h, erp_w)
        densities[t] = dens
        bump = dens / dens.max()
        frames[t] = np.clip(background + 0.55 * bump, 0.0, 1.0)
        idx = sample_fixations(dens, fixations_per_frame, rng)
        fixations[t].ravel()[idx] = 1.0
    return frames, densities, fixations


# -- clip manifests ------------------------------------------------------------


@dataclass
class ClipManifest:
    """Paths and metadata for one clip; paths are relative to ``root``."""

    name: str
    fps: float
    erp_h: int
    erp_w: int
    frames: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    fixations: list = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        if not len(self.frames) == len(self.densities) == len(self.fixations):
            raise ValueError("frame, density and fixation lists must align")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def load_frame(self, i: int) -> np.ndarray:
        return read_frame(self.path(self.frames[i]))

    def load_density(self, i: int) -> np.ndarray:
        return read_frame(self.path(self.densities[i]))

    def load_fixation(self, i: int) -> np.ndarray:
        return (read_frame(self.path(self.fixations[i])) > 0.5).astype(float)

    def validate(self):
        """Check that every referenced file exists with the declared dims."""
        for rel in [*self.frames, *self.densities, *self.fixations]:
            full = self.path(rel)
            if not os.path.exists(full):
                raise FileNotFoundError(full)
            h, w = _probe_dims(full)
            if (h, w) != (self.erp_h, self.erp_w):
                raise ValueError(
                    f"{full}: dims {h}x{w} do not match manifest "
                    f"{self.erp_h}x{self.erp_w}"
                )


def _probe_dims(path: str) -> tuple:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        with open(path, "rb") as fh:
            if fh.readline().strip() != b"Pf":
                raise ValueError(f"{path}: not a grayscale PFM")
            w, h = (int(tok) for tok in fh.readline().split())
        return h, w
    with Image.open(path) as img:
        return img.size[1], img.size[0]


def save_manifest(manifest: ClipManifest, path: str):
    blob = {
        "name": manifest.name,
        "fps": manifest.fps,
        "erp_h": manifest.erp_h,
        "erp_w": manifest.erp_w,
        "frames": manifest.frames,
        "densities": manifest.densities,
        "fixations": manifest.fixations,
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> ClipManifest:
    with open(path) as fh:
        blob = json.load(fh)
    return ClipManifest(
        name=blob["name"],
        fps=blob["fps"],
        erp_h=blob["erp_h"],
        erp_w=blob["erp_w"],
        frames=list(blob["frames"]),
        densities=list(blob["densities"]),
        fixations=list(blob["fixations"]),
        root=os.path.dirname(os.path.abspath(path)),
    )


def write_clip(root: str, name: str, frames: np.ndarray, densities: np.ndarray,
               fixations: np.ndarray, fps: float = 16.0) -> str:
    """Write a clip directory plus manifest.json; returns the manifest path."""
    clip_dir = os.path.join(root, name)
    for sub in ("frames", "density", "fixations"):
        os.makedirs(os.path.join(clip_dir, sub), exist_ok=True)
    n, h, w = frames.shape
    manifest = ClipManifest(name=name, fps=fps, erp_h=h, erp_w=w, root=clip_dir)
    for i in range(n):
        f_rel = f"frames/{i:04d}.png"
        d_rel = f"density/{i:04d}.pfm"
        x_rel = f"fixations/{i:04d}.pgm"
        write_frame(os.path.join(clip_dir, f_rel), frames[i])
        write_frame(os.path.join(clip_dir, d_rel), densities[i])
        write_frame(os.path.join(clip_dir, x_rel), fixations[i])
        manifest.frames.append(f_rel)
        manifest.densities.append(d_rel)
        manifest.fixations.append(x_rel)
    manifest_path = os.path.join(clip_dir, "manifest.json")
    save_manifest(manifest, manifest_path)
    return manifest_path


# -- window sampling ------------------------------------------------------------


def window_starts(n_frames: int, f: int, stride: int) -> list:
    """Start indices of F-frame windows; the last window ends on the final frame."""
    if f > n_frames:
        raise ValueError(f"window of {f} frames exceeds clip length {n_frames}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = list(range(0, n_frames - f + 1, stride))
    if starts[-1] != n_frames - f:
        starts.append(n_frames - f)
    return starts


def clip_sampler(manifest: ClipManifest, f: int, stride: int = 1):
    """Yield lists of frame indices, one per window."""
    for start in window_starts(manifest.n_frames, f, stride):
        yield list(range(start, start + f))
