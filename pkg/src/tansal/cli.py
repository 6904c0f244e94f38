"""Command-line interface for the tangent-viewport saliency pipeline.

Subcommands cover the whole workflow: synthesize toy clips, project and
backproject single images, train, predict, evaluate, fuse two prediction
sets, and benchmark the attention factoring. Everything is plain files in,
plain files out; exit codes are 0 (ok), 1 (runtime failure), 2 (usage or
config error).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from .dataio import (
    ClipManifest,
    clip_sampler,
    generate_synthetic_clip,
    load_manifest,
    random_scene,
    read_frame,
    read_pfm,
    save_heatmap_png,
    window_starts,
    write_clip,
    write_frame,
    write_pfm,
)
from .losses import supervised_loss, vac_loss
from .metrics import evaluate_batch, kld_metric, write_report_csv
from .model import (
    ModelConfig,
    Pipeline,
    TransformerBlock,
    attention_pair_count,
    Counters,
    ema_baseline,
    late_fuse,
    rotary_tables,
)
from .sphere import (
    AugmentSpec,
    LayoutError,
    TangentLayout,
    augment_layout,
    backproject_tangent_to_erp,
    build_forward_grid,
    build_inverse_grid,
    layout_from_json,
    layout_to_json,
    make_layout,
    project_erp_to_tangent,
)


class UsageError(ValueError):
    """Bad arguments or configuration; maps to exit code 2."""


DEFAULT_CONFIG = {
    "seed": 0,
    "scheme": "vsta",
    "out_dir": "runs/default",
    "layout": {"kind": "ring", "planes": 10, "fov_deg": 120.0},
    "model": {
        "num_frames": 8,
        "embed_dim": 512,
        "heads": 8,
        "depth": 6,
        "patch_px": 224,
        "feat_hw": 7,
    },
    "optim": {
        "lr": 1e-5,
        "weight_decay": 1e-2,
        "betas": [0.9, 0.999],
        "batch_size": 16,
        "epochs": 5,
        "patience": 1,
    },
    "loss": {
        "vac": False,
        "lam": 1.0,
        "mask_mode": "blend",
        "alpha": 0.005,
        "eps": 1e-7,
        "cc_mode": "cosine",
        "aug_shift_deg": None,
    },
    "data": {
        "train": [],
        "val": [],
        "stride": 1,
        "overfit": False,
        "max_steps": None,
        "save_every": 100,
    },
}


# -- config plumbing -----------------------------------------------------------


def _set_by_path(cfg: dict, dotted: str, raw: str):
    node = cfg
    parts = dotted.split(".")
    for key in parts[:-1]:
        if not isinstance(node.get(key), dict):
            raise UsageError(f"unknown config section {dotted!r}")
        node = node[key]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are fine
    node[parts[-1]] = value


def load_config(path: str | None, overrides) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            user = json.load(fh)
        for section, value in user.items():
            if section not in cfg:
                raise UsageError(f"unknown config section {section!r}")
            if isinstance(cfg[section], dict):
                for key, sub in value.items():
                    if key not in cfg[section]:
                        raise UsageError(f"unknown config key {section}.{key!r}")
                    cfg[section][key] = sub
            else:
                cfg[section] = value
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        _set_by_path(cfg, dotted, raw)
    return cfg


def layout_from_config(cfg: dict, patch_px: int) -> TangentLayout:
    spec = cfg["layout"]
    return make_layout(
        spec["kind"],
        spec.get("planes"),
        fov_deg=spec.get("fov_deg", 80.0),
        patch_px=patch_px,
        centers=spec.get("centers"),
    )


def parse_layout_arg(arg: str, patch_px: int) -> TangentLayout:
    """Either a layout JSON file or a compact kind:planes:fov spec."""
    if arg.endswith(".json"):
        if not os.path.exists(arg):
            raise UsageError(f"layout file not found: {arg}")
        with open(arg) as fh:
            layout = layout_from_json(fh.read())
        if layout.patch_px != patch_px:
            from dataclasses import replace

            layout = replace(layout, patch_px=patch_px)
        return layout
    parts = arg.split(":")
    if len(parts) != 3:
        raise UsageError(f"layout spec must be kind:planes:fov or a .json path, got {arg!r}")
    kind, planes, fov = parts
    return make_layout(kind, int(planes), fov_deg=float(fov), patch_px=patch_px)


def auto_shift_deg(layout: TangentLayout) -> float:
    """Default augmentation: rotate by half the ring step, or 10 degrees."""
    if layout.kind == "ring" and layout.num_planes > 2:
        return 180.0 / (layout.num_planes - 2)
    return 10.0


def resolve_augmented(pipe: Pipeline, cfg: dict):
    shift = cfg["loss"]["aug_shift_deg"]
    if shift is None:
        shift = auto_shift_deg(pipe.geometry.layout)
    aug_layout = augment_layout(pipe.geometry.layout, AugmentSpec.shift(float(shift)))
    return pipe.build_geometry(aug_layout)


def build_pipeline_from_checkpoint(path: str) -> tuple[Pipeline, dict]:
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    arrays, meta = ad.load_checkpoint(path)
    for key in ("config", "layout", "erp_h", "erp_w"):
        if key not in meta:
            raise UsageError(f"checkpoint {path} lacks {key!r} metadata")
    model_cfg = ModelConfig(**meta["config"])
    layout = layout_from_json(meta["layout"])
    # training leaves a grid cache next to the checkpoint; reuse it here so
    # prediction startup is not dominated by rebuilding inverse grids
    cache = os.path.join(os.path.dirname(os.path.abspath(path)), "grid_cache")
    pipe = Pipeline(model_cfg, layout, meta["erp_h"], meta["erp_w"],
                    seed=meta.get("seed", 0), scheme=meta.get("scheme", "vsta"),
                    cache_dir=cache)
    ad.assign_checkpoint(pipe.all_tensors(), arrays)
    return pipe, meta


def _load_clip_frames(manifest: ClipManifest) -> np.ndarray:
    frames = np.stack([manifest.load_frame(i) for i in range(manifest.n_frames)])
    return frames


# -- synth ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.height < 8 or args.height % 2:
        raise UsageError("height must be an even number >= 8")
    width = 2 * args.height
    for c in range(args.clips):
        scene = random_scene(args.sources, seed=args.seed + c)
        frames, densities, fixations = generate_synthetic_clip(
            scene, args.frames, args.height, width
        )
        manifest_path = write_clip(args.out, f"clip{c:03d}", frames, densities,
                                   fixations, fps=args.fps)
        print(manifest_path)
    return 0


# -- project / backproject -----------------------------------------------------------


def cmd_project(args) -> int:
    image = read_frame(args.image)
    h, w = image.shape
    layout = parse_layout_arg(args.layout, args.patch)
    grid = build_forward_grid(layout, h, w)
    patches = project_erp_to_tangent(image, grid)
    os.makedirs(args.out, exist_ok=True)
    for k in range(layout.num_planes):
        write_pfm(os.path.join(args.out, f"patch_{k:02d}.pfm"), patches[k])
    _, weights = build_inverse_grid(layout, h, w, patch_px=args.patch)
    print(f"planes={layout.num_planes} patch={args.patch} "
          f"coverage={weights.coverage_fraction:.6f}")
    return 0


def cmd_backproject(args) -> int:
    names = sorted(n for n in os.listdir(args.patches) if n.endswith(".pfm"))
    if not names:
        raise UsageError(f"no .pfm patches in {args.patches}")
    stack = np.stack([read_pfm(os.path.join(args.patches, n)) for n in names])
    layout = parse_layout_arg(args.layout, stack.shape[1])
    if layout.num_planes != stack.shape[0]:
        raise UsageError(
            f"layout has {layout.num_planes} planes but {stack.shape[0]} patches found"
        )
    h = args.height
    grid, weights = build_inverse_grid(layout, h, 2 * h, patch_px=stack.shape[1])
    erp = backproject_tangent_to_erp(stack, grid, weights)
    write_frame(args.out, erp)
    print(f"coverage={weights.coverage_fraction:.6f}")
    if args.reference:
        ref = read_frame(args.reference)
        if ref.shape != erp.shape:
            raise UsageError("reference dimensions do not match the reconstruction")
        mse = float(np.mean((ref - erp) ** 2))
        peak = float(ref.max())
        psnr = math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)
        print(f"psnr_db={psnr:.3f}")
    return 0


# -- train ------------------------------------------------------------------------


def _gather_windows(manifests, f, stride):
    windows = []
    for mi, manifest in enumerate(manifests):
        for idx in clip_sampler(manifest, f, stride):
            windows.append((mi, idx))
    return windows


def _window_tensors(manifests, frame_cache, window):
    mi, idx = window
    manifest = manifests[mi]
    if mi not in frame_cache:
        frame_cache[mi] = _load_clip_frames(manifest)
    frames = frame_cache[mi][idx]
    last = idx[-1]
    q_s = manifest.load_density(last)
    q_f = manifest.load_fixation(last)
    return frames, q_s, q_f


def _validation_kld(pipe, manifests, f, stride, frame_cache) -> float:
    values = []
    for window in _gather_windows(manifests, f, stride):
        frames, q_s, _ = _window_tensors(manifests, frame_cache, window)
        pred = pipe.predict(frames)
        values.append(kld_metric(pred, q_s))
    return float(np.mean(values))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if not cfg["data"]["train"]:
        raise UsageError("config data.train lists no manifests")
    manifests = []
    for path in cfg["data"]["train"]:
        if not os.path.exists(path):
            raise UsageError(f"manifest not found: {path}")
        manifests.append(load_manifest(path))
    val_manifests = []
    for path in cfg["data"]["val"]:
        if not os.path.exists(path):
            raise UsageError(f"manifest not found: {path}")
        val_manifests.append(load_manifest(path))
    erp_h, erp_w = manifests[0].erp_h, manifests[0].erp_w
    for m in manifests + val_manifests:
        if (m.erp_h, m.erp_w) != (erp_h, erp_w):
            raise UsageError(f"clip {m.name} dims differ from the first manifest")

    try:
        model_cfg = ModelConfig(**cfg["model"])
        layout = layout_from_config(cfg, model_cfg.patch_px)
    except (TypeError, ValueError, LayoutError) as exc:
        raise UsageError(f"bad model/layout config: {exc}") from exc
    pipe = Pipeline(model_cfg, layout, erp_h, erp_w, seed=cfg["seed"],
                    scheme=cfg["scheme"],
                    cache_dir=os.path.join(out_dir, "grid_cache"))

    loss_cfg = cfg["loss"]
    use_vac = bool(loss_cfg["vac"])
    aug_geom = resolve_augmented(pipe, cfg) if use_vac else None
    w_mask = (pipe.geometry.weights.consistency_mask(loss_cfg["mask_mode"])
              if use_vac else None)

    optim_cfg = cfg["optim"]
    params = pipe.named_parameters()
    opt = ad.AdamW(params.values(), lr=optim_cfg["lr"],
                   betas=tuple(optim_cfg["betas"]),
                   weight_decay=optim_cfg["weight_decay"])

    windows = _gather_windows(manifests, model_cfg.num_frames, cfg["data"]["stride"])
    if not windows:
        raise UsageError("no training windows; clips shorter than num_frames?")
    rng = np.random.default_rng(cfg["seed"])
    frame_cache = {}
    batch_size = int(optim_cfg["batch_size"])
    max_steps = cfg["data"]["max_steps"]
    overfit = bool(cfg["data"]["overfit"])
    save_every = int(cfg["data"]["save_every"])

    log_path = os.path.join(out_dir, "loss_log.csv")
    ckpt_path = os.path.join(out_dir, "model.npz")
    columns = ["step", "supervised"] + (["vac", "total"] if use_vac else [])
    log_fh = open(log_path, "w", newline="")
    log = csv.writer(log_fh)
    log.writerow(columns)

    def save(step, val_kld=None):
        meta = {
            "config": model_cfg.to_dict(),
            "layout": layout_to_json(pipe.geometry.layout),
            "erp_h": erp_h,
            "erp_w": erp_w,
            "seed": cfg["seed"],
            "scheme": cfg["scheme"],
            "step": step,
        }
        if val_kld is not None:
            meta["val_kld"] = val_kld
        pipe.save(ckpt_path, extra_meta=meta)

    def batch_loss(batch):
        sup_total = None
        vac_total = None
        for window in batch:
            frames, q_s, q_f = _window_tensors(manifests, frame_cache, window)
            if use_vac:
                p, p_prime = pipe.forward_pair(frames, aug_geom)
                term = (supervised_loss(p, q_s, q_f, alpha=loss_cfg["alpha"],
                                        eps=loss_cfg["eps"])
                        + supervised_loss(p_prime, q_s, q_f, alpha=loss_cfg["alpha"],
                                          eps=loss_cfg["eps"]))
                vterm = vac_loss(p, p_prime, w_mask, mode=loss_cfg["cc_mode"],
                                 eps=loss_cfg["eps"])
                vac_total = vterm if vac_total is None else vac_total + vterm
            else:
                p = pipe.forward(frames)
                term = supervised_loss(p, q_s, q_f, alpha=loss_cfg["alpha"],
                                       eps=loss_cfg["eps"])
            sup_total = term if sup_total is None else sup_total + term
        scale = 1.0 / len(batch)
        return sup_total * scale, None if vac_total is None else vac_total * scale

    step = 0
    best_val = math.inf
    bad_epochs = 0
    saved_once = False
    ad.set_finite_checks(True)
    try:
        for epoch in range(int(optim_cfg["epochs"])):
            order = np.arange(len(windows))
            if not overfit:
                rng.shuffle(order)
            for start in range(0, len(order), batch_size):
                if overfit:
                    batch = [windows[0]] * min(batch_size, len(windows))
                else:
                    batch = [windows[i] for i in order[start:start + batch_size]]
                opt.zero_grad()
                sup, vac = batch_loss(batch)
                total = sup if vac is None else sup + loss_cfg["lam"] * vac
                value = total.item()
                if not math.isfinite(value):
                    raise FloatingPointError(f"loss became {value} at step {step}")
                total.backward()
                opt.step()
                step += 1
                if use_vac:
                    log.writerow([step, repr(sup.item()), repr(vac.item()), repr(value)])
                else:
                    log.writerow([step, repr(value)])
                if step % save_every == 0:
                    save(step)
                    saved_once = True
                if max_steps is not None and step >= max_steps:
                    break
            if max_steps is not None and step >= max_steps:
                break
            if val_manifests:
                val = _validation_kld(pipe, val_manifests, model_cfg.num_frames,
                                      cfg["data"]["stride"], frame_cache)
                print(f"epoch={epoch + 1} val_kld={val:.6f}")
                if val < best_val:
                    best_val = val
                    bad_epochs = 0
                    save(step, val_kld=val)
                    saved_once = True
                else:
                    bad_epochs += 1
                    if bad_epochs > int(optim_cfg["patience"]):
                        print(f"early stop after epoch {epoch + 1}")
                        break
    except (FloatingPointError, ValueError) as exc:
        log_fh.close()
        kept = f"; kept last checkpoint {ckpt_path}" if saved_once else ""
        print(f"error: training aborted: {exc}{kept}", file=sys.stderr)
        return 1
    finally:
        ad.set_finite_checks(False)
        if not log_fh.closed:
            log_fh.close()

    if not val_manifests:
        save(step, val_kld=None)
    print(f"steps={step} checkpoint={ckpt_path} log={log_path}")
    return 0


# -- predict / eval / fuse / bench ---------------------------------------------------


def _predict_windows(pipe, manifest, stride):
    frames = _load_clip_frames(manifest)
    results = []
    for idx in clip_sampler(manifest, pipe.config.num_frames, stride):
        pred = pipe.predict(frames[idx])
        results.append((idx[-1], pred))
    return results


def cmd_predict(args) -> int:
    pipe, meta = build_pipeline_from_checkpoint(args.checkpoint)
    if not os.path.exists(args.clip):
        raise UsageError(f"clip manifest not found: {args.clip}")
    manifest = load_manifest(args.clip)
    if (manifest.erp_h, manifest.erp_w) != (pipe.erp_h, pipe.erp_w):
        raise UsageError("clip dimensions do not match the checkpoint")
    os.makedirs(args.out, exist_ok=True)
    pipe.counters.reset()
    results = _predict_windows(pipe, manifest, args.stride)
    for last, pred in results:
        write_pfm(os.path.join(args.out, f"{last:04d}.pfm"), pred)
        save_heatmap_png(os.path.join(args.out, f"{last:04d}.png"), pred)
    if args.ema is not None:
        agg = ema_baseline([p for _, p in results], decay=args.ema)
        write_pfm(os.path.join(args.out, "ema.pfm"), agg)
        save_heatmap_png(os.path.join(args.out, "ema.png"), agg)
    print(f"windows={len(results)} tangent_sets={pipe.counters.tangent_sets} "
          f"augmented_tangent_sets={pipe.counters.augmented_tangent_sets}")
    return 0


def _indexed_pfms(directory: str) -> dict:
    out = {}
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext == ".pfm" and stem.isdigit():
            out[int(stem)] = os.path.join(directory, name)
    return out


def cmd_eval(args) -> int:
    if not os.path.isdir(args.pred):
        raise UsageError(f"prediction directory not found: {args.pred}")
    if not os.path.exists(args.clip):
        raise UsageError(f"clip manifest not found: {args.clip}")
    manifest = load_manifest(args.clip)
    files = _indexed_pfms(args.pred)
    if not files:
        raise UsageError(f"no indexed .pfm predictions in {args.pred}")
    preds, gts, fixs, ids = [], [], [], []
    for idx in sorted(files):
        if idx >= manifest.n_frames:
            raise UsageError(f"prediction {idx:04d}.pfm is past the clip's last frame")
        p = read_pfm(files[idx])
        q_s = manifest.load_density(idx)
        if p.shape != q_s.shape:
            raise UsageError(
                f"prediction {idx:04d}.pfm is {p.shape}, clip is {q_s.shape}"
            )
        preds.append(p)
        gts.append(q_s)
        fixs.append(manifest.load_fixation(idx))
        ids.append(idx)
    report = evaluate_batch(preds, gts, fixs, frame_ids=ids)
    write_report_csv(report, args.out)
    means = " ".join(f"{k}={v:.6f}" for k, v in report.means().items())
    print(f"frames={len(ids)} {means}")
    return 0


def cmd_fuse(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = None
    if args.clip:
        if not os.path.exists(args.clip):
            raise UsageError(f"clip manifest not found: {args.clip}")
        manifest = load_manifest(args.clip)

    if args.both_sets:
        if not args.checkpoint:
            raise UsageError("--both-sets needs --checkpoint")
        if manifest is None:
            raise UsageError("--both-sets needs --clip")
        pipe, _ = build_pipeline_from_checkpoint(args.checkpoint)
        if (manifest.erp_h, manifest.erp_w) != (pipe.erp_h, pipe.erp_w):
            raise UsageError("clip dimensions do not match the checkpoint")
        shift = args.shift_deg or auto_shift_deg(pipe.geometry.layout)
        aug_geom = pipe.build_geometry(
            augment_layout(pipe.geometry.layout, AugmentSpec.shift(shift))
        )
        pipe.counters.reset()
        frames = _load_clip_frames(manifest)
        singles, fused_list = [], []
        for idx in clip_sampler(manifest, pipe.config.num_frames, args.stride):
            with ad.no_grad():
                a, b = pipe.forward_pair(frames[idx], aug_geom)
            fused = late_fuse(a.data, b.data)
            last = idx[-1]
            write_pfm(os.path.join(args.out, f"{last:04d}.pfm"), fused)
            save_heatmap_png(os.path.join(args.out, f"{last:04d}.png"), fused)
            singles.append((last, a.data))
            fused_list.append((last, fused))
        print(f"windows={len(singles)} tangent_sets={pipe.counters.tangent_sets} "
              f"augmented_tangent_sets={pipe.counters.augmented_tangent_sets}")
        deltas = _kld_deltas(manifest, singles, fused_list)
        if deltas is not None:
            print(deltas)
        return 0

    if not args.pred_a or not args.pred_b:
        raise UsageError("fuse needs either --both-sets or --pred-a and --pred-b")
    files_a = _indexed_pfms(args.pred_a)
    files_b = _indexed_pfms(args.pred_b)
    shared = sorted(set(files_a) & set(files_b))
    if not shared:
        raise UsageError("the prediction directories share no frame indices")
    singles, fused_list = [], []
    for idx in shared:
        a = read_pfm(files_a[idx])
        b = read_pfm(files_b[idx])
        if a.shape != b.shape:
            raise UsageError(f"mismatched dims at frame {idx}: {a.shape} vs {b.shape}")
        a = a / a.sum()
        b = b / b.sum()
        fused = late_fuse(a, b)
        write_pfm(os.path.join(args.out, f"{idx:04d}.pfm"), fused)
        save_heatmap_png(os.path.join(args.out, f"{idx:04d}.png"), fused)
        singles.append((idx, a))
        fused_list.append((idx, fused))
    print(f"fused={len(shared)}")
    deltas = _kld_deltas(manifest, singles, fused_list)
    if deltas is not None:
        print(deltas)
    return 0


def _kld_deltas(manifest, singles, fused) -> str | None:
    """Mean KLD-to-ground-truth change from fusing, when a clip is provided."""
    if manifest is None:
        return None
    before, after = [], []
    for (idx, a), (_, f) in zip(singles, fused):
        if idx >= manifest.n_frames:
            return None
        q_s = manifest.load_density(idx)
        before.append(kld_metric(a, q_s))
        after.append(kld_metric(f, q_s))
    return (f"kld_before={np.mean(before):.6f} kld_after={np.mean(after):.6f} "
            f"delta={np.mean(after) - np.mean(before):+.6f}")


def cmd_bench(args) -> int:
    cfg = ModelConfig(num_frames=args.frames, embed_dim=args.dim, heads=args.heads,
                      depth=1, patch_px=32, feat_hw=4)
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(1, args.frames, args.planes, args.dim))
    tabs = rotary_tables(args.frames, cfg.head_dim)
    print(f"F={args.frames} T={args.planes} D={args.dim} per-block pair counts")
    rows = []
    for scheme in ("joint", "vsa_only", "vsta"):
        block = TransformerBlock(cfg, np.random.default_rng(1), scheme)
        counters = Counters()
        with ad.no_grad():
            block(ad.Tensor(tokens), counters, tabs)  # warm
            best = math.inf
            for _ in range(args.repeats):
                counters.reset()
                t0 = time.perf_counter()
                block(ad.Tensor(tokens), counters, tabs)
                best = min(best, time.perf_counter() - t0)
        closed = attention_pair_count(args.frames, args.planes, scheme)
        assert counters.qk_pairs == closed
        rows.append((scheme, closed, best * 1e3))
        print(f"{scheme:<9} pairs={closed:>8} wall_ms={best * 1e3:8.3f}")
    joint_pairs = rows[0][1]
    vsta_pairs = rows[2][1]
    print(f"joint/vsta pair ratio: {joint_pairs / vsta_pairs:.2f}x")
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tansal",
        description="Tangent-viewport saliency pipeline for 360-degree video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic clips")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=1)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--sources", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=16.0)

    p = sub.add_parser("project", help="project an ERP image onto tangent planes")
    p.add_argument("--image", required=True)
    p.add_argument("--layout", required=True, help="kind:planes:fov or layout.json")
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backproject", help="blend tangent patches back onto ERP")
    p.add_argument("--patches", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", default=None, help="print PSNR against this image")

    p = sub.add_parser("train", help="train on clip manifests")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. optim.lr=1e-3")

    p = sub.add_parser("predict", help="predict saliency for a clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="manifest.json of the clip")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--ema", type=float, default=None,
                   help="also write an EMA-aggregated map with this decay")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True, help="metric report CSV path")

    p = sub.add_parser("fuse", help="late-fuse two prediction sets")
    p.add_argument("--pred-a", default=None)
    p.add_argument("--pred-b", default=None)
    p.add_argument("--both-sets", action="store_true",
                   help="predict with the primary and shifted tangent sets, then fuse")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--clip", default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--shift-deg", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="attention pair-count and timing table")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--planes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "project": cmd_project,
    "backproject": cmd_backproject,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, LayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures keep a one-line diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
