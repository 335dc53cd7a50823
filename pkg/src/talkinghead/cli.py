"""Command-line pipeline driver.

Every subcommand takes `--config <file>` (JSON) plus repeatable
`--set key=value` overrides. Exit codes: 0 success, 2 validation error,
3 runtime failure. The REALTALK_SEED environment variable overrides the
master seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .core import MissingFileError, PipelineError, ValidationError


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="talkinghead",
        description="synthetic-face talking-head pipeline: data synthesis, "
                    "three training stages, inference, evaluation, ablation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth-data", "generate the synthetic dataset"),
        ("train-vae", "fit the audio-to-motion VAE on one clip"),
        ("train-ldm", "fit the landmark deformer on emotion pairs"),
        ("train-nerf", "fit the radiance field on one clip"),
        ("infer", "audio + emotion label -> rendered frame sequence"),
        ("eval", "compute metrics for a run directory against a clip"),
        ("ablate-delta", "sweep the deformation magnitude and tabulate metrics"),
        ("accept", "run the acceptance suites"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
    return parser


def _workdir(cfg: PipelineConfig, *parts) -> Path:
    d = Path(cfg.paths.workdir).joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dataset_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.paths.dataset) if cfg.paths.dataset else Path(cfg.paths.workdir) / "dataset"


def _require(value, message: str):
    if value is None:
        raise ValidationError(message)
    return value


def cmd_synth_data(cfg: PipelineConfig) -> int:
    from . import synth

    out = _dataset_path(cfg)
    settings = synth.SynthSettings(
        content_dim=cfg.data.content_dim, pitch_dim=cfg.data.pitch_dim,
        blendshape_dim=cfg.data.blendshape_dim, mouth_amplitude=cfg.data.mouth_amplitude,
        emotion_norm=cfg.data.emotion_norm, emotion_max_norm=cfg.data.emotion_max_norm,
        emotion_separation=cfg.data.emotion_separation, field_seed=cfg.data.field_seed,
        topology_seed=cfg.data.topology_seed)
    manifest = synth.synthesize_dataset(
        out, seed=cfg.stage_seed("synth"), clips_per_emotion=cfg.data.clips_per_emotion,
        frames=cfg.data.frames, resolution=cfg.data.resolution, settings=settings)
    print(f"wrote {len(manifest['clips'])} clips to {out}")
    return 0


def _pick_clip(cfg: PipelineConfig, name):
    from .dataio import load_dataset

    manifest = load_dataset(_dataset_path(cfg))
    handle = manifest.clip(name) if name else manifest.clips[0]
    return manifest, handle


def cmd_train_vae(cfg: PipelineConfig) -> int:
    from .audio import AudioFeatureSequence
    from .figures import curve_figure, write_curve_csv
    from .vae import train_vae

    _, handle = _pick_clip(cfg, cfg.vae.clip)
    clip = handle.load(with_frames=False)
    out = _workdir(cfg, "vae")
    result = train_vae(
        clip.landmarks, AudioFeatureSequence(clip.audio_content, clip.audio_pitch),
        steps=cfg.vae.steps, lr=cfg.vae.lr, seed=cfg.stage_seed("vae"),
        latent_dim=cfg.vae.latent_dim, channels=cfg.vae.channels, width=cfg.vae.width,
        flow_steps=cfg.vae.flow_steps, sync_window=cfg.vae.sync_window,
        sync_pairs=cfg.vae.sync_pairs, kl_weight=cfg.vae.kl_weight,
        sync_weight=cfg.vae.sync_weight, out_dir=out / "checkpoint")
    write_curve_csv(out / "curves.csv", result.curves)
    curve_figure(out / "curves.png", result.curves["step"],
                 {k: result.curves[k] for k in ("recon", "kl", "sync", "total")},
                 ylabel="loss", title=f"motion VAE on {handle.name}", logy=True)
    print(f"VAE trained on {handle.name}: final recon MSE "
          f"{result.curves['recon_mse'][-1]:.3e}; checkpoint at {result.checkpoint_path}")
    return 0


def cmd_train_ldm(cfg: PipelineConfig) -> int:
    from .figures import curve_figure, write_curve_csv
    from .ldm import build_pairs_from_dataset, displacement_error, train_ldm

    manifest, _ = _pick_clip(cfg, None)
    pairs = build_pairs_from_dataset(manifest, window=cfg.ldm.window,
                                     noise_scale=cfg.ldm.noise_scale,
                                     seed=cfg.stage_seed("ldm"))
    out = _workdir(cfg, "ldm")
    result = train_ldm(pairs, steps=cfg.ldm.steps, lr=cfg.ldm.lr, batch=cfg.ldm.batch,
                       hidden=cfg.ldm.hidden, seed=cfg.stage_seed("ldm"),
                       out_dir=out / "checkpoint")
    write_curve_csv(out / "curves.csv", result.curves)
    curve_figure(out / "curves.png", result.curves["step"], {"loss": result.curves["loss"]},
                 ylabel="displacement MSE", title="landmark deformer", logy=True)
    err = displacement_error(result.model, pairs)
    print(f"LDM trained: displacement error {err['mean_error']:.4f} "
          f"(oracle norm {err['mean_oracle_norm']:.4f}); checkpoint at {result.checkpoint_path}")
    return 0


def cmd_train_nerf(cfg: PipelineConfig) -> int:
    from .figures import curve_figure, write_curve_csv
    from .render import train_nerf

    _, handle = _pick_clip(cfg, cfg.nerf.clip)
    clip = handle.load()
    out = _workdir(cfg, "nerf")
    n = cfg.nerf
    result = train_nerf(
        clip.frames, clip.landmarks, clip.blendshapes, clip.rotations, clip.translations,
        clip.intrinsics, steps=n.steps, stage2_fraction=n.stage2_fraction,
        rays_per_step=n.rays_per_step, samples=n.samples, patch_size=n.patch_size,
        lr=n.lr, perceptual_weight=cfg.perceptual_weight, background=n.background,
        seed=cfg.stage_seed("nerf"), eval_every=n.eval_every, target_psnr=n.target_psnr,
        model_kwargs={"levels": n.levels, "features_per_level": n.features_per_level,
                      "log2_table": n.log2_table, "base_resolution": n.base_resolution,
                      "finest_resolution": n.finest_resolution, "width": n.width,
                      "geo_features": n.geo_features, "dir_freqs": n.dir_freqs,
                      "attention_channels": n.attention_channels},
        out_dir=out / "checkpoint")
    write_curve_csv(out / "psnr_curve.csv",
                    {"step": result.curves["eval_step"], "psnr": result.curves["psnr"]})
    curve_figure(out / "psnr_curve.png", result.curves["eval_step"],
                 {"psnr": result.curves["psnr"]}, ylabel="PSNR (dB)",
                 title=f"radiance field on {handle.name}")
    write_curve_csv(out / "loss_curve.csv", {k: result.curves[k]
                                             for k in ("step", "loss", "mse", "perceptual")})
    print(f"NeRF trained on {handle.name}: training-view PSNR {result.final_psnr:.2f} dB; "
          f"checkpoint at {result.checkpoint_path}")
    return 0


def _checkpoint_paths(cfg: PipelineConfig):
    w = Path(cfg.paths.workdir)
    vae = cfg.paths.vae_checkpoint or w / "vae" / "checkpoint"
    ldm = cfg.paths.ldm_checkpoint or w / "ldm" / "checkpoint"
    nerf = cfg.paths.nerf_checkpoint or w / "nerf" / "checkpoint"
    return Path(vae), Path(ldm), Path(nerf)


def cmd_infer(cfg: PipelineConfig) -> int:
    from .pipeline import infer_end_to_end

    vae, ldm, nerf = _checkpoint_paths(cfg)
    audio = _require(cfg.infer.audio, "infer.audio must point at a clip directory")
    pose_source = _require(cfg.infer.pose_source,
                           "infer.pose_source must point at a clip directory")
    out = Path(cfg.paths.out) if cfg.paths.out else _workdir(cfg, "infer")
    result = infer_end_to_end(
        audio=audio, emotion=cfg.infer.emotion, delta=cfg.delta,
        vae_checkpoint=vae, ldm_checkpoint=ldm, nerf_checkpoint=nerf,
        pose_source=pose_source, out_dir=out, seed=cfg.stage_seed("infer"),
        samples=cfg.infer.samples, window=cfg.infer.window)
    print(f"wrote {result.frames.shape[0]} frames and landmark traces to {result.out_dir}")
    return 0


def cmd_eval(cfg: PipelineConfig) -> int:
    from .dataio import load_frames, load_landmarks
    from .figures import metric_bars_figure
    from .metrics import evaluate_frames, write_summary_csv

    gt_dir = Path(_require(cfg.eval.clip, "eval.clip must point at the ground-truth clip"))
    pred_dir = Path(_require(cfg.eval.pred, "eval.pred must point at an infer run directory"))
    gt_landmarks = load_landmarks(gt_dir / "landmarks.csv")
    pred_landmarks = load_landmarks(pred_dir / "emotional_landmarks.csv")
    t = min(gt_landmarks.shape[0], pred_landmarks.shape[0])
    pred_frames = load_frames(pred_dir / "frames", t)
    gt_frames = load_frames(gt_dir / "frames", t)

    report = evaluate_frames(pred_frames, gt_frames, pred_landmarks[:t], gt_landmarks[:t],
                             clip_id=gt_dir.name, method=cfg.eval.method)
    out = Path(cfg.paths.out) if cfg.paths.out else _workdir(cfg, "eval")
    report.to_json(out / "metrics.json")
    write_summary_csv([report], out / "summary.csv")
    metric_bars_figure(out / "metrics.png", report.aggregates,
                       title=f"{cfg.eval.method} vs {gt_dir.name}")
    agg = report.aggregates
    print("  ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items())))
    return 0


def cmd_ablate_delta(cfg: PipelineConfig) -> int:
    from .pipeline import ablate_delta

    vae, ldm, nerf = _checkpoint_paths(cfg)
    audio = _require(cfg.infer.audio, "infer.audio must point at a clip directory")
    pose_source = _require(cfg.infer.pose_source,
                           "infer.pose_source must point at a clip directory")
    gt_clip = cfg.eval.clip or pose_source
    out = Path(cfg.paths.out) if cfg.paths.out else _workdir(cfg, "ablation")
    rows = ablate_delta(deltas=list(cfg.delta_sweep), audio=audio, emotion=cfg.infer.emotion,
                        vae_checkpoint=vae, ldm_checkpoint=ldm, nerf_checkpoint=nerf,
                        pose_source=pose_source, gt_clip_dir=gt_clip, out_dir=out,
                        seed=cfg.stage_seed("infer"), samples=cfg.infer.samples,
                        window=cfg.infer.window)
    header = ["delta", "ssim", "psnr", "m_lmd", "f_lmd"]
    print("  ".join(h.rjust(8) for h in header))
    for row in rows:
        print("  ".join(f"{row[h]:8.4f}" for h in header))
    print(f"table and figure in {out}")
    return 0


def cmd_accept(cfg: PipelineConfig) -> int:
    from .acceptance import run_acceptance

    out = _workdir(cfg, "acceptance")
    report = run_acceptance(cfg.accept.suite, cfg, out)
    return 0 if all(r.passed for r in report) else 3


_HANDLERS = {
    "synth-data": cmd_synth_data,
    "train-vae": cmd_train_vae,
    "train-ldm": cmd_train_ldm,
    "train-nerf": cmd_train_nerf,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate-delta": cmd_ablate_delta,
    "accept": cmd_accept,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return _HANDLERS[args.command](cfg)
    except (ValidationError, MissingFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001  - CLI boundary
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
