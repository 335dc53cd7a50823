"""Acceptance criteria: one function per criterion, machine-readable results.

Each criterion measures at its pinned tolerance and returns a result; the
pytest acceptance module asserts on `passed`, the CLI prints one line per
criterion. Criteria 6, 7, 8, and 10 run real training and belong to the
"full" suite; the rest are invariant checks and finish in seconds.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import LANDMARK_DIM, ValidationError

INVARIANT_SUITE = ("c1", "c2", "c3", "c4", "c5", "c9")
FULL_SUITE = ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10")


@dataclass
class CriterionResult:
    cid: str
    name: str
    passed: bool
    seconds: float
    details: dict

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        summary = ", ".join(f"{k}={v}" for k, v in self.details.items()
                            if not isinstance(v, (list, dict)))
        return f"{status} {self.cid} {self.name} ({self.seconds:.1f}s): {summary}"


def _result(cid, name, started, passed, **details) -> CriterionResult:
    rounded = {}
    for key, value in details.items():
        if isinstance(value, float):
            rounded[key] = round(value, 8)
        else:
            rounded[key] = value
    return CriterionResult(cid=cid, name=name, passed=bool(passed),
                           seconds=time.time() - started, details=rounded)


def _perturbed_flow(dim: int, steps: int, seed: int, noise: float = 0.05):
    """Flow at a representative trained-scale parameter state."""
    from .flow import FlowPrior

    torch.manual_seed(seed)
    flow = FlowPrior(dim, steps)
    with torch.no_grad():
        for p in flow.parameters():
            p.add_(torch.randn_like(p) * noise)
    return flow


def criterion_1_flow_roundtrip() -> CriterionResult:
    """Forward/inverse round trip at single precision; log-det vs dense Jacobian."""
    t0 = time.time()
    flow = _perturbed_flow(16, 4, seed=11)
    z = torch.randn(1000, 16, generator=torch.Generator().manual_seed(1))
    u, _ = flow(z)
    back = flow.inverse(u)
    roundtrip = float((z - back).abs().max())

    flow0 = _perturbed_flow(16, 4, seed=12, noise=0.0)
    u0, ld0 = flow0(z)
    identity_ok = torch.equal(u0, z) and float(ld0.detach().abs().max()) == 0.0

    flow4 = _perturbed_flow(4, 4, seed=13).double()
    z0 = torch.randn(1, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    jac = torch.autograd.functional.jacobian(lambda v: flow4(v)[0], z0).reshape(4, 4)
    _, ld = flow4(z0)
    logdet_err = abs(float(ld.detach()[0]) - float(torch.slogdet(jac)[1]))

    passed = roundtrip < 1e-5 and logdet_err < 1e-4 and identity_ok
    return _result("c1", "flow prior round trip", t0, passed,
                   roundtrip_max_err=roundtrip, logdet_vs_jacobian=logdet_err,
                   identity_init_exact=identity_ok)


def criterion_2_kl_sanity() -> CriterionResult:
    """Closed-form KL zero case; Monte-Carlo estimate within 2% of closed form."""
    from .flow import FlowPrior
    from .vae import kl_standard_normal, monte_carlo_kl

    t0 = time.time()
    zero_kl = float(kl_standard_normal(torch.zeros(1, 16), torch.ones(1, 16)).sum())

    torch.manual_seed(21)
    prior = FlowPrior(16, 4)  # identity init scores exactly N(0, I)
    gen = torch.Generator().manual_seed(22)
    worst_rel = 0.0
    for _ in range(20):
        mu = torch.rand(16, generator=gen) * 4.0 - 2.0
        sigma = torch.rand(16, generator=gen) * 1.5 + 0.5
        closed = float(kl_standard_normal(mu, sigma))
        mc = monte_carlo_kl(mu, sigma, prior, 100000, gen)
        worst_rel = max(worst_rel, abs(mc - closed) / closed)

    passed = abs(zero_kl) < 1e-7 and worst_rel < 0.02
    return _result("c2", "KL sanity", t0, passed,
                   zero_case=zero_kl, worst_mc_rel_error=worst_rel)


def _double_eval(module):
    return module.double().eval()


def criterion_3_grad_checks() -> CriterionResult:
    """Central finite differences vs autograd for every trainable piece (float64)."""
    from .audio import AudioEncoder
    from .engine import grad_check
    from .ldm import LandmarkDeformer
    from .render import Ray, render_ray
    from .sync import SyncScorer, sync_loss, sync_score
    from .triplane import LandmarkAttention, RadianceModel
    from .vae import VaeDecoder, VaeEncoder

    t0 = time.time()
    tol = 1e-4
    reports = {}
    torch.manual_seed(31)

    audio = _double_eval(AudioEncoder(6, 3, channels=8))
    xc = torch.randn(9, 6, dtype=torch.float64)
    xp = torch.randn(9, 3, dtype=torch.float64)
    reports["audio_encoder"] = grad_check(
        lambda: (audio.content(xc) ** 2).sum() + (audio.pitch(xp) ** 2).sum(),
        dict(audio.named_parameters()), tolerance=tol)

    enc = _double_eval(VaeEncoder(cond_dim=8, latent_dim=4, width=16, landmark_dim=12))
    lm = torch.randn(7, 12, dtype=torch.float64)
    cond = torch.randn(7, 8, dtype=torch.float64)
    reports["vae_encoder"] = grad_check(
        lambda: ((lambda mu, sg: (mu ** 2).sum() + (sg ** 2).sum())(*enc(lm, cond))),
        dict(enc.named_parameters()), tolerance=tol)

    dec = _double_eval(VaeDecoder(cond_dim=8, latent_dim=4, width=16, landmark_dim=12))
    z = torch.randn(7, 4, dtype=torch.float64)
    reports["vae_decoder"] = grad_check(
        lambda: (dec(z, cond) ** 2).sum(), dict(dec.named_parameters()), tolerance=tol)

    flow = _perturbed_flow(6, 2, seed=32).double()
    zf = torch.randn(5, 6, dtype=torch.float64)
    reports["flow"] = grad_check(
        lambda: flow.log_prob(zf).sum(), dict(flow.named_parameters()), tolerance=tol)

    scorer = _double_eval(SyncScorer(window=3, audio_dim=4, landmark_dim=12, hidden=16, embed=8))
    aw = torch.randn(6, 3, 4, dtype=torch.float64)
    lw = torch.randn(6, 3, 12, dtype=torch.float64)
    ys = torch.tensor([1.0, 0, 1, 0, 1, 0], dtype=torch.float64)
    reports["sync_scorer"] = grad_check(
        lambda: sync_loss(sync_score(scorer, aw, lw), ys),
        dict(scorer.named_parameters()), tolerance=tol)

    ldm = _double_eval(LandmarkDeformer(hidden=32, landmark_dim=LANDMARK_DIM))
    wlm = torch.randn(2, 4, LANDMARK_DIM, dtype=torch.float64) * 0.2
    codes = torch.tensor([1, 4])
    reports["ldm"] = grad_check(
        lambda: (ldm(wlm, codes) ** 2).sum(), dict(ldm.named_parameters()), tolerance=tol)

    attn = _double_eval(LandmarkAttention(channels=8))
    alm = torch.randn(3, LANDMARK_DIM, dtype=torch.float64) * 0.3
    reports["landmark_attention"] = grad_check(
        lambda: (lambda f, w: (f ** 2).sum() + (w ** 2).sum())(*attn(alm)),
        dict(attn.named_parameters()), tolerance=tol)

    model = _double_eval(RadianceModel(levels=2, log2_table=4, base_resolution=4,
                                       finest_resolution=8, width=16, geo_features=6,
                                       blendshape_dim=4))
    fx = torch.rand(10, 3, dtype=torch.float64) * 2 - 1
    fd = torch.randn(10, 3, dtype=torch.float64)
    fd = fd / fd.norm(dim=-1, keepdim=True)
    flm = torch.randn(LANDMARK_DIM, dtype=torch.float64) * 0.2
    fbs = torch.rand(4, dtype=torch.float64)

    def field_loss():
        cond_vec, _ = model.encode_condition(flm, fbs)
        rgb, sigma = model.density_color(fx, fd, cond_vec)
        return (rgb ** 2).sum() + (sigma ** 2).sum()

    reports["field_network"] = grad_check(field_loss, dict(model.field.named_parameters()),
                                          tolerance=tol)

    ray = Ray(origin=np.array([0.0, 0.0, 2.0]), direction=np.array([0.0, 0.0, -1.0]),
              near=1.0, far=3.0, samples=6)

    def render_loss():
        rgb, t_final = render_ray(model, ray, flm, fbs, background=(0.2, 0.3, 0.4), seed=5)
        return rgb.sum() + t_final

    reports["render_ray"] = grad_check(render_loss, dict(model.named_parameters()),
                                       tolerance=tol, n_coords=160)

    worst = max(r.max_rel_error for r in reports.values())
    passed = all(r.passed for r in reports.values())
    details = {name: r.max_rel_error for name, r in reports.items()}
    details["worst"] = worst
    return _result("c3", "gradient checks (float64)", t0, passed, **details)


def criterion_4_volume_rendering() -> CriterionResult:
    """Homogeneous closed form, compositing identity, zero-density insertion."""
    from .render import composite, stratified_ts

    t0 = time.time()
    gen = torch.Generator().manual_seed(41)

    sigma0, color0 = 1.3, torch.tensor([0.4, 0.7, 0.2])
    bg = torch.tensor([0.1, 0.2, 0.3])
    near, far = torch.tensor([0.5]), torch.tensor([2.7])
    errs = {}
    for n in (256, 2560):
        jitter = torch.rand(1, n, generator=gen)
        _, delta = stratified_ts(near, far, n, jitter)
        rgb, t_final = composite(torch.full((1, n), sigma0), color0.expand(1, n, 3),
                                 delta, bg)
        transmit = float(np.exp(-sigma0 * float(far - near)))
        expected = color0 * (1 - transmit) + bg * transmit
        errs[n] = float((rgb[0] - expected).abs().max())
    refine_gap = abs(errs[256] - errs[2560])

    sig = torch.rand(10000, 32, generator=gen) * 30.0
    col = torch.rand(10000, 32, 3, generator=gen)
    dl = torch.rand(10000, 1, generator=gen) * 0.2
    rgb, t_final = composite(sig, col, dl, (0.0, 0.0, 0.0))
    alphas = 1.0 - torch.exp(-sig * dl)
    shifted = torch.cat([torch.ones(10000, 1), torch.cumprod(1 - alphas, -1)[:, :-1]], -1)
    weights = alphas * shifted
    identity_err = float((weights.sum(-1) + t_final - 1.0).abs().max())

    gen2 = torch.Generator().manual_seed(42)
    sig = torch.rand(200, 16, generator=gen2, dtype=torch.float64) * 5.0
    col = torch.rand(200, 16, 3, generator=gen2, dtype=torch.float64)
    dl = torch.rand(200, 16, generator=gen2, dtype=torch.float64) * 0.2
    base_rgb, base_t = composite(sig, col, dl, (0.3, 0.3, 0.3))
    insert_err = 0.0
    for k in (0, 7, 16):
        sig2 = torch.cat([sig[:, :k], torch.zeros(200, 1, dtype=torch.float64), sig[:, k:]], 1)
        col2 = torch.cat([col[:, :k], torch.rand(200, 1, 3, generator=gen2, dtype=torch.float64),
                          col[:, k:]], 1)
        dl2 = torch.cat([dl[:, :k], torch.rand(200, 1, generator=gen2, dtype=torch.float64),
                         dl[:, k:]], 1)
        rgb2, t2 = composite(sig2, col2, dl2, (0.3, 0.3, 0.3))
        insert_err = max(insert_err, float((rgb2 - base_rgb).abs().max()),
                         float((t2 - base_t).abs().max()))

    passed = errs[256] < 1e-3 and refine_gap < 1e-3 and identity_err < 1e-6 and insert_err < 1e-6
    return _result("c4", "volume rendering", t0, passed,
                   homogeneous_err_256=errs[256], refinement_gap=refine_gap,
                   identity_err=identity_err, zero_insertion_err=insert_err)


def criterion_5_deformation_semantics() -> CriterionResult:
    """Magnitude-zero identity, exact linearity, shipped default 0.15."""
    from .config import DEFAULT_DELTA_SWEEP, PipelineConfig
    from .ldm import apply_deformation
    from .synth import QUANTUM

    t0 = time.time()
    rng = np.random.default_rng(51)
    lm = (np.round(rng.normal(0, 0.3, (4, LANDMARK_DIM)) / QUANTUM) * QUANTUM).astype(np.float32)
    dl = (np.round(rng.normal(0, 0.1, (4, LANDMARK_DIM)) / QUANTUM) * QUANTUM).astype(np.float32)

    zero_identity = np.array_equal(apply_deformation(lm, dl, 0.0), lm)
    # power-of-two magnitudes with grid-aligned data stay on the grid: exact norms
    d1 = np.linalg.norm(apply_deformation(lm, dl, 0.25) - lm)
    d2 = np.linalg.norm(apply_deformation(lm, dl, 0.5) - lm)
    exact_linear = d2 == 2.0 * d1
    # general magnitudes are linear within float tolerance
    g1 = np.linalg.norm(apply_deformation(lm, dl, 0.15) - lm)
    g2 = np.linalg.norm(apply_deformation(lm, dl, 0.30) - lm)
    general_rel = abs(g2 - 2.0 * g1) / g2

    cfg = PipelineConfig()
    default_ok = cfg.delta == 0.15 and tuple(DEFAULT_DELTA_SWEEP) == (0.0, 0.15, 0.2, 0.3, 0.4, 0.5, 1.0)
    shipped = Path(__file__).resolve().parents[2] / "configs" / "default.json"
    if shipped.exists():
        default_ok = default_ok and json.loads(shipped.read_text()).get("delta") == 0.15

    passed = zero_identity and exact_linear and general_rel < 1e-6 and default_ok
    return _result("c5", "deformation magnitude semantics", t0, passed,
                   zero_identity=zero_identity, exact_linear=exact_linear,
                   general_linearity_rel=general_rel, shipped_default_ok=default_ok)


def criterion_6_ldm_oracle(workdir=None) -> CriterionResult:
    """Held-out oracle recovery, permuted-label control, neutral smallness."""
    from .core import NEUTRAL, emotion_code
    from .ldm import build_toy_pairs, displacement_error, train_ldm

    t0 = time.time()
    pairs = build_toy_pairs(clips_per_emotion=3, frames=48, window=8,
                            noise_scale=1e-3, seed=7)
    # hold out the last clip of each emotion: 6 windows per clip, 3 clips per emotion
    n_per_emotion = len(pairs) // 8
    held = np.zeros(len(pairs), dtype=bool)
    for e in range(8):
        start = e * n_per_emotion
        held[start + 2 * n_per_emotion // 3: start + n_per_emotion] = True
    train_set, test_set = pairs.subset(~held), pairs.subset(held)

    result = train_ldm(train_set, steps=4000, lr=5e-4, batch=16, hidden=256, seed=71,
                       out_dir=Path(workdir) / "ldm" if workdir else None)
    err = displacement_error(result.model, test_set)
    rel = err["mean_error"] / err["mean_oracle_norm"]
    neutral_rel = err["neutral_pred_norm"] / err["mean_oracle_norm"]

    rng = np.random.default_rng(72)
    permuted = train_set.subset(np.arange(len(train_set)))
    permuted.codes = rng.permutation(permuted.codes)
    control = train_ldm(permuted, steps=4000, lr=5e-4, batch=16, hidden=256, seed=71)
    err_control = displacement_error(control.model, test_set)
    control_ratio = err_control["mean_error"] / err["mean_error"]

    passed = rel < 0.05 and control_ratio >= 3.0 and neutral_rel < 0.10
    return _result("c6", "deformer oracle recovery", t0, passed,
                   held_out_rel_error=rel, permuted_control_ratio=control_ratio,
                   neutral_rel_norm=neutral_rel)


def criterion_7_vae_overfit(workdir=None) -> CriterionResult:
    """Reconstruction collapse on one clip; sync gap trained vs untrained."""
    from . import synth
    from .audio import AudioFeatureSequence
    from .metrics import sync_eval
    from .sync import SyncScorer
    from .vae import train_vae

    t0 = time.time()
    clip = synth.generate_clip(70, "happy", frames=200, resolution=32)
    feats = AudioFeatureSequence(clip.audio_content, clip.audio_pitch)
    result = train_vae(clip.landmarks, feats, steps=2000, seed=77,
                       out_dir=Path(workdir) / "vae" if workdir else None,
                       record_steps=(50, 2000))
    ratio = result.recon_at[2000] / result.recon_at[50]

    held = synth.generate_clip(71, "happy", frames=200, resolution=32)
    window = result.model.scorer.window
    starts = range(0, held.landmarks.shape[0] - window + 1)
    a_windows = np.stack([held.audio_content[s:s + window] for s in starts])
    l_windows = np.stack([held.landmarks[s:s + window] for s in starts])
    trained_gap = sync_eval(a_windows, l_windows, result.model.scorer)["gap"]

    big = synth.generate_clip(72, "happy", frames=1005, resolution=32)
    starts = range(0, big.landmarks.shape[0] - window + 1)
    a_big = np.stack([big.audio_content[s:s + window] for s in starts])
    l_big = np.stack([big.landmarks[s:s + window] for s in starts])
    torch.manual_seed(73)
    fresh = SyncScorer(window, clip.audio_content.shape[1], LANDMARK_DIM)
    untrained_gap = sync_eval(a_big, l_big, fresh)["gap"]

    passed = ratio <= 0.10 and trained_gap > 0.3 and abs(untrained_gap) < 0.1
    return _result("c7", "VAE overfit", t0, passed,
                   recon_mse_step50=result.recon_at[50], recon_mse_step2000=result.recon_at[2000],
                   recon_ratio=ratio, trained_sync_gap=trained_gap,
                   untrained_sync_gap=untrained_gap)


def criterion_8_nerf_overfit(workdir=None) -> CriterionResult:
    """30 dB overfit within the step cap; zeroed-conditioning run strictly worse.

    The conditioned run trains until it clears 32 dB (still far inside the
    20k cap); the ablation gets the same number of steps, so the comparison
    is at equal budget. The clip's mouth motion carries enough pixel
    variance that a model without the landmark condition cannot match it.
    """
    from . import synth
    from .render import train_nerf

    t0 = time.time()
    clip = synth.generate_clip(42, "happy", frames=16, resolution=64)
    kwargs = dict(steps=20000, stage2_fraction=0.05, rays_per_step=512, samples=24,
                  eval_every=500, lr=5e-4)
    full = train_nerf(clip.frames, clip.landmarks, clip.blendshapes, clip.rotations,
                      clip.translations, clip.intrinsics, seed=80, target_psnr=32.05,
                      out_dir=Path(workdir) / "nerf" if workdir else None, **kwargs)
    steps_used = full.curves["step"][-1]
    crossings = [s for s, p in zip(full.curves["eval_step"], full.curves["psnr"]) if p >= 30.0]
    steps_to_30db = crossings[0] if crossings else None

    kwargs["steps"] = steps_used
    ablated = train_nerf(clip.frames, clip.landmarks, clip.blendshapes, clip.rotations,
                         clip.translations, clip.intrinsics, seed=80, target_psnr=None,
                         zero_landmarks=True, **kwargs)

    passed = (full.final_psnr >= 30.0 and steps_to_30db is not None
              and steps_to_30db <= 20000 and ablated.final_psnr < full.final_psnr)
    return _result("c8", "radiance field overfit", t0, passed,
                   training_view_psnr=full.final_psnr, steps_to_30db=steps_to_30db,
                   steps_used=steps_used, ablated_psnr=ablated.final_psnr,
                   margin_db=full.final_psnr - ablated.final_psnr)


def criterion_9_metrics() -> CriterionResult:
    """Trivial identities plus SSIM against the independent reference."""
    from .metrics import lmd, psnr, ssim, to_luminance

    t0 = time.time()
    try:
        from skimage.metrics import structural_similarity
    except ImportError as e:  # pragma: no cover
        return _result("c9", "metrics", t0, False, error=f"reference SSIM unavailable: {e}")

    rng = np.random.default_rng(91)
    img = rng.random((48, 48, 3))
    identical = (psnr(img, img) == 99.0
                 and abs(ssim(img, img) - 1.0) < 1e-9
                 and lmd(np.zeros((3, LANDMARK_DIM)), np.zeros((3, LANDMARK_DIM))) == 0.0)
    zero_db = abs(psnr(np.zeros((8, 8, 3)), np.ones((8, 8, 3))) - 0.0) < 1e-12

    worst = 0.0
    for _ in range(20):
        a = rng.random((40, 44, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        mine = ssim(a, b)
        ref = structural_similarity(to_luminance(a), to_luminance(b),
                                    gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=1.0)
        worst = max(worst, abs(mine - ref))

    passed = identical and zero_db and worst < 1e-6
    return _result("c9", "metrics", t0, passed,
                   identities_ok=identical, zero_db_ok=zero_db, ssim_vs_reference=worst)


def criterion_10_determinism(workdir=None) -> CriterionResult:
    """Byte-identical infer re-run; default sweep reproduces the row structure."""
    import hashlib

    from . import synth
    from .audio import AudioFeatureSequence
    from .pipeline import ablate_delta, infer_end_to_end
    from .render import train_nerf
    from .vae import train_vae
    from .ldm import build_toy_pairs, train_ldm
    from .config import DEFAULT_DELTA_SWEEP

    t0 = time.time()
    work = Path(workdir) if workdir else Path("runs/acceptance")
    work.mkdir(parents=True, exist_ok=True)

    data_dir = work / "dataset"
    synth.synthesize_dataset(data_dir, seed=100, clips_per_emotion=1,
                             emotions=("happy",), frames=12, resolution=32)
    clip_dir = data_dir / "clip_000"
    clip = synth.generate_clip(100, "happy", frames=12, resolution=32)

    feats = AudioFeatureSequence(clip.audio_content, clip.audio_pitch)
    vae = train_vae(clip.landmarks, feats, steps=200, seed=101, channels=16,
                    latent_dim=8, width=32, out_dir=work / "vae")
    pairs = build_toy_pairs(clips_per_emotion=1, frames=24, window=8, seed=102)
    ldm = train_ldm(pairs, steps=300, batch=8, hidden=64, seed=102, out_dir=work / "ldm")
    nerf = train_nerf(clip.frames, clip.landmarks, clip.blendshapes, clip.rotations,
                      clip.translations, clip.intrinsics, steps=300,
                      stage2_fraction=0.1, rays_per_step=256, samples=16,
                      eval_every=300, seed=103, target_psnr=None,
                      model_kwargs={"levels": 6, "finest_resolution": 64, "width": 32},
                      out_dir=work / "nerf")

    def run(out):
        return infer_end_to_end(
            audio=clip_dir, emotion="happy", delta=0.15,
            vae_checkpoint=work / "vae", ldm_checkpoint=work / "ldm",
            nerf_checkpoint=work / "nerf", pose_source=clip_dir,
            out_dir=out, seed=104, samples=16)

    r1 = run(work / "run_a")
    r2 = run(work / "run_b")

    def digest(d):
        h = hashlib.sha256()
        for p in sorted(Path(d).rglob("*")):
            if p.is_file() and p.name != "run_manifest.json":
                h.update(p.name.encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    byte_identical = digest(r1.out_dir) == digest(r2.out_dir)

    rows = ablate_delta(deltas=list(DEFAULT_DELTA_SWEEP), audio=clip_dir, emotion="happy",
                        vae_checkpoint=work / "vae", ldm_checkpoint=work / "ldm",
                        nerf_checkpoint=work / "nerf", pose_source=clip_dir,
                        gt_clip_dir=clip_dir, out_dir=work / "ablation", seed=104,
                        samples=16)
    sweep_ok = [row["delta"] for row in rows] == list(DEFAULT_DELTA_SWEEP)
    m_lmds = [row["m_lmd"] for row in rows]
    lmd_varies = len({round(v, 9) for v in m_lmds}) > 1

    zero_dir = work / "ablation" / "delta_0"
    neutral = (zero_dir / "neutral_landmarks.csv").read_bytes()
    emotional = (zero_dir / "emotional_landmarks.csv").read_bytes()
    zero_identity = neutral == emotional

    passed = byte_identical and sweep_ok and lmd_varies and zero_identity
    return _result("c10", "end-to-end determinism and sweep structure", t0, passed,
                   byte_identical=byte_identical, sweep_rows_ok=sweep_ok,
                   m_lmd_varies=lmd_varies, zero_delta_identity=zero_identity,
                   rows=len(rows))


CRITERIA = {
    "c1": criterion_1_flow_roundtrip,
    "c2": criterion_2_kl_sanity,
    "c3": criterion_3_grad_checks,
    "c4": criterion_4_volume_rendering,
    "c5": criterion_5_deformation_semantics,
    "c6": criterion_6_ldm_oracle,
    "c7": criterion_7_vae_overfit,
    "c8": criterion_8_nerf_overfit,
    "c9": criterion_9_metrics,
    "c10": criterion_10_determinism,
}
_NEEDS_WORKDIR = {"c6", "c7", "c8", "c10"}


def resolve_suite(selector: str) -> list:
    if selector == "invariants":
        return list(INVARIANT_SUITE)
    if selector == "full":
        return list(FULL_SUITE)
    picks = [s.strip() for s in selector.split(",") if s.strip()]
    unknown = [p for p in picks if p not in CRITERIA]
    if not picks or unknown:
        raise ValidationError(
            f"unknown acceptance selector {selector!r}; use 'invariants', 'full', "
            f"or a comma list of {', '.join(CRITERIA)}")
    return picks


def run_acceptance(selector: str, cfg=None, workdir="runs/acceptance") -> list:
    """Run the selected criteria, print one line each, write a JSON report."""
    ids = resolve_suite(selector)
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    results = []
    for cid in ids:
        fn = CRITERIA[cid]
        result = fn(workdir=work) if cid in _NEEDS_WORKDIR else fn()
        results.append(result)
        print(result.line(), flush=True)

    report = [{"id": r.cid, "name": r.name, "passed": r.passed,
               "seconds": round(r.seconds, 2), "details": r.details} for r in results]
    (work / "acceptance_report.json").write_text(json.dumps(report, indent=1))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed; report at {work / 'acceptance_report.json'}")
    return results
