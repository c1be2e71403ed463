"""Training loop, evaluation, ablation, and run reports.

The per-step pipeline for each anchor clip: augment into 2 positives and k
negatives, splice contrast maps, build prompts and masked maps, encode
everything, predict pulse signals, reconstruct masked maps under text
guidance, sum the losses, and step the optimizer.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from . import losses as L
from .config import SynthConfig, TrainConfig
from .encoders import Heads, ModelDims, TextEncoder, VisionEncoder
from .pairs import mask_cstmap, make_cstmaps, prompt_for_map
from .physio import SignalTrace, bandpass, estimate_hr, metrics
from .reconstruction import TextGuidedDecoder
from .stmap import AugSpec, build_stmap, make_augmented_set
from .synthgen import SourceClip, read_dataset

logger = logging.getLogger(__name__)


class Model(nn.Module):
    """Vision and text encoders, heads, and the reconstruction decoder."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.vision = VisionEncoder(dims)
        self.text = TextEncoder(dims)
        self.heads = Heads(dims)
        self.decoder = TextGuidedDecoder(dims)


def model_dims(cfg: TrainConfig) -> ModelDims:
    return ModelDims(map_size=cfg.map_size, patch=cfg.patch,
                     embed_dim=cfg.embed_dim, sim_dim=cfg.sim_dim,
                     vision_depth=cfg.vision_depth, text_depth=cfg.text_depth,
                     heads=cfg.heads, decoder_blocks=cfg.decoder_blocks)


def build_model(cfg: TrainConfig) -> Model:
    torch.manual_seed(cfg.seed)
    return Model(model_dims(cfg))


def loss_config(cfg: TrainConfig, fs: float) -> L.LossConfig:
    lc = L.LossConfig(tau1=cfg.tau1, tau2=cfg.tau2, n_fft=cfg.psd_n_fft, fs=fs,
                      weights={"recon": cfg.w_recon, "vtc": cfg.w_vtc,
                               "fc": cfg.w_fc, "fr": cfg.w_fr, "pearson": 1.0,
                               "afr": 1.0},
                      vtc_include_positive=cfg.vtc_include_positive,
                      psd_normalized=cfg.psd_normalized,
                      recon_masked_only=cfg.recon_masked_only)
    lc.validate()
    return lc


@dataclass
class AnchorBatch:
    """Numpy-side tensors for one training batch."""

    stmaps: np.ndarray            # (B, 5, F, F, 3)
    labels: np.ndarray            # (B, 5) int
    ratios: np.ndarray            # (B, k)
    cmaps: np.ndarray             # (B, 2k, F, F, 3)
    tokens: np.ndarray            # (B, 2k, 32)
    visible_patches: np.ndarray   # (B, 2k, V, p*p*3)
    visible_pos: np.ndarray       # (B, 2k, V)
    masked_pos: np.ndarray        # (B, 2k, M)
    sup_targets: np.ndarray       # (B, F)
    sup_mask: np.ndarray          # (B,) bool


def ground_truth_trace(clip: SourceClip, start: int, f: int) -> np.ndarray:
    """Reference pulse: band-passed ROI-mean green trace over the crop window."""
    green = clip.traces[:, start:start + f, 1].mean(axis=0)
    return bandpass(green, clip.fs)


def prepare_batch(clips: list[SourceClip], labeled: list[bool],
                  cfg: TrainConfig, rng: np.random.Generator) -> AnchorBatch:
    f = cfg.map_size
    aug = AugSpec(k_neg=cfg.k_neg)
    stmaps, labels, all_ratios = [], [], []
    cmaps, tokens = [], []
    vis_p, vis_i, mask_i = [], [], []
    sup_t, sup_m = [], []
    for clip, is_labeled in zip(clips, labeled):
        start = int(rng.integers(0, clip.n_frames - f + 1))
        pos, neg, ratios = make_augmented_set(clip, aug, f, rng, start=start)
        stmaps.append(np.stack([m.pixels for m in pos + neg]))
        all_ratios.append(ratios)
        if cfg.k_neg == 3:
            labels.append(L.rank_labels(ratios))
        else:
            labels.append((0, 0, 0, 0, 0))
        cm = make_cstmaps(pos, neg, swap_sides=cfg.swap_sides and bool(rng.integers(2)))
        cmaps.append(np.stack([c.pixels for c in cm]))
        tokens.append(np.stack([prompt_for_map(c, cfg.template).tokens for c in cm]))
        masked = [mask_cstmap(c, cfg.mask_ratio, cfg.patch, rng) for c in cm]
        vis_p.append(np.stack([m.visible_patches.reshape(len(m.visible_positions), -1)
                               for m in masked]))
        vis_i.append(np.stack([m.visible_positions for m in masked]))
        mask_i.append(np.stack([m.masked_positions for m in masked]))
        sup_m.append(is_labeled)
        sup_t.append(ground_truth_trace(clip, start, f) if is_labeled
                     else np.zeros(f))
    return AnchorBatch(
        stmaps=np.asarray(stmaps, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        ratios=np.asarray(all_ratios, dtype=np.float32),
        cmaps=np.asarray(cmaps, dtype=np.float32),
        tokens=np.asarray(tokens, dtype=np.int64),
        visible_patches=np.asarray(vis_p, dtype=np.float32),
        visible_pos=np.asarray(vis_i, dtype=np.int64),
        masked_pos=np.asarray(mask_i, dtype=np.int64),
        sup_targets=np.asarray(sup_t, dtype=np.float32),
        sup_mask=np.asarray(sup_m, dtype=bool),
    )


def _spectral_centroid(y: torch.Tensor, lc: L.LossConfig) -> torch.Tensor:
    """Expected in-band frequency under the normalized power spectrum."""
    freqs = torch.fft.rfftfreq(lc.n_fft, d=1.0 / lc.fs)
    mask = (freqs >= lc.band[0]) & (freqs <= lc.band[1])
    p = L.psd(y, lc.fs, lc.band, lc.n_fft, normalized=True)
    return (p * freqs[mask].to(p.dtype)).sum(dim=-1)


def train_step(model: Model, batch: AnchorBatch, lc: L.LossConfig,
               cfg: TrainConfig) -> dict[str, torch.Tensor]:
    """Loss components for one batch; per-anchor losses averaged over anchors."""
    b = batch.stmaps.shape[0]
    f = cfg.map_size
    dev_dtype = next(model.parameters()).dtype
    components: dict[str, torch.Tensor] = {}
    supervised_only = cfg.supervised_fraction >= 1.0

    stm = torch.from_numpy(batch.stmaps).to(dev_dtype)
    cls_s, _ = model.vision(stm.reshape(b * 5, f, f, 3))
    signals = model.heads.rppg_signal(cls_s).reshape(b, 5, f)

    if not supervised_only:
        need_text = cfg.w_vtc != 0.0 or cfg.w_recon != 0.0
        n_pairs = batch.cmaps.shape[1]
        if need_text:
            tok = torch.from_numpy(batch.tokens).reshape(b * n_pairs, -1)
            text_cls = model.text(tok)
        if cfg.w_vtc != 0.0:
            cm = torch.from_numpy(batch.cmaps).to(dev_dtype)
            cls_c, _ = model.vision(cm.reshape(b * n_pairs, f, f, 3))
            v_proj = model.heads.vision_proj(cls_c).reshape(b, n_pairs, -1)
            t_proj = model.heads.text_proj(text_cls).reshape(b, n_pairs, -1)
            if cfg.vtc_pooled_batch:
                components["vtc"] = L.vision_text_contrastive_loss(
                    v_proj.reshape(b * n_pairs, -1), t_proj.reshape(b * n_pairs, -1),
                    tau=lc.tau1, include_positive=lc.vtc_include_positive)
            else:
                per_anchor = [L.vision_text_contrastive_loss(
                    v_proj[i], t_proj[i], tau=lc.tau1,
                    include_positive=lc.vtc_include_positive) for i in range(b)]
                components["vtc"] = torch.stack(per_anchor).mean()
        if cfg.w_recon != 0.0:
            vp = torch.from_numpy(batch.visible_patches).to(dev_dtype)
            vi = torch.from_numpy(batch.visible_pos)
            mi = torch.from_numpy(batch.masked_pos)
            n_vis = vp.shape[2]
            _, vis_emb = model.vision.forward_masked(
                vp.reshape(b * n_pairs, n_vis, -1),
                vi.reshape(b * n_pairs, n_vis))
            recon = model.decoder(vis_emb, vi.reshape(b * n_pairs, n_vis),
                                  mi.reshape(b * n_pairs, -1), text_cls)
            originals = torch.from_numpy(batch.cmaps).to(dev_dtype).reshape(
                b * n_pairs, f, f, 3)
            pixel_mask = None
            if lc.recon_masked_only:
                pixel_mask = _masked_pixel_mask(
                    mi.reshape(b * n_pairs, -1), cfg.patch, f)
            components["recon"] = L.reconstruction_loss(originals, recon, pixel_mask)
        if cfg.w_fc != 0.0:
            fc = [L.frequency_contrastive_loss(signals[i, :2], signals[i, 2:], lc)
                  for i in range(b)]
            components["fc"] = torch.stack(fc).mean()
        if cfg.w_fr != 0.0 and cfg.k_neg == 3 and not cfg.use_afr:
            scores = model.heads.rank_scores(signals)
            fr = [L.frequency_ranking_loss(scores[i], batch.labels[i].tolist())
                  for i in range(b)]
            components["fr"] = torch.stack(fr).mean()
        if cfg.use_afr:
            freqs = _spectral_centroid(signals, lc)  # (B, 5)
            pos_f = freqs[:, :2].mean(dim=1, keepdim=True)
            pred_r = freqs[:, 2:] / pos_f.clamp_min(1e-6)
            target = torch.from_numpy(batch.ratios).to(pred_r.dtype)
            components["afr"] = ((pred_r - target) ** 2).mean()

    if bool(batch.sup_mask.any()):
        terms = []
        for i in np.flatnonzero(batch.sup_mask):
            g = torch.from_numpy(batch.sup_targets[i]).to(dev_dtype)
            terms.append(L.pearson_loss(signals[i, 0], g))
            terms.append(L.pearson_loss(signals[i, 1], g))
        components["pearson"] = torch.stack(terms).mean()
    return components


def _masked_pixel_mask(masked_pos: torch.Tensor, patch: int, f: int) -> torch.Tensor:
    """(B, M) patch indices -> (B, F, F) pixel mask of masked regions."""
    b, m = masked_pos.shape
    per_side = f // patch
    grid = torch.zeros(b, per_side * per_side)
    grid = grid.scatter(1, masked_pos, 1.0).reshape(b, per_side, per_side)
    return grid.repeat_interleave(patch, dim=1).repeat_interleave(patch, dim=2)


LOG_COMPONENTS = ("recon", "vtc", "fc", "fr")
CSV_HEADER = ("step", "L_r", "L_vtc", "L_fc", "L_fr", "total", "pearson")


def _component_row(step: int, components: dict, total: float) -> list:
    vals = {k: float(v.detach()) for k, v in components.items()}
    return [step] + [vals.get(k, 0.0) for k in LOG_COMPONENTS] + \
        [total, vals.get("pearson", 0.0)]


def manifest_hash(dataset_dir: Path) -> str:
    return hashlib.sha256((Path(dataset_dir) / "manifest.json").read_bytes()).hexdigest()


def apply_determinism(cfg: TrainConfig):
    if cfg.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def train(cfg: TrainConfig, out_dir: Path,
          resume_from: Path | None = None) -> dict:
    """Train per the config; writes checkpoint, per-step CSV, and run report.

    Returns the run report dict (its `report_hash` covers everything
    deterministic: config echo, manifest hash, per-epoch losses).
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    apply_determinism(cfg)
    t0 = time.monotonic()

    manifest, clips = read_dataset(cfg.dataset)
    train_ids = sorted(manifest.split_ids("train"))
    if not train_ids:
        raise ValueError(f"dataset {cfg.dataset} has no train split")
    fs = manifest.samples[0].fs
    lc = loss_config(cfg, fs)
    n_labeled = int(round(cfg.supervised_fraction * len(train_ids)))
    labeled_ids = set(train_ids[:n_labeled])

    model = build_model(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 0
    if resume_from is not None:
        start_epoch = _load_training_state(resume_from, model, opt, rng, cfg)

    epoch_rows = []
    step = start_epoch * max(1, len(train_ids) // cfg.batch_size)
    log_path = out_dir / "train_log.csv"
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode, newline="") as log_file:
        writer = csv.writer(log_file)
        if mode == "w":
            writer.writerow(CSV_HEADER)
        for epoch in range(start_epoch, cfg.epochs):
            order = rng.permutation(len(train_ids))
            epoch_totals: dict[str, float] = {}
            n_steps = 0
            for chunk_start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
                idx = order[chunk_start:chunk_start + cfg.batch_size]
                ids = [train_ids[i] for i in idx]
                batch = prepare_batch([clips[i] for i in ids],
                                      [i in labeled_ids for i in ids], cfg, rng)
                components = train_step(model, batch, lc, cfg)
                try:
                    total = L.total_loss(components, lc.weights)
                except FloatingPointError as err:
                    raise FloatingPointError(f"step {step}: {err}") from err
                opt.zero_grad()
                total.backward()
                opt.step()
                writer.writerow(_component_row(step, components, float(total.detach())))
                for name, value in components.items():
                    epoch_totals[name] = epoch_totals.get(name, 0.0) + float(value.detach())
                epoch_totals["total"] = epoch_totals.get("total", 0.0) + float(total.detach())
                step += 1
                n_steps += 1
            row = {"epoch": epoch}
            row.update({k: v / max(1, n_steps) for k, v in sorted(epoch_totals.items())})
            epoch_rows.append(row)
            logger.info("epoch %d: %s", epoch,
                        " ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 \
                    and epoch + 1 < cfg.epochs:
                _save_training_state(out_dir / f"checkpoint_ep{epoch + 1:04d}.tnsr",
                                     model, opt, rng, cfg, epoch + 1)

    ckpt_path = out_dir / "checkpoint.tnsr"
    _save_training_state(ckpt_path, model, opt, rng, cfg, cfg.epochs)
    report = {
        "config": asdict(cfg),
        "manifest_hash": manifest_hash(cfg.dataset),
        "mode": cfg.mode,
        "epochs": epoch_rows,
        "final_metrics": None,
    }
    report["report_hash"] = report_hash(report)
    report["wall_clock_s"] = time.monotonic() - t0
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    return report


def report_hash(report: dict) -> str:
    payload = {k: report[k] for k in ("config", "manifest_hash", "epochs", "final_metrics")}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _save_training_state(path: Path, model: Model, opt, rng, cfg: TrainConfig,
                         epochs_done: int) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    param_names = {id(p): f"model.{n}" for n, p in model.named_parameters()}
    for p, state in opt.state.items():
        base = param_names[id(p)]
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                tensors[f"opt.{base}.{key}"] = value.to(torch.float32)
    rng_state = {
        "torch": ckpt.torch_rng_to_json(),
        "numpy": ckpt.numpy_rng_to_json(rng),
        "epochs_done": epochs_done,
    }
    ckpt.save_checkpoint(path, tensors, config_echo=asdict(cfg), rng_state=rng_state)


def _load_training_state(path: Path, model: Model, opt, rng,
                         cfg: TrainConfig) -> int:
    tensors, config_echo, rng_state = ckpt.load_checkpoint(path)
    _check_dims(config_echo, cfg)
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    # rebuild optimizer state
    name_to_param = dict(model.named_parameters())
    opt_state = {}
    for key, value in tensors.items():
        if not key.startswith("opt.model."):
            continue
        rest = key[len("opt.model."):]
        param_name, _, slot = rest.rpartition(".")
        param = name_to_param[param_name]
        opt_state.setdefault(param, {})[slot] = value
    for param, slots in opt_state.items():
        if "step" in slots:
            slots["step"] = slots["step"].reshape(())
        opt.state[param] = slots
    if rng_state.get("torch"):
        ckpt.torch_rng_from_json(rng_state["torch"])
    if rng_state.get("numpy"):
        rng.bit_generator.state = rng_state["numpy"]
    return int(rng_state.get("epochs_done", 0))


def _check_dims(config_echo: dict, cfg: TrainConfig) -> None:
    for key in ("map_size", "patch", "embed_dim", "sim_dim", "vision_depth",
                "text_depth", "heads", "decoder_blocks"):
        if key in config_echo and config_echo[key] != getattr(cfg, key):
            raise ValueError(f"checkpoint/config mismatch on {key}: "
                             f"{config_echo[key]} != {getattr(cfg, key)}")


def load_model(path: Path, cfg: TrainConfig | None = None) -> tuple[Model, TrainConfig]:
    """Model from a checkpoint; config defaults come from the stored echo."""
    tensors, config_echo, _ = ckpt.load_checkpoint(path)
    if cfg is None:
        known = {f.name for f in TrainConfig.__dataclass_fields__.values()}
        cfg = TrainConfig(**{k: v for k, v in config_echo.items() if k in known})
    else:
        _check_dims(config_echo, cfg)
    model = Model(model_dims(cfg))
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    return model, cfg


@torch.no_grad()
def predict_signals(model: Model, clips: list[SourceClip],
                    cfg: TrainConfig) -> list[SignalTrace]:
    """Pulse signal per clip from the central crop (no augmentation)."""
    f = cfg.map_size
    model.eval()
    maps = []
    for clip in clips:
        start = (clip.n_frames - f) // 2
        maps.append(build_stmap(clip, start, f).pixels)
    x = torch.from_numpy(np.asarray(maps, dtype=np.float32))
    dtype = next(model.parameters()).dtype
    cls, _ = model.vision(x.to(dtype))
    signals = model.heads.rppg_signal(cls).cpu().numpy()
    return [SignalTrace(samples=s.astype(np.float64), fs=clip.fs)
            for s, clip in zip(signals, clips)]


def evaluate(model: Model, dataset_dir: Path, cfg: TrainConfig,
             split: str = "test", out_dir: Path | None = None) -> dict:
    """Per-clip HR from predicted signals vs ground truth; metric report.

    Writes bland_altman.csv, metrics.json, and plot files when out_dir is
    given.
    """
    manifest, clips = read_dataset(dataset_dir)
    ids = sorted(manifest.split_ids(split))
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    clip_list = [clips[i] for i in ids]
    traces = predict_signals(model, clip_list, cfg)
    preds, gts = [], []
    for trace, clip in zip(traces, clip_list):
        try:
            preds.append(estimate_hr(trace))
        except ValueError:
            preds.append(60.0 * 0.75)  # degenerate signal: report band floor
        gts.append(60.0 * clip.f0)
    report = metrics(preds, gts)
    result = {"split": split, "n": len(ids), **report.as_dict()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(json.dumps(result, indent=2))
        with open(out_dir / "bland_altman.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "hr_gt", "hr_pred", "mean", "diff"])
            for sid, gt, pred in zip(ids, gts, preds):
                writer.writerow([sid, gt, pred, (gt + pred) / 2, pred - gt])
        from . import render
        render.overlay_plot(traces[:6], clip_list[:6], cfg.map_size,
                            out_dir / "trace_overlay.png")
        render.scatter_plot(gts, preds, out_dir / "hr_scatter.png")
        render.bland_altman_plot(gts, preds, report.bland_altman,
                                 out_dir / "bland_altman.png")
    return result


ABLATION_SWITCHES = ("full", "no_fc", "no_vtc", "no_fr", "no_tvr", "no_text", "afr")


def apply_switch(cfg: TrainConfig, switch: str) -> TrainConfig:
    """New config with one documented ablation switch applied."""
    import dataclasses
    out = dataclasses.replace(cfg)
    if switch == "full":
        return out
    if switch == "no_fc":
        out.w_fc = 0.0
    elif switch == "no_vtc":
        out.w_vtc = 0.0
    elif switch == "no_fr":
        out.w_fr = 0.0
    elif switch == "no_tvr":
        out.w_recon = 0.0
    elif switch == "no_text":
        out.w_recon = 0.0
        out.w_vtc = 0.0
    elif switch == "afr":
        out.use_afr = True
        out.w_fr = 0.0
    elif switch.startswith("mask="):
        out.mask_ratio = float(switch.split("=", 1)[1])
    elif switch.startswith("k="):
        out.k_neg = int(switch.split("=", 1)[1])
    elif switch.startswith("template="):
        out.template = switch.split("=", 1)[1]
    else:
        raise ValueError(f"unknown ablation switch {switch!r}")
    return out


def ablate(cfg: TrainConfig, switches: list[str], out_dir: Path) -> list[dict]:
    """Train one variant per switch with shared seed/dataset; tabulate metrics."""
    out_dir = Path(out_dir)
    rows = []
    for switch in switches:
        variant_cfg = apply_switch(cfg, switch)
        variant_dir = out_dir / switch.replace("=", "_")
        train(variant_cfg, variant_dir)
        model, _ = load_model(variant_dir / "checkpoint.tnsr", variant_cfg)
        result = evaluate(model, variant_cfg.dataset, variant_cfg,
                          out_dir=variant_dir)
        rows.append({"switch": switch, **result})
        logger.info("ablation %s: mae=%.3f rmse=%.3f rho=%.3f", switch,
                    result["mae"], result["rmse"], result["pearson_rho"])
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2))
    return rows
