"""Command-line interface: synth, train, eval, ablate, inspect.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rppglab",
                     description="Desk-scale self-supervised pulse estimation")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--deterministic", action="store_true")

    p_synth = sub.add_parser("synth", help="generate a dataset")
    common(p_synth)
    p_synth.add_argument("--force", action="store_true",
                         help="overwrite an existing dataset directory")

    p_train = sub.add_parser("train", help="train a model")
    common(p_train)
    p_train.add_argument("--dataset", type=Path, default=None,
                         help="dataset directory (overrides config key)")
    p_train.add_argument("--resume", type=Path, default=None,
                         help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--dataset", type=Path, default=None)
    p_eval.add_argument("--split", default="test")

    p_abl = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p_abl)
    p_abl.add_argument("--dataset", type=Path, default=None)
    p_abl.add_argument("--switches", default="full,no_fc,no_vtc",
                       help="comma-separated switch list")

    p_ins = sub.add_parser("inspect", help="render maps/masks/reconstructions")
    common(p_ins)
    p_ins.add_argument("--dataset", type=Path, required=True)
    p_ins.add_argument("--sample", required=True, help="sample id to render")
    p_ins.add_argument("--checkpoint", type=Path, default=None)
    return parser


def _load_values(args) -> dict:
    from .config import parse_config_file
    if args.config is None:
        return {}
    if not args.config.exists():
        raise UsageError(f"config file not found: {args.config}")
    return parse_config_file(args.config)


def _synth_config(args):
    from .config import SynthConfig, build_config, split_config_values
    try:
        values, _ = split_config_values(_load_values(args))
        return build_config(SynthConfig, values, {"seed": args.seed})
    except (KeyError, ValueError) as err:
        raise UsageError(str(err).strip("'")) from err


def _train_config(args):
    from .config import TrainConfig, build_config, split_config_values
    overrides = {"seed": args.seed}
    if getattr(args, "dataset", None) is not None:
        overrides["dataset"] = str(args.dataset)
    if args.deterministic:
        overrides["deterministic"] = True
    try:
        _, values = split_config_values(_load_values(args))
        cfg = build_config(TrainConfig, values, overrides)
        cfg.validate()
        return cfg
    except (KeyError, ValueError) as err:
        raise UsageError(str(err).strip("'")) from err


def cmd_synth(args) -> int:
    from .synthgen import gen_dataset
    cfg = _synth_config(args)
    manifest, _ = gen_dataset(cfg, out_dir=args.out, force=args.force)
    print(f"wrote {len(manifest.samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .harness import train
    cfg = _train_config(args)
    report = train(cfg, args.out, resume_from=args.resume)
    last = report["epochs"][-1] if report["epochs"] else {}
    print(f"trained {cfg.epochs} epochs (mode={report['mode']}); "
          f"final total loss {last.get('total', float('nan')):.4f}")
    print(f"checkpoint: {args.out / 'checkpoint.tnsr'}")
    return 0


def cmd_eval(args) -> int:
    from .harness import evaluate, load_model
    model, cfg = load_model(args.checkpoint)
    dataset = args.dataset or Path(cfg.dataset)
    result = evaluate(model, dataset, cfg, split=args.split, out_dir=args.out)
    print(json.dumps(result, indent=2))
    return 0


def cmd_ablate(args) -> int:
    from .harness import ablate
    cfg = _train_config(args)
    switches = [s.strip() for s in args.switches.split(",") if s.strip()]
    if not switches:
        raise UsageError("no ablation switches given")
    rows = ablate(cfg, switches, args.out)
    width = max(len(r["switch"]) for r in rows)
    print(f"{'switch':<{width}}  {'MAE':>7}  {'RMSE':>7}  {'rho':>6}")
    for row in rows:
        print(f"{row['switch']:<{width}}  {row['mae']:>7.3f}  "
              f"{row['rmse']:>7.3f}  {row['pearson_rho']:>6.3f}")
    return 0


def cmd_inspect(args) -> int:
    import torch

    from . import render
    from .config import TrainConfig
    from .harness import build_model, load_model
    from .pairs import make_cstmaps, mask_cstmap, prompt_for_map
    from .stmap import AugSpec, make_augmented_set
    from .synthgen import read_dataset

    _, clips = read_dataset(args.dataset)
    if args.sample not in clips:
        raise UsageError(f"sample id not in dataset: {args.sample}")
    clip = clips[args.sample]
    if args.checkpoint is not None:
        model, cfg = load_model(args.checkpoint)
    else:
        cfg = TrainConfig(dataset=str(args.dataset), seed=args.seed or 0)
        model = build_model(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed or 0)
    f = cfg.map_size
    pos, neg, _ = make_augmented_set(clip, AugSpec(k_neg=cfg.k_neg), f, rng)
    render.save_map_image(pos[0].pixels, args.out / "stmap.png")
    cmaps = make_cstmaps(pos, neg)
    render.save_map_image(cmaps[0].pixels, args.out / "cstmap.png")
    masked = mask_cstmap(cmaps[0], cfg.mask_ratio, cfg.patch, rng)
    render.save_mask_image(cmaps[0].pixels, masked, args.out / "mask.png")

    prompt = prompt_for_map(cmaps[0], cfg.template)
    with torch.no_grad():
        text_cls = model.text(torch.from_numpy(prompt.tokens[None]))
        vis = torch.from_numpy(
            masked.visible_patches.reshape(1, -1, cfg.patch * cfg.patch * 3)
        ).float()
        _, vis_emb = model.vision.forward_masked(
            vis, torch.from_numpy(masked.visible_positions[None]))
        recon = model.decoder(vis_emb,
                              torch.from_numpy(masked.visible_positions[None]),
                              torch.from_numpy(masked.masked_positions[None]),
                              text_cls)
    render.save_map_image(recon[0].numpy(), args.out / "reconstruction.png")
    print(f"prompt: {prompt.text}")
    print(f"wrote stmap/cstmap/mask/reconstruction images to {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure
        logger.exception("command failed")
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
