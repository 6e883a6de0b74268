"""Command-line entry point.

Subcommands: degrade, train, restore, eval, gradcheck, ablate. Options come
from flags, then a key=value config file, then defaults. Every run writes
its fully resolved configuration next to its outputs (config_used.txt; the
timestamp lives only there). Exit codes: 0 success, 1 validation failure,
2 runtime failure.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import degrade as degrade_mod
from . import trainer as trainer_mod
from .backend import ShapeError, Tensor, gradient_check
from .data import (ContainerError, from_network, ingest_folder, list_images,
                   load_image, save_image, to_network)
from .degrade import DegradationSpec, apply_degradation
from .metrics import evaluate_pairs
from .networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .objectives import LossWeights, adversarial_losses, perceptual_loss, pixel_loss
from .patchgraph import load_adjacency
from .trainer import TrainConfig, TrainingDiverged, load_generator, run_ablation, train

CONFIG_KEYS = ("seed", "data", "out", "checkpoint", "task", "mask_fraction", "scale",
               "steps", "batch", "ablation", "adjacency", "lr", "checkpoint_every",
               "extractor_channels", "relation_channels", "fusion_channels",
               "disc_base_channels", "disc_channel_cap", "eval_limit")


def read_config_file(path):
    """Parse 'key = value' lines; '#' starts a comment."""
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = val
    return values


def resolve(args, file_values, key, default=None, cast=str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        return cast(file_values[key])
    return default


def write_sidecar(out_dir, settings):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    for key in sorted(settings):
        lines.append(f"{key} = {settings[key]}")
    (out_dir / "config_used.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_parser():
    parser = argparse.ArgumentParser(prog="graphface",
                                     description="Joint face completion and super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--data", help="input/data directory")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--task", choices=("srfc4", "srfc8", "fc", "sr8"))
        p.add_argument("--mask-fraction", dest="mask_fraction", type=float)
        p.add_argument("--scale", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--ablation", choices=("m1", "m2", "m3"))
        p.add_argument("--adjacency", help="custom adjacency file")

    for name in ("degrade", "train", "restore", "eval", "gradcheck", "ablate"):
        p = sub.add_parser(name)
        common(p)
        if name == "eval":
            p.add_argument("restored", help="directory of restored images")
            p.add_argument("groundtruth", help="directory of ground-truth images")
        if name == "restore":
            p.add_argument("gt_dir", nargs="?", default=None,
                           help="optional ground-truth dir; enables the comparison grid")
    return parser


def _train_config(args, fv):
    task = resolve(args, fv, "task", "srfc4")
    cfg = TrainConfig(
        task=task,
        batch=int(resolve(args, fv, "batch", 24, int)),
        steps=int(resolve(args, fv, "steps", 200, int)),
        seed=int(resolve(args, fv, "seed", 0, int)),
        ablation=resolve(args, fv, "ablation", "m3"),
        mask_fraction=resolve(args, fv, "mask_fraction", None, float),
        lr=float(fv.get("lr", 1e-4)),
        checkpoint_every=int(fv.get("checkpoint_every", 100)),
        extractor_channels=_int_tuple(fv.get("extractor_channels", "16,32,64")),
        relation_channels=int(fv.get("relation_channels", 64)),
        fusion_channels=int(fv.get("fusion_channels", 128)),
        disc_base_channels=int(fv.get("disc_base_channels", 16)),
        disc_channel_cap=int(fv.get("disc_channel_cap", 512)),
    )
    return cfg


def _int_tuple(text):
    if isinstance(text, tuple):
        return text
    return tuple(int(v) for v in str(text).split(","))


# ---------------------------------------------------------------------------
# commands

def cmd_degrade(args, fv):
    in_dir = resolve(args, fv, "data")
    out_dir = resolve(args, fv, "out")
    if not in_dir or not out_dir:
        raise ValueError("degrade needs --data (input dir) and --out")
    scale = int(resolve(args, fv, "scale", 4, int))
    fraction = resolve(args, fv, "mask_fraction", None, float)
    fraction = 0.25 if fraction is None else float(fraction)
    seed = int(resolve(args, fv, "seed", 0, int))

    out_dir = Path(out_dir)
    mask_dir = out_dir / "masks"
    skipped = []
    children = None
    files = list_images(in_dir)
    for i, path in enumerate(files):
        img = load_image(path)
        if img.shape[0] != 128 or img.shape[1] != 128:
            skipped.append(path.name)
            continue
        if children is None:
            children = np.random.SeedSequence(seed).spawn(len(files))
        spec = DegradationSpec(scale=scale, mask_fraction=fraction,
                               rng_seed=int(children[i].generate_state(1)[0]))
        lq, masks = apply_degradation(to_network(img)[None], spec)
        save_image(out_dir / path.name, from_network(lq[0]))
        save_image(mask_dir / path.name, (masks[0].mask * 255).astype(np.uint8))
    if skipped:
        print(f"skipped {len(skipped)} non-128x128 file(s): {', '.join(skipped)}")
    write_sidecar(out_dir, {"command": "degrade", "data": in_dir, "scale": scale,
                            "mask_fraction": fraction, "seed": seed})
    print(f"degraded {len(files) - len(skipped)} image(s) into {out_dir}")
    return 0


def cmd_train(args, fv):
    data = resolve(args, fv, "data")
    out = resolve(args, fv, "out")
    if not data or not out:
        raise ValueError("train needs --data and --out")
    cfg = _train_config(args, fv)
    manifest = ingest_folder(data)
    resume = resolve(args, fv, "checkpoint")
    result = train(cfg, manifest, out, resume=resume)
    write_sidecar(out, {"command": "train", "data": data, **_cfg_settings(cfg)})
    print(f"trained {result.steps_run} step(s); checkpoint at {result.checkpoint_path}")
    if result.last_losses:
        print("final:", ", ".join(f"{k}={v:.5f}" for k, v in result.last_losses.items()))
    return 0


def _cfg_settings(cfg):
    d = {k: v for k, v in vars(cfg).items() if k != "weights"}
    d["loss_weights"] = (cfg.weights.pixel, cfg.weights.adversarial, cfg.weights.perceptual)
    return d


def cmd_restore(args, fv):
    ckpt = resolve(args, fv, "checkpoint")
    in_dir = resolve(args, fv, "data")
    out = resolve(args, fv, "out")
    if not ckpt or not in_dir or not out:
        raise ValueError("restore needs --checkpoint, --data (degraded inputs) and --out")
    gen, cfg = load_generator(ckpt)
    size = cfg.input_size
    out_dir = Path(out)
    count = 0
    for path in list_images(in_dir):
        img = load_image(path)
        if img.shape[0] != size or img.shape[1] != size:
            raise ValueError(
                f"{path.name}: expected {size}x{size} input for this checkpoint, "
                f"got {img.shape[1]}x{img.shape[0]}")
        result = gen(Tensor(to_network(img)[None]))
        save_image(out_dir / path.name, from_network(result.data[0]))
        count += 1
    if args.gt_dir:
        write_grid(args.gt_dir, in_dir, out_dir, out_dir / "comparison_grid.png")
    write_sidecar(out_dir, {"command": "restore", "checkpoint": ckpt, "data": in_dir})
    print(f"restored {count} image(s) into {out_dir}")
    return 0


def _nearest_upscale(img, size=128):
    fy = size // img.shape[0]
    return np.repeat(np.repeat(img, fy, axis=0), size // img.shape[1], axis=1)


def write_grid(gt_dir, input_dir, output_dir, grid_path, max_cols=8):
    """Rows: ground truth / degraded input (nearest-upscaled) / restored output."""
    names = [p.name for p in list_images(output_dir)][:max_cols]
    cols = []
    for name in names:
        gt = load_image(Path(gt_dir) / name)
        lq = _nearest_upscale(load_image(Path(input_dir) / name))
        out = load_image(Path(output_dir) / name)
        cols.append(np.concatenate([gt, lq, out], axis=0))
    save_image(grid_path, np.concatenate(cols, axis=1))


def cmd_eval(args, fv):
    report = evaluate_pairs(args.restored, args.groundtruth)
    print(report.format_table())
    out = resolve(args, fv, "out")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
        write_sidecar(out_dir, {"command": "eval", "restored": args.restored,
                                "groundtruth": args.groundtruth})
    return 0


def cmd_gradcheck(args, fv):
    out = resolve(args, fv, "out")
    seed = int(resolve(args, fv, "seed", 0, int))
    report_lines, all_ok = run_default_gradchecks(seed)
    text = "\n".join(report_lines)
    print(text)
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
        write_sidecar(out_dir, {"command": "gradcheck", "seed": seed})
    return 0 if all_ok else 1


def run_default_gradchecks(seed=0):
    """Finite-difference checks over toy float64 configs of the main pieces."""
    from .backend import mean
    from .blocks import PyramidBlock, SmallExtractor
    from .objectives import bce_with_logits

    rng = np.random.default_rng(seed)
    lines, ok = [], True

    def run(label, fn, params):
        nonlocal ok
        report = gradient_check(fn, params, eps=1e-5, tol=1e-6)
        worst = max((e.max_rel_err for e in report.entries), default=0.0)
        status = "pass" if report.passed else "FAIL"
        lines.append(f"{status}  {label}: {len(report.entries)} parameter(s), "
                     f"max rel err {worst:.3e}")
        ok = ok and report.passed

    block = PyramidBlock(2, np.random.default_rng(seed), extractor_channels=(2, 3, 4),
                         relation_ch=3, fusion_ch=4, dtype=np.float64).assign_names("pyramid")
    xb = Tensor(rng.standard_normal((1, 2, 16, 16)))
    run("pyramid block", lambda: mean(block(xb)), block.parameters())

    dcfg = DiscriminatorConfig(input_size=16, base_channels=2, channel_cap=4, dtype="float64")
    disc = Discriminator(dcfg, seed=seed)
    xd = Tensor(rng.standard_normal((1, 3, 16, 16)))
    run("discriminator", lambda: mean(disc(xd)), disc.parameters())

    gcfg = GeneratorConfig(input_size=32, extractor_channels=(2, 2, 2), relation_channels=2,
                           fusion_channels=4, dtype="float64")
    gen = Generator(gcfg, seed=seed)
    head_params = [p for name, p in gen.named_parameters()
                   if name.startswith(("head", "to_rgb"))]
    xg = Tensor(rng.uniform(-1, 1, (1, 3, 32, 32)))
    run("generator head", lambda: mean(gen(xg)), head_params)

    from .backend import Parameter
    img = Parameter(rng.uniform(-1, 1, (1, 3, 8, 8)), "i_out")
    gt = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)))
    run("pixel loss", lambda: pixel_loss(img, gt), [img])

    ex = SmallExtractor(3, np.random.default_rng(seed), channels=(2, 3, 4),
                        dtype=np.float64).freeze()
    run("perceptual loss", lambda: perceptual_loss(img, gt, ex), [img])

    logit = Parameter(rng.standard_normal((2, 1)), "logit")
    run("adversarial loss (G)", lambda: adversarial_losses(logit.detach(), logit)[1], [logit])
    run("adversarial loss (D)", lambda: adversarial_losses(logit, Tensor(rng.standard_normal((2, 1))))[0], [logit])
    return lines, ok


def cmd_ablate(args, fv):
    data = resolve(args, fv, "data")
    out = resolve(args, fv, "out")
    if not data or not out:
        raise ValueError("ablate needs --data and --out")
    cfg = _train_config(args, fv)
    manifest = ingest_folder(data)
    limit = fv.get("eval_limit")
    rows = run_ablation(manifest, cfg, out, eval_seed=cfg.seed,
                        eval_limit=int(limit) if limit else None)
    from .trainer import format_ablation_table
    print(format_ablation_table(rows))
    write_sidecar(out, {"command": "ablate", "data": data, **_cfg_settings(cfg)})
    return 0 if all(r.valid for r in rows) else 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    fv = read_config_file(args.config) if getattr(args, "config", None) else {}
    handlers = {"degrade": cmd_degrade, "train": cmd_train, "restore": cmd_restore,
                "eval": cmd_eval, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args, fv)
    except (ValueError, ShapeError, ContainerError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
