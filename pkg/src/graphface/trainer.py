"""Adam optimization, the alternating GAN training loop, and the ablation runner.

Each step samples a batch, degrades it, updates the discriminator on
(real, detached fake), then updates the generator on the weighted total
loss. All randomness flows from one seeded generator whose state is stored
in every checkpoint, so an interrupted run resumed from disk reproduces the
uninterrupted loss sequence bit for bit.
"""
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import Tensor
from .blocks import SmallExtractor
from .data import (from_network, load_aligned, random_crop_128, save_container,
                   load_container, to_network)
from .degrade import DegradationSpec, apply_degradation, bicubic_resize
from .metrics import psnr as psnr_db
from .metrics import ssim as ssim_index
from .networks import (Discriminator, DiscriminatorConfig, Generator,
                       GeneratorConfig, is_conv_only)
from .objectives import (LOSS_CSV_HEADER, LossWeights, bce_with_logits,
                         perceptual_loss, pixel_loss, total_generator_loss)

TASKS = {
    # task -> (downsampling scale, default mask fraction)
    "srfc4": (4, 0.25),
    "srfc8": (8, 0.25),
    "fc": (1, 0.25),
    "sr8": (8, 0.0),
}


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; the last checkpoint survives."""


@dataclass
class TrainConfig:
    task: str = "srfc4"
    batch: int = 24
    steps: int = 200
    seed: int = 0
    ablation: str = "m3"
    mask_fraction: float = None  # fc only; defaults per task
    lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 100
    extractor_channels: tuple = (16, 32, 64)
    relation_channels: int = 64
    fusion_channels: int = 128
    disc_base_channels: int = 16
    disc_channel_cap: int = 512
    adjacency_file: str = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {sorted(TASKS)}")
        if self.ablation not in ("m1", "m2", "m3"):
            raise ValueError(f"ablation must be m1/m2/m3, got {self.ablation!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.mask_fraction is None:
            self.mask_fraction = TASKS[self.task][1]

    @property
    def scale(self):
        return TASKS[self.task][0]

    @property
    def input_size(self):
        return 128 // self.scale

    def degradation(self, seed):
        return DegradationSpec(scale=self.scale, mask_fraction=self.mask_fraction,
                               rng_seed=seed)

    def generator_config(self):
        return GeneratorConfig(
            input_size=self.input_size,
            extractor_channels=tuple(self.extractor_channels),
            relation_channels=self.relation_channels,
            fusion_channels=self.fusion_channels,
            use_pyramid=self.ablation != "m1",
            conv_only=self.ablation == "m2",
            adjacency_file=self.adjacency_file,
        )

    def discriminator_config(self):
        return DiscriminatorConfig(
            base_channels=self.disc_base_channels,
            channel_cap=self.disc_channel_cap,
            conv_only=self.ablation == "m2",
        )


# ---------------------------------------------------------------------------
# Adam

@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update; zero-gradient params stay put."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
        key = p.name or str(id(p))
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# rng state <-> bytes (PCG64)

def rng_state_bytes(rng):
    st = rng.bit_generator.state
    payload = (st["state"]["state"].to_bytes(16, "little")
               + st["state"]["inc"].to_bytes(16, "little")
               + bytes([st["has_uint32"] & 0xFF])
               + int(st["uinteger"]).to_bytes(8, "little"))
    return np.frombuffer(payload, dtype=np.uint8).copy()


def rng_from_state_bytes(buf):
    b = bytes(bytearray(buf))
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(b[:16], "little"),
                  "inc": int.from_bytes(b[16:32], "little")},
        "has_uint32": int(b[32]),
        "uinteger": int.from_bytes(b[33:41], "little"),
    }
    return rng


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, gen, disc, opt_g, opt_d, step, rng, cfg):
    tensors = {
        "meta/config_json": np.frombuffer(json.dumps(asdict(cfg)).encode("utf-8"), dtype=np.uint8).copy(),
        "meta/step": np.float64(step),
        "meta/opt_g_t": np.float64(opt_g.state.t),
        "meta/opt_d_t": np.float64(opt_d.state.t),
        "meta/rng_state": rng_state_bytes(rng),
    }
    for name, p in gen.named_parameters():
        tensors[f"generator/{name}"] = p.data
    for name, p in disc.named_parameters():
        tensors[f"discriminator/{name}"] = p.data
    for key, arr in opt_g.state.m.items():
        tensors[f"opt_g/m/{key}"] = arr
    for key, arr in opt_g.state.v.items():
        tensors[f"opt_g/v/{key}"] = arr
    for key, arr in opt_d.state.m.items():
        tensors[f"opt_d/m/{key}"] = arr
    for key, arr in opt_d.state.v.items():
        tensors[f"opt_d/v/{key}"] = arr
    save_container(path, tensors)


def load_checkpoint_config(path):
    state = load_container(path)
    cfg_dict = json.loads(bytes(bytearray(state["meta/config_json"])).decode("utf-8"))
    cfg = TrainConfig(**{**cfg_dict, "extractor_channels": tuple(cfg_dict["extractor_channels"])})
    return state, cfg


def load_generator(path):
    """Rebuild just the generator from a checkpoint (for restore/eval)."""
    state, cfg = load_checkpoint_config(path)
    gen = Generator(cfg.generator_config(), seed=0)
    gen.load_state_dict({name: state[f"generator/{name}"]
                         for name, _ in gen.named_parameters()})
    return gen, cfg


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    checkpoint_path: str
    csv_path: str
    steps_run: int
    last_losses: dict


def _load_split_images(manifest, split):
    files = manifest.files(split)
    if not files and split == "val":
        files = manifest.files("test")
    return [load_aligned(p) for p in files]


def _assemble_batch(images, rng, batch):
    idx = rng.integers(0, len(images), size=batch)
    crops = [to_network(random_crop_128(images[i], rng)) for i in idx]
    return np.stack(crops)


def train(cfg, manifest, out_dir, resume=None, lr=None):
    """Run the alternating loop; returns paths to the checkpoint and loss CSV.

    ``resume`` continues bit-exactly from a checkpoint written by this
    function (fine-tuning passes a smaller ``lr`` on top).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_images = _load_split_images(manifest, "train")
    if not train_images:
        raise ValueError("manifest has no training images")

    if resume is not None:
        # the checkpoint's embedded config wins for everything but the step
        # budget (and the fine-tuning learning rate, when given)
        _, embedded = load_checkpoint_config(resume)
        cfg = replace(embedded, steps=cfg.steps)

    lr = cfg.lr if lr is None else lr
    init_seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    gen = Generator(cfg.generator_config(), seed=init_seeds[0])
    disc = Discriminator(cfg.discriminator_config(), seed=init_seeds[1])
    if cfg.ablation == "m2" and not (is_conv_only(gen) and is_conv_only(disc)):
        raise AssertionError("conv-only variant still contains graph layers")
    loss_extractor = SmallExtractor(3, np.random.default_rng(init_seeds[2]),
                                    channels=(8, 16, 32)).freeze()
    opt_g = Adam(gen.parameters(), lr=lr)
    opt_d = Adam(disc.parameters(), lr=lr)
    rng = np.random.default_rng(init_seeds[3])
    start_step = 0

    if resume is not None:
        state, _ = load_checkpoint_config(resume)
        gen.load_state_dict({n: state[f"generator/{n}"] for n, _ in gen.named_parameters()})
        disc.load_state_dict({n: state[f"discriminator/{n}"] for n, _ in disc.named_parameters()})
        for key in (p.name for p in opt_g.params):
            if f"opt_g/m/{key}" in state:
                opt_g.state.m[key] = state[f"opt_g/m/{key}"].copy()
                opt_g.state.v[key] = state[f"opt_g/v/{key}"].copy()
        for key in (p.name for p in opt_d.params):
            if f"opt_d/m/{key}" in state:
                opt_d.state.m[key] = state[f"opt_d/m/{key}"].copy()
                opt_d.state.v[key] = state[f"opt_d/v/{key}"].copy()
        opt_g.state.t = int(state["meta/opt_g_t"])
        opt_d.state.t = int(state["meta/opt_d_t"])
        rng = rng_from_state_bytes(state["meta/rng_state"])
        start_step = int(state["meta/step"])

    ckpt_path = out_dir / "checkpoint.mfgt"
    csv_path = out_dir / "losses.csv"
    csv_lines = [LOSS_CSV_HEADER]
    last = {}

    def flush_csv():
        csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    def checkpoint(step):
        save_checkpoint(ckpt_path, gen, disc, opt_g, opt_d, step, rng, cfg)

    if start_step == 0 and cfg.steps == 0:
        checkpoint(0)
        flush_csv()
        return TrainResult(str(ckpt_path), str(csv_path), 0, last)

    try:
        for step in range(start_step + 1, cfg.steps + 1):
            gt_arr = _assemble_batch(train_images, rng, cfg.batch)
            mask_seed = int(rng.integers(0, 2 ** 63))
            lq_arr, _ = apply_degradation(gt_arr, cfg.degradation(mask_seed))
            gt = Tensor(gt_arr)
            lq = Tensor(lq_arr)

            fake = gen(lq)

            # discriminator update: generator is outside this graph via detach
            d_real = disc(gt)
            d_fake_det = disc(fake.detach())
            loss_d = _sum2(bce_with_logits(d_real, 1), bce_with_logits(d_fake_det, 0))
            _check_finite("loss_D", loss_d)
            disc.zero_grad()
            loss_d.backward()
            opt_d.step()

            # generator update: discriminator frozen so only generator moves
            disc.freeze()
            d_fake = disc(fake)
            loss_pix = pixel_loss(fake, gt)
            loss_per = perceptual_loss(fake, gt, loss_extractor)
            loss_adv_g = bce_with_logits(d_fake, 1)
            total = total_generator_loss((loss_pix, loss_adv_g, loss_per), cfg.weights)
            _check_finite("total", total)
            gen.zero_grad()
            total.backward()
            opt_g.step()
            disc.unfreeze()

            last = {"loss_pix": float(loss_pix.item()), "loss_per": float(loss_per.item()),
                    "loss_adv_G": float(loss_adv_g.item()), "loss_D": float(loss_d.item()),
                    "total": float(total.item())}
            csv_lines.append(f"{step},{last['loss_pix']!r},{last['loss_per']!r},"
                             f"{last['loss_adv_G']!r},{last['loss_D']!r},{last['total']!r}")

            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint(step)
                flush_csv()
    except TrainingDiverged:
        flush_csv()
        raise

    checkpoint(cfg.steps)
    flush_csv()
    return TrainResult(str(ckpt_path), str(csv_path), cfg.steps - start_step, last)


def _sum2(a, b):
    from .backend.ops import add
    return add(a, b)


def _check_finite(name, loss):
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(f"{name} became non-finite; last checkpoint retained")


# ---------------------------------------------------------------------------
# evaluation on a manifest split

def degrade_for_eval(img144, index, spec_seed, scale, fraction):
    """Deterministic eval-side degradation: center crop + per-index mask stream."""
    crop = img144[8:8 + 128, 8:8 + 128]
    gt = to_network(crop)[None]
    spec = DegradationSpec(scale=scale, mask_fraction=fraction,
                           rng_seed=int(np.random.SeedSequence((spec_seed, index)).generate_state(1)[0]))
    lq, _ = apply_degradation(gt, spec)
    return gt[0], lq[0]


def evaluate_restoration(gen, manifest, split, scale, fraction, seed=0, limit=None):
    """Mean PSNR/SSIM of the generator over a split (center crops, fixed masks)."""
    files = manifest.files(split)
    if not files:
        files = manifest.files("train")
    if limit:
        files = files[:limit]
    psnrs, ssims = [], []
    for i, path in enumerate(files):
        gt, lq = degrade_for_eval(load_aligned(path), i, seed, scale, fraction)
        out = gen(Tensor(lq[None]))
        restored = from_network(out.data[0])
        reference = from_network(gt)
        psnrs.append(psnr_db(restored, reference, peak=255.0))
        ssims.append(ssim_index(restored, reference, data_range=255.0))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def bicubic_baseline_psnr(manifest, split, scale, fraction, seed=0, limit=None):
    """PSNR of bicubic-upscaling the degraded input (hole left in place)."""
    files = manifest.files(split) or manifest.files("train")
    if limit:
        files = files[:limit]
    vals = []
    for i, path in enumerate(files):
        gt, lq = degrade_for_eval(load_aligned(path), i, seed, scale, fraction)
        up = bicubic_resize(lq[None], 128, 128)[0] if scale != 1 else lq
        vals.append(psnr_db(from_network(up), from_network(gt), peak=255.0))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# ablation runner

ABLATION_ROWS = (("M1", "m1"), ("M2", "m2"), ("M3", "m3"))


@dataclass
class AblationRow:
    name: str
    uses_pyramid: bool
    uses_graph: bool
    psnr_db: float
    ssim: float
    valid: bool
    note: str = ""


def run_ablation(manifest, base_cfg, out_dir, eval_seed=0, eval_limit=None):
    """Train M1/M2/M3 under one seed and budget; emit a comparison table.

    A variant that fails to train marks its row invalid instead of aborting
    the others. M2 is structurally checked to contain no graph layers.
    """
    out_dir = Path(out_dir)
    rows = []
    for name, ablation in ABLATION_ROWS:
        cfg = replace(base_cfg, ablation=ablation)
        uses_pyramid = ablation != "m1"
        uses_graph = ablation != "m2"
        try:
            result = train(cfg, manifest, out_dir / name.lower())
            gen, _ = load_generator(result.checkpoint_path)
            if ablation == "m2" and not is_conv_only(gen):
                raise AssertionError("conv-only variant still contains graph layers")
            p, s = evaluate_restoration(gen, manifest, "val", cfg.scale, cfg.mask_fraction,
                                        seed=eval_seed, limit=eval_limit)
            rows.append(AblationRow(name, uses_pyramid, uses_graph, p, s, valid=True))
        except Exception as exc:  # keep remaining variants running
            rows.append(AblationRow(name, uses_pyramid, uses_graph,
                                    float("nan"), float("nan"), valid=False, note=str(exc)))
    table = format_ablation_table(rows)
    (out_dir / "ablation.csv").write_text(ablation_csv(rows), encoding="utf-8")
    (out_dir / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    return rows


def ablation_csv(rows):
    lines = ["variant,pyramid,graph_conv,psnr_db,ssim,valid"]
    for r in rows:
        lines.append(f"{r.name},{int(r.uses_pyramid)},{int(r.uses_graph)},"
                     f"{r.psnr_db!r},{r.ssim!r},{int(r.valid)}")
    return "\n".join(lines) + "\n"


def format_ablation_table(rows):
    lines = [f"{'variant':<8s} {'pyramid':>8s} {'graph':>6s} {'PSNR (dB)':>10s} {'SSIM':>8s}"]
    for r in rows:
        mark = lambda b: "yes" if b else "-"
        status = f"{r.psnr_db:>10.3f} {r.ssim:>8.4f}" if r.valid else f"{'invalid':>10s} {'-':>8s}"
        lines.append(f"{r.name:<8s} {mark(r.uses_pyramid):>8s} {mark(r.uses_graph):>6s} {status}")
    return "\n".join(lines)
