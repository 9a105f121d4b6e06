"""Training loop and checkpointing.

Adam with a polynomial learning-rate schedule, per-epoch checkpoints that
restore bit-exactly, CSV loss logging, deterministic batch assembly, a
NaN abort with a diagnostic dump, and the ablation harness that sweeps
architecture toggles and loss modes over one dataset.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .losses import (
    TaskWeights,
    alpha_l1_masked,
    naive_combine,
    trimap_ce,
    uncertainty_combine,
    unknown_mask_from_logits,
)
from .matting import UNKNOWN, derive_optimal_trimap, trimap_to_value_plane
from .metrics import evaluate
from .model import ModelConfig, build_model
from .synth import AugmentConfig, augment, crop_on_unknown, read_dataset
from .tensor import NonFiniteError, Tape, Tensor, read_tensor, write_tensor

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    base_lr: float = 1e-4
    poly_p: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    decay_norm_params: bool = False
    sigma_init: float = 4.0
    seed: int = 0
    loss_mode: str = "uncertainty"
    naive_sigma: float = 0.5
    kendall_strict: bool = False
    per_step_alpha_loss: bool = False
    out_size: int = 64
    crop_min: int = 64
    crop_max: int = 64
    flip_prob: float = 0.5
    scale_range: tuple = (0.9, 1.1)
    rotation_range: tuple = (-45.0, 45.0)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.poly_p <= 0:
            raise ValueError("poly_p must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss_mode not in ("uncertainty", "naive"):
            raise ValueError(f"loss_mode must be 'uncertainty' or 'naive', "
                             f"got {self.loss_mode!r}")
        if not 0.0 <= self.naive_sigma <= 1.0:
            raise ValueError("naive_sigma must be in [0,1]")
        self.scale_range = tuple(float(s) for s in self.scale_range)
        self.rotation_range = tuple(float(r) for r in self.rotation_range)

    def as_dict(self):
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        d["rotation_range"] = list(self.rotation_range)
        return d

    def augment_config(self):
        return AugmentConfig(flip_prob=self.flip_prob, scale_range=self.scale_range,
                             rotation_range=self.rotation_range,
                             crop_min=self.crop_min, crop_max=self.crop_max,
                             out_size=self.out_size)


def poly_lr(iteration, max_iter, base=1e-4, p=0.9):
    """base * (1 - iteration/max_iter) ** p."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** p


class Adam:
    """Bias-corrected Adam over named parameters.

    Weight decay is the classic coupled form (added to the gradient) and is
    masked off for parameters whose decay flag is False. A parameter with
    no gradient this step contributes a zero gradient, so moments still
    decay and trajectories stay reproducible.
    """

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, decay_mask=None):
        self.items = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_mask = dict(decay_mask or {})
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.items}
        self.v = {n: np.zeros_like(p.data) for n, p in self.items}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.items:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"{name}: grad shape {g.shape} != {p.data.shape}")
            if self.weight_decay and self.decay_mask.get(name, True):
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        for name, _ in self.items:
            yield "m." + name, self.m[name]
        for name, _ in self.items:
            yield "v." + name, self.v[name]

    def load_state(self, arrays, t):
        for key, target in self.state_arrays():
            if key not in arrays:
                raise ValueError(f"optimizer state missing {key}")
            src = np.asarray(arrays[key])
            if src.shape != target.shape:
                raise ValueError(f"{key}: shape {src.shape} != {target.shape}")
            target[...] = src
        self.t = int(t)


def _decay_mask(names, decay_norm_params):
    mask = {}
    for n in names:
        if n.startswith("task_weights."):
            mask[n] = False
        elif not decay_norm_params and (n.endswith(".gamma") or n.endswith(".beta")):
            mask[n] = False
        else:
            mask[n] = True
    return mask


def sample_to_input(sample, dtype=np.float32):
    """[4,H,W] network input: RGB channels plus the trimap value plane."""
    img = np.moveaxis(sample.image, -1, 0)
    tri = trimap_to_value_plane(sample.trimap_in)[None]
    return np.concatenate([img, tri], axis=0).astype(dtype)


@dataclass
class Batch:
    input4: Tensor
    t_opt: np.ndarray        # [N,H,W] labels derived from ground-truth alpha
    alpha_gt: np.ndarray     # [N,1,H,W]
    unknown_in: np.ndarray   # [N,H,W] unknown region of the input trimaps


def assemble_batch(samples, train_cfg, rng, train=True):
    """Augment and crop each sample, then stack planes for the network."""
    aug_cfg = train_cfg.augment_config()
    xs, labels, gts, unk = [], [], [], []
    for s in samples:
        if train:
            s = augment(s, aug_cfg, rng)
            canvas = min(s.size)
            hi = min(train_cfg.crop_max, canvas)
            lo = min(train_cfg.crop_min, hi)
            crop = int(rng.integers(lo, hi + 1))
            s = crop_on_unknown(s, crop, rng, out_size=train_cfg.out_size)
        xs.append(sample_to_input(s))
        labels.append(derive_optimal_trimap(s.alpha_gt))
        gts.append(s.alpha_gt.astype(np.float32)[None])
        unk.append(s.trimap_in == UNKNOWN)
    return Batch(input4=Tensor(np.stack(xs)), t_opt=np.stack(labels),
                 alpha_gt=np.stack(gts), unknown_in=np.stack(unk))


def compute_losses(out, batch, weights, train_cfg):
    """(L_T, L_a, combined) for one forward pass."""
    lt = trimap_ce(out.trimap_logits, batch.t_opt)
    mask = unknown_mask_from_logits(out.trimap_logits)
    if train_cfg.per_step_alpha_loss and out.alpha_steps:
        terms = [alpha_l1_masked(a, batch.alpha_gt, mask,
                                 fallback_mask=batch.unknown_in)
                 for a in out.alpha_steps]
        la = terms[0]
        for term in terms[1:]:
            la = la + term
        la = la * (1.0 / len(terms))
    else:
        la = alpha_l1_masked(out.alpha_last, batch.alpha_gt, mask,
                             fallback_mask=batch.unknown_in)
    if train_cfg.loss_mode == "naive":
        total = naive_combine(lt, la, train_cfg.naive_sigma)
    else:
        total = uncertainty_combine(lt, la, weights,
                                    kendall_strict=train_cfg.kendall_strict)
    return lt, la, total


# ---------------------------------------------------------------------------
# Checkpoints


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint."""


@dataclass
class Checkpoint:
    iteration: int
    epoch: int
    max_iter: int
    opt_t: int
    train_config: dict
    model_config: dict
    rng_state: dict
    params: dict = field(default_factory=dict)
    opt_state: dict = field(default_factory=dict)


def _write_blob(path, named_arrays):
    with open(path, "wb") as fp:
        for name, arr in named_arrays:
            write_tensor(fp, arr, name=name)


def _read_blob(path):
    out = {}
    with open(path, "rb") as fp:
        while True:
            arr, name = read_tensor(fp)
            if arr is None:
                break
            out[name] = arr
    return out


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(directory, ckpt):
    os.makedirs(directory, exist_ok=True)
    params_path = os.path.join(directory, "params.bin")
    opt_path = os.path.join(directory, "opt.bin")
    _write_blob(params_path, ckpt.params.items())
    _write_blob(opt_path, ckpt.opt_state.items())
    manifest = {
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "epoch": ckpt.epoch,
        "max_iter": ckpt.max_iter,
        "opt_t": ckpt.opt_t,
        "train_config": ckpt.train_config,
        "model_config": ckpt.model_config,
        "rng_state": ckpt.rng_state,
        "sha256": {"params.bin": _sha256(params_path), "opt.bin": _sha256(opt_path)},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return directory


def load_checkpoint(directory):
    man_path = os.path.join(directory, "manifest.json")
    try:
        with open(man_path) as fp:
            manifest = json.load(fp)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint manifest: {e}") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {manifest.get('version')} "
                              f"!= supported {CHECKPOINT_VERSION}")
    for fname, want in manifest["sha256"].items():
        got = _sha256(os.path.join(directory, fname))
        if got != want:
            raise CheckpointError(f"integrity check failed for {fname}: "
                                  f"{got} != recorded {want}")
    params = _read_blob(os.path.join(directory, "params.bin"))
    opt_state = _read_blob(os.path.join(directory, "opt.bin"))
    return Checkpoint(iteration=manifest["iteration"], epoch=manifest["epoch"],
                      max_iter=manifest["max_iter"], opt_t=manifest["opt_t"],
                      train_config=manifest["train_config"],
                      model_config=manifest["model_config"],
                      rng_state=manifest["rng_state"],
                      params=params, opt_state=opt_state)


def _gather_params(net, weights):
    items = list(net.named_parameters())
    items.append(("task_weights.s1", weights.s1))
    items.append(("task_weights.s2", weights.s2))
    return items


def _snapshot(net, weights, opt, rng, train_cfg, model_cfg, iteration, epoch,
              max_iter):
    params = {n: p.data.copy() for n, p in _gather_params(net, weights)}
    for n, b in net.named_buffers():
        params["buffer." + n] = b.data.copy()
    return Checkpoint(
        iteration=iteration, epoch=epoch, max_iter=max_iter, opt_t=opt.t,
        train_config=train_cfg.as_dict(), model_config=model_cfg.as_dict(),
        rng_state=rng.bit_generator.state,
        params=params,
        opt_state={k: v.copy() for k, v in opt.state_arrays()},
    )


def restore_training_state(ckpt):
    """Rebuild (net, weights, opt, rng) exactly as saved."""
    model_cfg = ModelConfig(**ckpt.model_config)
    train_cfg = TrainConfig(**ckpt.train_config)
    net = build_model(model_cfg, seed=train_cfg.seed)
    weights = TaskWeights(train_cfg.sigma_init, dtype=np.float32)
    net_state = {}
    for key, arr in ckpt.params.items():
        if key == "task_weights.s1":
            weights.s1.data[...] = arr
        elif key == "task_weights.s2":
            weights.s2.data[...] = arr
        elif key.startswith("buffer."):
            net_state[key[len("buffer."):]] = arr
        else:
            net_state[key] = arr
    expected = {n for n, _ in net.named_state()}
    if set(net_state) != expected:
        raise CheckpointError("checkpoint parameters do not match the model "
                              "built from its own config")
    net.load_state(net_state)
    opt = Adam(_gather_params(net, weights), beta1=train_cfg.beta1,
               beta2=train_cfg.beta2, eps=train_cfg.adam_eps,
               weight_decay=train_cfg.weight_decay,
               decay_mask=_decay_mask([n for n, _ in _gather_params(net, weights)],
                                      train_cfg.decay_norm_params))
    opt.load_state(ckpt.opt_state, ckpt.opt_t)
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    return net, weights, opt, rng, train_cfg, model_cfg


# ---------------------------------------------------------------------------
# The loop


LOG_FIELDS = ["iter", "epoch", "lr", "loss_t", "loss_a", "sigma1", "sigma2", "total"]


def train(dataset_dir, train_cfg, model_cfg, out_dir, resume_from=None,
          checkpoint_every=1, stop_after_epoch=None, progress=None):
    """Run the full optimization; returns the final checkpoint directory.

    ``resume_from`` continues bit-exactly from a saved checkpoint (its
    configs override the passed ones, which must agree; pass None for
    both to take everything from the checkpoint). ``stop_after_epoch``
    interrupts the run after that epoch's checkpoint, leaving a state a
    later resume continues from. ``progress`` is an optional
    callable(iteration, row_dict) for streaming output.
    """
    samples, _ = read_dataset(dataset_dir)
    n = len(samples)
    if n == 0:
        raise ValueError(f"empty dataset at {dataset_dir}")

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        net, weights, opt, rng, saved_train, _saved_model = restore_training_state(ckpt)
        if train_cfg is not None and train_cfg.as_dict() != saved_train.as_dict():
            raise CheckpointError("resume config differs from checkpoint config")
        train_cfg = saved_train
        model_cfg = ModelConfig(**ckpt.model_config)
        start_epoch = ckpt.epoch + 1
        iteration = ckpt.iteration
        max_iter = ckpt.max_iter
    else:
        net = build_model(model_cfg, seed=train_cfg.seed)
        weights = TaskWeights(train_cfg.sigma_init, dtype=np.float32)
        names = [na for na, _ in _gather_params(net, weights)]
        opt = Adam(_gather_params(net, weights), beta1=train_cfg.beta1,
                   beta2=train_cfg.beta2, eps=train_cfg.adam_eps,
                   weight_decay=train_cfg.weight_decay,
                   decay_mask=_decay_mask(names, train_cfg.decay_norm_params))
        rng = np.random.default_rng([train_cfg.seed, 1])
        start_epoch = 0
        iteration = 0
        iters_per_epoch = math.ceil(n / train_cfg.batch_size)
        max_iter = train_cfg.epochs * iters_per_epoch

    iters_per_epoch = math.ceil(n / train_cfg.batch_size)
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.csv")
    log_mode = "a" if resume_from is not None and os.path.exists(log_path) else "w"

    net.train()
    final_dir = resume_from
    with open(log_path, log_mode, newline="") as log_fp:
        writer = csv.DictWriter(log_fp, fieldnames=LOG_FIELDS)
        if log_mode == "w":
            writer.writeheader()
        for epoch in range(start_epoch, train_cfg.epochs):
            order = rng.permutation(n)
            for b in range(iters_per_epoch):
                idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
                batch = assemble_batch([samples[i] for i in idx], train_cfg, rng)
                lr = poly_lr(iteration, max_iter, train_cfg.base_lr, train_cfg.poly_p)
                with Tape() as tape:
                    out = net(batch.input4)
                    lt, la, total = compute_losses(out, batch, weights, train_cfg)
                    total_val = total.item()
                    if not np.isfinite(total_val):
                        dump = _snapshot(net, weights, opt, rng, train_cfg,
                                         model_cfg, iteration, epoch, max_iter)
                        dump_dir = os.path.join(out_dir, "nan_dump")
                        save_checkpoint(dump_dir, dump)
                        raise NonFiniteError(
                            f"non-finite loss {total_val} at iteration "
                            f"{iteration}; state dumped to {dump_dir}")
                    tape.backward(total)
                opt.step(lr)
                net.zero_grad()
                weights.s1.zero_grad()
                weights.s2.zero_grad()
                row = {"iter": iteration, "epoch": epoch, "lr": f"{lr:.12e}",
                       "loss_t": f"{lt.item():.8e}", "loss_a": f"{la.item():.8e}",
                       "sigma1": f"{weights.sigma1:.8e}",
                       "sigma2": f"{weights.sigma2:.8e}",
                       "total": f"{total_val:.8e}"}
                writer.writerow(row)
                if progress is not None:
                    progress(iteration, row)
                iteration += 1
            stopping = stop_after_epoch is not None and epoch >= stop_after_epoch
            if ((epoch + 1) % checkpoint_every == 0 or epoch == train_cfg.epochs - 1
                    or stopping):
                snap = _snapshot(net, weights, opt, rng, train_cfg, model_cfg,
                                 iteration, epoch, max_iter)
                final_dir = os.path.join(out_dir, "ckpt", f"epoch_{epoch:03d}")
                save_checkpoint(final_dir, snap)
            if stopping:
                break
    return final_dir


def load_model_for_eval(ckpt_dir):
    """Rebuild just the network from a checkpoint, in eval mode."""
    ckpt = load_checkpoint(ckpt_dir)
    net, _, _, _, _, model_cfg = restore_training_state(ckpt)
    return net.eval(), model_cfg


def evaluate_model(net, samples, batch_size=8):
    """Mean metrics over samples: fused alpha vs GT on the input trimap's
    unknown region, plus trimap Acc/mIoU against the optimal trimap."""
    net.eval()
    reports = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = Tensor(np.stack([sample_to_input(s) for s in chunk]))
        out = net(x)
        for j, s in enumerate(chunk):
            t_opt = derive_optimal_trimap(s.alpha_gt)
            rep = evaluate(out.alpha_final[j], s.alpha_gt,
                           eval_trimap=s.trimap_in, region="unknown",
                           trimap_pred=out.trimap_labels[j], trimap_gt=t_opt)
            reports.append(rep)
    def mean(key):
        return float(np.mean([getattr(r, key) for r in reports]))
    return {
        "n": len(reports),
        "sad": mean("sad"), "sad_k": mean("sad_k"), "mse": mean("mse"),
        "grad": mean("grad"), "grad_scaled": mean("grad_scaled"),
        "trimap_acc": mean("trimap_acc"), "trimap_miou": mean("trimap_miou"),
    }


# ---------------------------------------------------------------------------
# Ablation harness


def ablation_grid(model_cfg, train_cfg):
    """The standard sweep: every {SP, GC, PU} toggle combination, the
    cascaded-encoders variant, and the fixed-blend loss at five weights."""
    variants = []
    for sp in (False, True):
        for gc in (False, True):
            for pu in (False, True):
                mc = ModelConfig(**{**model_cfg.as_dict(), "use_sp": sp,
                                    "use_gc": gc, "use_pu": pu})
                variants.append((f"sp{int(sp)}_gc{int(gc)}_pu{int(pu)}", mc, train_cfg))
    seq = ModelConfig(**{**model_cfg.as_dict(), "shared_encoder": False})
    variants.append(("seq", seq, train_cfg))
    for s in (0.0, 0.25, 0.5, 0.75, 1.0):
        tc = TrainConfig(**{**train_cfg.as_dict(), "loss_mode": "naive",
                            "naive_sigma": s})
        variants.append((f"naive_{s:g}", model_cfg, tc))
    return variants


ABLATION_COLUMNS = ["variant", "grad", "sad", "mse", "trimap_acc", "trimap_miou"]


def format_ablation_table(rows):
    """Aligned text table over the standard columns."""
    headers = {"variant": "Variant", "grad": "Grad", "sad": "SAD", "mse": "MSE",
               "trimap_acc": "Acc", "trimap_miou": "mIoU"}
    table = [[headers[c] for c in ABLATION_COLUMNS]]
    for row in rows:
        table.append([row["variant"]] + [f"{row[c]:.4f}" for c in ABLATION_COLUMNS[1:]])
    widths = [max(len(r[i]) for r in table) for i in range(len(ABLATION_COLUMNS))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def run_ablations(train_dir, eval_dir, model_cfg, train_cfg, out_dir):
    """Train and evaluate every grid variant; writes JSON and a text table."""
    eval_samples, _ = read_dataset(eval_dir)
    rows = []
    for name, mc, tc in ablation_grid(model_cfg, train_cfg):
        run_dir = os.path.join(out_dir, name)
        ckpt_dir = train(train_dir, tc, mc, run_dir)
        net, _ = load_model_for_eval(ckpt_dir)
        stats = evaluate_model(net, eval_samples)
        row = {"variant": name, **{k: stats[k] for k in ABLATION_COLUMNS[1:]}}
        rows.append(row)
    with open(os.path.join(out_dir, "ablation.json"), "w") as fp:
        json.dump(rows, fp, indent=2, sort_keys=True)
        fp.write("\n")
    text = format_ablation_table(rows)
    with open(os.path.join(out_dir, "ablation.txt"), "w") as fp:
        fp.write(text)
    return rows
