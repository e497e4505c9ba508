"""Optimization loop, learning-rate schedule, Adam and evaluation."""
import json
import logging
import math
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import torch

from . import data, imgcore, metrics
from .checkpoint import AdamState, Checkpoint, load_checkpoint, save_checkpoint
from .errors import EmptyDataset, KeyMismatch, NonFiniteLoss
from .losses import LossConfig, total_loss
from .model import ArchConfig, build_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 8
    lr_values: tuple = (1e-4, 1e-5, 1e-6)
    lr_boundaries: tuple = (500, 1000)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    steps_per_epoch: Optional[int] = None
    eval_every: int = 50
    eval_mode: str = "full_image"
    patch_size: int = 256
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if len(self.lr_values) != len(self.lr_boundaries) + 1:
            raise ValueError("need exactly one more lr value than boundaries")
        if list(self.lr_boundaries) != sorted(self.lr_boundaries):
            raise ValueError("lr_boundaries must be ordered")
        if self.patch_size % (2 * 2**self.arch.levels):
            raise ValueError(f"patch_size must be divisible by {2 * 2**self.arch.levels}")

    def to_dict(self):
        d = asdict(self)
        d["lr_values"] = list(self.lr_values)
        d["lr_boundaries"] = list(self.lr_boundaries)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "arch" in d and isinstance(d["arch"], dict):
            d["arch"] = ArchConfig(**d["arch"])
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        for key in ("lr_values", "lr_boundaries"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_updates(self, **kw):
        return replace(self, **kw)


def lr_at(epoch, cfg):
    """Piecewise-constant rate; a boundary epoch already uses the new rate."""
    for boundary, value in zip(cfg.lr_boundaries, cfg.lr_values):
        if epoch < boundary:
            return value
    return cfg.lr_values[-1]


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if list(params) != list(grads):
        raise KeyMismatch("gradient keys do not match parameter keys")
    step = state.step + 1
    m_new, v_new, p_new = OrderedDict(), OrderedDict(), OrderedDict()
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p_new[name] = p - lr * m_hat / (torch.sqrt(v_hat) + eps)
        m_new[name] = m
        v_new[name] = v
    return p_new, AdamState(step=step, m=m_new, v=v_new)


def set_threads_from_env():
    n = os.environ.get("NEID_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def model_from_checkpoint(ckpt, arch=None):
    ckpt.check_arch(arch)
    model = build_model(ckpt.arch)
    if ckpt.params:
        model.load_state_dict(ckpt.params, strict=True)
    model.eval()
    return model


def _forward_image(model, img):
    x = torch.from_numpy(data.to_nchw([img])).to(_model_dtype(model))
    with torch.no_grad():
        out = model(x, mode="infer").le_image
    return out[0].permute(1, 2, 0).double().numpy()


def _model_dtype(model):
    for p in model.parameters():
        return p.dtype
    return torch.float32


def enhance_image(model, low, downsample=True):
    """Full-image inference.

    With ``downsample`` the input is reflect-padded, bicubic-halved, enhanced
    and cropped back, so the output matches the input geometry. Without it
    the image is fed directly and the output is twice its size.
    """
    low = imgcore.check_image(low, "low")
    h, w = low.shape[:2]
    m = 2**model.cfg.levels
    if downsample:
        m *= 2
    ph, pw = -(-h // m) * m, -(-w // m) * m
    padded = data.reflect_pad_to(low, ph, pw)
    if downsample:
        padded = imgcore.bicubic_resize(padded, ph // 2, pw // 2)
        pred = _forward_image(model, padded)
        return pred[:h, :w]
    pred = _forward_image(model, padded)
    return pred[: 2 * h, : 2 * w]


def _center_patch(img, size):
    img = data.reflect_pad_to(img, size, size)
    h, w = img.shape[:2]
    y, x = (h - size) // 2, (w - size) // 2
    return img[y : y + size, x : x + size]


def _iter_pairs(samples):
    for s in samples:
        if isinstance(s, tuple):
            yield s
        else:
            low, high = data.load_pair(s)
            yield s.id, low, high


def evaluate(model, samples, mode="full_image", patch_size=256, quantize=False, arch=None):
    """Score LE predictions against the normal-light images.

    ``model`` may be a :class:`Checkpoint` or a module. ``samples`` holds
    :class:`~neid.data.PairedSample`, :class:`~neid.data.ArrayPair` or
    ``(id, low, high)`` tuples.
    """
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model, arch)
    if mode not in ("full_image", "patch"):
        raise ValueError(f"unknown eval mode {mode!r}")
    was_training = model.training
    model.eval()
    report = metrics.MetricsReport()
    for image_id, low, high in _iter_pairs(samples):
        if mode == "full_image":
            pred = enhance_image(model, low, downsample=True)
            gt = high
        else:
            lo = _center_patch(low, patch_size)
            gt = _center_patch(high, patch_size)
            small = imgcore.bicubic_resize(lo, patch_size // 2, patch_size // 2)
            pred = _forward_image(model, small)
        if quantize:
            pred = imgcore.quantize(pred) / 255.0
        report.add(image_id, metrics.psnr(pred, gt), metrics.ssim(pred, gt))
    model.train(was_training)
    return report


def batch_tensors(batch, dtype, dr_target="low"):
    x = torch.from_numpy(batch.input).to(dtype)
    t_le = torch.from_numpy(batch.target_le).to(dtype)
    t_dr = t_le if dr_target == "normal" else torch.from_numpy(batch.target_dr).to(dtype)
    return x, t_le, t_dr


def compute_gradients(model, x, t_le, t_dr, loss_cfg):
    outputs = model(x, mode="train")
    breakdown = total_loss(outputs, t_le, t_dr, loss_cfg)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(breakdown.total, params, allow_unused=True)
    grads = OrderedDict(
        (n, torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads)
    )
    return breakdown, grads


def _clip(grads, max_norm):
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = OrderedDict((n, g * scale) for n, g in grads.items())
    return grads


def train_step(model, state, batch, lr, cfg):
    """Forward, backward and one Adam update in place. Returns ``(breakdown, state)``."""
    dtype = _model_dtype(model)
    x, t_le, t_dr = batch_tensors(batch, dtype, cfg.loss.dr_target)
    breakdown, grads = compute_gradients(model, x, t_le, t_dr, cfg.loss)
    values = breakdown.as_floats()
    if not all(math.isfinite(v) for v in values.values()):
        return breakdown, None
    if cfg.clip_norm:
        grads = _clip(grads, cfg.clip_norm)
    params = OrderedDict((n, p.detach()) for n, p in model.named_parameters())
    new_params, state = adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(new_params[n])
    return breakdown, state


def steps_per_epoch(cfg, n_samples):
    return cfg.steps_per_epoch or math.ceil(n_samples / cfg.batch_size)


def _snapshot(model, state, cfg, epoch, step, rng, best):
    return Checkpoint(
        params=OrderedDict((n, t.detach().clone()) for n, t in model.state_dict().items()),
        arch=cfg.arch,
        adam=AdamState(state.step, OrderedDict(state.m), OrderedDict(state.v)),
        epoch=epoch,
        global_step=step,
        config=cfg.to_dict(),
        sampler_state=rng.bit_generator.state,
        best_psnr=best,
    )


def _trim_log(path, keep_below_step):
    if not os.path.exists(path):
        return
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and json.loads(ln)["step"] < keep_below_step]
    with open(path, "w") as fh:
        fh.writelines(lines)


def train(cfg, samples, out_dir, eval_samples=None, resume=None, checkpoint_every=1, max_epochs=None):
    """Run the full optimization and return the final checkpoint.

    Writes ``logs/loss.jsonl`` (one line per step), ``logs/eval.jsonl`` and
    ``reports/eval_epochNNNNN.json`` (per eval pass), and
    ``checkpoints/{latest,best}``. ``resume`` is a checkpoint or its path;
    ``max_epochs`` stops early (for interrupt/resume testing) without
    changing the schedule.
    """
    if not samples:
        raise EmptyDataset("training set is empty")
    set_threads_from_env()
    out_dir = os.fspath(out_dir)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    log_dir = os.path.join(out_dir, "logs")
    report_dir = os.path.join(out_dir, "reports")
    for d in (ckpt_dir, log_dir, report_dir):
        os.makedirs(d, exist_ok=True)
    loss_log = os.path.join(log_dir, "loss.jsonl")
    eval_log = os.path.join(log_dir, "eval.jsonl")

    model = build_model(cfg.arch, seed=cfg.seed)
    model.train()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    start_epoch, step, best = 0, 0, None
    if resume is not None:
        ckpt = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
        ckpt.check_arch(cfg.arch)
        model.load_state_dict(ckpt.params, strict=True)
        state = AdamState(ckpt.adam.step, OrderedDict(ckpt.adam.m), OrderedDict(ckpt.adam.v))
        rng.bit_generator.state = ckpt.sampler_state
        start_epoch, step, best = ckpt.epoch, ckpt.global_step, ckpt.best_psnr
        _trim_log(loss_log, step)
        if os.path.exists(eval_log):
            with open(eval_log) as fh:
                kept = [ln for ln in fh if ln.strip() and json.loads(ln)["epoch"] <= start_epoch]
            with open(eval_log, "w") as fh:
                fh.writelines(kept)
    else:
        for p in (loss_log, eval_log):
            if os.path.exists(p):
                os.remove(p)

    n_steps = steps_per_epoch(cfg, len(samples))
    end_epoch = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    with open(loss_log, "a") as fh:
        for epoch in range(start_epoch, end_epoch):
            lr = lr_at(epoch, cfg)
            for _ in range(n_steps):
                batch = data.sample_training_batch(samples, cfg.batch_size, rng, cfg.patch_size)
                breakdown, new_state = train_step(model, state, batch, lr, cfg)
                record = {"step": step, "epoch": epoch, "lr": lr, **breakdown.as_floats()}
                fh.write(json.dumps(record) + "\n")
                fh.flush()
                if new_state is None:
                    log.error("non-finite loss at step %d: %s", step, record)
                    raise NonFiniteLoss(step, record)
                state = new_state
                step += 1
            done = epoch + 1
            if eval_samples and (done % cfg.eval_every == 0 or done == cfg.epochs):
                report = evaluate(model, eval_samples, mode=cfg.eval_mode, patch_size=cfg.patch_size)
                report.save_json(os.path.join(report_dir, f"eval_epoch{done:05d}.json"))
                row = {"epoch": done, "step": step, "mean_psnr": report.to_dict()["mean_psnr"],
                       "mean_ssim": report.mean_ssim}
                with open(eval_log, "a") as efh:
                    efh.write(json.dumps(row) + "\n")
                log.info("epoch %d eval psnr %.3f ssim %.4f", done, report.mean_psnr, report.mean_ssim)
                if best is None or report.mean_psnr > best:
                    best = report.mean_psnr
                    save_checkpoint(_snapshot(model, state, cfg, done, step, rng, best), os.path.join(ckpt_dir, "best"))
            if done % checkpoint_every == 0 or done == end_epoch:
                save_checkpoint(_snapshot(model, state, cfg, done, step, rng, best), os.path.join(ckpt_dir, "latest"))
    return _snapshot(model, state, cfg, end_epoch, step, rng, best)


def read_loss_log(path):
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]
