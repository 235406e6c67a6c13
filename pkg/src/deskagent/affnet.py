"""Visuo-lingual affordance model.

Hourglass encoder-decoder with skip connections producing a pixel-logit map;
language conditioning is applied to the three decoder stages after the
bottleneck via feature-wise affine modulation. A small MLP head on the
bottleneck features (language concatenated to its first two layers) predicts
a Gaussian over the contact depth.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .langenc import D_LANG, LangEmbedding
from .playdata import DatasetStats
from .simworld import CameraModel, NonPositiveDepth, deproject_pixel


class ShapeMismatch(Exception):
    pass


class Diverged(Exception):
    pass


@dataclass
class AffNetConfig:
    image_h: int = 64
    image_w: int = 64
    d_lang: int = D_LANG
    enc_channels: Tuple[int, int, int] = (16, 32, 64)
    depth_hidden: Tuple[int, int] = (64, 64)
    beta: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 80
    shift_px: int = 5
    color_jitter: float = 0.10
    cutout_patches: int = 3
    cutout_max: int = 12
    logvar_clamp: Tuple[float, float] = (-6.0, 4.0)
    val_fraction: float = 0.1

    def __post_init__(self):
        assert 0.0 <= self.beta <= 1.0

    @classmethod
    def tiny(cls) -> "AffNetConfig":
        """Miniature variant for finite-difference gradient checks."""
        return cls(image_h=16, image_w=16, enc_channels=(2, 3, 4),
                   depth_hidden=(6, 6))


@dataclass
class AffordanceOutput:
    logits: np.ndarray  # (H, W)
    dist: np.ndarray  # (H, W), sums to 1
    depth_mu: float  # normalized units
    depth_logvar: float


class _Film(nn.Module):
    """Per-channel affine modulation computed from the language embedding."""

    def __init__(self, d_lang: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(d_lang, 2 * channels)

    def forward(self, x, lang):
        gamma, beta = self.proj(lang).chunk(2, dim=1)
        return x * (1.0 + gamma[:, :, None, None]) + beta[:, :, None, None]


class AffNet(nn.Module):
    def __init__(self, cfg: AffNetConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.enc_channels
        self.enc1 = nn.Conv2d(3, c1, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.dec3 = nn.Conv2d(c3 + c2, c2, 3, padding=1)
        self.dec2 = nn.Conv2d(c2 + c1, c1, 3, padding=1)
        self.dec1 = nn.Conv2d(c1 + 3, c1, 3, padding=1)
        self.film3 = _Film(cfg.d_lang, c2)
        self.film2 = _Film(cfg.d_lang, c1)
        self.film1 = _Film(cfg.d_lang, c1)
        self.head = nn.Conv2d(c1, 1, 1)
        h1, h2 = cfg.depth_hidden
        self.depth1 = nn.Linear(c3 + cfg.d_lang, h1)
        self.depth2 = nn.Linear(h1 + cfg.d_lang, h2)
        self.depth3 = nn.Linear(h2, 2)

    def forward(self, image: torch.Tensor, lang: torch.Tensor):
        """image: (B, 3, H, W) in [0, 1]; lang: (B, d_lang) unit-norm.

        Returns (logits (B, H, W), depth_mu (B,), depth_logvar (B,)).
        """
        cfg = self.cfg
        if image.shape[-2:] != (cfg.image_h, cfg.image_w) or image.shape[1] != 3:
            raise ShapeMismatch(f"expected (B,3,{cfg.image_h},{cfg.image_w}), got {tuple(image.shape)}")
        if lang.shape[-1] != cfg.d_lang:
            raise ShapeMismatch(f"expected lang dim {cfg.d_lang}, got {lang.shape[-1]}")
        e1 = F.relu(self.enc1(image))
        e2 = F.relu(self.enc2(e1))
        e3 = F.relu(self.enc3(e2))

        x = F.interpolate(e3, scale_factor=2, mode="nearest")
        x = F.relu(self.film3(self.dec3(torch.cat([x, e2], dim=1)), lang))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.film2(self.dec2(torch.cat([x, e1], dim=1)), lang))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.film1(self.dec1(torch.cat([x, image], dim=1)), lang))
        logits = self.head(x)[:, 0]

        pooled = e3.mean(dim=(2, 3))
        d = F.relu(self.depth1(torch.cat([pooled, lang], dim=1)))
        d = F.relu(self.depth2(torch.cat([d, lang], dim=1)))
        mu, logvar = self.depth3(d).unbind(dim=1)
        logvar = torch.clamp(logvar, *self.cfg.logvar_clamp)
        return logits, mu, logvar

    @torch.no_grad()
    def predict(self, image: np.ndarray, lang: LangEmbedding) -> AffordanceOutput:
        """Single-image inference from numpy inputs."""
        dtype = next(self.parameters()).dtype
        img = torch.as_tensor(image, dtype=dtype).permute(2, 0, 1)[None]
        emb = torch.as_tensor(lang.vector, dtype=dtype)[None]
        logits, mu, logvar = self.forward(img, emb)
        flat = torch.softmax(logits[0].reshape(-1), dim=0)
        dist = flat.reshape(logits.shape[1:]).numpy()
        return AffordanceOutput(
            logits=logits[0].numpy(), dist=dist,
            depth_mu=float(mu[0]), depth_logvar=float(logvar[0]))


def aff_loss(V: torch.Tensor, T: torch.Tensor) -> torch.Tensor:
    """Cross entropy -sum(t * log v); batched inputs are averaged."""
    v = torch.clamp(V, min=1e-12)
    if V.dim() == 2:
        return -(T * torch.log(v)).sum()
    return -(T * torch.log(v)).sum(dim=tuple(range(1, V.dim()))).mean()


def depth_loss(y: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Gaussian negative log likelihood, 0.5 * (log s^2 + (y - mu)^2 / s^2)."""
    per = 0.5 * (logvar + (y - mu) ** 2 / torch.exp(logvar))
    return per.mean() if per.dim() > 0 else per


def total_loss(l_aff, l_depth, beta: float):
    assert 0.0 <= beta <= 1.0
    return beta * l_aff + (1.0 - beta) * l_depth


def predict_pixel(V: np.ndarray) -> Tuple[int, int]:
    """(u, v) of the distribution argmax.

    Ties break to the first occurrence scanning the map in row-major order
    (top row first, left to right).
    """
    idx = int(np.argmax(V))
    v, u = divmod(idx, V.shape[1])
    return u, v


def batch_loss(model: AffNet, images: torch.Tensor, lang: torch.Tensor,
               target_idx: torch.Tensor, target_depth: torch.Tensor) -> Tuple:
    """Combined loss on a batch; returns (total, aff, depth) tensors."""
    logits, mu, logvar = model(images, lang)
    flat = logits.reshape(logits.shape[0], -1)
    V = torch.softmax(flat, dim=1)
    T = F.one_hot(target_idx, num_classes=flat.shape[1]).to(V.dtype)
    l_aff = aff_loss(V, T)
    l_depth = depth_loss(target_depth, mu, logvar)
    return total_loss(l_aff, l_depth, model.cfg.beta), l_aff, l_depth


@dataclass
class AffTrainResult:
    model: AffNet
    stats: DatasetStats
    history: List[dict] = field(default_factory=list)


def _augment(img: np.ndarray, u: int, v: int, rng: np.random.Generator,
             cfg: AffNetConfig) -> Tuple[np.ndarray, int, int]:
    """Random shift (target moved identically), color jitter, and random
    occluder patches away from the target so the model cannot key on
    incidental scene content (block layout, drawer state)."""
    h, w = cfg.image_h, cfg.image_w
    s = cfg.shift_px
    dx = int(rng.integers(max(-s, -u), min(s, w - 1 - u) + 1))
    dy = int(rng.integers(max(-s, -v), min(s, h - 1 - v) + 1))
    out = np.zeros_like(img)
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    out[dst_y, dst_x] = img[src_y, src_x]
    jitter = cfg.color_jitter
    if jitter > 0:
        scale = 1.0 + rng.uniform(-jitter, jitter)
        offset = rng.uniform(-jitter, jitter, size=3).astype(np.float32)
        out = np.clip(out * scale + offset, 0.0, 1.0)
    nu, nv = u + dx, v + dy
    for _ in range(int(rng.integers(0, cfg.cutout_patches + 1))):
        ph = int(rng.integers(4, cfg.cutout_max + 1))
        pw = int(rng.integers(4, cfg.cutout_max + 1))
        py = int(rng.integers(0, h - ph + 1))
        px = int(rng.integers(0, w - pw + 1))
        if py <= nv < py + ph and px <= nu < px + pw:
            continue  # never occlude the labeled contact point
        out[py:py + ph, px:px + pw] = rng.random(3).astype(np.float32)
    return out.astype(np.float32), nu, nv


class AffSampleArrays:
    """Materialized affordance samples: images, embeddings, targets."""

    def __init__(self, dataset, samples, encoder, stats: DatasetStats, cfg: AffNetConfig):
        self.cfg = cfg
        self.images = np.stack([
            dataset.episode(s.episode_id).static[s.t] for s in samples
        ])  # uint8
        texts = sorted({s.instruction for s in samples})
        table = {t: encoder.encode(t).vector for t in texts}
        self.lang = np.stack([table[s.instruction] for s in samples]).astype(np.float32)
        self.u = np.array([s.u for s in samples], dtype=np.int64)
        self.v = np.array([s.v for s in samples], dtype=np.int64)
        self.depth_norm = (
            (np.array([s.depth for s in samples]) - stats.depth_mean) / stats.depth_std
        ).astype(np.float32)

    def __len__(self):
        return len(self.u)

    def batch(self, idx: np.ndarray, rng: Optional[np.random.Generator]):
        cfg = self.cfg
        imgs = np.empty((len(idx), cfg.image_h, cfg.image_w, 3), dtype=np.float32)
        us = self.u[idx].copy()
        vs = self.v[idx].copy()
        for j, i in enumerate(idx):
            img = self.images[i].astype(np.float32) / 255.0
            if rng is not None:
                img, us[j], vs[j] = _augment(img, us[j], vs[j], rng, cfg)
            imgs[j] = img
        images = torch.from_numpy(imgs).permute(0, 3, 1, 2)
        lang = torch.from_numpy(self.lang[idx])
        target_idx = torch.from_numpy(vs * cfg.image_w + us)
        depth = torch.from_numpy(self.depth_norm[idx])
        return images, lang, target_idx, depth


def train_affordance(dataset, samples, stats: DatasetStats, encoder,
                     cfg: AffNetConfig, seed: int) -> AffTrainResult:
    """Mini-batch training of the affordance model with seeded determinism."""
    if len(samples) < 8:
        raise ValueError(f"need at least 8 samples, got {len(samples)}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    arrays = AffSampleArrays(dataset, samples, encoder, stats, cfg)
    n = len(arrays)
    perm = rng.permutation(n)
    n_val = max(1, int(cfg.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    # small subsets (data-fraction ablations) train on a shrunken batch
    batch_size = min(cfg.batch_size, len(train_idx))

    model = AffNet(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(train_idx)
        ep_aff, ep_depth, n_batches = 0.0, 0.0, 0
        for b0 in range(0, len(order) - batch_size + 1, batch_size):
            batch = arrays.batch(order[b0:b0 + batch_size], rng)
            loss, l_aff, l_depth = batch_loss(model, *batch)
            if not torch.isfinite(loss):
                raise Diverged(f"loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            ep_aff += float(l_aff.detach())
            ep_depth += float(l_depth.detach())
            n_batches += 1
        val = evaluate_affordance(model, arrays, val_idx, stats)
        history.append({
            "epoch": epoch,
            "train_aff": ep_aff / max(1, n_batches),
            "train_depth": ep_depth / max(1, n_batches),
            **val,
        })
    return AffTrainResult(model, stats, history)


@torch.no_grad()
def evaluate_affordance(model: AffNet, arrays: AffSampleArrays,
                        idx: np.ndarray, stats: DatasetStats) -> dict:
    """Validation losses plus pixel-distance and de-normalized depth errors."""
    model.eval()
    images, lang, target_idx, depth = arrays.batch(idx, rng=None)
    logits, mu, logvar = model(images, lang)
    flat = logits.reshape(logits.shape[0], -1)
    V = torch.softmax(flat, dim=1)
    T = F.one_hot(target_idx, num_classes=flat.shape[1]).to(V.dtype)
    l_aff = float(aff_loss(V, T))
    l_depth = float(depth_loss(depth, mu, logvar))
    pred = flat.argmax(dim=1)
    w = model.cfg.image_w
    du = (pred % w) - (target_idx % w)
    dv = torch.div(pred, w, rounding_mode="floor") - torch.div(target_idx, w, rounding_mode="floor")
    px_err = float(torch.sqrt((du.double() ** 2 + dv.double() ** 2)).mean())
    depth_err = float((mu - depth).abs().mean() * stats.depth_std)
    return {"val_aff": l_aff, "val_depth": l_depth,
            "val_px_err": px_err, "val_depth_err": depth_err}


def predict_point3d(model: AffNet, image: np.ndarray, lang: LangEmbedding,
                    cam: CameraModel, stats: DatasetStats, mode: str = "SAMPLE",
                    seed: Optional[int] = None) -> np.ndarray:
    """Affordance pixel plus (sampled or mean) depth, deprojected to the world."""
    out = model.predict(image, lang)
    u, v = predict_pixel(out.dist)
    sigma = float(np.exp(0.5 * out.depth_logvar))
    if mode == "SAMPLE":
        xi = float(np.random.default_rng(seed).standard_normal())
        depth_norm = out.depth_mu + sigma * xi
    elif mode == "MEAN":
        depth_norm = out.depth_mu
    else:
        raise ValueError(f"unknown depth mode {mode!r}")
    depth = depth_norm * stats.depth_std + stats.depth_mean
    if depth <= 0.0 and mode == "SAMPLE":
        depth = out.depth_mu * stats.depth_std + stats.depth_mean
    if depth <= 0.0:
        raise NonPositiveDepth(f"un-normalized depth {depth} <= 0")
    return deproject_pixel((u, v), depth, cam)


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, result: AffTrainResult) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(result.model.cfg),
        "state_dict": result.model.state_dict(),
        "stats": result.stats.to_dict(),
        "history": result.history,
    }, path)


def load_checkpoint(path: str) -> AffTrainResult:
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported affordance checkpoint version {blob.get('version')}")
    raw = dict(blob["config"])
    for key in ("enc_channels", "depth_hidden", "logvar_clamp"):
        raw[key] = tuple(raw[key])
    cfg = AffNetConfig(**raw)
    model = AffNet(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return AffTrainResult(model, DatasetStats.from_dict(blob["stats"]), blob["history"])
