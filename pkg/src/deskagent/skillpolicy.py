"""Low-level language/goal-conditioned visuomotor policy.

One policy network consumes (gripper image, pooled static image, proprioception)
plus a latent goal; two context encoders (goal image, language) map into the
same latent space, and the policy never sees which context produced the latent.
Trained by maximum-likelihood imitation over hindsight image-goal windows mixed
with the small language-annotated window set.

Free-form play is highly multimodal: from the same state (say, hovering above
a button) the demonstrator sometimes descends to press and sometimes cruises
onward, so a plain conditional Gaussian collapses to the dominant "keep
cruising" mode and never commits to a skill. To resolve this the policy is
additionally conditioned on a latent plan: a posterior network summarizes the
whole window (it sees the future) into a plan vector, the policy reconstructs
actions given that plan, and a prior network learns to predict the plan from
the current state and goal alone. At rollout time the prior supplies the plan.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .langenc import D_LANG, LangEmbedding
from .playdata import (
    GOAL_IMAGE,
    MAX_WINDOW,
    EpisodeWindow,
    LanguageAnnotation,
    sample_goal_windows,
)
from .simworld import Action, Gripper, GripperCmd, RenderedObs, WorldState

LOG_2PI = math.log(2.0 * math.pi)


class ShapeMismatch(Exception):
    pass


class Diverged(Exception):
    pass


@dataclass
class PolicyConfig:
    d_z: int = 16
    d_plan: int = 8
    kl_weight: float = 0.01
    d_lang: int = D_LANG
    static_hw: int = 64
    gripper_hw: int = 32
    static_pool: int = 4  # static image is average-pooled by this factor first
    action_dim: int = 4
    max_step: float = 0.02
    logvar_clamp: Tuple[float, float] = (-6.0, 2.0)
    learning_rate: float = 2e-4
    batch_size: int = 64
    epochs: int = 10
    batches_per_epoch: int = 40
    lang_ratio: float = 0.5  # fraction of each batch drawn from language windows
    n_image_windows: int = 4000
    max_window: int = MAX_WINDOW
    channels: Tuple[int, int] = (8, 16)

    @classmethod
    def tiny(cls) -> "PolicyConfig":
        return cls(static_hw=16, gripper_hw=8, static_pool=2, channels=(2, 3),
                   d_z=4)


class _ConvEncoder(nn.Module):
    """Two stride-2 convs plus a linear projection."""

    def __init__(self, in_hw: int, channels: Tuple[int, int], out_dim: int):
        super().__init__()
        c1, c2 = channels
        self.conv1 = nn.Conv2d(3, c1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.fc = nn.Linear(c2 * (in_hw // 4) ** 2, out_dim)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return self.fc(x.flatten(1))


class SkillPolicy(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        pooled = cfg.static_hw // cfg.static_pool
        self.gripper_enc = _ConvEncoder(cfg.gripper_hw, cfg.channels, 64)
        self.static_enc = _ConvEncoder(pooled, cfg.channels, 64)
        self.proprio_enc = nn.Linear(4, 16)
        self.goal_image_enc = _ConvEncoder(pooled, cfg.channels, cfg.d_z)
        self.goal_lang_enc = nn.Sequential(
            nn.Linear(cfg.d_lang, 64), nn.ReLU(), nn.Linear(64, cfg.d_z))
        d_feat = 64 + 64 + 16
        # plan posterior sees the window-pooled features (i.e. the future);
        # the plan prior sees only the current step and has to guess.
        self.plan_posterior = nn.Sequential(
            nn.Linear(d_feat + cfg.d_z, 64), nn.ReLU(),
            nn.Linear(64, 2 * cfg.d_plan))
        self.plan_prior = nn.Sequential(
            nn.Linear(d_feat + cfg.d_z, 64), nn.ReLU(),
            nn.Linear(64, 2 * cfg.d_plan))
        self.trunk = nn.Sequential(
            nn.Linear(d_feat + cfg.d_z + cfg.d_plan, 128), nn.ReLU(),
            nn.Linear(128, 128), nn.ReLU(),
            nn.Linear(128, 2 * cfg.action_dim))

    def _pool_static(self, static):
        return F.avg_pool2d(static, self.cfg.static_pool)

    def encode_goal_image(self, static: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) goal image -> (B, d_z) latent goal."""
        return self.goal_image_enc(self._pool_static(static))

    def encode_goal_lang(self, lang: torch.Tensor) -> torch.Tensor:
        """(B, d_lang) sentence embedding -> (B, d_z) latent goal."""
        return self.goal_lang_enc(lang)

    def step_features(self, gripper: torch.Tensor, static: torch.Tensor,
                      proprio: torch.Tensor) -> torch.Tensor:
        """Per-step perception features, (B, 144)."""
        cfg = self.cfg
        if gripper.shape[-2:] != (cfg.gripper_hw, cfg.gripper_hw):
            raise ShapeMismatch(f"gripper image shape {tuple(gripper.shape)}")
        if static.shape[-2:] != (cfg.static_hw, cfg.static_hw):
            raise ShapeMismatch(f"static image shape {tuple(static.shape)}")
        return torch.cat([
            self.gripper_enc(gripper),
            self.static_enc(self._pool_static(static)),
            F.relu(self.proprio_enc(proprio)),
        ], dim=1)

    def _plan_params(self, head: nn.Module, feat: torch.Tensor, z: torch.Tensor):
        mu, logvar = head(torch.cat([feat, z], dim=1)).chunk(2, dim=1)
        return mu, torch.clamp(logvar, *self.cfg.logvar_clamp)

    def prior_plan(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Plan prediction from the current step alone (prior mean)."""
        return self._plan_params(self.plan_prior, feat, z)[0]

    def policy_forward(self, gripper: torch.Tensor, static: torch.Tensor,
                       proprio: torch.Tensor, z: torch.Tensor,
                       plan: Optional[torch.Tensor] = None):
        """Returns (action mean, action logvar), each (B, action_dim).

        With no explicit plan, the prior's prediction from the current step
        is used (the rollout-time configuration)."""
        cfg = self.cfg
        if z.shape[-1] != cfg.d_z:
            raise ShapeMismatch(f"latent goal dim {z.shape[-1]} != {cfg.d_z}")
        feat = self.step_features(gripper, static, proprio)
        if plan is None:
            plan = self.prior_plan(feat, z)
        if plan.shape[-1] != cfg.d_plan:
            raise ShapeMismatch(f"plan dim {plan.shape[-1]} != {cfg.d_plan}")
        out = self.trunk(torch.cat([feat, z, plan], dim=1))
        mean, logvar = out.chunk(2, dim=1)
        return mean, torch.clamp(logvar, *self.cfg.logvar_clamp)

    def policy_parameters(self):
        """Parameters of the shared policy network (excludes goal encoders)."""
        mods = [self.gripper_enc, self.static_enc, self.proprio_enc,
                self.plan_posterior, self.plan_prior, self.trunk]
        for m in mods:
            yield from m.parameters()

    @torch.no_grad()
    def act(self, obs: RenderedObs, state: WorldState, z: torch.Tensor,
            plan: Optional[torch.Tensor] = None) -> Action:
        """Deterministic rollout action (distribution mean, de-normalized).

        Without an explicit plan the prior replans from the live observation
        every step."""
        gripper = torch.from_numpy(obs.gripper_rgb).permute(2, 0, 1)[None]
        static = torch.from_numpy(obs.static_rgb).permute(2, 0, 1)[None]
        proprio = torch.tensor([[
            state.ee_pos[0], state.ee_pos[1], state.ee_pos[2],
            1.0 if state.gripper is Gripper.CLOSED else -1.0,
        ]], dtype=torch.float32)
        mean, _ = self.policy_forward(gripper, static, proprio, z, plan)
        a = mean[0].numpy()
        delta = np.clip(a[:3], -1.0, 1.0) * self.cfg.max_step
        cmd = GripperCmd.CLOSE if a[3] > 0 else GripperCmd.OPEN
        return Action(delta.astype(np.float64), cmd)

    @torch.no_grad()
    def lang_goal(self, emb: LangEmbedding) -> torch.Tensor:
        return self.encode_goal_lang(
            torch.as_tensor(emb.vector, dtype=torch.float32)[None])


def gaussian_nll(actions, mean, logvar):
    """Per-step NLL of a diagonal Gaussian, summed over action dims."""
    return 0.5 * (logvar + (actions - mean) ** 2 / torch.exp(logvar) + LOG_2PI).sum(dim=-1)


@dataclass
class WindowBatch:
    """Padded window tensors plus one goal context per window."""

    gripper: torch.Tensor  # (B, T, 3, h, w)
    static: torch.Tensor  # (B, T, 3, H, W)
    proprio: torch.Tensor  # (B, T, 4)
    actions: torch.Tensor  # (B, T, action_dim), normalized
    mask: torch.Tensor  # (B, T), 1 for real steps
    goal_image: Optional[torch.Tensor]  # (Bi, 3, H, W) for the image-goal prefix
    goal_lang: Optional[torch.Tensor]  # (Bl, d_lang) for the language-goal suffix

    def n_windows(self):
        return self.mask.shape[0]


def step_weights(batch: WindowBatch) -> torch.Tensor:
    """Per-step imitation weights, (B, T).

    Gripper transitions and descents are a handful of steps per demonstration
    but carry all the task progress, so a uniform loss lets the policy fit the
    long cruising stretches and hover over the target forever. Transition
    steps (commanded gripper differs from the current one) and downward motion
    are up-weighted to counter that imbalance.
    """
    grip_flip = (batch.actions[..., 3] * batch.proprio[..., 3]) < 0
    descent = torch.relu(-batch.actions[..., 2])
    return 1.0 + 8.0 * grip_flip.to(descent.dtype) + 2.0 * descent


def kl_diag_gaussians(mu_q, logvar_q, mu_p, logvar_p) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dims -> (B,)."""
    return 0.5 * (
        logvar_p - logvar_q
        + (torch.exp(logvar_q) + (mu_q - mu_p) ** 2) / torch.exp(logvar_p)
        - 1.0
    ).sum(dim=-1)


def mcil_loss(model: SkillPolicy, batch: WindowBatch) -> torch.Tensor:
    """Multi-context imitation loss: mean over windows of the summed,
    event-weighted step NLL plus a plan-consistency KL term.

    The latent goal comes from the window's own context encoder; image-goal
    windows come first in the batch, language-goal windows after. Actions are
    reconstructed under the posterior's plan (which pools over the full
    window, future included); the KL pulls the per-step prior toward it so
    the rollout-time plan carries the same mode information. The posterior
    mean is used directly rather than a sampled plan, keeping the loss a
    deterministic function of the parameters.
    """
    zs = []
    if batch.goal_image is not None and batch.goal_image.shape[0] > 0:
        zs.append(model.encode_goal_image(batch.goal_image))
    if batch.goal_lang is not None and batch.goal_lang.shape[0] > 0:
        zs.append(model.encode_goal_lang(batch.goal_lang))
    z = torch.cat(zs, dim=0)
    b, t = batch.mask.shape
    if z.shape[0] != b:
        raise ShapeMismatch(f"{z.shape[0]} goals for {b} windows")
    feat = model.step_features(
        batch.gripper.reshape(b * t, *batch.gripper.shape[2:]),
        batch.static.reshape(b * t, *batch.static.shape[2:]),
        batch.proprio.reshape(b * t, 4),
    ).reshape(b, t, -1)
    pooled = (feat * batch.mask[:, :, None]).sum(dim=1) \
        / batch.mask.sum(dim=1).clamp(min=1.0)[:, None]
    mu_q, logvar_q = model._plan_params(model.plan_posterior, pooled, z)
    # the prior is matched against the posterior at every real step, so it
    # keeps predicting the window's mode as the rollout progresses
    z_steps = z[:, None, :].expand(b, t, z.shape[1]).reshape(b * t, -1)
    mu_p, logvar_p = model._plan_params(model.plan_prior, feat.reshape(b * t, -1),
                                        z_steps)
    kl = kl_diag_gaussians(
        mu_q[:, None, :].expand(b, t, mu_q.shape[1]).reshape(b * t, -1),
        logvar_q[:, None, :].expand(b, t, mu_q.shape[1]).reshape(b * t, -1),
        mu_p, logvar_p,
    ).reshape(b, t)
    plan_steps = mu_q[:, None, :].expand(b, t, mu_q.shape[1]).reshape(b * t, -1)
    out = model.trunk(torch.cat([feat.reshape(b * t, -1), z_steps, plan_steps],
                                dim=1))
    mean, logvar = out.chunk(2, dim=1)
    logvar = torch.clamp(logvar, *model.cfg.logvar_clamp)
    nll = gaussian_nll(batch.actions.reshape(b * t, -1), mean, logvar).reshape(b, t)
    per_window = ((nll * step_weights(batch) + model.cfg.kl_weight * kl)
                  * batch.mask).sum(dim=1)
    return per_window.mean()


class WindowMaterializer:
    """Builds padded WindowBatch tensors from stored episodes."""

    def __init__(self, dataset, encoder, cfg: PolicyConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.encoder = encoder
        self._emb_cache: Dict[str, np.ndarray] = {}

    def _lang_vec(self, text: str) -> np.ndarray:
        if text not in self._emb_cache:
            self._emb_cache[text] = self.encoder.encode(text).vector.astype(np.float32)
        return self._emb_cache[text]

    def window_arrays(self, episode_id: str, start: int, end: int):
        """Per-step arrays padded to max_window by repeating the last
        observation with a hold action; returns (gripper, static, proprio,
        actions, mask)."""
        ep = self.dataset.episode(episode_id)
        t_max = self.cfg.max_window
        n = end - start + 1
        sl = slice(start, end + 1)
        gripper = ep.gripper_rgb[sl].astype(np.float32) / 255.0
        static = ep.static[sl].astype(np.float32) / 255.0
        proprio = np.concatenate([
            ep.ee[sl],
            np.where(ep.gripper_state[sl, None] > 0, 1.0, -1.0),
        ], axis=1).astype(np.float32)
        actions = ep.actions[sl].astype(np.float32).copy()
        actions[:, :3] /= self.cfg.max_step
        mask = np.ones(t_max, dtype=np.float32)
        if n < t_max:
            pad = t_max - n
            gripper = np.concatenate([gripper, np.repeat(gripper[-1:], pad, axis=0)])
            static = np.concatenate([static, np.repeat(static[-1:], pad, axis=0)])
            proprio = np.concatenate([proprio, np.repeat(proprio[-1:], pad, axis=0)])
            hold = np.zeros((pad, actions.shape[1]), dtype=np.float32)
            hold[:, 3] = proprio[-1, 3]  # keep the gripper in its final state
            actions = np.concatenate([actions, hold])
            mask[n:] = 0.0
        return gripper, static, proprio, actions, mask

    def build_batch(self, image_windows: Sequence[EpisodeWindow],
                    lang_windows: Sequence[LanguageAnnotation]) -> WindowBatch:
        rows = [(w.episode_id, w.start, w.end) for w in image_windows]
        rows += [(a.episode_id, a.start, a.end) for a in lang_windows]
        parts = [self.window_arrays(*r) for r in rows]
        stack = lambda k: torch.from_numpy(np.stack([p[k] for p in parts]))
        gripper = stack(0).permute(0, 1, 4, 2, 3)
        static = stack(1).permute(0, 1, 4, 2, 3)
        goal_image = None
        if image_windows:
            goals = np.stack([
                self.dataset.episode(w.episode_id).static[w.end].astype(np.float32) / 255.0
                for w in image_windows
            ])
            goal_image = torch.from_numpy(goals).permute(0, 3, 1, 2)
        goal_lang = None
        if lang_windows:
            goal_lang = torch.from_numpy(
                np.stack([self._lang_vec(a.text) for a in lang_windows]))
        return WindowBatch(gripper, static, stack(2), stack(3), stack(4),
                           goal_image, goal_lang)


@dataclass
class PolicyTrainResult:
    model: SkillPolicy
    history: List[dict] = field(default_factory=list)


def train_policy(dataset, annotations: List[LanguageAnnotation], encoder,
                 cfg: PolicyConfig, seed: int) -> PolicyTrainResult:
    """Seeded MCIL training over image-goal and language-goal windows."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    mat = WindowMaterializer(dataset, encoder, cfg)
    image_pool = sample_goal_windows(dataset, int(rng.integers(2**31)),
                                     cfg.n_image_windows)
    lang_pool = [a for a in annotations
                 if a.end - a.start + 1 <= cfg.max_window]
    n_lang = int(round(cfg.batch_size * cfg.lang_ratio)) if lang_pool else 0
    n_img = cfg.batch_size - n_lang

    model = SkillPolicy(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        total = 0.0
        for _ in range(cfg.batches_per_epoch):
            img_idx = rng.integers(len(image_pool), size=n_img)
            lang_idx = rng.integers(len(lang_pool), size=n_lang) if n_lang else []
            batch = mat.build_batch([image_pool[i] for i in img_idx],
                                    [lang_pool[i] for i in lang_idx])
            loss = mcil_loss(model, batch)
            if not torch.isfinite(loss):
                raise Diverged(f"loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append({"epoch": epoch, "train_mcil": total / cfg.batches_per_epoch})
    model.eval()
    return PolicyTrainResult(model, history)


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, result: PolicyTrainResult) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(result.model.cfg),
        "state_dict": result.model.state_dict(),
        "history": result.history,
    }, path)


def load_checkpoint(path: str) -> PolicyTrainResult:
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported policy checkpoint version {blob.get('version')}")
    raw = dict(blob["config"])
    for key in ("logvar_clamp", "channels"):
        raw[key] = tuple(raw[key])
    cfg = PolicyConfig(**raw)
    model = SkillPolicy(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return PolicyTrainResult(model, blob["history"])
