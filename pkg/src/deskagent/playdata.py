"""Persistent play dataset: storage, windowing, relabeling and language annotation.

On-disk layout (version 1):
    <root>/manifest.json            {"version": 1, "episodes": [ids...]}
    <root>/annotations.jsonl        one annotation record per line
    <root>/<episode_id>/manifest.json
    <root>/<episode_id>/segments.json
    <root>/<episode_id>/<field>.npy one array per per-step field
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .simworld import (
    BLOCK_COLORS,
    Action,
    Block,
    Gripper,
    GripperCmd,
    PlayEpisode,
    RenderedObs,
    SceneConfig,
    Segment,
    TaskId,
    WorldState,
    check_success,
    instruction_for,
    project_point,
)

SCHEMA_VERSION = 1
MIN_WINDOW = 16
MAX_WINDOW = 32

GOAL_IMAGE = "image"
GOAL_LANG = "lang"

_LOC_CODES = {"table": 0, "drawer": 1, "slider": 2, "container": 3}
_LOC_NAMES = {v: k for k, v in _LOC_CODES.items()}
_STACK_BASE = 4  # codes 4..6 mean stacked-on:<BLOCK_COLORS[code-4]>


class CorruptRecord(Exception):
    pass


class DatasetTooSmall(Exception):
    pass


class InsufficientData(Exception):
    pass


def _encode_loc(loc: str) -> int:
    if loc.startswith("stacked-on:"):
        return _STACK_BASE + BLOCK_COLORS.index(loc.split(":")[1])
    return _LOC_CODES[loc]


def _decode_loc(code: int) -> str:
    if code >= _STACK_BASE:
        return f"stacked-on:{BLOCK_COLORS[code - _STACK_BASE]}"
    return _LOC_NAMES[code]


@dataclass
class PlayStep:
    """One logged step: observation reference, full state snapshot and action."""

    t: int
    obs: RenderedObs
    state_snapshot: WorldState
    action: Action


@dataclass(frozen=True)
class EpisodeWindow:
    """A hindsight-relabeled window; the goal is either the final image or language."""

    episode_id: str
    start: int
    end: int  # inclusive
    goal: str  # GOAL_IMAGE or GOAL_LANG
    annotation_id: Optional[int] = None

    def __post_init__(self):
        assert MIN_WINDOW <= self.end - self.start + 1 <= MAX_WINDOW


@dataclass(frozen=True)
class LanguageAnnotation:
    episode_id: str
    start: int
    end: int
    text: str
    task: TaskId

    def n_steps(self) -> int:
        return self.end - self.start + 1


@dataclass
class DatasetStats:
    depth_mean: float
    depth_std: float
    action_mean: np.ndarray  # (4,)
    action_std: np.ndarray  # (4,)

    def to_dict(self) -> dict:
        return {
            "depth_mean": self.depth_mean,
            "depth_std": self.depth_std,
            "action_mean": self.action_mean.tolist(),
            "action_std": self.action_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(d["depth_mean"], d["depth_std"],
                   np.asarray(d["action_mean"]), np.asarray(d["action_std"]))


_ARRAY_FIELDS = (
    "static", "gripper_rgb", "ee", "gripper_state", "held", "actions",
    "blocks_pose", "blocks_loc", "drawer", "slider", "lights",
)


@dataclass
class StoredEpisode:
    """A play episode in array form, losslessly convertible to WorldState/Action."""

    episode_id: str
    static: np.ndarray  # (T, H, W, 3) uint8
    gripper_rgb: np.ndarray  # (T, h, w, 3) uint8
    ee: np.ndarray  # (T, 3)
    gripper_state: np.ndarray  # (T,) uint8, 1 = closed
    held: np.ndarray  # (T,) int8, -1 = none
    actions: np.ndarray  # (T, 4): dx, dy, dz, grip(+1 close / -1 open)
    blocks_pose: np.ndarray  # (T, 3, 3)
    blocks_loc: np.ndarray  # (T, 3) int8
    drawer: np.ndarray  # (T,)
    slider: np.ndarray  # (T,)
    lights: np.ndarray  # (T, 3) uint8
    segments: List[Segment] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, StoredEpisode):
            return NotImplemented
        return (
            self.episode_id == other.episode_id
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in _ARRAY_FIELDS)
            and self.segments == other.segments
        )

    @classmethod
    def from_play(cls, ep: PlayEpisode, episode_id: str) -> "StoredEpisode":
        n = len(ep)
        static = np.stack([np.round(o.static_rgb * 255).astype(np.uint8) for o in ep.obs])
        grip_img = np.stack([np.round(o.gripper_rgb * 255).astype(np.uint8) for o in ep.obs])
        ee = np.stack([s.ee_pos for s in ep.states])
        gstate = np.array([int(s.gripper is Gripper.CLOSED) for s in ep.states], dtype=np.uint8)
        held = np.array(
            [BLOCK_COLORS.index(s.held_object) if s.held_object else -1 for s in ep.states],
            dtype=np.int8,
        )
        actions = np.stack([
            np.concatenate([
                a.delta_pos,
                [1.0 if a.gripper_cmd is GripperCmd.CLOSE else -1.0],
            ])
            for a in ep.actions
        ])
        blocks_pose = np.stack([np.stack([b.pose for b in s.blocks]) for s in ep.states])
        blocks_loc = np.array(
            [[_encode_loc(b.location) for b in s.blocks] for s in ep.states], dtype=np.int8)
        drawer = np.array([s.drawer_ext for s in ep.states])
        slider = np.array([s.slider_pos for s in ep.states])
        lights = np.array(
            [[int(s.lights[c]) for c in BLOCK_COLORS] for s in ep.states], dtype=np.uint8)
        return cls(episode_id, static, grip_img, ee, gstate, held, actions,
                   blocks_pose, blocks_loc, drawer, slider, lights, list(ep.segments))

    def state_at(self, i: int) -> WorldState:
        blocks = [
            Block(c, self.blocks_pose[i, j].copy(), _decode_loc(int(self.blocks_loc[i, j])))
            for j, c in enumerate(BLOCK_COLORS)
        ]
        held_idx = int(self.held[i])
        return WorldState(
            ee_pos=self.ee[i].copy(),
            gripper=Gripper.CLOSED if self.gripper_state[i] else Gripper.OPEN,
            held_object=BLOCK_COLORS[held_idx] if held_idx >= 0 else None,
            blocks=blocks,
            drawer_ext=float(self.drawer[i]),
            slider_pos=float(self.slider[i]),
            lights={c: bool(self.lights[i, j]) for j, c in enumerate(BLOCK_COLORS)},
            t=i,
        )

    def action_at(self, i: int) -> Action:
        cmd = GripperCmd.CLOSE if self.actions[i, 3] > 0 else GripperCmd.OPEN
        return Action(self.actions[i, :3].copy(), cmd)

    def obs_at(self, i: int) -> RenderedObs:
        return RenderedObs(
            static_rgb=self.static[i].astype(np.float32) / 255.0,
            gripper_rgb=self.gripper_rgb[i].astype(np.float32) / 255.0,
        )

    def step_at(self, i: int) -> PlayStep:
        return PlayStep(i, self.obs_at(i), self.state_at(i), self.action_at(i))


def write_episode(root: str, episode: StoredEpisode) -> str:
    """Write one episode directory; returns its path."""
    ep_dir = os.path.join(root, episode.episode_id)
    os.makedirs(ep_dir, exist_ok=True)
    for name in _ARRAY_FIELDS:
        np.save(os.path.join(ep_dir, f"{name}.npy"), getattr(episode, name))
    with open(os.path.join(ep_dir, "segments.json"), "w") as f:
        json.dump(
            [{"task": s.task.value, "start": s.start, "end": s.end}
             for s in episode.segments],
            f, sort_keys=True, indent=0)
    with open(os.path.join(ep_dir, "manifest.json"), "w") as f:
        json.dump({"version": SCHEMA_VERSION, "episode_id": episode.episode_id,
                   "n_steps": len(episode)}, f, sort_keys=True)
    return ep_dir


def read_episode(ep_dir: str) -> StoredEpisode:
    """Read one episode directory; raises CorruptRecord on any schema mismatch."""
    try:
        with open(os.path.join(ep_dir, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest.get("version") != SCHEMA_VERSION:
            raise CorruptRecord(f"unsupported episode schema: {manifest.get('version')}")
        arrays = {name: np.load(os.path.join(ep_dir, f"{name}.npy"))
                  for name in _ARRAY_FIELDS}
        with open(os.path.join(ep_dir, "segments.json")) as f:
            segments = [Segment(TaskId(s["task"]), s["start"], s["end"])
                        for s in json.load(f)]
    except CorruptRecord:
        raise
    except Exception as exc:
        raise CorruptRecord(str(exc)) from exc
    n = manifest["n_steps"]
    if any(arr.shape[0] != n for arr in arrays.values()):
        raise CorruptRecord("array lengths disagree with manifest")
    return StoredEpisode(manifest["episode_id"], segments=segments, **arrays)


class PlayDataset:
    """A directory of stored episodes plus the annotation file."""

    def __init__(self, root: str):
        self.root = root
        self._cache = {}

    @classmethod
    def create(cls, root: str, episodes: List[StoredEpisode]) -> "PlayDataset":
        os.makedirs(root, exist_ok=True)
        for ep in episodes:
            write_episode(root, ep)
        with open(os.path.join(root, "manifest.json"), "w") as f:
            json.dump({"version": SCHEMA_VERSION,
                       "episodes": [ep.episode_id for ep in episodes]}, f, sort_keys=True)
        return cls(root)

    def episode_ids(self) -> List[str]:
        with open(os.path.join(self.root, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest.get("version") != SCHEMA_VERSION:
            raise CorruptRecord(f"unsupported dataset schema: {manifest.get('version')}")
        return list(manifest["episodes"])

    def episode(self, episode_id: str) -> StoredEpisode:
        if episode_id not in self._cache:
            self._cache[episode_id] = read_episode(os.path.join(self.root, episode_id))
        return self._cache[episode_id]

    def episodes(self) -> Iterator[StoredEpisode]:
        for eid in self.episode_ids():
            yield self.episode(eid)

    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes())

    def subset(self, fraction: float, shuffle_seed: int = 1234) -> "PlayDatasetView":
        """Episode-level prefix subset under a fixed shuffle, so 25% ⊂ 50% ⊂ 100%."""
        ids = self.episode_ids()
        order = np.random.default_rng(shuffle_seed).permutation(len(ids))
        keep = max(1, int(round(fraction * len(ids))))
        kept = [ids[i] for i in sorted(order[:keep])]
        return PlayDatasetView(self, kept)

    # Annotation storage: one JSON record per line, append-only.
    def annotation_path(self) -> str:
        return os.path.join(self.root, "annotations.jsonl")

    def write_annotations(self, annotations: List[LanguageAnnotation]) -> None:
        with open(self.annotation_path(), "w") as f:
            for a in annotations:
                f.write(json.dumps({
                    "episode_id": a.episode_id, "start": a.start, "end": a.end,
                    "task": a.task.value, "text": a.text,
                }, sort_keys=True) + "\n")

    def read_annotations(self) -> List[LanguageAnnotation]:
        out = []
        with open(self.annotation_path()) as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                out.append(LanguageAnnotation(
                    d["episode_id"], d["start"], d["end"], d["text"], TaskId(d["task"])))
        return out


class PlayDatasetView:
    """Read-only episode subset of a PlayDataset (for data-fraction ablations)."""

    def __init__(self, base: PlayDataset, episode_ids: List[str]):
        self._base = base
        self._ids = episode_ids
        self.root = base.root

    def episode_ids(self) -> List[str]:
        return list(self._ids)

    def episode(self, episode_id: str) -> StoredEpisode:
        if episode_id not in self._ids:
            raise KeyError(episode_id)
        return self._base.episode(episode_id)

    def episodes(self) -> Iterator[StoredEpisode]:
        for eid in self._ids:
            yield self._base.episode(eid)

    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes())

    def read_annotations(self) -> List[LanguageAnnotation]:
        keep = set(self._ids)
        return [a for a in self._base.read_annotations() if a.episode_id in keep]


def sample_goal_windows(dataset, seed: int, n: int,
                        min_window: int = MIN_WINDOW,
                        max_window: int = MAX_WINDOW) -> List[EpisodeWindow]:
    """Hindsight relabeling: n random windows whose goal is their final image."""
    lengths = [(ep.episode_id, len(ep)) for ep in dataset.episodes()]
    eligible = [(eid, ln) for eid, ln in lengths if ln >= min_window]
    if not eligible:
        raise DatasetTooSmall(f"no episode has at least {min_window} steps")
    rng = np.random.default_rng(seed)
    ids = [e[0] for e in eligible]
    lens = np.array([e[1] for e in eligible], dtype=np.float64)
    probs = lens / lens.sum()
    out = []
    for _ in range(n):
        k = int(rng.choice(len(ids), p=probs))
        eid, ln = ids[k], int(lens[k])
        w = int(rng.integers(min_window, min(max_window, ln) + 1))
        start = int(rng.integers(0, ln - w + 1))
        out.append(EpisodeWindow(eid, start, start + w - 1, GOAL_IMAGE))
    return out


def annotate_random_windows(dataset, seed: int, budget: float,
                            cfg: SceneConfig,
                            min_window: int = MIN_WINDOW,
                            max_window: int = MAX_WINDOW) -> List[LanguageAnnotation]:
    """Annotate random successful skill segments until the step budget is hit.

    The scripted teleoperator's segment log plays the role of the human
    annotator; every emitted window is validated against the task predicate.
    """
    rng = np.random.default_rng(seed)
    total = dataset.total_steps()
    budget_steps = int(budget * total)
    by_task: Dict[TaskId, list] = {}
    for ep in dataset.episodes():
        for seg in ep.segments:
            start, end = seg.start, seg.end
            if end - start + 1 > max_window:
                start = end - max_window + 1
            if end - start + 1 < min_window:
                start = max(0, end - min_window + 1)
            if end - start + 1 < min_window:
                continue
            if check_success(seg.task, ep.state_at(start), ep.state_at(end), cfg):
                by_task.setdefault(seg.task, []).append((ep.episode_id, start, end))
    # Round-robin over task types so a tiny budget still covers the whole
    # skill repertoire instead of oversampling the most frequent segments.
    for cands in by_task.values():
        rng.shuffle(cands)
    task_order = sorted(by_task, key=lambda t: t.value)
    rng.shuffle(task_order)
    out, used = [], 0
    exhausted = False
    while not exhausted:
        exhausted = True
        for task in task_order:
            if not by_task[task]:
                continue
            eid, start, end = by_task[task].pop()
            n = end - start + 1
            if used + n > budget_steps:
                continue
            exhausted = False
            text = instruction_for(task, rng)
            out.append(LanguageAnnotation(eid, start, end, text, task))
            used += n
    return out


def iter_closures(ep: StoredEpisode) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (t, ee_pos) at every OPEN -> CLOSE command transition."""
    for i in range(len(ep)):
        if ep.actions[i, 3] > 0 and ep.gripper_state[i] == 0:
            yield i, ep.ee[i]


def compute_stats(dataset, cfg: SceneConfig) -> DatasetStats:
    """Normalization statistics: contact-depth mean/std and action moments."""
    depths = []
    actions = []
    for ep in dataset.episodes():
        for _, ee in iter_closures(ep):
            _, z = project_point(ee, cfg.static_camera)
            depths.append(z)
        actions.append(ep.actions)
    if len(depths) < 2:
        raise InsufficientData(f"need at least 2 contact depths, got {len(depths)}")
    depths = np.asarray(depths)
    std = float(depths.std())
    if std <= 1e-9:
        raise InsufficientData("contact depths are degenerate (zero variance)")
    acts = np.concatenate(actions, axis=0)
    return DatasetStats(
        depth_mean=float(depths.mean()),
        depth_std=std,
        action_mean=acts.mean(axis=0),
        action_std=np.maximum(acts.std(axis=0), 1e-8),
    )
