"""Self-supervised extraction of affordance supervision from play data.

Gripper-close events mark task-relevant scene elements: the end-effector
position at each OPEN -> CLOSE transition is projected into the static camera,
and the frames of the surrounding annotated window that precede the closure
are labeled with that pixel, its camera-frame depth and the window's
instruction. Frames between two closures in one window label toward the next
upcoming closure.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .playdata import LanguageAnnotation, StoredEpisode, iter_closures
from .simworld import CameraModel, project_point


@dataclass(frozen=True)
class ClosureEvent:
    episode_id: str
    t_close: int
    contact_world: np.ndarray  # ee_pos at the transition step


@dataclass(frozen=True)
class AffordanceSample:
    episode_id: str
    t: int  # frame index of the static image
    instruction: str
    u: int
    v: int
    depth: float  # camera-frame meters, > 0


def detect_closures(episode: StoredEpisode) -> List[ClosureEvent]:
    """One event per OPEN -> CLOSE transition in the episode."""
    return [ClosureEvent(episode.episode_id, t, ee.copy())
            for t, ee in iter_closures(episode)]


def extract_samples(episode: StoredEpisode, annotations: List[LanguageAnnotation],
                    cam: CameraModel) -> Tuple[List[AffordanceSample], int]:
    """Affordance samples for every annotated window of this episode.

    Returns (samples, n_skipped) where n_skipped counts contacts whose
    projection fell outside the image (those samples are dropped, not clamped).
    """
    closures = detect_closures(episode)
    samples: List[AffordanceSample] = []
    skipped = 0
    for ann in annotations:
        if ann.episode_id != episode.episode_id:
            continue
        in_window = [c for c in closures if ann.start <= c.t_close <= ann.end]
        frame = ann.start
        for closure in in_window:
            (uf, vf), depth = project_point(closure.contact_world, cam)
            # Round half to even, matching numpy, so labels are deterministic.
            u, v = int(np.round(uf)), int(np.round(vf))
            in_bounds = 0 <= u < cam.image_w and 0 <= v < cam.image_h
            for t in range(frame, closure.t_close):
                if not in_bounds:
                    skipped += 1
                    continue
                samples.append(AffordanceSample(
                    episode.episode_id, t, ann.text, u, v, depth))
            frame = closure.t_close
    return samples, skipped


def write_samples(path: str, samples: List[AffordanceSample]) -> None:
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps({
                "episode_id": s.episode_id, "t": s.t, "instruction": s.instruction,
                "u": s.u, "v": s.v, "depth": s.depth,
            }, sort_keys=True) + "\n")


def read_samples(path: str) -> List[AffordanceSample]:
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(AffordanceSample(
                d["episode_id"], d["t"], d["instruction"], d["u"], d["v"], d["depth"]))
    return out


def extract_dataset(dataset, annotations: List[LanguageAnnotation],
                    cam: CameraModel) -> Tuple[List[AffordanceSample], int]:
    """Run extraction over every episode of a dataset."""
    samples: List[AffordanceSample] = []
    skipped = 0
    for ep in dataset.episodes():
        s, k = extract_samples(ep, annotations, cam)
        samples.extend(s)
        skipped += k
    return samples, skipped
