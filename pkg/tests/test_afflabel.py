import numpy as np
import pytest

from deskagent.afflabel import (
    AffordanceSample,
    detect_closures,
    extract_dataset,
    extract_samples,
    read_samples,
    write_samples,
)
from deskagent.playdata import (
    LanguageAnnotation,
    StoredEpisode,
    annotate_random_windows,
)
from deskagent.simworld import load_scene_config, project_point, scripted_play


@pytest.fixture(scope="module")
def scene():
    return load_scene_config()


@pytest.fixture(scope="module")
def episode(scene):
    return StoredEpisode.from_play(scripted_play(42, 500, scene), "ep0000")


def _annotations(episode, scene, budget=1.0):
    class _One:
        def total_steps(self):
            return len(episode)

        def episodes(self):
            return iter([episode])

    return annotate_random_windows(_One(), seed=0, budget=budget, cfg=scene)


def test_detect_closures_match_gripper_edges(episode):
    events = detect_closures(episode)
    assert events, "play should contain grasps/presses"
    for ev in events:
        assert episode.gripper_state[ev.t_close] == 0
        assert episode.actions[ev.t_close, 3] > 0


def test_extract_samples_label_geometry(episode, scene):
    anns = _annotations(episode, scene)
    samples, skipped = extract_samples(episode, anns, scene.static_camera)
    assert samples
    by_ann = {(a.start, a.end): a for a in anns}
    for s in samples:
        # the label is the projected contact point of the next upcoming closure
        closures = [t for t, _ in
                    ((t, e) for t, e in _closures(episode)) if t >= s.t]
        assert closures, "sample frame must precede a closure"
        t_close = closures[0]
        (u, v), depth = project_point(episode.ee[t_close], scene.static_camera)
        assert s.u == int(np.round(u)) and s.v == int(np.round(v))
        assert s.depth == pytest.approx(depth, abs=1e-12)
        assert 0 <= s.u < 64 and 0 <= s.v < 64
        assert s.depth > 0


def _closures(episode):
    from deskagent.playdata import iter_closures

    return iter_closures(episode)


def test_samples_only_inside_annotated_windows(episode, scene):
    anns = _annotations(episode, scene)
    samples, _ = extract_samples(episode, anns, scene.static_camera)
    spans = [(a.start, a.end) for a in anns]
    for s in samples:
        assert any(lo <= s.t <= hi for lo, hi in spans)
        assert s.instruction in {a.text for a in anns}


def test_window_without_closure_yields_no_samples(episode, scene):
    # an annotation placed over a closure-free stretch produces nothing
    closure_ts = {t for t, _ in _closures(episode)}
    start = next(t for t in range(len(episode) - 16)
                 if not any(c in closure_ts for c in range(t, t + 16)))
    from deskagent.simworld import TaskId

    ann = LanguageAnnotation(episode.episode_id, start, start + 15,
                             "idle wandering", TaskId.OPEN_DRAWER)
    samples, skipped = extract_samples(episode, [ann], scene.static_camera)
    assert samples == []


def test_jsonl_round_trip(tmp_path, episode, scene):
    anns = _annotations(episode, scene)
    samples, _ = extract_samples(episode, anns, scene.static_camera)
    path = tmp_path / "samples.jsonl"
    write_samples(str(path), samples)
    assert read_samples(str(path)) == samples


def test_extract_dataset_aggregates(tmp_path, scene):
    from deskagent.playdata import PlayDataset

    eps = [StoredEpisode.from_play(scripted_play(60 + i, 300, scene), f"ep{i:04d}")
           for i in range(2)]
    ds = PlayDataset.create(str(tmp_path), eps)
    anns = annotate_random_windows(ds, seed=1, budget=0.5, cfg=scene)
    total, skipped = extract_dataset(ds, anns, scene.static_camera)
    per_ep = []
    for ep in ds.episodes():
        s, _ = extract_samples(ep, anns, scene.static_camera)
        per_ep.extend(s)
    assert total == per_ep
