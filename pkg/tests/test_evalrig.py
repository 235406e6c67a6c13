"""Chain generation, prefix scoring, report invariants, affordance metrics."""

import numpy as np
import pytest

from deskagent.evalrig import (
    CHAIN_LENGTH,
    ChainResult,
    ChainSpec,
    EmptyHoldout,
    EvalReport,
    ReportInvariantError,
    aff_metrics,
    aggregate_chains,
    emit_report,
    generate_chains,
    load_report,
    oracle_runner,
    per_task_eval,
    save_heatmap_overlay,
)
from deskagent.simworld import TaskId, load_scene_config


def test_chain_result_prefix_k():
    assert ChainResult(0, [True, True, False]).k == 2
    assert ChainResult(0, [False]).k == 0
    assert ChainResult(0, [True] * 5).k == 5
    assert ChainResult(0, []).k == 0


def test_aggregate_hand_computed():
    results = [
        ChainResult(0, [True, True, True, True, True]),   # k=5
        ChainResult(1, [True, False]),                    # k=1
        ChainResult(2, [True, True, False]),              # k=2
        ChainResult(3, [False]),                          # k=0
    ]
    report = aggregate_chains(results)
    assert report.rates == (0.75, 0.5, 0.25, 0.25, 0.25)
    assert report.avg_len == pytest.approx(2.0)
    assert report.avg_len == pytest.approx(sum(report.rates))


def test_generate_chains_deterministic_and_repeat_free():
    a = generate_chains(20, seed=9)
    b = generate_chains(20, seed=9)
    assert a == b
    for chain in a:
        assert len(chain.subtasks) == CHAIN_LENGTH
        tasks = [t for t, _ in chain.subtasks]
        assert all(x is not y for x, y in zip(tasks, tasks[1:]))
        for task, instruction in chain.subtasks:
            assert isinstance(task, TaskId)
            assert instruction
    assert generate_chains(20, seed=10) != a


def test_generate_chains_tracks_drawer_precondition():
    # place-in-drawer may only appear while the drawer is symbolically open
    for chain in generate_chains(200, seed=3):
        drawer_open = False
        for task, _ in chain.subtasks:
            if task is TaskId.PLACE_BLOCK_DRAWER:
                assert drawer_open
            if task is TaskId.OPEN_DRAWER:
                drawer_open = True
            elif task is TaskId.CLOSE_DRAWER:
                drawer_open = False


def test_report_validate_rejects_increasing_rates():
    report = EvalReport(rates=(0.5, 0.6, 0.1, 0.0, 0.0), avg_len=1.2, n_chains=10)
    with pytest.raises(ReportInvariantError):
        report.validate()


def test_report_validate_rejects_mismatched_avg_len():
    report = EvalReport(rates=(0.5, 0.25, 0.0, 0.0, 0.0), avg_len=1.5, n_chains=4)
    with pytest.raises(ReportInvariantError):
        report.validate()


def test_emit_report_refuses_invalid(tmp_path):
    bad = EvalReport(rates=(0.1, 0.9, 0.0, 0.0, 0.0), avg_len=1.0, n_chains=2)
    with pytest.raises(ReportInvariantError):
        emit_report(bad, tmp_path)
    assert not (tmp_path / "report.json").exists()


def test_report_roundtrip(tmp_path):
    report = EvalReport(rates=(1.0, 0.5, 0.5, 0.0, 0.0), avg_len=2.0, n_chains=2,
                        per_task={"open_drawer": 1.0, "average": 1.0},
                        aff_px_err=1.25, aff_depth_err=0.01)
    written = emit_report(report, tmp_path)
    assert (tmp_path / "report.json") in written
    assert (tmp_path / "chain_rates.png").exists()
    assert (tmp_path / "per_task.png").exists()
    assert load_report(tmp_path / "report.json") == report


def test_report_version_gate(tmp_path):
    with pytest.raises(ValueError):
        EvalReport.from_dict({"version": 99, "rates": [0] * 5, "avg_len": 0,
                              "n_chains": 0, "per_task": {}, "aff_px_err": None,
                              "aff_depth_err": None})


def test_oracle_per_task_is_perfect():
    scene = load_scene_config()
    tasks = [TaskId.OPEN_DRAWER, TaskId.CLOSE_DRAWER, TaskId.PLACE_BLOCK_CONTAINER]
    table = per_task_eval(oracle_runner(), scene, rollouts_per_task=3, seed=1,
                          tasks=tasks)
    for task in tasks:
        assert table[task.value] == 1.0
    assert table["average"] == 1.0


def _samples_fixture():
    from deskagent.afflabel import AffordanceSample

    stats_samples = [
        AffordanceSample("ep0000", 4, "open the drawer", 10, 20, 0.9),
        AffordanceSample("ep0000", 9, "push the block left", 40, 17, 1.2),
    ]
    return stats_samples


def test_aff_metrics_perfect_and_offset_predictors(tmp_path):
    from deskagent.afflabel import AffordanceSample
    from deskagent.affnet import AffordanceOutput
    from deskagent.langenc import LangEncoder
    from deskagent.playdata import DatasetStats

    samples = _samples_fixture()
    stats = DatasetStats(1.0, 0.5, np.zeros(4), np.ones(4))
    hw = 64

    class _Episode:
        static = np.zeros((12, hw, hw, 3), dtype=np.uint8)

    class _Dataset:
        def episode(self, eid):
            return _Episode()

    class _Exact:
        def __init__(self, du=0, dv=0, ddepth=0.0):
            self.du, self.dv, self.ddepth = du, dv, ddepth
            self._queue = list(samples)

        def predict(self, image, emb):
            s = self._queue.pop(0)
            dist = np.zeros((hw, hw))
            dist[s.v + self.dv, s.u + self.du] = 1.0
            mu = (s.depth + self.ddepth - stats.depth_mean) / stats.depth_std
            return AffordanceOutput(np.log(dist + 1e-12), dist, mu, 0.0)

    enc = LangEncoder()
    px, dm = aff_metrics(_Exact(), samples, _Dataset(), enc, stats)
    assert px == pytest.approx(0.0)
    assert dm == pytest.approx(0.0)

    px, dm = aff_metrics(_Exact(du=3, dv=4, ddepth=0.05), samples, _Dataset(),
                         enc, stats)
    assert px == pytest.approx(5.0)
    assert dm == pytest.approx(0.05)


def test_aff_metrics_empty_holdout():
    from deskagent.langenc import LangEncoder
    from deskagent.playdata import DatasetStats

    with pytest.raises(EmptyHoldout):
        aff_metrics(None, [], None, LangEncoder(),
                    DatasetStats(1.0, 1.0, np.zeros(4), np.ones(4)))


def test_heatmap_overlay_marks_argmax(tmp_path):
    image = np.zeros((64, 64, 3), dtype=np.float32)
    dist = np.zeros((64, 64))
    dist[10, 33] = 1.0
    out = tmp_path / "overlay.png"
    assert save_heatmap_overlay(image, dist, out) == (33, 10)
    assert out.stat().st_size > 0
