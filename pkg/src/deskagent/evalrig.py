"""Sequential-chain evaluation, per-task rollouts, affordance validation
metrics, and report/plot emission.

A chain is five instructed subtasks issued back to back from a neutral reset;
the next subtask is only issued after the previous one succeeds, and the score
of a chain is the length of its all-success prefix. Reported rates at k are
the fraction of chains reaching at least k, so rate(k) is non-increasing and
the average length equals the sum of the rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .affnet import AffNet, predict_pixel
from .hybridctl import GateConfig, execute_instruction
from .langenc import LangEncoder
from .playdata import DatasetStats, PlayDataset
from .simworld import (
    BLOCK_COLORS,
    SceneConfig,
    SimEnv,
    TaskId,
    WorldState,
    check_success,
    instruction_for,
    make_feasible,
    reset_neutral,
    run_skill,
)
from .skillpolicy import SkillPolicy

CHAIN_LENGTH = 5
REPORT_VERSION = 1


class EmptyHoldout(Exception):
    pass


class ReportInvariantError(Exception):
    pass


@dataclass(frozen=True)
class ChainSpec:
    chain_id: int
    subtasks: Tuple[Tuple[TaskId, str], ...]  # (task, instruction) x 5
    start_seed: int

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        assert len(self.subtasks) == CHAIN_LENGTH


@dataclass
class ChainResult:
    chain_id: int
    successes: List[bool]

    @property
    def k(self) -> int:
        n = 0
        for ok in self.successes:
            if not ok:
                break
            n += 1
        return n


@dataclass
class ModelBundle:
    """Everything run_chain_eval needs to act on an instruction."""

    policy: SkillPolicy
    encoder: LangEncoder
    aff_model: Optional[AffNet] = None
    stats: Optional[DatasetStats] = None
    gate: GateConfig = field(default_factory=GateConfig)


@dataclass
class EvalReport:
    rates: Tuple[float, ...]  # success rate at >= k tasks in a row, k = 1..5
    avg_len: float
    n_chains: int
    per_task: Dict[str, float] = field(default_factory=dict)
    aff_px_err: Optional[float] = None
    aff_depth_err: Optional[float] = None

    def validate(self) -> None:
        if any(b > a + 1e-12 for a, b in zip(self.rates, self.rates[1:])):
            raise ReportInvariantError(f"rates not non-increasing: {self.rates}")
        if not (0.0 <= self.avg_len <= CHAIN_LENGTH):
            raise ReportInvariantError(f"avg_len out of range: {self.avg_len}")
        if self.n_chains and abs(self.avg_len - sum(self.rates)) > 1e-9:
            raise ReportInvariantError(
                f"avg_len {self.avg_len} != sum of rates {sum(self.rates)}")

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "rates": list(self.rates),
            "avg_len": self.avg_len,
            "n_chains": self.n_chains,
            "per_task": dict(sorted(self.per_task.items())),
            "aff_px_err": self.aff_px_err,
            "aff_depth_err": self.aff_depth_err,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        return cls(tuple(d["rates"]), d["avg_len"], d["n_chains"],
                   dict(d["per_task"]), d["aff_px_err"], d["aff_depth_err"])


# Chain candidates are limited to tasks whose preconditions we can track
# symbolically, so generated chains stay feasible without simulating them.
@dataclass
class _Abstract:
    drawer_open: bool = False
    slider_right: bool = False
    lights: Dict[str, bool] = field(default_factory=lambda: {c: False for c in BLOCK_COLORS})
    table_blocks: int = 3
    pushed_left: bool = False
    pushed_right: bool = False


def _chain_candidates(a: _Abstract) -> List[TaskId]:
    out = []
    out.append(TaskId.CLOSE_DRAWER if a.drawer_open else TaskId.OPEN_DRAWER)
    out.append(TaskId.MOVE_SLIDER_LEFT if a.slider_right else TaskId.MOVE_SLIDER_RIGHT)
    for c in BLOCK_COLORS:
        name = f"turn_{c}_light_{'off' if a.lights[c] else 'on'}"
        out.append(TaskId(name))
    if a.table_blocks > 0:
        out.append(TaskId.PLACE_BLOCK_CONTAINER)
        if a.drawer_open:
            out.append(TaskId.PLACE_BLOCK_DRAWER)
        if not a.pushed_left:
            out.append(TaskId.PUSH_BLOCK_LEFT)
        if not a.pushed_right:
            out.append(TaskId.PUSH_BLOCK_RIGHT)
    return out


def _chain_apply(a: _Abstract, task: TaskId) -> None:
    if task is TaskId.OPEN_DRAWER:
        a.drawer_open = True
    elif task is TaskId.CLOSE_DRAWER:
        a.drawer_open = False
    elif task is TaskId.MOVE_SLIDER_RIGHT:
        a.slider_right = True
    elif task is TaskId.MOVE_SLIDER_LEFT:
        a.slider_right = False
    elif task.value.startswith("turn_"):
        a.lights[task.value.split("_")[1]] = task.value.endswith("_on")
    elif task in (TaskId.PLACE_BLOCK_CONTAINER, TaskId.PLACE_BLOCK_DRAWER):
        a.table_blocks -= 1
    elif task is TaskId.PUSH_BLOCK_LEFT:
        a.pushed_left = True
    elif task is TaskId.PUSH_BLOCK_RIGHT:
        a.pushed_right = True


def generate_chains(n_chains: int, seed: int) -> List[ChainSpec]:
    """Feasibility-tracked random chains of 5 instructed subtasks."""
    rng = np.random.default_rng(seed)
    chains = []
    for i in range(n_chains):
        a = _Abstract()
        subtasks = []
        prev = None
        for _ in range(CHAIN_LENGTH):
            cands = [t for t in _chain_candidates(a) if t is not prev]
            task = cands[int(rng.integers(len(cands)))]
            _chain_apply(a, task)
            subtasks.append((task, instruction_for(task, rng)))
            prev = task
        chains.append(ChainSpec(i, tuple(subtasks), start_seed=seed * 100003 + i))
    return chains


def run_chain(chain: ChainSpec, models: ModelBundle, scene: SceneConfig) -> ChainResult:
    env = SimEnv(scene)
    env.set_state(reset_neutral(chain.start_seed, scene))
    successes = []
    for j, (task, instruction) in enumerate(chain.subtasks):
        issue = env.state.copy()
        execute_instruction(instruction, env, models.aff_model, models.stats,
                            models.policy, models.encoder, models.gate,
                            seed=chain.start_seed + j)
        ok = check_success(task, issue, env.state, scene)
        successes.append(ok)
        if not ok:
            break
    return ChainResult(chain.chain_id, successes)


def aggregate_chains(results: Sequence[ChainResult]) -> EvalReport:
    ks = [r.k for r in results]
    n = len(results)
    rates = tuple(sum(1 for k in ks if k >= i) / n for i in range(1, CHAIN_LENGTH + 1))
    report = EvalReport(rates=rates, avg_len=float(np.mean(ks)), n_chains=n)
    report.validate()
    return report


def run_chain_eval(models: ModelBundle, n_chains: int, scene: SceneConfig,
                   seed: int, chains: Optional[Sequence[ChainSpec]] = None) -> EvalReport:
    if chains is None:
        chains = generate_chains(n_chains, seed)
    return aggregate_chains([run_chain(c, models, scene) for c in chains])


RolloutRunner = Callable[[TaskId, str, SimEnv, int], None]


def model_runner(models: ModelBundle) -> RolloutRunner:
    def run(task: TaskId, instruction: str, env: SimEnv, seed: int) -> None:
        execute_instruction(instruction, env, models.aff_model, models.stats,
                            models.policy, models.encoder, models.gate, seed=seed)
    return run


def oracle_runner() -> RolloutRunner:
    """Scripted noise-free skill execution; validates the rig, not a model."""
    def run(task: TaskId, instruction: str, env: SimEnv, seed: int) -> None:
        final = run_skill(task, env.state, env.cfg, np.random.default_rng(seed))
        env.set_state(final)
    return run


def per_task_eval(runner: RolloutRunner, scene: SceneConfig,
                  rollouts_per_task: int = 10, seed: int = 0,
                  tasks: Optional[Sequence[TaskId]] = None) -> Dict[str, float]:
    """Success fraction per task over seeded rollouts from (adjusted) neutral
    starts, plus the cross-task mean under the key "average"."""
    tasks = list(tasks) if tasks is not None else list(TaskId)
    rng = np.random.default_rng(seed)
    table: Dict[str, float] = {}
    all_ids = list(TaskId)
    for task in tasks:
        wins = 0
        for r in range(rollouts_per_task):
            roll_seed = seed * 7919 + all_ids.index(task) * 1009 + r
            state = make_feasible(reset_neutral(roll_seed, scene), task, rng, scene)
            env = SimEnv(scene)
            env.set_state(state)
            issue = env.state.copy()
            runner(task, instruction_for(task, rng), env, roll_seed)
            wins += int(check_success(task, issue, env.state, scene))
        table[task.value] = wins / rollouts_per_task
    table["average"] = float(np.mean([table[t.value] for t in tasks]))
    return table


def aff_metrics(model, samples, dataset: PlayDataset, encoder: LangEncoder,
                stats: DatasetStats) -> Tuple[float, float]:
    """(mean pixel distance in px, mean absolute depth error in meters) on
    held-out affordance samples, with depth taken in MEAN mode."""
    if not samples:
        raise EmptyHoldout("no held-out affordance samples")
    px_errs, d_errs = [], []
    for s in samples:
        ep = dataset.episode(s.episode_id)
        image = ep.static[s.t].astype(np.float32) / 255.0
        out = model.predict(image, encoder.encode(s.instruction))
        u, v = predict_pixel(out.dist)
        px_errs.append(float(np.hypot(u - s.u, v - s.v)))
        depth_pred = out.depth_mu * stats.depth_std + stats.depth_mean
        d_errs.append(abs(depth_pred - s.depth))
    return float(np.mean(px_errs)), float(np.mean(d_errs))


def save_heatmap_overlay(image: np.ndarray, dist: np.ndarray, out_path) -> Tuple[int, int]:
    """Static image with the affordance heatmap alpha-blended on top and a
    marker at the argmax pixel. Returns the marker's (u, v)."""
    u, v = predict_pixel(dist)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image)
    ax.imshow(dist, cmap="inferno", alpha=0.6)
    ax.plot([u], [v], marker="+", color="cyan", markersize=12)
    ax.set_axis_off()
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return u, v


def emit_report(report: EvalReport, out_dir) -> List[Path]:
    """Write report.json plus plots; refuses reports violating invariants."""
    report.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(path)

    fig, ax = plt.subplots()
    ax.plot(range(1, CHAIN_LENGTH + 1), report.rates, marker="o")
    ax.set_xlabel("tasks completed in a row")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.05, 1.05)
    p = out / "chain_rates.png"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    if report.per_task:
        names = [k for k in sorted(report.per_task) if k != "average"]
        fig, ax = plt.subplots(figsize=(8, 0.3 * len(names) + 1.5))
        ax.barh(names, [report.per_task[k] for k in names])
        ax.set_xlabel("success rate")
        ax.set_xlim(0, 1)
        fig.tight_layout()
        p = out / "per_task.png"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)
    return written


def load_report(path) -> EvalReport:
    report = EvalReport.from_dict(json.loads(Path(path).read_text()))
    report.validate()
    return report
