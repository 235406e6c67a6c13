"""Command-line pipeline: play generation, affordance labeling, training,
evaluation, decomposition, and a rollout REPL.

All artifacts for a run live under one working directory:

    <workdir>/
        dataset/                play episodes + annotations
        samples.jsonl           affordance samples
        affnet@<frac>.pt        affordance checkpoints per data fraction
        policy@<frac>.pt        policy checkpoints per data fraction
        reports/<name>/         evaluation reports and plots

Commands are deterministic under a fixed config: re-running a command with
unchanged inputs rewrites byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click
import numpy as np
import yaml

from . import affnet as affnet_mod
from . import skillpolicy as policy_mod
from .afflabel import extract_dataset, read_samples, write_samples
from .affnet import AffNetConfig, train_affordance
from .evalrig import (
    EvalReport,
    ModelBundle,
    aff_metrics,
    emit_report,
    model_runner,
    per_task_eval,
    run_chain_eval,
)
from .hybridctl import MODEL_FREE, GateConfig, execute_instruction
from .langenc import LangEncoder
from .playdata import (
    PlayDataset,
    StoredEpisode,
    annotate_random_windows,
    compute_stats,
)
from .simworld import (
    TASK_TEMPLATES,
    SimEnv,
    check_success,
    load_scene_config,
    scripted_play,
)
from .skillpolicy import PolicyConfig, train_policy
from .taskdecomp import MockCompletionClient, SceneDescriptor, decompose

LEGAL_FRACTIONS = (0.25, 0.5, 1.0)


class MissingArtifact(click.ClickException):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing artifact {path}; run `deskagent {producer}` first")


@dataclass
class RunConfig:
    workdir: str = "runs/default"
    seed: int = 0
    data_fraction: float = 1.0
    n_episodes: int = 20
    steps_per_episode: int = 1000
    annotation_budget: float = 0.01
    aff_epochs: int = 80
    policy_epochs: int = 10
    policy_batches_per_epoch: int = 40
    policy_image_windows: int = 4000
    n_chains: int = 100
    rollouts_per_task: int = 10
    subtask_horizon: int = 120

    def __post_init__(self):
        if self.data_fraction not in LEGAL_FRACTIONS:
            raise ValueError(
                f"data_fraction must be one of {LEGAL_FRACTIONS}, got {self.data_fraction}")

    # Derived paths
    @property
    def root(self) -> Path:
        return Path(self.workdir)

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def samples_path(self) -> Path:
        return self.root / "samples.jsonl"

    def aff_ckpt(self, fraction: Optional[float] = None) -> Path:
        return self.root / f"affnet@{fraction or self.data_fraction}.pt"

    def policy_ckpt(self, fraction: Optional[float] = None) -> Path:
        return self.root / f"policy@{fraction or self.data_fraction}.pt"

    def report_dir(self, name: str) -> Path:
        return self.root / "reports" / name


def _load_run_config(config_path: Optional[str], **flags) -> RunConfig:
    """Build the run config from flags; a config file's values take precedence
    over flags for any field it sets."""
    values = {k: v for k, v in flags.items() if v is not None}
    if config_path:
        file_values = yaml.safe_load(Path(config_path).read_text()) or {}
        unknown = set(file_values) - {f.name for f in dataclasses.fields(RunConfig)}
        if unknown:
            raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    return RunConfig(**values)


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 help="YAML file of RunConfig fields; overrides flags."),
    click.option("--workdir", type=str, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--data-fraction", "data_fraction",
                 type=click.Choice([str(f) for f in LEGAL_FRACTIONS]),
                 callback=lambda c, p, v: float(v) if v is not None else None,
                 default=None),
]


def _with_config(fn):
    for opt in reversed(_CONFIG_OPTIONS):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Language-conditioned tabletop manipulation pipeline."""


def _open_dataset(cfg: RunConfig):
    if not (cfg.dataset_dir / "manifest.json").exists():
        raise MissingArtifact(cfg.dataset_dir, "gen-play")
    return PlayDataset(str(cfg.dataset_dir))


def _fraction_view(dataset, fraction: float):
    return dataset if fraction == 1.0 else dataset.subset(fraction)


@main.command("gen-play")
@_with_config
@click.option("--n-episodes", type=int, default=None)
@click.option("--steps-per-episode", type=int, default=None)
@click.option("--annotation-budget", type=float, default=None)
def gen_play(config_path, **flags):
    """Generate the play corpus, its language annotations, and stats."""
    cfg = _load_run_config(config_path, **flags)
    scene = load_scene_config()
    cfg.dataset_dir.mkdir(parents=True, exist_ok=True)
    episodes = []
    for i in range(cfg.n_episodes):
        ep = scripted_play(cfg.seed * 10007 + i, cfg.steps_per_episode, scene)
        episodes.append(StoredEpisode.from_play(ep, f"ep{i:04d}"))
        click.echo(f"episode {i + 1}/{cfg.n_episodes}: "
                   f"{len(ep.segments)} annotated-able segments")
    dataset = PlayDataset.create(str(cfg.dataset_dir), episodes)
    annotations = annotate_random_windows(dataset, cfg.seed, cfg.annotation_budget, scene)
    dataset.write_annotations(annotations)
    stats = compute_stats(dataset, scene)
    (cfg.root / "stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    click.echo(f"dataset: {dataset.total_steps()} steps, "
               f"{len(annotations)} language annotations "
               f"({sum(a.n_steps() for a in annotations)} annotated steps)")


@main.command("label-aff")
@_with_config
def label_aff(config_path, **flags):
    """Extract affordance training samples from annotated play windows."""
    cfg = _load_run_config(config_path, **flags)
    dataset = _open_dataset(cfg)
    scene = load_scene_config()
    samples, skipped = extract_dataset(dataset, dataset.read_annotations(),
                                       scene.static_camera)
    write_samples(str(cfg.samples_path), samples)
    click.echo(f"{len(samples)} affordance samples ({skipped} off-image contacts skipped)")


@main.command("train-aff")
@_with_config
@click.option("--epochs", type=int, default=None)
def train_aff(config_path, epochs, **flags):
    """Train the affordance model on the configured data fraction."""
    cfg = _load_run_config(config_path, **flags)
    dataset = _open_dataset(cfg)
    if not cfg.samples_path.exists():
        raise MissingArtifact(cfg.samples_path, "label-aff")
    view = _fraction_view(dataset, cfg.data_fraction)
    keep = set(view.episode_ids())
    samples = [s for s in read_samples(str(cfg.samples_path)) if s.episode_id in keep]
    scene = load_scene_config()
    stats = compute_stats(view, scene)
    net_cfg = AffNetConfig(epochs=epochs if epochs is not None else cfg.aff_epochs)
    result = train_affordance(view, samples, stats, LangEncoder(), net_cfg, cfg.seed)
    affnet_mod.save_checkpoint(str(cfg.aff_ckpt()), result)
    last = result.history[-1]
    click.echo(f"affnet@{cfg.data_fraction}: {len(samples)} samples, "
               f"val_px_err={last['val_px_err']:.2f} "
               f"val_depth_err={last['val_depth_err']:.4f}")


@main.command("train-policy")
@_with_config
@click.option("--epochs", type=int, default=None)
def train_policy_cmd(config_path, epochs, **flags):
    """Train the goal-conditioned policy on the configured data fraction."""
    cfg = _load_run_config(config_path, **flags)
    dataset = _open_dataset(cfg)
    view = _fraction_view(dataset, cfg.data_fraction)
    pol_cfg = PolicyConfig(
        epochs=epochs if epochs is not None else cfg.policy_epochs,
        batches_per_epoch=cfg.policy_batches_per_epoch,
        n_image_windows=cfg.policy_image_windows,
    )
    result = train_policy(view, view.read_annotations(), LangEncoder(), pol_cfg, cfg.seed)
    policy_mod.save_checkpoint(str(cfg.policy_ckpt()), result)
    click.echo(f"policy@{cfg.data_fraction}: final "
               f"mcil={result.history[-1]['train_mcil']:.3f}")


def _load_bundle(cfg: RunConfig, aff_fraction: float, policy_fraction: float,
                 flat: bool) -> ModelBundle:
    pol_path = cfg.policy_ckpt(policy_fraction)
    if not pol_path.exists():
        raise MissingArtifact(pol_path, f"train-policy --data-fraction {policy_fraction}")
    policy = policy_mod.load_checkpoint(str(pol_path)).model
    gate = GateConfig(subtask_horizon=cfg.subtask_horizon, force_model_free=flat)
    if flat:
        return ModelBundle(policy=policy, encoder=LangEncoder(), gate=gate)
    aff_path = cfg.aff_ckpt(aff_fraction)
    if not aff_path.exists():
        raise MissingArtifact(aff_path, f"train-aff --data-fraction {aff_fraction}")
    aff = affnet_mod.load_checkpoint(str(aff_path))
    return ModelBundle(policy=policy, encoder=LangEncoder(),
                       aff_model=aff.model, stats=aff.stats, gate=gate)


@main.command("eval-chains")
@_with_config
@click.option("--aff-fraction", type=float, default=None,
              help="Data fraction of the affordance checkpoint to load.")
@click.option("--policy-fraction", type=float, default=None,
              help="Data fraction of the policy checkpoint to load.")
@click.option("--n-chains", type=int, default=None)
@click.option("--flat", is_flag=True, help="Learned policy only (alpha forced to 1).")
@click.option("--name", type=str, default=None, help="Report directory name.")
def eval_chains(config_path, aff_fraction, policy_fraction, n_chains, flat, name, **flags):
    """Evaluate sequential 5-task chains."""
    cfg = _load_run_config(config_path, **flags)
    aff_fraction = aff_fraction or cfg.data_fraction
    policy_fraction = policy_fraction or cfg.data_fraction
    models = _load_bundle(cfg, aff_fraction, policy_fraction, flat)
    scene = load_scene_config()
    report = run_chain_eval(models, n_chains or cfg.n_chains, scene, cfg.seed)
    label = name or ("chains-flat" if flat else f"chains-aff{aff_fraction}-pol{policy_fraction}")
    files = emit_report(report, cfg.report_dir(label))
    click.echo(f"avg_len={report.avg_len:.2f} rates={[round(r, 2) for r in report.rates]}")
    click.echo("wrote " + ", ".join(str(f) for f in files))


@main.command("eval-tasks")
@_with_config
@click.option("--rollouts", type=int, default=None)
@click.option("--flat", is_flag=True)
def eval_tasks(config_path, rollouts, flat, **flags):
    """Per-task success rates from neutral starts."""
    cfg = _load_run_config(config_path, **flags)
    models = _load_bundle(cfg, cfg.data_fraction, cfg.data_fraction, flat)
    scene = load_scene_config()
    table = per_task_eval(model_runner(models), scene,
                          rollouts or cfg.rollouts_per_task, cfg.seed)
    report = EvalReport(rates=(0.0,) * 5, avg_len=0.0, n_chains=0, per_task=table)
    emit_report(report, cfg.report_dir("tasks"))
    for k, v in sorted(table.items()):
        click.echo(f"{k:28s} {v:.2f}")


@main.command("eval-aff")
@_with_config
@click.option("--holdout-fraction", type=float, default=0.1)
def eval_aff(config_path, holdout_fraction, **flags):
    """Affordance pixel/depth validation errors on held-out samples."""
    cfg = _load_run_config(config_path, **flags)
    dataset = _open_dataset(cfg)
    if not cfg.samples_path.exists():
        raise MissingArtifact(cfg.samples_path, "label-aff")
    aff_path = cfg.aff_ckpt()
    if not aff_path.exists():
        raise MissingArtifact(aff_path, f"train-aff --data-fraction {cfg.data_fraction}")
    result = affnet_mod.load_checkpoint(str(aff_path))
    samples = read_samples(str(cfg.samples_path))
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(samples))
    n_val = max(1, int(holdout_fraction * len(samples)))
    holdout = [samples[i] for i in perm[:n_val]]
    px, depth = aff_metrics(result.model, holdout, dataset, LangEncoder(), result.stats)
    click.echo(f"pixel_err={px:.2f}px depth_err={depth:.4f}m over {len(holdout)} samples")


@main.command("decomp")
@click.option("--command", "command", required=True)
@click.option("--drawer-open/--drawer-closed", default=False)
@click.option("--block", "blocks", multiple=True)
@click.option("--button-on", "buttons", multiple=True)
def decomp(command, drawer_open, blocks, buttons):
    """Decompose an abstract command into skill instructions (mock client)."""
    scene = SceneDescriptor(drawer_open, tuple(blocks), tuple(buttons))
    for line in decompose(scene, command, MockCompletionClient()):
        click.echo(line)


def _match_task(instruction: str):
    for task, templates in TASK_TEMPLATES.items():
        if instruction in templates:
            return task
    return None


@main.command("rollout")
@_with_config
@click.option("--flat", is_flag=True)
@click.option("--frames-dir", type=click.Path(), default=None,
              help="Dump per-step static frames as PNG.")
def rollout(config_path, flat, frames_dir, **flags):
    """REPL: type an instruction, watch the gated controller execute it."""
    cfg = _load_run_config(config_path, **flags)
    models = _load_bundle(cfg, cfg.data_fraction, cfg.data_fraction, flat)
    scene = load_scene_config()
    env = SimEnv(scene)
    env.reset(cfg.seed)
    click.echo("instruction> (empty line or 'quit' exits, 'reset <seed>' resets)")
    n_run = 0
    for line in sys.stdin:
        instruction = line.strip()
        if not instruction or instruction == "quit":
            break
        if instruction.startswith("reset"):
            parts = instruction.split()
            env.reset(int(parts[1]) if len(parts) > 1 else cfg.seed)
            click.echo("reset.")
            continue
        issue = env.state.copy()
        execution = execute_instruction(
            instruction, env, models.aff_model, models.stats, models.policy,
            models.encoder, models.gate, seed=cfg.seed + n_run)
        n_run += 1
        phases = execution.phases()
        n_mb = sum(1 for p in phases if p != MODEL_FREE)
        click.echo(f"phases: {n_mb} model-based -> {len(phases) - n_mb} model-free "
                   f"(flips: {execution.n_phase_flips()})")
        task = _match_task(instruction)
        if task is not None:
            ok = check_success(task, issue, env.state, scene)
            click.echo(f"task {task.value}: {'SUCCESS' if ok else 'FAILURE'}")
        else:
            click.echo("no matching task predicate; skipping verdict")
        if frames_dir:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            out = Path(frames_dir)
            out.mkdir(parents=True, exist_ok=True)
            frame = env.obs().static_rgb
            plt.imsave(out / f"run{n_run:03d}_final.png", frame)
            click.echo(f"wrote {out}/run{n_run:03d}_final.png")
    click.echo("bye.")


if __name__ == "__main__":
    main()
