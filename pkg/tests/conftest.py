"""Session fixtures for the acceptance suite.

The heavyweight artifacts (a ~50k-step play corpus, affordance models at two
data fractions, and one trained policy) are built once per session through
the CLI, exactly as a user would, and shared across acceptance tests. Build
durations are recorded so the acceptance tests can assert their time budgets
including the cost of producing what they consume.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import pytest
from click.testing import CliRunner

from deskagent.cli import main

CORPUS_EPISODES = 50
CORPUS_STEPS = 1000
CORPUS_SEED = 0
AFF_EPOCHS = 400
POLICY_EPOCHS = 100


@dataclass
class Artifact:
    path: Path
    seconds: float
    extra: dict = field(default_factory=dict)


def run_cli(args):
    result = CliRunner().invoke(main, [str(a) for a in args])
    if result.exception and not isinstance(result.exception, SystemExit):
        raise result.exception
    assert result.exit_code == 0, result.output
    return result


def _timed_cli(args) -> float:
    t0 = time.monotonic()
    run_cli(args)
    return time.monotonic() - t0


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Artifact:
    wd = tmp_path_factory.mktemp("acceptance")
    secs = _timed_cli(["gen-play", "--workdir", wd, "--seed", CORPUS_SEED,
                       "--n-episodes", CORPUS_EPISODES,
                       "--steps-per-episode", CORPUS_STEPS])
    secs += _timed_cli(["label-aff", "--workdir", wd])
    return Artifact(Path(wd), secs)


@pytest.fixture(scope="session")
def aff_ckpts(corpus) -> Dict[float, Artifact]:
    out = {}
    for fraction in (1.0, 0.25):
        secs = _timed_cli(["train-aff", "--workdir", corpus.path,
                           "--seed", CORPUS_SEED, "--epochs", AFF_EPOCHS,
                           "--data-fraction", fraction])
        out[fraction] = Artifact(corpus.path / f"affnet@{fraction}.pt", secs)
    return out


@pytest.fixture(scope="session")
def policy_ckpt(corpus) -> Artifact:
    secs = _timed_cli(["train-policy", "--workdir", corpus.path,
                       "--seed", CORPUS_SEED, "--epochs", POLICY_EPOCHS])
    return Artifact(corpus.path / "policy@1.0.pt", secs)


def _bundle(aff_path, policy_path, flat=False):
    from deskagent import affnet as affnet_mod
    from deskagent import skillpolicy as policy_mod
    from deskagent.evalrig import ModelBundle
    from deskagent.hybridctl import GateConfig
    from deskagent.langenc import LangEncoder

    policy = policy_mod.load_checkpoint(str(policy_path)).model
    gate = GateConfig(force_model_free=flat)
    if flat:
        return ModelBundle(policy=policy, encoder=LangEncoder(), gate=gate)
    aff = affnet_mod.load_checkpoint(str(aff_path))
    return ModelBundle(policy=policy, encoder=LangEncoder(),
                       aff_model=aff.model, stats=aff.stats, gate=gate)


@pytest.fixture(scope="session")
def chain_reports(aff_ckpts, policy_ckpt) -> Dict[str, Artifact]:
    """Three arms over the *same* 100 chains: hierarchical (affordance at
    100% and 25%) and flat (learned policy only, alpha forced to 1)."""
    from deskagent.evalrig import generate_chains, run_chain_eval
    from deskagent.simworld import load_scene_config

    scene = load_scene_config()
    chains = generate_chains(100, seed=CORPUS_SEED)
    out = {}
    arms = {
        "hier": _bundle(aff_ckpts[1.0].path, policy_ckpt.path),
        "aff25": _bundle(aff_ckpts[0.25].path, policy_ckpt.path),
        "flat": _bundle(None, policy_ckpt.path, flat=True),
    }
    for name, bundle in arms.items():
        t0 = time.monotonic()
        report = run_chain_eval(bundle, len(chains), scene, CORPUS_SEED,
                                chains=chains)
        out[name] = Artifact(Path(), time.monotonic() - t0,
                             extra={"report": report})
    return out
