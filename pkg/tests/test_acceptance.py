"""Acceptance gate: ten end-to-end criteria over the full pipeline.

Each test prints a single PASS line with its measured numbers; heavyweight
artifacts come from the session fixtures in conftest.py and their build time
is charged against the relevant criterion's budget.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from tests.conftest import CORPUS_SEED, run_cli

DATA = Path(__file__).parent / "data"


def _passline(name, detail):
    print(f"ACCEPTANCE {name}: PASS ({detail})")


# -- 1: loss identities ------------------------------------------------------

def test_criterion_1_loss_identities():
    from deskagent.affnet import aff_loss, depth_loss, total_loss

    t0 = time.monotonic()
    n = 64 * 64
    uniform = torch.full((n,), 1.0 / n, dtype=torch.float64)
    target = torch.zeros(n, dtype=torch.float64)
    target[123] = 1.0
    ce = float(aff_loss(uniform[None], target[None]))
    assert abs(ce - math.log(4096)) < 1e-4
    assert abs(ce - 8.3178) < 1e-4

    nll = float(depth_loss(torch.tensor(0.7), torch.tensor(0.7), torch.tensor(0.0)))
    assert abs(nll - 0.0) < 1e-9

    total = total_loss(1.0, 2.0, beta=0.1)
    assert abs(total - 1.9) < 1e-9
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    _passline("criterion 1", f"ce={ce:.6f}, nll={nll:.2e}, total={total}, {elapsed:.3f}s")


# -- 2: finite-difference gradients ------------------------------------------

def _fd_max_rel_err(model, loss_fn, n_coords=6, seed=0, eps=1e-6):
    rng = np.random.default_rng(seed)
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for param in model.parameters():
        flat = param.detach().reshape(-1)
        grad = param.grad.reshape(-1)
        for idx in rng.choice(flat.shape[0], size=min(n_coords, flat.shape[0]),
                              replace=False):
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + eps
                up = float(loss_fn())
                flat[idx] = orig - eps
                down = float(loss_fn())
                flat[idx] = orig
            fd = (up - down) / (2 * eps)
            an = float(grad[idx])
            denom = max(abs(fd), abs(an))
            if denom < 1e-6:
                # below what central differences can resolve on an O(100)
                # loss; the subtraction cancels to roundoff there
                continue
            worst = max(worst, abs(fd - an) / denom)
    return worst


def test_criterion_2_fd_gradients():
    from deskagent.affnet import AffNet, AffNetConfig, batch_loss
    from deskagent.skillpolicy import PolicyConfig, SkillPolicy, WindowBatch, mcil_loss

    t0 = time.monotonic()
    m = np.load(DATA / "aff_microbatch.npz")
    torch.manual_seed(0)
    aff = AffNet(AffNetConfig()).double()
    images = torch.from_numpy(m["images"]).permute(0, 3, 1, 2).double()
    lang = torch.from_numpy(m["lang"]).double()
    tidx = torch.from_numpy(m["target_idx"])
    tdepth = torch.from_numpy(m["target_depth"]).double()
    aff_err = _fd_max_rel_err(aff, lambda: batch_loss(aff, images, lang, tidx, tdepth)[0],
                              eps=1e-6)
    assert aff_err < 1e-3

    p = np.load(DATA / "policy_microbatch.npz")
    torch.manual_seed(0)
    policy = SkillPolicy(PolicyConfig()).double()
    batch = WindowBatch(
        gripper=torch.from_numpy(p["gripper"]).double(),
        static=torch.from_numpy(p["static"]).double(),
        proprio=torch.from_numpy(p["proprio"]).double(),
        actions=torch.from_numpy(p["actions"]).double(),
        mask=torch.from_numpy(p["mask"]).double(),
        goal_image=torch.from_numpy(p["goal_image"]).double(),
        goal_lang=torch.from_numpy(p["goal_lang"]).double(),
    )
    # the policy loss is larger in magnitude, so central differences need a
    # wider stencil before the subtraction stops cancelling to roundoff
    pol_err = _fd_max_rel_err(policy, lambda: mcil_loss(policy, batch), eps=1e-5)
    assert pol_err < 1e-3
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    _passline("criterion 2",
              f"aff_rel_err={aff_err:.2e}, policy_rel_err={pol_err:.2e}, {elapsed:.1f}s")


# -- 3: camera round trip ----------------------------------------------------

def test_criterion_3_camera_roundtrip():
    from deskagent.simworld import deproject_pixel, load_scene_config, project_point

    t0 = time.monotonic()
    cam = load_scene_config().static_camera
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        u = rng.uniform(0, cam.image_w - 1)
        v = rng.uniform(0, cam.image_h - 1)
        d = rng.uniform(0.3, 2.5)
        p = deproject_pixel((u, v), d, cam)
        (u2, v2), d2 = project_point(p, cam)
        worst = max(worst, abs(u2 - u), abs(v2 - v), abs(d2 - d))
    assert worst < 1e-6
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    _passline("criterion 3", f"max_err={worst:.2e} over 1000 points, {elapsed:.3f}s")


# -- 4: alpha mixture logging ------------------------------------------------

def test_criterion_4_alpha_mixture(aff_ckpts, policy_ckpt):
    from tests.conftest import _bundle
    from deskagent.hybridctl import execute_instruction
    from deskagent.simworld import (SimEnv, TaskId, instruction_for,
                                    load_scene_config, make_feasible,
                                    reset_neutral)

    bundle = _bundle(aff_ckpts[1.0].path, policy_ckpt.path)
    scene = load_scene_config()
    rng = np.random.default_rng(4)
    tasks = list(TaskId)
    n_steps = 0
    for r in range(50):
        task = tasks[r % len(tasks)]
        state = make_feasible(reset_neutral(1000 + r, scene), task, rng, scene)
        env = SimEnv(scene)
        env.set_state(state)
        ex = execute_instruction(instruction_for(task, rng), env,
                                 bundle.aff_model, bundle.stats, bundle.policy,
                                 bundle.encoder, bundle.gate, seed=r)
        assert ex.n_phase_flips() <= 1
        for s in ex.steps:
            assert s.alpha in (0, 1)
            chosen = s.mf_action if s.alpha == 1 else s.mb_action
            other = s.mb_action if s.alpha == 1 else s.mf_action
            assert s.executed is chosen
            assert np.array_equal(s.executed.delta_pos, chosen.delta_pos)
            assert s.executed.gripper_cmd == chosen.gripper_cmd
            if other is not None:
                assert not (np.array_equal(s.executed.delta_pos, other.delta_pos)
                            and s.executed.gripper_cmd == other.gripper_cmd)
            n_steps += 1
    _passline("criterion 4", f"50 rollouts, {n_steps} steps bit-exact, flips<=1")


# -- 5: affordance quality and data-fraction trend ---------------------------

def test_criterion_5_affordance_quality(corpus, aff_ckpts):
    from deskagent import affnet as affnet_mod
    from deskagent.playdata import PlayDataset

    dataset = PlayDataset(str(corpus.path / "dataset"))
    total = dataset.total_steps()
    assert 45_000 <= total <= 55_000
    annotated = sum(a.n_steps() for a in dataset.read_annotations())
    assert annotated <= 0.01 * total

    errs = {}
    for fraction in (1.0, 0.25):
        hist = affnet_mod.load_checkpoint(str(aff_ckpts[fraction].path)).history
        errs[fraction] = (hist[-1]["val_px_err"], hist[-1]["val_depth_err"])

    px100, depth100 = errs[1.0]
    px25, _ = errs[0.25]
    assert px100 <= 6.0
    assert depth100 <= 0.03
    assert px25 >= px100
    assert px25 - px100 <= 8.0
    budget = aff_ckpts[1.0].seconds + aff_ckpts[0.25].seconds
    assert budget < 900.0
    _passline("criterion 5",
              f"{total} steps, {annotated} annotated ({annotated / total:.2%}), "
              f"px@100={px100:.2f}px depth@100={depth100:.4f}m px@25={px25:.2f}px, "
              f"train {budget:.0f}s")


# -- 6: hierarchical vs flat -------------------------------------------------

def test_criterion_6_hierarchy_margin(chain_reports):
    hier = chain_reports["hier"].extra["report"]
    flat = chain_reports["flat"].extra["report"]
    assert hier.n_chains == flat.n_chains == 100
    margin = hier.avg_len - flat.avg_len
    assert margin >= 0.2
    elapsed = chain_reports["hier"].seconds + chain_reports["flat"].seconds
    assert elapsed < 600.0
    _passline("criterion 6",
              f"hier={hier.avg_len:.2f} flat={flat.avg_len:.2f} "
              f"margin={margin:.2f}, {elapsed:.0f}s")


# -- 7: affordance data-fraction robustness ----------------------------------

def test_criterion_7_aff_fraction_robustness(chain_reports):
    hier = chain_reports["hier"].extra["report"]
    aff25 = chain_reports["aff25"].extra["report"]
    delta = abs(aff25.avg_len - hier.avg_len)
    assert delta <= 0.3
    _passline("criterion 7",
              f"aff@25={aff25.avg_len:.2f} aff@100={hier.avg_len:.2f} |delta|={delta:.2f}")


# -- 8: rig soundness --------------------------------------------------------

def test_criterion_8_rig_soundness(chain_reports):
    from deskagent.evalrig import oracle_runner, per_task_eval
    from deskagent.simworld import TaskId, load_scene_config

    scene = load_scene_config()
    table = per_task_eval(oracle_runner(), scene, rollouts_per_task=5, seed=8)
    for task in TaskId:
        assert table[task.value] == 1.0, task

    for name, arm in chain_reports.items():
        report = arm.extra["report"]
        assert all(a >= b - 1e-12 for a, b in zip(report.rates, report.rates[1:]))
        assert abs(report.avg_len - sum(report.rates)) < 1e-9
    _passline("criterion 8",
              "oracle 21/21 tasks at 1.0; rates monotone; avg_len == sum(rates)")


# -- 9: decomposer -----------------------------------------------------------

def test_criterion_9_decomposer():
    from deskagent.taskdecomp import (COLORS, DESTINATIONS, MockCompletionClient,
                                      SceneDescriptor, SkillCall, decompose,
                                      parse_code, translate_skill)

    scene = SceneDescriptor(False, ("red", "green", "blue"), ("green", "yellow"))
    plan_calls = []
    completion = MockCompletionClient().complete(
        "state = " + scene.state_line().split("=", 1)[1]
        + "\n# tidy up the workspace and turn off all the lights\n")
    assert completion.splitlines() == [
        "open_drawer()",
        "pick_and_place('red', 'drawer')",
        "pick_and_place('green', 'drawer')",
        "pick_and_place('blue', 'drawer')",
        "close_drawer()",
        "push_button('green')",
        "push_button('yellow')",
    ]
    plan = decompose(scene, "tidy up the workspace and turn off all the lights",
                     MockCompletionClient())
    assert len(plan) == 7

    rng = np.random.default_rng(9)
    calls = []
    for _ in range(500):
        k = int(rng.integers(4))
        calls.append(
            SkillCall("open_drawer", ()) if k == 0 else
            SkillCall("close_drawer", ()) if k == 1 else
            SkillCall("push_button", (str(rng.choice(COLORS)),)) if k == 2 else
            SkillCall("pick_and_place", (str(rng.choice(COLORS)),
                                         str(rng.choice(DESTINATIONS)))))
    text = "\n".join(c.render() for c in calls)
    result = parse_code(text)
    assert not result.rejections
    assert result.calls == calls

    assert translate_skill(SkillCall("push_button", ("green",))) == \
        "turn on the green light"
    _passline("criterion 9", "mock 7-line plan, 500-line round-trip, translation")


# -- 10: end-to-end smoke ----------------------------------------------------

def test_criterion_10_smoke(tmp_path):
    from deskagent.evalrig import load_report

    t0 = time.monotonic()
    wd = tmp_path / "smoke"
    run_cli(["gen-play", "--workdir", wd, "--seed", CORPUS_SEED,
             "--n-episodes", 12, "--steps-per-episode", 800])
    run_cli(["label-aff", "--workdir", wd])
    run_cli(["train-aff", "--workdir", wd, "--seed", CORPUS_SEED, "--epochs", 40])
    run_cli(["train-policy", "--workdir", wd, "--seed", CORPUS_SEED, "--epochs", 2])
    args = ["eval-chains", "--workdir", wd, "--seed", CORPUS_SEED,
            "--n-chains", 5, "--name", "smoke"]
    run_cli(args)
    report_path = wd / "reports" / "smoke" / "report.json"
    report = load_report(report_path)  # raises if invariants are violated
    report.validate()
    first_bytes = report_path.read_bytes()

    run_cli(args)  # determinism: identical artifacts on re-run
    assert report_path.read_bytes() == first_bytes

    elapsed = time.monotonic() - t0
    assert elapsed < 1800.0
    _passline("criterion 10",
              f"pipeline ok, avg_len={report.avg_len:.2f}, deterministic, {elapsed:.0f}s")
