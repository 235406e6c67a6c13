"""Decompose abstract instructions into skill sequences.

A few-shot prompt primes a text-completion model with worked command-to-code
examples; the completion is parsed with a strict line grammar into declarative
skill calls (never executed as code) and each call is translated into a
low-level language instruction. A rule-based mock client keeps everything
deterministic and offline.
"""

from __future__ import annotations

import ast
import importlib.resources
import os
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

COLORS = ("red", "green", "blue", "yellow")
DESTINATIONS = ("drawer", "table", "slider", "container")

SKILL_ARITY = {
    "open_drawer": 0,
    "close_drawer": 0,
    "pick_and_place": 2,
    "push_button": 1,
}


class UnknownSkill(Exception):
    pass


class ClientTimeout(Exception):
    pass


class EmptyPlan(Exception):
    pass


@dataclass(frozen=True)
class SceneDescriptor:
    drawer_open: bool
    blocks_on_table: Tuple[str, ...]
    buttons_on: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks_on_table", tuple(self.blocks_on_table))
        object.__setattr__(self, "buttons_on", tuple(self.buttons_on))

    def state_line(self) -> str:
        blocks = ", ".join(f"'{c}'" for c in self.blocks_on_table)
        buttons = ", ".join(f"'{c}'" for c in self.buttons_on)
        return ("state = {'drawer_open': %s, 'blocks_on_table': [%s], "
                "'buttons_on': [%s]}" % (self.drawer_open, blocks, buttons))


@dataclass(frozen=True)
class SkillCall:
    name: str
    args: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.name not in SKILL_ARITY:
            raise UnknownSkill(self.name)
        if len(self.args) != SKILL_ARITY[self.name]:
            raise ValueError(f"{self.name} takes {SKILL_ARITY[self.name]} args")

    def render(self) -> str:
        return f"{self.name}({', '.join(repr(a) for a in self.args)})"


@dataclass(frozen=True)
class ParseRejection:
    line_no: int
    line: str
    reason: str


@dataclass
class ParseResult:
    calls: List[SkillCall] = field(default_factory=list)
    rejections: List[ParseRejection] = field(default_factory=list)


_STATE_RE = re.compile(r"^\s*state\s*=")
_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*\((.*)\)\s*$")
_ARG_RE = re.compile(r"^'([^']*)'$")


def _legal_arg(name: str, pos: int, value: str) -> bool:
    if name == "push_button":
        return value in COLORS
    if name == "pick_and_place":
        return value in COLORS if pos == 0 else value in DESTINATIONS
    return False


def parse_code(text: str) -> ParseResult:
    """Line-oriented parse of generated robot code into skill calls.

    Blank lines are skipped; comment and state lines before the first call
    are skipped, but once calls have begun they terminate the parse (they
    start the next few-shot block). Rejected lines are collected, never raised.
    """
    result = ParseResult()
    for line_no, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#") or _STATE_RE.match(line):
            if result.calls:
                break
            continue
        m = _CALL_RE.match(line)
        if not m:
            result.rejections.append(ParseRejection(
                line_no, raw, "not a call: expected name(arg, ...) with balanced parentheses"))
            continue
        name, arg_text = m.group(1), m.group(2).strip()
        if name not in SKILL_ARITY:
            result.rejections.append(ParseRejection(line_no, raw, f"unknown skill {name!r}"))
            continue
        args = []
        bad = None
        if arg_text:
            for piece in arg_text.split(","):
                am = _ARG_RE.match(piece.strip())
                if not am:
                    bad = f"argument {piece.strip()!r} is not a single-quoted string"
                    break
                args.append(am.group(1))
        if bad is None and len(args) != SKILL_ARITY[name]:
            bad = f"{name} takes {SKILL_ARITY[name]} argument(s), got {len(args)}"
        if bad is None:
            for pos, value in enumerate(args):
                if not _legal_arg(name, pos, value):
                    bad = f"illegal argument {value!r} for {name}"
                    break
        if bad is not None:
            result.rejections.append(ParseRejection(line_no, raw, bad))
            continue
        result.calls.append(SkillCall(name, tuple(args)))
    return result


_TRANSLATIONS = {
    "open_drawer": "open the drawer",
    "close_drawer": "close the drawer",
}


def translate_skill(call: SkillCall) -> str:
    """Fixed skill-to-instruction translation table."""
    if call.name in _TRANSLATIONS:
        return _TRANSLATIONS[call.name]
    if call.name == "push_button":
        return f"turn on the {call.args[0]} light"
    if call.name == "pick_and_place":
        color, dest = call.args
        return f"pick up the {color} block and place it in the {dest}"
    raise UnknownSkill(call.name)


@dataclass(frozen=True)
class PromptExample:
    scene: SceneDescriptor
    command: str
    calls: Tuple[SkillCall, ...]


def default_examples_text() -> str:
    return importlib.resources.files("deskagent.configs").joinpath(
        "prompt_examples.txt").read_text()


def parse_examples(text: str) -> List[PromptExample]:
    """Parse a prompt-example corpus in the same format build_prompt emits."""
    examples = []
    scene = None
    command = None
    calls: List[SkillCall] = []

    def flush():
        nonlocal scene, command, calls
        if scene is not None and command is not None:
            examples.append(PromptExample(scene, command, tuple(calls)))
        command, calls = None, []

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if _STATE_RE.match(line):
            flush()
            d = ast.literal_eval(line.split("=", 1)[1].strip())
            scene = SceneDescriptor(d["drawer_open"], tuple(d["blocks_on_table"]),
                                    tuple(d["buttons_on"]))
        elif line.startswith("#"):
            if command is not None:
                flush()
            command = line.lstrip("#").strip()
        else:
            parsed = parse_code(line)
            calls.extend(parsed.calls)
    flush()
    return examples


def build_prompt(examples: Sequence[PromptExample], scene: SceneDescriptor,
                 command: str) -> str:
    """Few-shot prompt: worked examples, then the live state and command."""
    if not examples:
        raise ValueError("need at least one prompt example")
    if not command.strip():
        raise ValueError("command must be non-empty")
    blocks = []
    for ex in examples:
        lines = [ex.scene.state_line(), f"# {ex.command}"]
        lines += [c.render() for c in ex.calls]
        blocks.append("\n".join(lines))
    blocks.append(f"{scene.state_line()}\n# {command.strip()}")
    return "\n\n".join(blocks) + "\n"


@dataclass
class CompletionConfig:
    url: str = ""
    auth_env_var: str = "DESKAGENT_COMPLETION_TOKEN"
    timeout_s: float = 30.0
    max_tokens: int = 256
    temperature: float = 0.0


class HttpCompletionClient:
    """Minimal text-completion wire adapter:
    POST {prompt, max_tokens, temperature} -> {"completion": text}."""

    def __init__(self, cfg: CompletionConfig):
        self.cfg = cfg

    def complete(self, prompt: str) -> str:
        import requests

        headers = {}
        token = os.environ.get(self.cfg.auth_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(self.cfg.url, json={
                "prompt": prompt,
                "max_tokens": self.cfg.max_tokens,
                "temperature": self.cfg.temperature,
            }, headers=headers, timeout=self.cfg.timeout_s)
        except requests.Timeout as exc:
            raise ClientTimeout(str(exc)) from exc
        resp.raise_for_status()
        return resp.json()["completion"]


_LAST_STATE_RE = re.compile(r"state\s*=\s*(\{.*\})")
_LAST_COMMAND_RE = re.compile(r"#\s*(.*)")


class MockCompletionClient:
    """Deterministic rule-based planner over the prompt's final scene/command."""

    def complete(self, prompt: str) -> str:
        states = _LAST_STATE_RE.findall(prompt)
        commands = _LAST_COMMAND_RE.findall(prompt)
        if not states or not commands:
            return ""
        scene_dict = ast.literal_eval(states[-1])
        command = commands[-1].strip().lower()
        blocks = list(scene_dict.get("blocks_on_table", []))
        buttons = list(scene_dict.get("buttons_on", []))
        drawer_open = bool(scene_dict.get("drawer_open", False))

        lines: List[str] = []
        tidy = any(k in command for k in ("tidy", "put away", "clean"))
        lights_off = ("light" in command and "off" in command)
        if tidy and blocks:
            if not drawer_open:
                lines.append("open_drawer()")
            lines += [f"pick_and_place('{c}', 'drawer')" for c in blocks]
            lines.append("close_drawer()")
        if lights_off:
            lines += [f"push_button('{c}')" for c in buttons]
        if not lines and "open the drawer" in command and not drawer_open:
            lines.append("open_drawer()")
        if not lines and "close the drawer" in command and drawer_open:
            lines.append("close_drawer()")
        return "\n".join(lines) + ("\n" if lines else "")


def decompose(scene: SceneDescriptor, command: str, client,
              examples: Optional[Sequence[PromptExample]] = None) -> List[str]:
    """Prompt, complete, parse and translate into low-level instructions."""
    if examples is None:
        examples = parse_examples(default_examples_text())
    prompt = build_prompt(examples, scene, command)
    completion = client.complete(prompt)
    result = parse_code(completion)
    if not result.calls:
        raise EmptyPlan(f"no parsable skill call for command {command!r}")
    return [translate_skill(c) for c in result.calls]


def describe_scene(state, cfg) -> SceneDescriptor:
    """Read a SceneDescriptor off the live simulator state."""
    from .simworld import LOC_TABLE

    blocks = tuple(b.color for b in state.blocks if b.location == LOC_TABLE)
    buttons = tuple(c for c in cfg.button_x if state.lights[c])
    return SceneDescriptor(state.drawer_ext >= 0.5, blocks, buttons)
