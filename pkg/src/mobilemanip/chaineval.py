"""Fixed task plans, sequential skill chaining and progressive completion rates.

Skill termination inside a chain is proprioceptive (see
:func:`mobilemanip.skills.check_termination`); stage predicates below read
the full world state and are only used for scoring.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .episodes import EpisodeSpec, make_scene, scene_context
from .geometry import Pose2D
from .skills import (
    MANIP_SKILLS,
    SKILLS,
    Controller,
    SkillBinding,
    SkillSpec,
    oracle_controller,
    run_skill,
)
from .world import HANDLE_PREFIX, SceneState, reset_arm

AT_RADIUS = 0.15
OPENED_DRAWER = 0.4
CLOSED_DRAWER = 0.1
OPENED_FRIDGE = math.pi / 2
CLOSED_FRIDGE = 0.15


class ChainConfigError(ValueError):
    pass


# -- stage goals ------------------------------------------------------------------


def _pick_place_stages(n: int) -> list:
    stages = []
    for i in range(n):
        done = [f"at(target_obj_pos|{j},target_goal_pos|{j})" for j in range(i)]
        stages.append((f"pick_{i}", [f"holding(target_obj|{i})"] + done))
        stages.append((f"place_{i}", ["not_holding()"] + done + [f"at(target_obj_pos|{i},target_goal_pos|{i})"]))
    return stages


_AT0 = "at(target_obj_pos|0,target_goal_pos|0)"
_AT1 = "at(target_obj_pos|1,target_goal_pos|1)"
_CD0 = "closed_drawer(target_marker|0)"

STAGES = {
    "tidyhouse": _pick_place_stages(5),
    "preparegroceries": _pick_place_stages(3),
    "settable": [
        ("open_0", ["opened_drawer(target_marker|0)"]),
        ("pick_0", ["holding(target_obj|0)"]),
        ("place_0", ["not_holding()", _AT0]),
        ("close_0", [_CD0, _AT0]),
        ("open_1", [_CD0, _AT0, "opened_fridge(target_marker|1)"]),
        ("pick_1", [_CD0, _AT0, "opened_fridge(target_marker|1)", "holding(target_obj|1)"]),
        ("place_1", [_CD0, _AT0, "not_holding()", _AT1]),
        ("close_1", [_CD0, _AT0, "closed_fridge(target_marker|1)", _AT1]),
    ],
}

_PRED = re.compile(r"^(\w+)\((.*)\)$")


def _marker(episode: EpisodeSpec, i: int) -> str:
    t = episode.targets[i]
    cid = t.start.container or t.goal.container
    if cid is None:
        raise ChainConfigError(f"target {i} has no container")
    return cid


def predicate(text: str, state: SceneState, episode: EpisodeSpec) -> bool:
    m = _PRED.match(text)
    if m is None:
        raise ChainConfigError(f"bad predicate {text!r}")
    name, args = m.group(1), [a.split("|")[1] for a in m.group(2).split(",") if "|" in a]
    held = state.robot.holding
    if name == "not_holding":
        return held is None or held.startswith(HANDLE_PREFIX)
    i = int(args[0])
    if name == "holding":
        return held == f"target_{i}"
    if name == "at":
        o = state.object(f"target_{i}")
        return float(np.linalg.norm(o.position - o.goal)) <= AT_RADIUS
    q = state.container(_marker(episode, i)).joint
    if name == "opened_drawer":
        return q > OPENED_DRAWER
    if name == "closed_drawer":
        return q < CLOSED_DRAWER
    if name == "opened_fridge":
        return q > OPENED_FRIDGE
    if name == "closed_fridge":
        return q < CLOSED_FRIDGE
    raise ChainConfigError(f"unknown predicate {name!r}")


def skill_goal_met(spec: SkillSpec, state: SceneState) -> bool:
    """Whether a finished manipulation skill left the world in its goal state."""
    held = state.robot.holding
    if spec.name == "pick":
        return held == spec.object_id
    if spec.name == "place":
        o = state.object(spec.object_id)
        return held != spec.object_id and float(np.linalg.norm(o.position - o.goal)) <= AT_RADIUS
    q = state.container(spec.container).joint
    return {
        "open_drawer": q > OPENED_DRAWER,
        "close_drawer": q < CLOSED_DRAWER,
        "open_fridge": q > OPENED_FRIDGE,
        "close_fridge": q < CLOSED_FRIDGE,
    }.get(spec.name, False)


class StageTracker:
    """Advances through the stage list, at most one stage per evaluation."""

    def __init__(self, task: str, episode: EpisodeSpec):
        self.stages = STAGES[task]
        self.episode = episode
        self.completed = 0
        self.transitions: list = []

    def update(self, state: SceneState, step: int) -> None:
        if self.completed >= len(self.stages):
            return
        name, preds = self.stages[self.completed]
        if all(predicate(p, state, self.episode) for p in preds):
            self.completed += 1
            self.transitions.append((name, step))

    @property
    def vector(self) -> list:
        return [1] * self.completed + [0] * (len(self.stages) - self.completed)


# -- task plans ---------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    spec: SkillSpec
    stage: Optional[int] = None  # stage this step is meant to complete

    @property
    def label(self) -> str:
        return self.spec.label


def task_plan(task: str, episode: EpisodeSpec, variant: str = "mobile", nav_mode: str = "region") -> list:
    """Subtask sequence of a perfect planner, targets bound to the episode."""
    if task != episode.task:
        raise ChainConfigError(f"episode is {episode.task!r}, not {task!r}")
    t = episode.targets

    def nav(nxt: SkillSpec) -> PlanStep:
        return PlanStep(SkillSpec("navigate", nxt.target, nav_mode=nav_mode, next=nxt))

    def pick(i: int) -> SkillSpec:
        return SkillSpec("pick", t[i].start.position, variant, container=t[i].start.container, object_index=i)

    def place(i: int) -> SkillSpec:
        return SkillSpec("place", t[i].goal.position, variant, container=t[i].goal.container, object_index=i)

    def arti(verb: str, i: int) -> SkillSpec:
        cid = t[i].start.container
        kind = "fridge" if cid == "fridge" else "drawer"
        return SkillSpec(f"{verb}_{kind}", t[i].start.position, variant, container=cid)

    steps: list = []
    if task in ("tidyhouse", "preparegroceries"):
        for i in range(len(t)):
            p, q = pick(i), place(i)
            steps += [nav(p), PlanStep(p, 2 * i), nav(q), PlanStep(q, 2 * i + 1)]
    elif task == "settable":
        seq = [
            (arti("open", 0), 0), (pick(0), 1), (place(0), 2), (arti("close", 0), 3),
            (arti("open", 1), 4), (pick(1), 5), (place(1), 6), (arti("close", 1), 7),
        ]
        for k, (spec, stage) in enumerate(seq):
            # Open and Pick on the same drawer share one navigation; the fridge gets its own.
            if k == 1 and spec.name == "pick":
                steps.append(PlanStep(spec, stage))
                continue
            steps += [nav(spec), PlanStep(spec, stage)]
    else:
        raise ChainConfigError(f"no task plan for {task!r}")
    return steps


# -- skill banks ------------------------------------------------------------------------


class SkillBank:
    kinds: tuple = SKILLS

    def controller(self, binding: SkillBinding) -> Controller:
        raise NotImplementedError

    def missing(self, kinds) -> list:
        return sorted(set(kinds) - set(self.kinds))


class OracleBank(SkillBank):
    def controller(self, binding: SkillBinding) -> Controller:
        return oracle_controller(binding)


class PolicyBank(SkillBank):
    """Learned skills stored as ``<kind>.ckpt`` files in one directory."""

    def __init__(self, directory):
        from .rl.checkpoint import load_policy

        self.directory = Path(directory)
        self.policies = {}
        for kind in SKILLS:
            path = self.directory / f"{kind}.ckpt"
            if path.exists():
                self.policies[kind] = load_policy(path)[0]
        self.kinds = tuple(self.policies)

    def controller(self, binding: SkillBinding) -> Controller:
        kind = binding.spec.name
        if kind not in self.policies:
            raise ChainConfigError(f"no policy for {kind}")
        return LearnedController(binding, self.policies[kind])


class LearnedController(Controller):
    def __init__(self, binding: SkillBinding, policy):
        self.b = binding
        self.policy = policy

    def reset(self, state):
        self.prev = np.zeros(6)

    def act(self, state):
        from .envs import nav_observation, skill_observation
        from .skills import DiscreteNavAction, translate_action
        from .world import Action

        if self.b.spec.name == "navigate":
            obs = nav_observation(state, self.b.nav_target, self.prev[:2])
            a, _, _ = self.policy.act(obs[None])
            action, stop = translate_action(DiscreteNavAction.from_index(int(a[0])))
        else:
            obs = skill_observation(self.b, state, self.prev)
            a, _, _ = self.policy.act(obs[None])
            action, stop = Action.from_vector(np.clip(a[0], -1, 1)), False
        self.prev = action.vector()
        return action, stop


def required_kinds(task: str) -> list:
    return {
        "tidyhouse": ["navigate", "pick", "place"],
        "preparegroceries": ["navigate", "pick", "place"],
        "settable": ["navigate", "pick", "place", "open_drawer", "close_drawer", "open_fridge", "close_fridge"],
    }[task]


# -- execution --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    variant: str = "mobile"
    nav_mode: str = "region"
    radius: float = 2.0
    handoff_sigma: float = 0.0
    stop_on_stall: bool = True  # skip the rest once a stage can no longer advance
    record_steps: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Transcript:
    episode_id: int
    task: str
    seed: int
    stages: list
    completed: int
    skills: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    error: Optional[str] = None
    steps: list = field(default_factory=list)

    @property
    def vector(self) -> list:
        return [1] * self.completed + [0] * (len(self.stages) - self.completed)

    def to_dict(self, with_steps: bool = False) -> dict:
        d = asdict(self)
        d["vector"] = self.vector
        if not with_steps:
            d.pop("steps")
        return d


def random_start(ctx, rng: np.random.Generator) -> Pose2D:
    """Collision-free base pose anywhere in the main navigable component."""
    cell = int(rng.choice(ctx.main_indices))
    x, y = ctx.grid.index_center(cell)
    return Pose2D(x, y, float(rng.uniform(-math.pi, math.pi)))


def _perturb(state: SceneState, sigma: float, rng: np.random.Generator) -> SceneState:
    if sigma <= 0:
        return state
    b = state.robot.base
    for _ in range(100):
        dx, dy = rng.normal(0.0, sigma, 2)
        if state.grid.is_navigable_xy(b.x + dx, b.y + dy):
            nb = Pose2D(b.x + dx, b.y + dy, b.theta)
            return replace(state, robot=replace(state.robot, base=nb))
    return state


def execute_chain(episode: EpisodeSpec, bank: SkillBank, seed: int = 0, cfg: ChainConfig = ChainConfig()) -> Transcript:
    task = episode.task
    plan = task_plan(task, episode, cfg.variant, cfg.nav_mode)
    missing = bank.missing({s.spec.name for s in plan})
    if missing:
        raise ChainConfigError(f"skill bank lacks {', '.join(missing)}")
    ctx = scene_context(episode.layout.resolve())
    rng = np.random.default_rng([seed, episode.episode_id])
    state = make_scene(episode, random_start(ctx, rng))
    tracker = StageTracker(task, episode)
    tr = Transcript(episode.episode_id, task, seed, [s for s, _ in tracker.stages], 0)
    clock = [0]

    def hook(s):
        clock[0] += 1
        tracker.update(s, clock[0])
        if cfg.record_steps:
            tr.steps.append({"t": clock[0], "base": s.robot.base.to_dict(), "ee": s.robot.ee.tolist(),
                             "holding": s.robot.holding, "stage": tracker.completed})

    torch_ctx = _torch_seed(seed * 7919 + episode.episode_id) if isinstance(bank, PolicyBank) else None
    try:
        for k, step in enumerate(plan):
            binding = SkillBinding(step.spec, ctx, radius=cfg.radius)
            state = replace(state, collision_force_accum=0.0, collision_force_step=0.0)
            run = run_skill(binding, bank.controller(binding), state, stop_on="termination", step_hook=hook)
            state = run.state
            if step.spec.name == "navigate":
                state = _perturb(state, cfg.handoff_sigma, rng)
            state = reset_arm(state)
            tracker.update(state, clock[0])
            tr.skills.append({
                "skill": step.spec.name, "label": step.label, "variant": step.spec.effective_variant,
                "steps": run.steps,
                "success": bool(run.success if step.spec.name == "navigate" else skill_goal_met(step.spec, state)), "declared_success": run.declared_success,
                "failure": run.failure,
            })
            if cfg.stop_on_stall and step.stage is not None and tracker.completed <= step.stage:
                break
    except Exception as e:  # simulator errors fail the remaining stages
        tr.error = f"{type(e).__name__}: {e}"
    finally:
        if torch_ctx is not None:
            torch_ctx.__exit__(None, None, None)
    tr.completed = tracker.completed
    tr.transitions = tracker.transitions
    return tr


def _torch_seed(seed: int):
    import torch

    ctx = torch.random.fork_rng()
    ctx.__enter__()
    torch.manual_seed(seed)
    return ctx


# -- reporting ----------------------------------------------------------------------------


@dataclass
class CompletionReport:
    task: str
    stages: list
    mean: list
    stderr: list
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        rows = ["stage,mean,stderr"]
        rows += [f"{s},{m:.6f},{e:.6f}" for s, m, e in zip(self.stages, self.mean, self.stderr)]
        return "\n".join(rows) + "\n"

    @property
    def success_rate(self) -> float:
        return self.mean[-1] if self.mean else 0.0


def progressive_rates(transcripts: Sequence) -> CompletionReport:
    """Per-stage mean and standard error over all episodes and seeds."""
    if not transcripts:
        raise ValueError("no transcripts")
    tasks = {t.task if isinstance(t, Transcript) else t["task"] for t in transcripts}
    if len(tasks) != 1:
        raise ValueError(f"transcripts mix tasks: {sorted(tasks)}")
    task = tasks.pop()
    vecs = np.array([t.vector if isinstance(t, Transcript) else t["vector"] for t in transcripts], dtype=float)
    for v in vecs:
        if np.any(np.diff(v) > 0):
            raise ValueError("stage vector is not a monotone prefix")
    n = len(vecs)
    mean = vecs.mean(0)
    stderr = vecs.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return CompletionReport(task, [s for s, _ in STAGES[task]], mean.tolist(), stderr.tolist(), n)


def write_report(out_dir, report: CompletionReport, name: str = "report") -> None:
    out = Path(out_dir)
    (out / f"{name}.csv").write_text(report.to_csv())
    (out / f"{name}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


# -- ablations ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Ablation:
    """One cell of the variant matrix.

    ``init_variant``, ``yaw_uniform`` and ``nav_collision`` only change how
    skills are trained; with scripted skills they evaluate like their base
    configuration.
    """

    name: str
    variant: str
    nav_mode: str
    init_variant: Optional[str] = None
    radius: float = 2.0
    yaw_uniform: bool = False
    nav_collision: bool = False

    def chain_config(self, **kw) -> ChainConfig:
        return ChainConfig(variant=self.variant, nav_mode=self.nav_mode, radius=self.radius, **kw)


ABLATIONS = {
    a.name: a
    for a in (
        Ablation("S+P", "stationary", "point"),
        Ablation("M+P", "mobile", "point"),
        Ablation("S(L)+P", "stationary", "point", init_variant="mobile"),
        Ablation("S+P(C)", "stationary", "point", nav_collision=True),
        Ablation("M+P(C)", "mobile", "point", nav_collision=True),
        Ablation("M3", "mobile", "region"),
        Ablation("M(S)+R", "mobile", "region", radius=1.5),
        Ablation("M(L1)+R", "mobile", "region", radius=2.5),
        Ablation("M(L2)+R", "mobile", "region", radius=4.0),
        Ablation("M(L3)+R", "mobile", "region", yaw_uniform=True),
    )
}


def get_ablation(name: str) -> Ablation:
    if name not in ABLATIONS:
        raise ChainConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)} or handoff_noise")
    return ABLATIONS[name]


def run_chains(episodes, bank: SkillBank, seeds: Sequence[int], cfg: ChainConfig) -> list:
    return [execute_chain(e, bank, s, cfg) for s in seeds for e in episodes]


def manipulation_success(transcripts: Sequence[Transcript]) -> float:
    """Fraction of manipulation skill invocations that reached their goal."""
    runs = [s for t in transcripts for s in t.skills if s["skill"] in MANIP_SKILLS]
    return float(np.mean([s["success"] for s in runs])) if runs else 0.0


@dataclass
class HandoffRow:
    sigma: float
    mobile_skill: float
    stationary_skill: float
    mobile_task: float
    stationary_task: float
    n: int

    @property
    def gap(self) -> float:
        return self.mobile_skill - self.stationary_skill


def handoff_noise(episodes, sigmas: Sequence[float], seed: int = 0, bank: Optional[SkillBank] = None) -> list:
    """Scripted chains with Gaussian noise on every navigation end pose."""
    bank = bank or OracleBank()
    rows = []
    for sigma in sigmas:
        res = {}
        for variant in ("mobile", "stationary"):
            cfg = ChainConfig(variant=variant, nav_mode="region", handoff_sigma=sigma, stop_on_stall=False)
            trs = run_chains(episodes, bank, [seed], cfg)
            res[variant] = (manipulation_success(trs), float(np.mean([t.vector[-1] for t in trs])))
        rows.append(HandoffRow(float(sigma), res["mobile"][0], res["stationary"][0], res["mobile"][1],
                               res["stationary"][1], len(episodes)))
    return rows


def handoff_csv(rows: Sequence[HandoffRow]) -> str:
    out = ["sigma,mobile_skill_success,stationary_skill_success,gap,mobile_task_success,stationary_task_success,n"]
    for r in rows:
        out.append(f"{r.sigma},{r.mobile_skill:.6f},{r.stationary_skill:.6f},{r.gap:.6f},"
                   f"{r.mobile_task:.6f},{r.stationary_task:.6f},{r.n}")
    return "\n".join(out) + "\n"
