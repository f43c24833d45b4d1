"""Deterministic 2D tabletop: a gripper and three objects, grasp and push tasks.

Observation layout (width 33)::

    [gripper x, gripper y, grip,
     slot0: x, y, color one-hot (4), kind one-hot (3), held,
     slot1: ..., slot2: ...]

Slot order is shuffled per episode, so object identity is only available
through the color and kind features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

COLORS = ("red", "green", "white", "gray")
KINDS = ("glass", "box", "can")
OBS_DIM = 3 + 3 * (2 + len(COLORS) + len(KINDS) + 1)
ACTION_DIM = 3


@dataclass(frozen=True)
class EnvConfig:
    step_gain: float = 0.06
    grasp_radius: float = 0.05
    push_radius: float = 0.03
    success_tol: float = 0.08
    grip_close: float = 0.7
    grip_open: float = 0.3
    max_steps: int = 50
    min_separation: float = 0.15
    spawn_margin: float = 0.1
    max_placement_tries: int = 100


DEFAULT_ENV = EnvConfig()


@dataclass(frozen=True)
class TaskSpec:
    id: int
    verb: str
    subject: Tuple[str, str]
    target: Optional[Tuple[str, str]] = None
    scene: Tuple[Tuple[str, str], ...] = (("red", "glass"), ("green", "box"), ("white", "box"))

    def __post_init__(self):
        if self.verb not in ("grasp", "push"):
            raise ValueError(f"unknown verb {self.verb!r}")
        if (self.verb == "push") != (self.target is not None):
            raise ValueError("push tasks need a target; grasp tasks must not have one")

    @property
    def name(self) -> str:
        s = " ".join(self.subject)
        if self.verb == "grasp":
            return f"grasp the {s}"
        return f"push the {s} towards the {' '.join(self.target)}"


_CAN_SCENE = (("red", "glass"), ("green", "box"), ("gray", "can"))

TASKS: Dict[int, TaskSpec] = {
    1: TaskSpec(1, "grasp", ("red", "glass")),
    2: TaskSpec(2, "push", ("green", "box"), ("red", "glass")),
    3: TaskSpec(3, "push", ("green", "box"), ("white", "box")),
    4: TaskSpec(4, "push", ("white", "box"), ("green", "box")),
    5: TaskSpec(5, "grasp", ("green", "box")),
    6: TaskSpec(6, "grasp", ("gray", "can"), scene=_CAN_SCENE),
    7: TaskSpec(7, "push", ("gray", "can"), ("green", "box"), scene=_CAN_SCENE),
}
TRAIN_TASKS = (1, 2, 3, 4)
HELD_OUT_TASKS = (5, 6, 7)


def get_task(task_id: int) -> TaskSpec:
    try:
        return TASKS[int(task_id)]
    except KeyError:
        raise ValueError(f"unknown task id {task_id}") from None


@dataclass
class ObjectState:
    color: str
    kind: str
    pos: np.ndarray
    held: bool = False


@dataclass
class WorldState:
    gripper: np.ndarray
    grip: float
    objects: List[ObjectState]
    steps: int = 0
    done: bool = False

    def copy(self) -> "WorldState":
        return WorldState(self.gripper.copy(), self.grip,
                          [replace(o, pos=o.pos.copy()) for o in self.objects],
                          self.steps, self.done)

    def held_index(self) -> Optional[int]:
        for i, o in enumerate(self.objects):
            if o.held:
                return i
        return None


class PlacementError(RuntimeError):
    pass


def reset(task: TaskSpec, rng: np.random.Generator, cfg: EnvConfig = DEFAULT_ENV) -> WorldState:
    lo, hi = cfg.spawn_margin, 1.0 - cfg.spawn_margin
    n = len(task.scene) + 1
    for _ in range(cfg.max_placement_tries):
        pts = rng.uniform(lo, hi, size=(n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if d[np.triu_indices(n, 1)].min() >= cfg.min_separation:
            break
    else:
        raise PlacementError(f"no valid layout after {cfg.max_placement_tries} tries")
    order = rng.permutation(len(task.scene))
    objects = [ObjectState(task.scene[k][0], task.scene[k][1], pts[1 + s].copy())
               for s, k in enumerate(order)]
    return WorldState(pts[0].copy(), 0.5, objects)


def find_object(state: WorldState, desc: Tuple[str, str]) -> int:
    for i, o in enumerate(state.objects):
        if (o.color, o.kind) == tuple(desc):
            return i
    raise LookupError(f"no {' '.join(desc)} in the scene")


def success(state: WorldState, task: TaskSpec, cfg: EnvConfig = DEFAULT_ENV) -> bool:
    subj = state.objects[find_object(state, task.subject)]
    if task.verb == "grasp":
        return subj.held
    tgt = state.objects[find_object(state, task.target)]
    return (not subj.held) and float(np.linalg.norm(subj.pos - tgt.pos)) <= cfg.success_tol


def step(state: WorldState, action, task: TaskSpec,
         cfg: EnvConfig = DEFAULT_ENV) -> Tuple[WorldState, float, bool, bool]:
    """Advance one step. Returns ``(next_state, reward, terminal, success)``."""
    if state.done:
        raise RuntimeError("episode already terminated")
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != ACTION_DIM or not np.all(np.isfinite(a)):
        raise ValueError("action must be 3 finite numbers")
    a = np.clip(a, -1.0, 1.0)
    s = state.copy()

    new_g = np.clip(s.gripper + cfg.step_gain * a[:2], 0.0, 1.0)
    disp = new_g - s.gripper
    s.gripper = new_g
    moved = bool(np.any(disp != 0.0))
    for o in s.objects:
        if o.held:
            o.pos = new_g.copy()
        elif moved and np.linalg.norm(new_g - o.pos) < cfg.push_radius:
            o.pos = np.clip(o.pos + disp, 0.0, 1.0)

    s.grip = float((a[2] + 1.0) / 2.0)
    h = s.held_index()
    if h is not None and s.grip < cfg.grip_open:
        s.objects[h].held = False
    elif h is None and s.grip > cfg.grip_close:
        dists = [np.linalg.norm(o.pos - new_g) for o in s.objects]
        k = int(np.argmin(dists))
        if dists[k] <= cfg.grasp_radius:
            s.objects[k].held = True
            s.objects[k].pos = new_g.copy()

    s.steps += 1
    ok = success(s, task, cfg)
    terminal = ok or s.steps >= cfg.max_steps
    s.done = terminal
    return s, (1.0 if ok else 0.0), terminal, ok


def observe(state: WorldState) -> np.ndarray:
    obs = [state.gripper[0], state.gripper[1], state.grip]
    for o in state.objects:
        color = [0.0] * len(COLORS)
        color[COLORS.index(o.color)] = 1.0
        kind = [0.0] * len(KINDS)
        kind[KINDS.index(o.kind)] = 1.0
        obs += [o.pos[0], o.pos[1], *color, *kind, 1.0 if o.held else 0.0]
    return np.asarray(obs, dtype=np.float32)


class TableEnv:
    """Stateful wrapper around :func:`reset` / :func:`step` for rollouts."""

    def __init__(self, cfg: EnvConfig = DEFAULT_ENV):
        self.cfg = cfg
        self.state: Optional[WorldState] = None
        self.task: Optional[TaskSpec] = None

    def reset(self, task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
        self.task = task
        self.state = reset(task, rng, self.cfg)
        return observe(self.state)

    def step(self, action) -> Tuple[np.ndarray, float, bool, bool]:
        self.state, r, term, ok = step(self.state, action, self.task, self.cfg)
        return observe(self.state), r, term, ok


# -- scripted demonstrator ---------------------------------------------------

@dataclass
class Demonstration:
    observations: np.ndarray
    task_id: int = 0

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)

    def __len__(self) -> int:
        return self.observations.shape[0]


class DemoGenerationError(RuntimeError):
    pass


def _move_toward(pos: np.ndarray, goal: np.ndarray, speed: float, gain: float) -> np.ndarray:
    delta = goal - pos
    dist = float(np.linalg.norm(delta))
    max_step = speed * gain
    if dist <= max_step:
        return delta / gain
    return delta / dist * speed


def _segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(a + t * ab - p))


def _controller(task: TaskSpec, rng: np.random.Generator, cfg: EnvConfig):
    """Closed-loop waypoint policy with per-waypoint jitter."""
    speed = rng.uniform(0.3, 0.55)
    jitter = 0.02
    via: List[np.ndarray] = []
    state_memo = {"via_built": False}

    def act(s: WorldState) -> np.ndarray:
        g = s.gripper
        subj = s.objects[find_object(s, task.subject)].pos
        if task.verb == "grasp":
            if np.linalg.norm(g - subj) <= cfg.grasp_radius * 0.95 and \
                    np.linalg.norm(g - subj) >= cfg.push_radius:
                return np.array([0.0, 0.0, 1.0])
            away = g - subj
            away = away / (np.linalg.norm(away) + 1e-9)
            goal = subj + 0.04 * away
        else:
            tgt = s.objects[find_object(s, task.target)].pos
            u = tgt - subj
            u = u / (np.linalg.norm(u) + 1e-9)
            behind = subj - 0.06 * u
            rel = g - subj
            along = float(rel @ u)
            lateral = float(np.linalg.norm(rel - along * u))
            if along < -0.02 and lateral < 0.012:
                # aligned behind the subject: push straight through
                step_len = min(1.0, max(0.6, (np.linalg.norm(tgt - subj) - 0.02) / cfg.step_gain))
                return np.array([*(u * step_len), -1.0])
            goal = behind
            if _segment_point_distance(g, goal, subj) < 0.045:
                perp = np.array([-u[1], u[0]])
                if float(perp @ rel) < 0:
                    perp = -perp
                goal = subj + 0.08 * perp - 0.04 * u
        if not state_memo["via_built"]:
            state_memo["via_built"] = True
            n_via = 1 if np.linalg.norm(goal - g) > 0.25 else 0
            for k in range(n_via):
                mid = g + (goal - g) * (k + 1) / (n_via + 1)
                via.append(np.clip(mid + rng.normal(0, jitter, 2), 0.05, 0.95))
        while via and np.linalg.norm(via[0] - g) < 0.02:
            via.pop(0)
        if via:
            goal = via[0]
        else:
            goal = goal + rng.normal(0, jitter * 0.25, 2)
        mv = _move_toward(g, goal, speed, cfg.step_gain)
        grip = -1.0 if task.verb == "push" else 0.0
        return np.array([mv[0], mv[1], grip])

    return act


def scripted_demo(task: TaskSpec, rng: np.random.Generator, cfg: EnvConfig = DEFAULT_ENV,
                  max_attempts: int = 10) -> Demonstration:
    for _ in range(max_attempts):
        s = reset(task, rng, cfg)
        act = _controller(task, rng, cfg)
        frames = [observe(s)]
        ok = False
        while not s.done:
            s, _, _, ok = step(s, act(s), task, cfg)
            frames.append(observe(s))
        if ok:
            return Demonstration(np.stack(frames), task.id)
    raise DemoGenerationError(f"task {task.id}: no successful demo in {max_attempts} attempts")


def generate_demos(task_ids: Iterable[int], per_task: int, seed: int,
                   cfg: EnvConfig = DEFAULT_ENV) -> List[Demonstration]:
    rng = np.random.default_rng(seed)
    out = []
    for tid in task_ids:
        task = get_task(tid)
        out.extend(scripted_demo(task, rng, cfg) for _ in range(per_task))
    return out


# -- dataset I/O -------------------------------------------------------------

DEMO_FORMAT = "sstrl-demos"
DEMO_VERSION = 1


class DemoFormatError(ValueError):
    pass


def write_demos(path: str | Path, demos: Sequence[Demonstration]) -> None:
    """One JSON object per line after a header line.

    Record fields: ``task_id``, ``n`` (frames), ``width``, ``frames`` (row-major,
    float32 values written with round-trip precision).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": DEMO_FORMAT, "version": DEMO_VERSION,
                             "count": len(demos)}) + "\n")
        for d in demos:
            obs = d.observations
            rec = {"task_id": int(d.task_id), "n": int(obs.shape[0]), "width": int(obs.shape[1]),
                   "frames": [float(x) for x in obs.reshape(-1)]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_demos(path: str | Path) -> List[Demonstration]:
    demos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DemoFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if lineno == 1:
                if rec.get("format") != DEMO_FORMAT or rec.get("version") != DEMO_VERSION:
                    raise DemoFormatError(f"{path}:1: not a {DEMO_FORMAT} v{DEMO_VERSION} file")
                continue
            try:
                n, width = int(rec["n"]), int(rec["width"])
                frames = np.asarray(rec["frames"], dtype=np.float32)
                if frames.size != n * width:
                    raise ValueError(f"expected {n * width} values, found {frames.size}")
                demos.append(Demonstration(frames.reshape(n, width), int(rec["task_id"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise DemoFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
    return demos


@dataclass
class DemoSet:
    """Padded demo tensor for batched encoding; task ids are for evaluation only."""

    frames: np.ndarray           # [N, L_max, OBS_DIM]
    lengths: np.ndarray          # [N]
    task_ids: np.ndarray = field(repr=False)

    @classmethod
    def from_demos(cls, demos: Sequence[Demonstration]) -> "DemoSet":
        if not demos:
            raise ValueError("empty demo list")
        L = max(len(d) for d in demos)
        W = demos[0].observations.shape[1]
        frames = np.zeros((len(demos), L, W), dtype=np.float32)
        for i, d in enumerate(demos):
            frames[i, :len(d)] = d.observations
        lengths = np.array([len(d) for d in demos], dtype=np.int64)
        return cls(frames, lengths, np.array([d.task_id for d in demos], dtype=np.int64))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def indices_for(self, task_ids: Iterable[int]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.task_ids, list(task_ids)))
