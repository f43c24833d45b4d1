"""Training loop, ablation variants, evaluation protocols and checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from . import __version__
from .behavior import BehaviorHierarchy, DemoStimulus
from .container import CheckpointError, read_container, write_container
from .ddpg import ActorCritic, ReplayBuffer, critic_loss, critic_targets, policy_loss
from .encoders import DemoEncoder, StateEncoder
from .gwr import (ACTION_NET_PARAMS, BEHAVIOR_NET_PARAMS, INTENTION_NET_PARAMS, GwrNetwork,
                  GwrParams)
from .nn import Adam, named_params
from .tablesim import (ACTION_DIM, HELD_OUT_TASKS, OBS_DIM, TRAIN_TASKS, DemoSet, EnvConfig,
                       Demonstration, TableEnv, generate_demos, get_task, read_demos, scripted_demo)
from .tinet import SslBuffer, TaskInferenceNet, contrastive_loss, behavior_matching_loss, temporal_crop

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_act_int", "tinet_only", "no_tinet", "single_task")
SETTINGS = ("fixed", "continual")
METRICS_FORMAT = "sstrl-metrics"
CHECKPOINT_KIND = "sstrl-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    setting: str = "fixed"
    ablation: str = "full"
    episodes: int = 20_000
    tasks: List[int] = field(default_factory=lambda: list(TRAIN_TASKS))
    milestones: List[int] = field(default_factory=lambda: [0, 5_000, 10_000, 15_000])
    seed: int = 0
    demos_per_task: int = 1000
    demo_seed: int = 1234
    demo_path: Optional[str] = None
    # network sizes
    feature_dim: int = 32
    latent_dim: int = 64
    state_hidden: List[int] = field(default_factory=lambda: [64, 64])
    tinet_hidden: List[int] = field(default_factory=lambda: [128, 128])
    policy_hidden: int = 64
    # optimisation
    lr: float = 1e-3
    batch_size: int = 256
    ssl_batch_size: int = 256
    gamma: float = 0.99
    temperature: float = 0.1
    rho: float = 0.005
    noise_start: float = 0.2
    noise_end: float = 0.05
    noise_decay_fraction: float = 0.5
    ssl_capacity: int = 100_000
    replay_capacity: int = 1_000_000
    warmup: int = 1000
    update_every: int = 1
    # growing networks
    gwr_act: Dict[str, float] = field(default_factory=lambda: asdict(ACTION_NET_PARAMS))
    gwr_int: Dict[str, float] = field(default_factory=lambda: asdict(INTENTION_NET_PARAMS))
    gwr_b: Dict[str, float] = field(default_factory=lambda: asdict(BEHAVIOR_NET_PARAMS))
    env: Dict[str, float] = field(default_factory=lambda: asdict(EnvConfig()))
    log_every: int = 100

    def validate(self) -> "RunConfig":
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        for t in self.tasks:
            if t in HELD_OUT_TASKS:
                raise ConfigError(f"task {t} is held out for one-shot evaluation")
            get_task(t)
        if self.setting == "continual":
            ms = self.milestones
            if len(ms) != len(self.tasks):
                raise ConfigError("need one milestone per task")
            if ms[0] != 0 or any(b <= a for a, b in zip(ms, ms[1:])):
                raise ConfigError("milestones must start at 0 and be strictly increasing")
        if self.update_every < 1 or self.batch_size < 2 or self.ssl_batch_size < 2:
            raise ConfigError("update_every >= 1 and batch sizes >= 2 required")
        try:
            for key in ("gwr_act", "gwr_int", "gwr_b"):
                GwrParams(**getattr(self, key))
            EnvConfig(**self.env)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def rep_dim(self) -> int:
        if self.ablation == "no_act_int":
            return self.latent_dim
        if self.ablation == "single_task":
            return 0
        return self.latent_dim + self.feature_dim

    def env_config(self) -> EnvConfig:
        return EnvConfig(**self.env)

    def active_tasks(self, episode: int) -> List[int]:
        if self.setting == "fixed":
            return list(self.tasks)
        return [t for t, m in zip(self.tasks, self.milestones) if m <= episode]

    def noise_scale(self, episode: int) -> float:
        horizon = max(1.0, self.noise_decay_fraction * self.episodes)
        frac = min(1.0, episode / horizon)
        return self.noise_start + frac * (self.noise_end - self.noise_start)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- learners ----------------------------------------------------------------

def _seed_torch(seed: int) -> None:
    torch.manual_seed(seed)


class Learner:
    """Demonstration-conditioned agent. Sees demo frames, never task labels."""

    def __init__(self, cfg: RunConfig, frames: np.ndarray, lengths: np.ndarray, seed: int):
        self.cfg = cfg
        self.variant = cfg.ablation
        ss = np.random.SeedSequence(seed)
        torch_seed, rng_seed, gwr_seed = ss.generate_state(3)
        _seed_torch(int(torch_seed))
        self.rng = np.random.default_rng(int(rng_seed))
        self.frames = torch.as_tensor(frames)
        self.lengths = np.asarray(lengths)
        self.f_x = StateEncoder(OBS_DIM, cfg.feature_dim, cfg.state_hidden)
        self.f_d = DemoEncoder(self.f_x, cfg.latent_dim)
        self.f_inf = None
        if self.variant != "no_tinet":
            self.f_inf = TaskInferenceNet(cfg.latent_dim, cfg.rep_dim, cfg.tinet_hidden)
        self.ac = ActorCritic(cfg.feature_dim, cfg.rep_dim, ACTION_DIM, cfg.policy_hidden, cfg.rho)
        self.hierarchy: Optional[BehaviorHierarchy] = None
        if self.variant != "tinet_only":
            self.hierarchy = BehaviorHierarchy(
                cfg.latent_dim, cfg.feature_dim, int(gwr_seed),
                GwrParams(**cfg.gwr_act), GwrParams(**cfg.gwr_int), GwrParams(**cfg.gwr_b),
                direct=(self.variant == "no_act_int"))
        self.replay = ReplayBuffer(cfg.replay_capacity, OBS_DIM, ACTION_DIM)
        self.ssl = None
        if self.f_inf is not None:
            self.ssl = SslBuffer(cfg.ssl_capacity, cfg.rep_dim)
        self.opt = Adam(self._params(), lr=cfg.lr)
        self.z: Optional[np.ndarray] = None
        self.demo_index: Optional[int] = None
        self.env_steps = 0

    def _params(self) -> Dict[str, torch.Tensor]:
        return named_params(f_x=self.f_x, f_d=self.f_d.cell, f_inf=self.f_inf,
                            actor=self.ac.actor, critic=self.ac.critic)

    def modules(self) -> Dict[str, nn.Module]:
        mods = {"f_x": self.f_x, "f_d": self.f_d.cell, "actor": self.ac.actor,
                "critic": self.ac.critic, "actor_target": self.ac.actor_target,
                "critic_target": self.ac.critic_target}
        if self.f_inf is not None:
            mods["f_inf"] = self.f_inf
        return mods

    # -- task inference ----------------------------------------------------
    def _latents(self, demo_idx, starts, ends) -> torch.Tensor:
        return self.f_d(self.frames[torch.as_tensor(demo_idx)], starts, ends)

    def _stimuli(self, demo_idx: np.ndarray):
        """Movement latents, effect features and complete latents (no gradient)."""
        demo_idx = np.asarray(demo_idx)
        n = self.lengths[demo_idx]
        with torch.no_grad():
            both = self._latents(np.concatenate([demo_idx, demo_idx]),
                                 np.zeros(2 * len(demo_idx), dtype=np.int64),
                                 np.concatenate([n - 2, n - 1]))
            last = self.frames[torch.as_tensor(demo_idx), torch.as_tensor(n - 1)]
            eff = self.f_x(last)
        k = len(demo_idx)
        return (both[:k].double().numpy(), eff.double().numpy(), both[k:].double().numpy())

    def behavior_embeddings(self, demo_idx: np.ndarray) -> np.ndarray:
        move, eff, comp = self._stimuli(demo_idx)
        h = self.hierarchy
        out = np.empty((len(move), h.embedding_dim), dtype=np.float32)
        for i in range(len(move)):
            if h.direct:
                inp = comp[i]
            else:
                inp = np.concatenate([h.g_act.bmu_weight(move[i]), h.g_int.bmu_weight(eff[i])])
            out[i] = h.g_b.bmu_weight(inp)
        return out

    def infer(self, demo_idx, starts=None, ends=None) -> torch.Tensor:
        """Task representations for demo ranges (defaults to complete demos); traced."""
        demo_idx = np.asarray(demo_idx)
        if self.variant == "no_tinet":
            return torch.as_tensor(self.behavior_embeddings(demo_idx))
        if starts is None:
            starts = np.zeros(len(demo_idx), dtype=np.int64)
            ends = self.lengths[demo_idx] - 1
        return self.f_inf(self._latents(demo_idx, starts, ends))

    def task_representation(self, frames: np.ndarray, start: int = 0, end: Optional[int] = None) -> np.ndarray:
        """Task representation of an arbitrary (e.g. unseen) demonstration range."""
        obs = torch.as_tensor(np.asarray(frames, dtype=np.float32))
        end = obs.shape[0] - 1 if end is None else end
        with torch.no_grad():
            if self.variant == "no_tinet":
                n = end - start + 1
                lat = self.f_d(obs[None].expand(2, -1, -1), torch.tensor([start, start]),
                               torch.tensor([end - 1 if n > 1 else end, end]))
                eff = self.f_x(obs[end])
                stim = DemoStimulus(lat[0].double().numpy(), eff.double().numpy(), lat[1].double().numpy())
                return self.hierarchy.lookup(stim).astype(np.float32)
            lat = self.f_d(obs[None], torch.tensor([start]), torch.tensor([end]))
            return self.f_inf(lat)[0].numpy()

    # -- episode hooks -------------------------------------------------------
    def begin_episode(self, demo_index: int) -> Dict[str, Any]:
        """Behavior lookup, hierarchy adaptation, crop insertion and task inference."""
        self.demo_index = int(demo_index)
        n = int(self.lengths[demo_index])
        target = None
        if self.hierarchy is not None:
            move, eff, comp = self._stimuli(np.array([demo_index]))
            stim = DemoStimulus(move[0], eff[0], comp[0])
            target = self.hierarchy.lookup(stim)
            self.hierarchy.adapt(stim)
        if self.ssl is not None:
            u, v = temporal_crop(n, self.rng)
            self.ssl.add(self.demo_index, u, v, target if self.variant in ("full", "no_act_int") else None)
        with torch.no_grad():
            self.z = self.infer(np.array([demo_index]))[0].numpy()
        return {"nodes": self.hierarchy.node_counts() if self.hierarchy else {}}

    def condition(self, z: np.ndarray) -> None:
        self.z = np.asarray(z, dtype=np.float32)

    def act(self, obs: np.ndarray, noise: float) -> np.ndarray:
        with torch.no_grad():
            x = self.f_x(torch.as_tensor(obs[None]))
            a = self.ac.pi(x, torch.as_tensor(self.z[None])).double().numpy()[0]
        if noise > 0:
            a = a + self.rng.normal(0.0, noise, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def observe(self, obs, action, reward, next_obs, terminal) -> Dict[str, float]:
        self.replay.add(obs, self.demo_index, action, reward, next_obs, terminal)
        self.env_steps += 1
        if self.env_steps % self.cfg.update_every:
            return {}
        return self.update()

    # -- learning ------------------------------------------------------------
    def update(self) -> Dict[str, float]:
        cfg = self.cfg
        do_ssl = self.ssl is not None and len(self.ssl) >= cfg.warmup
        do_rl = len(self.replay) >= cfg.warmup
        if not (do_ssl or do_rl):
            return {}
        stats: Dict[str, float] = {}
        total = None

        # gather every demo range needed this step into one encoder pass
        idx_parts, s_parts, e_parts = [], [], []
        if do_ssl:
            sd, crop, tgt = self.ssl.sample(cfg.ssl_batch_size, self.rng)
            idx_parts += [sd, sd]
            s_parts += [np.zeros(len(sd), dtype=np.int64), crop[:, 0]]
            e_parts += [self.lengths[sd] - 1, crop[:, 1]]
        if do_rl:
            batch = self.replay.sample(cfg.batch_size, self.rng)
            uniq, inv = np.unique(batch.demo, return_inverse=True)
            if self.variant != "no_tinet":
                idx_parts.append(uniq)
                s_parts.append(np.zeros(len(uniq), dtype=np.int64))
                e_parts.append(self.lengths[uniq] - 1)
        z_all = None
        if idx_parts:
            z_all = self.f_inf(self._latents(np.concatenate(idx_parts), np.concatenate(s_parts),
                                             np.concatenate(e_parts)))
        off = 0
        if do_ssl:
            k = cfg.ssl_batch_size
            z_c, z_j = z_all[:k], z_all[k:2 * k]
            off = 2 * k
            l_c = contrastive_loss(z_c, z_j, cfg.temperature)
            total = l_c
            stats["l_c"] = l_c.item()
            if self.variant in ("full", "no_act_int"):
                l_bm = behavior_matching_loss(z_c, torch.as_tensor(tgt))
                total = total + l_bm
                stats["l_bm"] = l_bm.item()
        if do_rl:
            if self.variant == "no_tinet":
                z = torch.as_tensor(self.behavior_embeddings(uniq))[torch.as_tensor(inv)]
            else:
                z = z_all[off:][torch.as_tensor(inv)]
            x = self.f_x(torch.as_tensor(batch.obs))
            with torch.no_grad():
                nx = self.f_x(torch.as_tensor(batch.next_obs))
            y = critic_targets(self.ac, nx, z, torch.as_tensor(batch.rew),
                               torch.as_tensor(batch.term), cfg.gamma)
            l_q = critic_loss(self.ac, x, z, torch.as_tensor(batch.act), y)
            l_pi = policy_loss(self.ac, x, z)
            total = l_q + l_pi if total is None else total + l_q + l_pi
            stats["critic_loss"] = l_q.item()
            stats["mean_q"] = -l_pi.item()
        self.opt.step(total)
        if do_rl:
            self.ac.update_targets()
        return stats

    # -- checkpoint blocks ---------------------------------------------------
    def blocks(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {}
        for mname, mod in self.modules().items():
            for pname, t in mod.state_dict().items():
                out[f"{prefix}{mname}.{pname}"] = t.detach().numpy()
        if self.hierarchy is not None:
            for k, net in self.hierarchy.nets().items():
                out[f"{prefix}gwr.{k}.weights"] = net.W
                out[f"{prefix}gwr.{k}.habituation"] = net.h
        return out

    def gwr_meta(self) -> Dict[str, Any]:
        if self.hierarchy is None:
            return {}
        meta = {}
        for k, net in self.hierarchy.nets().items():
            doc = net.to_document()
            for node in doc["nodes"]:
                del node["weight"], node["habituation"]
            meta[k] = doc
        return meta

    def load_blocks(self, blocks: Dict[str, np.ndarray], gwr_meta: Dict[str, Any], prefix: str = "") -> None:
        for mname, mod in self.modules().items():
            sd = mod.state_dict()
            new = {}
            for pname, t in sd.items():
                key = f"{prefix}{mname}.{pname}"
                if key not in blocks:
                    raise CheckpointError(f"missing block {key!r}")
                arr = blocks[key]
                if tuple(arr.shape) != tuple(t.shape):
                    raise CheckpointError(f"block {key!r}: shape {arr.shape} != expected {tuple(t.shape)}")
                new[pname] = torch.as_tensor(arr.copy())
            mod.load_state_dict(new)
        if self.hierarchy is not None:
            for k in self.hierarchy.nets():
                doc = json.loads(json.dumps(gwr_meta[k]))
                W = blocks[f"{prefix}gwr.{k}.weights"]
                H = blocks[f"{prefix}gwr.{k}.habituation"]
                for r, node in enumerate(doc["nodes"]):
                    node["weight"] = [float(x) for x in W[r]]
                    node["habituation"] = float(H[r])
                net = GwrNetwork.from_document(doc)
                setattr(self.hierarchy, {"act": "g_act", "int": "g_int", "b": "g_b"}[k], net)


class SingleTaskLearner(Learner):
    """Unconditioned DDPG agent for one task (baseline)."""

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.variant = "single_task"
        ss = np.random.SeedSequence(seed)
        torch_seed, rng_seed, _ = ss.generate_state(3)
        _seed_torch(int(torch_seed))
        self.rng = np.random.default_rng(int(rng_seed))
        self.f_x = StateEncoder(OBS_DIM, cfg.feature_dim, cfg.state_hidden)
        self.ac = ActorCritic(cfg.feature_dim, 0, ACTION_DIM, cfg.policy_hidden, cfg.rho)
        self.f_inf = None
        self.hierarchy = None
        self.ssl = None
        self.replay = ReplayBuffer(cfg.replay_capacity, OBS_DIM, ACTION_DIM)
        self.opt = Adam(named_params(f_x=self.f_x, actor=self.ac.actor, critic=self.ac.critic), lr=cfg.lr)
        self.z = np.zeros(0, dtype=np.float32)
        self.demo_index = 0
        self.env_steps = 0

    def modules(self) -> Dict[str, nn.Module]:
        return {"f_x": self.f_x, "actor": self.ac.actor, "critic": self.ac.critic,
                "actor_target": self.ac.actor_target, "critic_target": self.ac.critic_target}

    def begin_episode(self, demo_index: int = 0) -> Dict[str, Any]:
        return {"nodes": {}}

    def task_representation(self, frames, start=0, end=None) -> np.ndarray:
        return np.zeros(0, dtype=np.float32)

    def act(self, obs: np.ndarray, noise: float) -> np.ndarray:
        with torch.no_grad():
            a = self.ac.pi(self.f_x(torch.as_tensor(obs[None]))).double().numpy()[0]
        if noise > 0:
            a = a + self.rng.normal(0.0, noise, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def update(self) -> Dict[str, float]:
        cfg = self.cfg
        if len(self.replay) < cfg.warmup:
            return {}
        b = self.replay.sample(cfg.batch_size, self.rng)
        x = self.f_x(torch.as_tensor(b.obs))
        with torch.no_grad():
            nx = self.f_x(torch.as_tensor(b.next_obs))
        y = critic_targets(self.ac, nx, None, torch.as_tensor(b.rew), torch.as_tensor(b.term), cfg.gamma)
        l_q = critic_loss(self.ac, x, None, torch.as_tensor(b.act), y)
        l_pi = policy_loss(self.ac, x, None)
        self.opt.step(l_q + l_pi)
        self.ac.update_targets()
        return {"critic_loss": l_q.item(), "mean_q": -l_pi.item()}


# -- the system: learner(s) + demo store --------------------------------------

class System:
    """Everything a checkpoint holds: config, demo store and learner(s)."""

    def __init__(self, cfg: RunConfig, demos: DemoSet):
        self.cfg = cfg.validate()
        self.demos = demos
        missing = [t for t in cfg.tasks if len(demos.indices_for([t])) == 0]
        if missing:
            raise ConfigError(f"no demonstrations for active task(s) {missing}")
        leak = set(np.unique(demos.task_ids).tolist()) & set(HELD_OUT_TASKS)
        if leak:
            raise ConfigError(f"held-out task demos {sorted(leak)} found in the training set")
        if cfg.ablation == "single_task":
            self.learners = {t: SingleTaskLearner(cfg, cfg.seed * 1000 + t) for t in cfg.tasks}
        else:
            self.learners = {0: Learner(cfg, demos.frames, demos.lengths, cfg.seed)}

    def learner_for(self, task_id: int) -> Learner:
        if self.cfg.ablation == "single_task":
            return self.learners[task_id]
        return self.learners[0]

    @property
    def main(self) -> Learner:
        return next(iter(self.learners.values()))

    def save(self, path: str | Path) -> None:
        blocks = {}
        gwr = {}
        for key, learner in self.learners.items():
            prefix = f"task{key}." if self.cfg.ablation == "single_task" else ""
            blocks.update(learner.blocks(prefix))
            gwr[str(key)] = learner.gwr_meta()
        meta = {"kind": CHECKPOINT_KIND, "version": CHECKPOINT_VERSION,
                "package_version": __version__, "config": self.cfg.to_dict(), "gwr": gwr}
        write_container(path, blocks, meta)

    @classmethod
    def load(cls, path: str | Path, demos: Optional[DemoSet] = None) -> "System":
        meta, blocks = read_container(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise CheckpointError(f"{path}: not an SSTRL checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        cfg = RunConfig.from_dict(meta["config"])
        if demos is None:
            demos = load_demo_store(cfg)
        system = cls(cfg, demos)
        for key, learner in system.learners.items():
            prefix = f"task{key}." if cfg.ablation == "single_task" else ""
            learner.load_blocks(blocks, meta["gwr"][str(key)], prefix)
        return system


def load_demo_store(cfg: RunConfig) -> DemoSet:
    if cfg.demo_path:
        demos = read_demos(cfg.demo_path)
        demos = [d for d in demos if d.task_id in cfg.tasks]
    else:
        demos = generate_demos(cfg.tasks, cfg.demos_per_task, cfg.demo_seed, cfg.env_config())
    return DemoSet.from_demos(demos)


# -- rollouts and evaluation ---------------------------------------------------

def rollout(learner: Learner, task_id: int, env_rng: np.random.Generator, env_cfg: EnvConfig,
            noise: float = 0.0, on_step: Optional[Callable] = None) -> Tuple[float, int, bool]:
    env = TableEnv(env_cfg)
    obs = env.reset(get_task(task_id), env_rng)
    total, steps, ok = 0.0, 0, False
    done = False
    while not done:
        a = learner.act(obs, noise)
        nobs, r, done, ok = env.step(a)
        if on_step is not None:
            on_step(obs, a, r, nobs, done)
        obs = nobs
        total += r
        steps += 1
    return total, steps, ok


def greedy_trajectory(learner: Learner, task_id: int, seed: int, env_cfg: EnvConfig) -> np.ndarray:
    """Observation sequence of a noise-free rollout (for reproducibility checks)."""
    frames = []
    env = TableEnv(env_cfg)
    obs = env.reset(get_task(task_id), np.random.default_rng(seed))
    frames.append(obs)
    done = False
    while not done:
        obs, _, done, _ = env.step(learner.act(obs, 0.0))
        frames.append(obs)
    return np.stack(frames)


class MetricsWriter:
    """Line-delimited JSON: a manifest line, then one record per test episode."""

    UNITS = {"episode": "index", "setting": "label", "ablation": "label", "seed": "int",
             "task": "task id", "reward": "total reward", "length": "steps",
             "nodes_act": "count", "nodes_int": "count", "nodes_b": "count",
             "l_bm": "loss", "l_c": "loss", "critic_loss": "loss"}

    def __init__(self, path: str | Path, cfg: RunConfig):
        cols = ["episode", "setting", "ablation", "seed", "task", "reward", "length"]
        if cfg.ablation not in ("tinet_only", "single_task"):
            cols += (["nodes_b"] if cfg.ablation == "no_act_int" else ["nodes_act", "nodes_int", "nodes_b"])
        if cfg.ablation in ("full", "no_act_int"):
            cols.append("l_bm")
        if cfg.ablation in ("full", "no_act_int", "tinet_only"):
            cols.append("l_c")
        cols.append("critic_loss")
        self.columns = cols
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(json.dumps({"format": METRICS_FORMAT, "version": 1, "columns": cols,
                                  "units": {c: self.UNITS[c] for c in cols}}) + "\n")
        self.rows = 0

    def write(self, row: Dict[str, Any]) -> None:
        rec = {c: row.get(c) for c in self.columns}
        self.fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        self.rows += 1

    def close(self) -> None:
        self.fh.close()


def read_metrics(path: str | Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != METRICS_FORMAT:
            raise ValueError(f"{path}: not a metrics file")
        rows = [json.loads(line) for line in fh if line.strip()]
    return header, rows


def _mean(xs: List[float]) -> Optional[float]:
    return float(np.mean(xs)) if xs else None


def run_sstrl(cfg: RunConfig, out_dir: str | Path, demos: Optional[DemoSet] = None,
              system: Optional[System] = None) -> System:
    """Train per the configured setting/ablation; writes metrics, checkpoint, manifest."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if demos is None:
        demos = load_demo_store(cfg)
    system = system or System(cfg, demos)
    env_cfg = cfg.env_config()
    ss = np.random.SeedSequence([cfg.seed, 7])
    teacher_rng, env_rng, test_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    metrics = MetricsWriter(out / "metrics.jsonl", cfg)
    write_manifest(out / "manifest.json", cfg, command="train")
    try:
        for ep in range(cfg.episodes):
            active = cfg.active_tasks(ep)
            # teacher side: pick a task and one of its demos
            task = int(teacher_rng.choice(active))
            demo_idx = int(teacher_rng.choice(demos.indices_for([task])))
            learner = system.learner_for(task)
            learner.begin_episode(demo_idx)
            losses: Dict[str, List[float]] = {}

            def on_step(o, a, r, no, done):
                for k, v in learner.observe(o, a, r, no, done).items():
                    losses.setdefault(k, []).append(v)

            rollout(learner, task, env_rng, env_cfg, cfg.noise_scale(ep), on_step)

            test_task = int(test_rng.choice(active))
            test_learner = system.learner_for(test_task)
            test_demo = int(test_rng.choice(demos.indices_for([test_task])))
            if cfg.ablation != "single_task":
                test_learner.condition(test_learner.task_representation(
                    demos.frames[test_demo, :demos.lengths[test_demo]]))
            reward, length, _ = rollout(test_learner, test_task, test_rng, env_cfg, 0.0)
            nodes = learner.hierarchy.node_counts() if learner.hierarchy is not None else {}
            metrics.write({
                "episode": ep, "setting": cfg.setting, "ablation": cfg.ablation, "seed": cfg.seed,
                "task": test_task, "reward": reward, "length": length,
                "nodes_act": nodes.get("act"), "nodes_int": nodes.get("int"), "nodes_b": nodes.get("b"),
                "l_bm": _mean(losses.get("l_bm", [])), "l_c": _mean(losses.get("l_c", [])),
                "critic_loss": _mean(losses.get("critic_loss", [])),
            })
            if cfg.log_every and (ep + 1) % cfg.log_every == 0:
                log.info("episode %d/%d active=%s test task %d reward %.0f nodes=%s",
                         ep + 1, cfg.episodes, active, test_task, reward, nodes)
    finally:
        metrics.close()
    system.save(out / "checkpoint.bin")
    return system


def write_manifest(path: str | Path, cfg: RunConfig, command: str, **extra: Any) -> None:
    doc = {"command": command, "package_version": __version__, "seed": cfg.seed,
           "config": cfg.to_dict(), **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _success_rate(results: List[bool]) -> float:
    return float(np.mean(results)) if results else 0.0


def eval_standard(system: System, tasks: Sequence[int], trials: int, seed: int) -> Dict[int, float]:
    """Greedy success rate per task, each trial conditioned on a random stored demo."""
    rng = np.random.default_rng(seed)
    env_cfg = system.cfg.env_config()
    out = {}
    for t in tasks:
        learner = system.learner_for(t)
        pool = system.demos.indices_for([t])
        res = []
        for _ in range(trials):
            if system.cfg.ablation != "single_task":
                d = int(rng.choice(pool))
                learner.condition(learner.task_representation(system.demos.frames[d, :system.demos.lengths[d]]))
            res.append(rollout(learner, t, rng, env_cfg)[2])
        out[t] = _success_rate(res)
    return out


def eval_incomplete(system: System, tasks: Sequence[int], demos_per_task: int = 10,
                    crops_per_demo: int = 10, seed: int = 0) -> Dict[str, Any]:
    """Success when conditioned on randomly cropped demos vs the complete demos."""
    rng = np.random.default_rng(seed)
    env_cfg = system.cfg.env_config()
    learner = system.main
    rows = []
    for t in tasks:
        pool = system.demos.indices_for([t])
        for _ in range(demos_per_task):
            d = int(rng.choice(pool))
            frames = system.demos.frames[d, :system.demos.lengths[d]]
            n = frames.shape[0]
            for _ in range(crops_per_demo):
                u, v = temporal_crop(n, rng)
                layout_seed = int(rng.integers(2**31))
                learner.condition(learner.task_representation(frames, u, v))
                ok_crop = rollout(learner, t, np.random.default_rng(layout_seed), env_cfg)[2]
                learner.condition(learner.task_representation(frames))
                ok_full = rollout(learner, t, np.random.default_rng(layout_seed), env_cfg)[2]
                rows.append({"task": t, "demo": d, "u": u, "v": v,
                             "cropped_success": bool(ok_crop), "complete_success": bool(ok_full)})
    return {"rows": rows,
            "cropped_success": _success_rate([r["cropped_success"] for r in rows]),
            "complete_success": _success_rate([r["complete_success"] for r in rows])}


def train_task_inference(learner: Learner, demos: DemoSet, episodes: int, updates_per_episode: int = 1,
                         seed: int = 0) -> List[Dict[str, float]]:
    """Self-supervised phase only: hierarchy adaptation, crop insertion and SSL steps.

    The replay buffer stays empty, so ``update`` performs no RL step.
    """
    if learner.ssl is None:
        raise ConfigError(f"{learner.variant} has no self-supervised objective")
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(episodes):
        learner.begin_episode(int(rng.integers(len(demos))))
        for _ in range(updates_per_episode):
            stats = learner.update()
            if stats:
                history.append(stats)
    return history


def nearest_node(net: GwrNetwork, z: np.ndarray) -> int:
    return net.find_bmus(np.asarray(z, dtype=np.float64)).best


def crop_agreement(learner: Learner, demos: Sequence[Demonstration], fraction: float = 0.5,
                   seed: int = 0) -> float:
    """Share of demos whose complete and cropped representations share a nearest behavior node.

    The crop is a random contiguous window covering ``fraction`` of the frames.
    """
    if learner.hierarchy is None:
        raise ConfigError("agreement needs a behavior network")
    rng = np.random.default_rng(seed)
    g_b = learner.hierarchy.g_b
    hits = []
    for d in demos:
        n = len(d)
        w = max(2, int(round(fraction * n)))
        u = int(rng.integers(0, n - w + 1))
        z_full = learner.task_representation(d.observations)
        z_crop = learner.task_representation(d.observations, u, u + w - 1)
        hits.append(nearest_node(g_b, z_full) == nearest_node(g_b, z_crop))
    return float(np.mean(hits))


def eval_oneshot(system: System, tasks: Sequence[int] = HELD_OUT_TASKS, trials: int = 100,
                 seed: int = 0) -> Dict[int, float]:
    """Success on unseen tasks, each trial conditioned on one fresh demonstration."""
    if set(np.unique(system.demos.task_ids).tolist()) & set(tasks):
        raise ConfigError("held-out demos found in the training set")
    rng = np.random.default_rng(seed)
    env_cfg = system.cfg.env_config()
    learner = system.main
    out = {}
    for t in tasks:
        task = get_task(t)
        res = []
        for _ in range(trials):
            demo = scripted_demo(task, rng, env_cfg)
            learner.condition(learner.task_representation(demo.observations))
            res.append(rollout(learner, t, rng, env_cfg)[2])
        out[t] = _success_rate(res)
    return out
