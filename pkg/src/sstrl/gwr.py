"""Grow-When-Required self-organizing network."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

GRAPH_FORMAT = "sstrl-gwr"
GRAPH_VERSION = 1


@dataclass(frozen=True)
class GwrParams:
    activity_threshold: float
    habituation_threshold: float
    eps_c: float
    eps_n: float
    h0: float = 1.0
    alpha_c: float = 1.05
    alpha_n: float = 1.05
    tau_c: float = 0.5
    tau_n: float = 2.0
    max_age: int = 80

    def __post_init__(self):
        if not 0.0 < self.eps_n < self.eps_c < 1.0:
            raise ValueError("learning rates must satisfy 0 < eps_n < eps_c < 1")
        if not 0.0 < self.activity_threshold <= 1.0:
            raise ValueError("activity threshold must lie in (0, 1]")
        if self.max_age < 1:
            raise ValueError("max_age must be >= 1")
        if not 0.0 <= self.h0 <= 1.0:
            raise ValueError("h0 must lie in [0, 1]")

    def habituation(self, count: int, role: str) -> float:
        """Closed-form habituation after ``count`` firings as BMU or neighbour."""
        if role == "bmu":
            alpha, tau = self.alpha_c, self.tau_c
        else:
            alpha, tau = self.alpha_n, self.tau_n
        return self.h0 - (1.0 - math.exp(-alpha * count / tau)) / alpha


# Action, intention and behavior net defaults.
ACTION_NET_PARAMS = GwrParams(0.7, 0.2, 0.1, 0.05, 1.0, 1.05, 1.05, 0.5, 2.0, 80)
INTENTION_NET_PARAMS = GwrParams(0.9, 0.3, 0.1, 0.01, 1.0, 1.05, 1.05, 1.0, 2.7, 100)
BEHAVIOR_NET_PARAMS = GwrParams(0.8, 0.15, 0.1, 0.01, 1.0, 1.05, 1.05, 3.3, 14.3, 90)


class BmuResult(NamedTuple):
    best: int
    second: int
    best_distance: float
    second_distance: float


@dataclass
class AdaptReport:
    inserted: bool
    bmu_id: int
    second_id: int
    activity: float
    bmu_habituation: float
    new_node_id: Optional[int] = None
    removed_edges: List[Tuple[int, int]] = field(default_factory=list)
    removed_nodes: List[int] = field(default_factory=list)
    n_nodes: int = 0
    n_edges: int = 0


def activity(distance: float) -> float:
    if distance < 0:
        raise ValueError("distance must be non-negative")
    return math.exp(-distance)


def _key(u: int, v: int) -> Tuple[int, int]:
    return (u, v) if u < v else (v, u)


class GwrNetwork:
    """Growing graph of weight vectors with habituation and aged edges.

    Node state is kept in parallel arrays (row ``i`` belongs to ``ids[i]``);
    weights and habituations are float32.
    """

    def __init__(self, dim: int, params: GwrParams, seed: int | None = 0,
                 low: float | np.ndarray | None = None, high: float | np.ndarray | None = None,
                 adapt_after_insert: bool = False):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.params = params
        self.adapt_after_insert = adapt_after_insert
        rng = np.random.default_rng(seed)
        if low is None or high is None:
            # Anchored on the first stimulus: offsets in [-0.5, 0.5] per dimension.
            w = rng.uniform(-0.5, 0.5, size=(2, dim))
            self.anchor_pending = True
        else:
            w = rng.uniform(low, high, size=(2, dim))
            self.anchor_pending = False
        self.W = w.astype(np.float32)
        self.ids: List[int] = [0, 1]
        self.h = np.full(2, params.h0, dtype=np.float32)
        self.t_c = np.zeros(2, dtype=np.int64)
        self.t_n = np.zeros(2, dtype=np.int64)
        self.edges: Dict[Tuple[int, int], int] = {}
        self.next_id = 2

    # -- queries -----------------------------------------------------------
    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _row(self, node_id: int) -> int:
        return self.ids.index(node_id)

    def weight(self, node_id: int) -> np.ndarray:
        return self.W[self._row(node_id)].copy()

    def habituation(self, node_id: int) -> float:
        return float(self.h[self._row(node_id)])

    def neighbors(self, node_id: int) -> List[int]:
        out = []
        for u, v in self.edges:
            if u == node_id:
                out.append(v)
            elif v == node_id:
                out.append(u)
        return sorted(out)

    def _check_input(self, zeta) -> np.ndarray:
        z = np.asarray(zeta, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.dim:
            raise ValueError(f"input width {z.shape[0]} != network width {self.dim}")
        if not np.all(np.isfinite(z)):
            raise ValueError("input contains non-finite values")
        return z

    def find_bmus(self, zeta) -> BmuResult:
        z = self._check_input(zeta)
        d = np.linalg.norm(self.W.astype(np.float64) - z, axis=1)
        order = np.lexsort((np.asarray(self.ids), d))
        b, s = order[0], order[1]
        return BmuResult(self.ids[b], self.ids[s], float(d[b]), float(d[s]))

    def bmu_weight(self, zeta) -> np.ndarray:
        return self.weight(self.find_bmus(zeta).best)

    # -- adaptation ----------------------------------------------------------
    def adapt(self, zeta) -> AdaptReport:
        z = self._check_input(zeta)
        p = self.params
        if self.anchor_pending:
            self.W = (self.W.astype(np.float64) + z).astype(np.float32)
            self.anchor_pending = False
        c, c2, dist, _ = self.find_bmus(z)
        self.edges[_key(c, c2)] = 0
        a = math.exp(-dist)
        rc = self._row(c)
        h_c = float(self.h[rc])
        report = AdaptReport(False, c, c2, a, h_c)

        if a < p.activity_threshold and h_c < p.habituation_threshold:
            v = self.next_id
            self.next_id += 1
            w_new = ((self.W[rc].astype(np.float64) + z) / 2.0).astype(np.float32)
            self.ids.append(v)
            self.W = np.vstack([self.W, w_new[None, :]])
            self.h = np.append(self.h, np.float32(p.h0))
            self.t_c = np.append(self.t_c, 0)
            self.t_n = np.append(self.t_n, 0)
            self.edges[_key(v, c)] = 0
            self.edges[_key(v, c2)] = 0
            del self.edges[_key(c, c2)]
            report.inserted = True
            report.new_node_id = v
            if self.adapt_after_insert:
                self._move_and_habituate(c, z)
        else:
            self._move_and_habituate(c, z)

        # age edges emanating from the BMU, then prune
        for e in list(self.edges):
            if c in e:
                self.edges[e] += 1
                if self.edges[e] > p.max_age:
                    del self.edges[e]
                    report.removed_edges.append(e)
        report.removed_nodes = self._remove_orphans()
        report.n_nodes = len(self.ids)
        report.n_edges = len(self.edges)
        return report

    def _move_and_habituate(self, c: int, z: np.ndarray) -> None:
        p = self.params
        rc = self._row(c)
        w = self.W.astype(np.float64)
        w[rc] += p.eps_c * float(self.h[rc]) * (z - w[rc])
        nbrs = [self._row(k) for k in self.neighbors(c)]
        for rk in nbrs:
            w[rk] += p.eps_n * float(self.h[rk]) * (z - w[rk])
        self.W = w.astype(np.float32)

        self.t_c[rc] += 1
        cand = p.habituation(int(self.t_c[rc]), "bmu")
        self.h[rc] = np.float32(min(float(self.h[rc]), min(max(cand, 0.0), 1.0)))
        for rk in nbrs:
            self.t_n[rk] += 1
            cand = p.habituation(int(self.t_n[rk]), "neighbor")
            self.h[rk] = np.float32(min(float(self.h[rk]), min(max(cand, 0.0), 1.0)))

    def _remove_orphans(self) -> List[int]:
        linked = set()
        for u, v in self.edges:
            linked.add(u)
            linked.add(v)
        orphans = [i for i in self.ids if i not in linked]
        # never shrink below two nodes; keep the lowest-id orphans
        n_removable = max(0, min(len(orphans), len(self.ids) - 2))
        doomed = sorted(orphans)[len(orphans) - n_removable:] if n_removable else []
        if doomed:
            keep = [r for r, i in enumerate(self.ids) if i not in doomed]
            self.ids = [self.ids[r] for r in keep]
            self.W = self.W[keep]
            self.h = self.h[keep]
            self.t_c = self.t_c[keep]
            self.t_n = self.t_n[keep]
        return doomed

    # -- serialization -------------------------------------------------------
    def to_document(self) -> Dict[str, Any]:
        nodes = [
            {"id": int(i), "weight": [float(x) for x in self.W[r]],
             "habituation": float(self.h[r]), "bmu_count": int(self.t_c[r]),
             "neighbor_count": int(self.t_n[r])}
            for r, i in enumerate(self.ids)
        ]
        edges = [{"u": u, "v": v, "age": age} for (u, v), age in sorted(self.edges.items())]
        return {
            "format": GRAPH_FORMAT, "version": GRAPH_VERSION, "dim": self.dim,
            "params": asdict(self.params), "next_id": self.next_id,
            "anchor_pending": self.anchor_pending,
            "adapt_after_insert": self.adapt_after_insert,
            "nodes": nodes, "edges": edges,
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "GwrNetwork":
        if doc.get("format") != GRAPH_FORMAT or doc.get("version") != GRAPH_VERSION:
            raise ValueError(f"unsupported graph document {doc.get('format')!r} v{doc.get('version')}")
        net = cls.__new__(cls)
        net.dim = int(doc["dim"])
        net.params = GwrParams(**doc["params"])
        net.adapt_after_insert = bool(doc.get("adapt_after_insert", False))
        net.anchor_pending = bool(doc["anchor_pending"])
        net.next_id = int(doc["next_id"])
        nodes = doc["nodes"]
        net.ids = [int(n["id"]) for n in nodes]
        net.W = np.array([n["weight"] for n in nodes], dtype=np.float32).reshape(len(nodes), net.dim)
        net.h = np.array([n["habituation"] for n in nodes], dtype=np.float32)
        net.t_c = np.array([n["bmu_count"] for n in nodes], dtype=np.int64)
        net.t_n = np.array([n["neighbor_count"] for n in nodes], dtype=np.int64)
        net.edges = {_key(int(e["u"]), int(e["v"])): int(e["age"]) for e in doc["edges"]}
        return net

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GwrNetwork":
        return cls.from_document(json.loads(text))

    def to_dot(self, name: str = "gwr") -> str:
        lines = [f"graph {name} {{"]
        for r, i in enumerate(self.ids):
            lines.append(f'  n{i} [label="{i}\\nh={float(self.h[r]):.3f}"];')
        for (u, v), age in sorted(self.edges.items()):
            lines.append(f'  n{u} -- n{v} [label="{age}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def state_hash(self) -> int:
        return hash((tuple(self.ids), self.W.tobytes(), self.h.tobytes(),
                     self.t_c.tobytes(), self.t_n.tobytes(),
                     tuple(sorted(self.edges.items())), self.anchor_pending, self.next_id))
