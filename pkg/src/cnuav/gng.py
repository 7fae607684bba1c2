"""Growing neural gas clustering for generalized-error streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GngConfig:
    learning_rate: float = 0.01     # winner adaptation rate
    neighbor_rate_divisor: float = 10.0  # second winner adapts at lr / divisor
    max_nodes: int = 24
    epochs: int = 3
    max_edge_age: int = 50
    insert_interval: int = 100      # samples between insertion attempts
    split_error_decay: float = 0.5  # error decay on the split pair
    global_error_decay: float = 0.995
    # stop inserting once the running quantization error has dropped below
    # this fraction of its initial level (keeps node counts data-driven)
    insert_stop_fraction: float = 0.05
    # absolute quantization-error floor below which insertion stops; callers
    # set it to a multiple of the measured noise scale so node counts track
    # the signal structure above the noise, not the noise itself
    insert_error_floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.learning_rate < 1.0:
            raise ValueError("learning_rate must be in (0, 1)")
        if self.max_nodes < 2:
            raise ValueError("max_nodes must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class GngNode:
    position: np.ndarray
    error: float = 0.0


class GrowingNeuralGas:
    """Incremental topology-learning vector quantizer.

    Winner and second winner move toward each sample (at rates lr and lr/10),
    the winner/second edge is refreshed, stale edges and isolated nodes are
    dropped, and a new node is periodically inserted halfway between the node
    with the largest accumulated error and its worst neighbour.
    """

    def __init__(self, config: GngConfig):
        self.config = config
        self.nodes: list[GngNode] = []
        self.edges: dict = {}  # frozenset({i, j}) -> age
        self._samples_seen = 0
        self._err_ema = None
        self._err_ema0 = None

    def _neighbors(self, i: int):
        return [j for e in self.edges for j in e if i in e and j != i]

    def _distances(self, x: np.ndarray) -> np.ndarray:
        pos = np.array([n.position for n in self.nodes])
        return np.linalg.norm(pos - x, axis=1)

    def _remove_stale(self):
        self.edges = {e: a for e, a in self.edges.items()
                      if a <= self.config.max_edge_age}
        connected = {i for e in self.edges for i in e}
        if len(self.nodes) > 2:
            keep = [i for i in range(len(self.nodes)) if i in connected]
            if len(keep) >= 2 and len(keep) < len(self.nodes):
                remap = {old: new for new, old in enumerate(keep)}
                self.nodes = [self.nodes[i] for i in keep]
                self.edges = {frozenset({remap[i] for i in e}): a
                              for e, a in self.edges.items()}

    def _insert_node(self):
        cfg = self.config
        if len(self.nodes) >= cfg.max_nodes:
            return
        if self._err_ema is not None:
            if self._err_ema <= cfg.insert_error_floor:
                return
            if self._err_ema0 is not None and \
                    self._err_ema <= cfg.insert_stop_fraction * self._err_ema0:
                return
        errors = np.array([n.error for n in self.nodes])
        q = int(np.argmax(errors))
        nb = self._neighbors(q)
        if not nb:
            return
        f = max(nb, key=lambda j: self.nodes[j].error)
        new_pos = 0.5 * (self.nodes[q].position + self.nodes[f].position)
        self.nodes[q].error *= cfg.split_error_decay
        self.nodes[f].error *= cfg.split_error_decay
        new_idx = len(self.nodes)
        self.nodes.append(GngNode(position=new_pos,
                                  error=self.nodes[q].error))
        self.edges.pop(frozenset({q, f}), None)
        self.edges[frozenset({q, new_idx})] = 0
        self.edges[frozenset({f, new_idx})] = 0

    def _step(self, x: np.ndarray):
        cfg = self.config
        d = self._distances(x)
        s1, s2 = np.argsort(d, kind="stable")[:2]
        err = float(d[s1])
        self._err_ema = err if self._err_ema is None else \
            0.99 * self._err_ema + 0.01 * err
        if self._samples_seen == 100:
            self._err_ema0 = self._err_ema
        self.nodes[s1].error = cfg.global_error_decay * self.nodes[s1].error + err
        self.nodes[s1].position += cfg.learning_rate * (x - self.nodes[s1].position)
        self.nodes[s2].position += (cfg.learning_rate / cfg.neighbor_rate_divisor) * (
            x - self.nodes[s2].position)
        for e in list(self.edges):
            if s1 in e:
                self.edges[e] += 1
        self.edges[frozenset({int(s1), int(s2)})] = 0
        self._remove_stale()
        self._samples_seen += 1
        if self._samples_seen % cfg.insert_interval == 0:
            self._insert_node()
        for n in self.nodes:
            n.error *= cfg.global_error_decay
        return err

    def fit(self, data: np.ndarray, rng: np.random.Generator):
        """Train on the sample stream; returns mean quantization error per epoch."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("empty or malformed training stream")
        init = rng.choice(data.shape[0], size=2, replace=data.shape[0] < 2)
        self.nodes = [GngNode(position=data[i].copy()) for i in init]
        self.edges = {frozenset({0, 1}): 0}
        epoch_errors = []
        for _ in range(self.config.epochs):
            total = 0.0
            for x in data:
                total += self._step(x)
            epoch_errors.append(total / data.shape[0])
        return epoch_errors

    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes])

    def assign(self, data: np.ndarray) -> np.ndarray:
        """Nearest-node index for each sample (ties to the lowest index)."""
        data = np.asarray(data, dtype=float)
        pos = self.positions()
        d = np.linalg.norm(data[:, None, :] - pos[None, :, :], axis=2)
        return np.argmin(d, axis=1)
