"""Offline perception: generalized states, vocabularies and transition models.

Received I/Q samples are lifted to generalized coordinates (value plus first
derivative).  A zero-control Kalman predictor produces generalized errors,
growing neural gas clusters those errors into a discrete vocabulary per
entity (noise, primary user, combined secondary users), and per-subchannel
transition matrices describe how the discrete clusters evolve.  The cluster
mean errors become the control vectors of the switching linear dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cnuav.gng import GngConfig, GrowingNeuralGas

STATE_DIM = 4   # (I, Q, dI, dQ)
OBS_DIM = 2     # (I, Q)

ENTITIES = ("noise", "pu", "combined")

# constant-velocity dynamic matrix over one slot sample
C_MATRIX = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
D_MATRIX = np.eye(STATE_DIM)
H_MATRIX = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


@dataclass
class ContinuousDynamics:
    """Switching linear state-space parameters shared by one vocabulary."""

    C: np.ndarray = field(default_factory=lambda: C_MATRIX.copy())
    D: np.ndarray = field(default_factory=lambda: D_MATRIX.copy())
    control_vectors: np.ndarray = field(default_factory=lambda: np.zeros((1, STATE_DIM)))
    Q: np.ndarray = field(default_factory=lambda: np.eye(STATE_DIM))
    H: np.ndarray = field(default_factory=lambda: H_MATRIX.copy())
    R: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(OBS_DIM))


@dataclass
class DiscreteCluster:
    id: int
    mean: np.ndarray
    covariance: np.ndarray
    hit_count: int


@dataclass
class Vocabulary:
    """Learned discrete clusters and transition matrices for one entity.

    ``transitions[k]`` holds one row-stochastic matrix per time segment tau
    for subchannel ``k``; ``pooled_transitions`` is the channel-agnostic
    fallback.
    """

    entity: str
    clusters: list
    transitions: dict
    pooled_transitions: list

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.clusters])

    def transition_for(self, channel: int, segment: int = 0) -> np.ndarray:
        if channel in self.transitions:
            return self.transitions[channel][segment]
        return self.pooled_transitions[segment]


def to_generalized(observations: np.ndarray) -> np.ndarray:
    """Lift an (T, 2) I/Q stream to (T, 4) generalized states.

    Derivatives are first differences per sample; the first sample's
    derivative is zero.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != OBS_DIM:
        raise ValueError("observations must have shape (T, 2)")
    deriv = np.zeros_like(obs)
    deriv[1:] = obs[1:] - obs[:-1]
    return np.hstack((obs, deriv))


def ukf_predict(x: np.ndarray, dyn: ContinuousDynamics) -> np.ndarray:
    """Static-evolution prediction: C x with zero control input."""
    return dyn.C @ np.asarray(x, dtype=float)


@dataclass
class GeneralizedError:
    at_value: np.ndarray
    reference_state: np.ndarray


def generalized_error(pred: np.ndarray, obs: np.ndarray) -> GeneralizedError:
    """Observation minus prediction, tagged with the reference state."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    return GeneralizedError(at_value=obs - pred, reference_state=pred)


def trace_errors(observations: np.ndarray, dyn: ContinuousDynamics) -> np.ndarray:
    """Generalized errors of the zero-control predictor along one trace."""
    g = to_generalized(observations)
    if g.shape[0] < 2:
        raise ValueError("trace must contain at least 2 samples")
    preds = g[:-1] @ dyn.C.T
    return g[1:] - preds


def gng_train(errors: np.ndarray, learning_rate: float, max_nodes: int,
              epochs: int, rng: np.random.Generator,
              error_floor: float = 0.0):
    """Cluster an error stream; means/covariances from the final assignments.

    ``error_floor`` stops node insertion once the quantization error reaches
    the noise scale, so entity vocabularies only grow for structure that
    stands above the measurement noise.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error stream")
    cfg = GngConfig(learning_rate=learning_rate, max_nodes=max_nodes,
                    epochs=epochs, insert_error_floor=error_floor)
    gng = GrowingNeuralGas(cfg)
    gng.fit(errors, rng)
    labels = gng.assign(errors)
    clusters = []
    for i in range(len(gng.nodes)):
        members = errors[labels == i]
        if members.shape[0] == 0:
            continue
        mean = members.mean(axis=0)
        cov = np.cov(members.T) if members.shape[0] > 1 else np.zeros((errors.shape[1],) * 2)
        cov = np.atleast_2d(cov)
        ridge = 1e-3 * float(np.trace(cov)) / cov.shape[0] + 1e-9
        cov = cov + ridge * np.eye(cov.shape[0])
        clusters.append(DiscreteCluster(id=len(clusters), mean=mean,
                                        covariance=cov, hit_count=int(members.shape[0])))
    return clusters


def assign_cluster(x: np.ndarray, vocab: Vocabulary) -> int:
    """Nearest cluster mean in Euclidean distance; ties to the lowest id."""
    if not vocab.clusters:
        raise ValueError("empty vocabulary")
    d = np.linalg.norm(vocab.means() - np.asarray(x, dtype=float), axis=1)
    return int(np.argmin(d))


def assign_clusters(xs: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    means = vocab.means()
    d = np.linalg.norm(np.asarray(xs, dtype=float)[:, None, :] - means[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def estimate_transitions(cluster_sequence, num_clusters: int, segments: int = 1,
                         smoothing: float = 1.0):
    """Per-segment transition matrices from a cluster id sequence.

    The sequence is split into ``segments`` contiguous chunks; each chunk's
    transition counts get ``smoothing`` added to every cell before row
    normalization.  Rows with no mass become uniform.
    """
    seq = np.asarray(cluster_sequence, dtype=int)
    if seq.size < 2:
        raise ValueError("sequence must contain at least 2 states")
    bounds = np.linspace(0, seq.size, segments + 1).astype(int)
    out = []
    for s in range(segments):
        counts = np.full((num_clusters, num_clusters), float(smoothing))
        chunk = seq[bounds[s]:bounds[s + 1]]
        for a, b in zip(chunk[:-1], chunk[1:]):
            counts[a, b] += 1.0
        rows = counts.sum(axis=1, keepdims=True)
        zero = rows[:, 0] == 0
        counts[zero] = 1.0
        rows = counts.sum(axis=1, keepdims=True)
        out.append(counts / rows)
    return out


def accumulate_transitions(sequences, num_clusters: int, segments: int = 1,
                           smoothing: float = 1.0):
    """Transitions pooled over several sequences (counts added before normalizing)."""
    counts = [np.full((num_clusters, num_clusters), float(smoothing))
              for _ in range(segments)]
    for seq in sequences:
        seq = np.asarray(seq, dtype=int)
        if seq.size < 2:
            continue
        bounds = np.linspace(0, seq.size, segments + 1).astype(int)
        for s in range(segments):
            chunk = seq[bounds[s]:bounds[s + 1]]
            for a, b in zip(chunk[:-1], chunk[1:]):
                counts[s][a, b] += 1.0
    out = []
    for c in counts:
        rows = c.sum(axis=1, keepdims=True)
        zero = rows[:, 0] == 0
        c[zero] = 1.0
        rows = c.sum(axis=1, keepdims=True)
        out.append(c / rows)
    return out


@dataclass
class PerceptionConfig:
    gng_learning_rate: float = 0.01
    max_nodes: int = 24
    epochs: int = 3
    tau_segments: int = 1
    # light smoothing keeps transition rows data-driven (scale-coherent
    # clusters transition among themselves) while avoiding zero rows
    smoothing: float = 0.05


@dataclass
class LearnedModel:
    """Everything the online stage needs: vocabularies plus dynamics per entity."""

    vocabularies: dict
    dynamics: dict
    meta: dict = field(default_factory=dict)

    def vocabulary(self, entity: str) -> Vocabulary:
        return self.vocabularies[entity]


def learn_vocabularies(traces: dict, config: PerceptionConfig,
                       rng: np.random.Generator) -> LearnedModel:
    """Full perception pipeline over labeled traces.

    ``traces`` maps each entity name to a list of ``(channel, observations)``
    pairs where observations is an (T, 2) I/Q array.  For every entity the
    pipeline is: zero-control prediction -> generalized errors -> GNG ->
    cluster sequences -> transition matrices; the control vectors are the
    cluster mean errors and the process covariance is the residual covariance
    after applying them.
    """
    for entity in ENTITIES:
        if entity not in traces or not traces[entity]:
            raise ValueError(f"missing traces for entity '{entity}'")

    # shared observation-noise covariance, estimated from the noise entity
    noise_obs = np.vstack([obs for _, obs in traces["noise"]])
    R = np.atleast_2d(np.cov(noise_obs.T)) + 1e-9 * np.eye(OBS_DIM)

    # quantization-error floor: typical generalized-error norm of pure noise
    base = ContinuousDynamics(R=R.copy())
    noise_errors = np.vstack([trace_errors(obs, base) for _, obs in traces["noise"]])
    error_floor = 1.2 * float(np.linalg.norm(noise_errors, axis=1).mean())

    vocabularies = {}
    dynamics = {}
    for entity, pairs in traces.items():
        err_per_trace = [trace_errors(obs, base) for _, obs in pairs]
        all_errors = np.vstack(err_per_trace)
        clusters = gng_train(all_errors, config.gng_learning_rate,
                             config.max_nodes, config.epochs, rng,
                             error_floor=error_floor)
        vocab = Vocabulary(entity=entity, clusters=clusters,
                           transitions={}, pooled_transitions=[])
        labels_per_trace = [assign_clusters(e, vocab) for e in err_per_trace]

        by_channel = {}
        for (channel, _), labels in zip(pairs, labels_per_trace):
            by_channel.setdefault(channel, []).append(labels)
        for channel, seqs in by_channel.items():
            vocab.transitions[channel] = accumulate_transitions(
                seqs, vocab.num_clusters, config.tau_segments, config.smoothing)
        vocab.pooled_transitions = accumulate_transitions(
            labels_per_trace, vocab.num_clusters, config.tau_segments,
            config.smoothing)

        u = vocab.means()
        residuals = np.vstack([e - u[l] for e, l in zip(err_per_trace, labels_per_trace)])
        Q = np.atleast_2d(np.cov(residuals.T)) + 1e-9 * np.eye(STATE_DIM)
        dynamics[entity] = ContinuousDynamics(control_vectors=u, Q=Q, R=R.copy())
        vocabularies[entity] = vocab

    # stationary observation moments per entity: the preferred-signal anchor
    obs_moments = {}
    for entity, pairs in traces.items():
        obs = np.vstack([o for _, o in pairs])
        mean = obs.mean(axis=0)
        centered = obs - mean
        obs_moments[entity] = (mean.tolist(),
                               (centered.T @ centered / obs.shape[0]).tolist())

    return LearnedModel(vocabularies=vocabularies, dynamics=dynamics,
                        meta={"gng_learning_rate": config.gng_learning_rate,
                              "max_nodes": config.max_nodes,
                              "epochs": config.epochs,
                              "tau_segments": config.tau_segments,
                              "obs_moments": obs_moments})
