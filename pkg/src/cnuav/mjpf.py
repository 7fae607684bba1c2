"""Markov jump particle filter: discrete particles, one Kalman filter each.

Prediction runs top-down (cluster transition, then switching linear dynamics
per particle); after an observation arrives, diagnostic messages run bottom-up
(Gaussian likelihood reweighting, cluster posterior).  Abnormality is the
negative log Bhattacharyya coefficient between the predictive and diagnostic
messages at each level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cnuav.gdbn import ContinuousDynamics, Vocabulary, STATE_DIM, OBS_DIM


class ModelMismatchError(RuntimeError):
    """All particle likelihoods vanished: the model cannot explain the data."""


class DegenerateModelError(RuntimeError):
    """Singular innovation covariance: degenerate R / covariance setup."""


@dataclass
class Particle:
    cluster: int
    kf_mean: np.ndarray
    kf_cov: np.ndarray
    weight: float


@dataclass
class Message:
    """Either a Gaussian (mean, cov) or a normalized discrete weight vector."""

    kind: str                      # "prediction" or "diagnostic"
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    weights: np.ndarray | None = None


class BeliefState:
    """L particles stored as arrays: cluster ids, KF means/covs and weights."""

    def __init__(self, clusters, means, covs, weights):
        self.clusters = np.asarray(clusters, dtype=int)
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        self.weights = np.asarray(weights, dtype=float)

    @property
    def num_particles(self) -> int:
        return self.clusters.shape[0]

    @property
    def particles(self):
        return [Particle(int(c), m.copy(), p.copy(), float(w))
                for c, m, p, w in zip(self.clusters, self.means, self.covs, self.weights)]

    def copy(self) -> "BeliefState":
        return BeliefState(self.clusters.copy(), self.means.copy(),
                           self.covs.copy(), self.weights.copy())

    def cluster_weights(self, num_clusters: int) -> np.ndarray:
        w = np.zeros(num_clusters)
        np.add.at(w, self.clusters, self.weights)
        return w

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights ** 2))


def init_belief(vocab: Vocabulary, dyn: ContinuousDynamics, num_particles: int,
                rng: np.random.Generator) -> BeliefState:
    """Equally weighted particles, clusters uniform, vague Gaussian prior."""
    n = vocab.num_clusters
    clusters = rng.integers(0, n, size=num_particles)
    means = np.zeros((num_particles, STATE_DIM))
    spread = vocab.means()
    scale = float(np.max(np.abs(spread))) if spread.size else 1.0
    cov0 = np.eye(STATE_DIM) * max(scale, 1.0) ** 2
    covs = np.tile(cov0, (num_particles, 1, 1))
    weights = np.full(num_particles, 1.0 / num_particles)
    return BeliefState(clusters, means, covs, weights)


def pf_predict(belief: BeliefState, transition: np.ndarray,
               rng: np.random.Generator) -> BeliefState:
    """Sample each particle's next cluster from its transition row."""
    transition = np.asarray(transition, dtype=float)
    if np.any(np.abs(transition.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("transition rows must be stochastic")
    out = belief.copy()
    cdf = np.cumsum(transition, axis=1)
    u = rng.random(belief.num_particles)
    nxt = np.empty(belief.num_particles, dtype=int)
    for c in np.unique(belief.clusters):
        idx = belief.clusters == c
        nxt[idx] = np.searchsorted(cdf[c], u[idx], side="right")
    out.clusters = np.clip(nxt, 0, transition.shape[1] - 1)
    return out


def kf_predict(p: Particle, dyn: ContinuousDynamics) -> Particle:
    """One-step switching prediction: mean C x + D u_cluster, cov C P C' + Q."""
    u = dyn.control_vectors[p.cluster]
    mean = dyn.C @ p.kf_mean + dyn.D @ u
    cov = dyn.C @ p.kf_cov @ dyn.C.T + dyn.Q
    return Particle(p.cluster, mean, 0.5 * (cov + cov.T), p.weight)


def kf_update(p: Particle, z: np.ndarray, dyn: ContinuousDynamics):
    """Gaussian measurement update; returns the particle and its log-likelihood."""
    z = np.asarray(z, dtype=float)
    H, R = dyn.H, dyn.R
    innov = z - H @ p.kf_mean
    s = H @ p.kf_cov @ H.T + R
    try:
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise DegenerateModelError("singular innovation covariance") from exc
    gain = p.kf_cov @ H.T @ s_inv
    mean = p.kf_mean + gain @ innov
    ikh = np.eye(STATE_DIM) - gain @ H
    cov = ikh @ p.kf_cov @ ikh.T + gain @ R @ gain.T  # Joseph form
    sign, logdet = np.linalg.slogdet(s)
    if sign <= 0:
        raise DegenerateModelError("innovation covariance not positive definite")
    loglik = -0.5 * (innov @ s_inv @ innov + logdet + OBS_DIM * np.log(2 * np.pi))
    return Particle(p.cluster, mean, 0.5 * (cov + cov.T), p.weight), float(loglik)


def _check_psd(cov: np.ndarray, name: str):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} covariance must be square")
    if np.any(np.abs(cov - cov.T) > 1e-8 * (1 + np.abs(cov).max())):
        raise ValueError(f"{name} covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(cov)) < -1e-10 * (1 + np.abs(cov).max()):
        raise ValueError(f"{name} covariance must be positive semidefinite")


def abnormality(msg_pi: Message, msg_lambda: Message) -> float:
    """Negative log Bhattacharyya coefficient between two Gaussian messages.

    For Gaussians the coefficient has the closed form
    BC = exp(-D) with D = (1/8) d' S^-1 d + (1/2) ln(det S / sqrt(det S1 det S2))
    where S is the average covariance and d the mean difference.
    """
    for msg, name in ((msg_pi, "first"), (msg_lambda, "second")):
        if msg.mean is None or msg.cov is None:
            raise ValueError("abnormality expects Gaussian messages")
        _check_psd(msg.cov, name)
    m1, m2 = np.atleast_1d(msg_pi.mean), np.atleast_1d(msg_lambda.mean)
    c1, c2 = np.atleast_2d(msg_pi.cov), np.atleast_2d(msg_lambda.cov)
    cbar = 0.5 * (c1 + c2)
    diff = m1 - m2
    solved = np.linalg.solve(cbar, diff)
    _, logdet_bar = np.linalg.slogdet(cbar)
    _, logdet_1 = np.linalg.slogdet(c1)
    _, logdet_2 = np.linalg.slogdet(c2)
    d = 0.125 * float(diff @ solved) + 0.5 * (logdet_bar - 0.5 * (logdet_1 + logdet_2))
    return max(0.0, d)


def _abnormality_2d(m1, c1, m2, c2) -> float:
    """Closed-form Gaussian Bhattacharyya abnormality for 2-D messages,
    without the public API's validation (internal hot path)."""
    cbar = 0.5 * (c1 + c2)
    a, b = cbar[0, 0], cbar[0, 1]
    c, d = cbar[1, 0], cbar[1, 1]
    det_bar = a * d - b * c
    det1 = c1[0, 0] * c1[1, 1] - c1[0, 1] * c1[1, 0]
    det2 = c2[0, 0] * c2[1, 1] - c2[0, 1] * c2[1, 0]
    diff = m1 - m2
    maha = (d * diff[0] ** 2 - (b + c) * diff[0] * diff[1]
            + a * diff[1] ** 2) / det_bar
    val = 0.125 * maha + 0.5 * (np.log(det_bar) - 0.5 * (np.log(det1) + np.log(det2)))
    return max(0.0, float(val))


def discrete_abnormality(pi_weights: np.ndarray, lambda_weights: np.ndarray) -> float:
    """Bhattacharyya abnormality between two discrete weight vectors."""
    p = np.asarray(pi_weights, dtype=float)
    q = np.asarray(lambda_weights, dtype=float)
    if p.shape != q.shape:
        raise ValueError("weight vectors must have the same length")
    bc = float(np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None))))
    return max(0.0, -np.log(max(bc, 1e-300)))


def resample(belief: BeliefState, rng: np.random.Generator) -> BeliefState:
    """Systematic resampling to L equally weighted particles."""
    w = belief.weights
    total = w.sum()
    if total <= 0:
        raise ModelMismatchError("all particle weights are zero")
    w = w / total
    n = belief.num_particles
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(w), positions, side="left")
    np.clip(idx, 0, n - 1, out=idx)
    return BeliefState(belief.clusters[idx], belief.means[idx],
                       belief.covs[idx], np.full(n, 1.0 / n))


def compute_messages(predicted: BeliefState, updated: BeliefState, z: np.ndarray,
                     dyn: ContinuousDynamics, num_clusters: int):
    """Predictive and diagnostic messages at both hierarchy levels.

    The continuous predictive message is the moment-matched Gaussian of the
    weighted predicted particle mixture; the continuous diagnostic message is
    the observation likelihood N(z, R) over the observed subspace.  Discrete
    messages are the predicted and updated cluster weight vectors.
    """
    w = predicted.weights
    mu = w @ predicted.means
    centered = predicted.means - mu
    cov = np.einsum("l,li,lj->ij", w, centered, centered)
    cov += np.einsum("l,lij->ij", w, predicted.covs)
    pi_x = Message(kind="prediction", mean=mu, cov=0.5 * (cov + cov.T))
    lam_x = Message(kind="diagnostic", mean=np.asarray(z, dtype=float),
                    cov=dyn.R.copy())
    pi_s = Message(kind="prediction", weights=predicted.cluster_weights(num_clusters))
    lam_s = Message(kind="diagnostic", weights=updated.cluster_weights(num_clusters))
    return pi_x, lam_x, pi_s, lam_s


def _vector_kf_predict(belief: BeliefState, dyn: ContinuousDynamics) -> BeliefState:
    out = belief.copy()
    out.means = belief.means @ dyn.C.T + dyn.control_vectors[belief.clusters] @ dyn.D.T
    out.covs = np.matmul(np.matmul(dyn.C, belief.covs), dyn.C.T) + dyn.Q
    return out


def _inv_2x2(s: np.ndarray):
    """Batched closed-form inverse and determinant of (L, 2, 2) matrices."""
    a, b = s[:, 0, 0], s[:, 0, 1]
    c, d = s[:, 1, 0], s[:, 1, 1]
    det = a * d - b * c
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise DegenerateModelError("innovation covariance not positive definite")
    inv = np.empty_like(s)
    inv[:, 0, 0] = d
    inv[:, 0, 1] = -b
    inv[:, 1, 0] = -c
    inv[:, 1, 1] = a
    inv /= det[:, None, None]
    return inv, det


def _vector_kf_update(belief: BeliefState, z: np.ndarray, dyn: ContinuousDynamics):
    H, R = dyn.H, dyn.R
    z = np.asarray(z, dtype=float)
    innov = z - belief.means @ H.T
    cov_ht = np.matmul(belief.covs, H.T)                      # (L, 4, 2)
    s = np.matmul(H, cov_ht) + R                              # (L, 2, 2)
    s_inv, det = _inv_2x2(s)
    gain = np.matmul(cov_ht, s_inv)                           # (L, 4, 2)
    out = belief.copy()
    out.means = belief.means + np.matmul(gain, innov[:, :, None])[:, :, 0]
    ikh = np.eye(STATE_DIM) - gain @ H
    out.covs = (np.matmul(np.matmul(ikh, belief.covs),
                          np.transpose(ikh, (0, 2, 1)))
                + np.matmul(np.matmul(gain, R), np.transpose(gain, (0, 2, 1))))
    out.covs = 0.5 * (out.covs + np.transpose(out.covs, (0, 2, 1)))
    maha = np.sum(innov[:, :, None] * np.matmul(s_inv, innov[:, :, None]),
                  axis=(1, 2))
    logliks = -0.5 * (maha + np.log(det) + OBS_DIM * np.log(2 * np.pi))
    return out, logliks, innov


def belief_update(belief: BeliefState, z: np.ndarray, vocab: Vocabulary,
                  dyn: ContinuousDynamics, rng: np.random.Generator,
                  channel: int = 0, segment: int = 0):
    """One full filter slice; returns the new belief, abnormalities and info.

    Steps: discrete prediction, per-particle Kalman prediction and update,
    likelihood reweighting, conditional systematic resampling, message
    extraction and the two Bhattacharyya abnormalities.
    """
    transition = vocab.transition_for(channel, segment)
    n_clusters = vocab.num_clusters

    # exact predicted cluster distribution (before sampling)
    prev_cluster_w = belief.cluster_weights(n_clusters)
    pi_s_weights = prev_cluster_w @ transition

    predicted = pf_predict(belief, transition, rng)
    predicted = _vector_kf_predict(predicted, dyn)

    updated, logliks, innov = _vector_kf_update(predicted, z, dyn)
    logw = np.log(np.clip(belief.weights, 1e-300, None)) + logliks
    logw -= logw.max()
    w = np.exp(logw)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ModelMismatchError("all particle weights vanished after update")
    updated.weights = w / total

    pi_x, lam_x, pi_s, lam_s = compute_messages(predicted, updated, z, dyn, n_clusters)
    pi_s.weights = pi_s_weights  # exact mixture rather than the sampled one

    pred_obs_cov = dyn.H @ pi_x.cov @ dyn.H.T + dyn.R
    pi_obs = Message(kind="prediction", mean=dyn.H @ pi_x.mean, cov=pred_obs_cov)
    upsilon_c = _abnormality_2d(pi_obs.mean, pi_obs.cov, lam_x.mean, lam_x.cov)
    upsilon_d = discrete_abnormality(pi_s.weights, lam_s.weights)

    post_innov = np.abs(innov).T @ updated.weights  # weighted |innovation| per dim
    map_cluster = int(np.argmax(lam_s.weights))

    out = updated
    if out.effective_sample_size() < out.num_particles / 2.0:
        out = resample(out, rng)

    info = {
        "pi_x": pi_x, "lambda_x": lam_x, "pi_s": pi_s, "lambda_s": lam_s,
        "pred_obs_mean": pi_obs.mean, "pred_obs_cov": pred_obs_cov,
        "innovation": post_innov, "map_cluster": map_cluster,
    }
    return out, upsilon_c, upsilon_d, info
