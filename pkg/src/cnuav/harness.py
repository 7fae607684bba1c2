"""Experiment orchestration: configuration, training, presets and persistence.

Configuration is a flat JSON document whose defaults are the simulation
parameters of the reference scenario (1000 m cell, 6 subchannels, 20 SUs,
1.4 MHz bandwidth, 20 W budget).  Every run is seeded: independent random
streams are spawned for scenario placement, offline training, the per-episode
channel draws, and the online loop, so runs with the same configuration and
seed produce byte-identical CSV outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np

from cnuav import noma, simulate
from cnuav.agent import (ActionSpace, AgentConfig, EpisodeTrace,
                         NetworkEnvironment, PolicyTables, init_policy,
                         run_episode)
from cnuav.baselines import (PowerGrid, QLearningAllocator, QLearningConfig,
                             exhaustive_oracle, fill_greedy, gain_buckets,
                             oma_allocate, project_allocation, random_allocate)
from cnuav.charts import line_chart_svg
from cnuav.gdbn import (ContinuousDynamics, DiscreteCluster, LearnedModel,
                        PerceptionConfig, Vocabulary, learn_vocabularies)
from cnuav.mjpf import init_belief
from cnuav.noma import Allocation, ConstellationConfig
from cnuav.radio_env import (FadingConfig, PathLossConfig, PuActivityModel,
                             Scenario, make_subchannels, place_sus_uniform,
                             step_pu_activity)

log = logging.getLogger("cnuav")

MODEL_FORMAT_VERSION = 1

CSV_HEADER = "episode,sum_rate_bps,cum_sum_rate_bps,cum_abnormality,mean_inphase_error,seed"

PRESETS = ("fig3_convergence", "fig4_cum_abnormality", "fig5_gng_lr",
           "fig6_baselines", "fig7_inphase_errors")


class ConfigError(ValueError):
    """Configuration parse or range failure; names the offending key."""


class ModelFormatError(ValueError):
    """Model document version/content mismatch."""


@dataclass
class ExperimentConfig:
    """Flat experiment configuration with scenario defaults."""

    cell_radius_m: float = 1000.0
    min_uav_su_distance_m: float = 100.0
    uav_altitude_m: float = 100.0
    num_subchannels: int = 6
    num_sus: int = 20
    system_bandwidth_hz: float = 1.4e6
    noise_dbm_per_hz: float = -174.0
    p_max_w: float = 20.0
    per_channel_cap_w: float = 20.0
    p_th: float = 1.0
    delta_y: float = 30.0
    rho0_db: float = -40.0
    rician_k: float = 10.0
    mobility_step_m: float = 5.0
    pu_channels: list = field(default_factory=lambda: [1, 2, 3])  # 1-based
    pu_stay_prob: float = 1.0
    pu_amplitude: float = 20.0
    num_multiplexed: int = 5
    m_list: list = field(default_factory=lambda: [1, 3, 5, 7])
    lr_list: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    gng_learning_rate: float = 0.01
    gng_max_nodes: int = 24
    gng_epochs: int = 3
    tau_segments: int = 1
    episodes: int = 100
    episode_length: int = 24
    samples_per_slot: int = 4
    train_episodes: int = 10
    particles: int = 100
    policy_step: float = 0.08
    power_step: float = 0.06
    power_ramp_w: float = 0.04
    softmax_temperature: float = 1.0
    pu_skip_threshold: float = 0.5
    a0_power_w: float = 1.0
    power_grid_levels: int = 4
    seed: int = 1
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    preset: str = ""
    out_dir: str = "runs"
    emit_charts: bool = True

    @property
    def rho0(self) -> float:
        return 10.0 ** (self.rho0_db / 10.0)

    @property
    def pu_channels_zero_based(self) -> list:
        return [c - 1 for c in self.pu_channels]


_RANGES = {
    "cell_radius_m": (1.0, 1e6),
    "min_uav_su_distance_m": (0.0, 1e6),
    "uav_altitude_m": (1.0, 1e5),
    "num_subchannels": (1, 64),
    "num_sus": (1, 512),
    "system_bandwidth_hz": (1.0, 1e12),
    "p_max_w": (1e-9, 1e6),
    "per_channel_cap_w": (1e-9, 1e6),
    "p_th": (0.0, 1e12),
    "delta_y": (1e-9, 1e9),
    "rician_k": (0.0, 1e6),
    "mobility_step_m": (0.0, 1e5),
    "pu_stay_prob": (0.0, 1.0),
    "pu_amplitude": (0.0, 1e9),
    "num_multiplexed": (1, 64),
    "gng_learning_rate": (1e-9, 0.999),
    "gng_max_nodes": (2, 4096),
    "gng_epochs": (1, 1000),
    "tau_segments": (1, 64),
    "episodes": (1, 100000),
    "episode_length": (1, 100000),
    "samples_per_slot": (1, 1024),
    "train_episodes": (1, 10000),
    "particles": (1, 100000),
    "policy_step": (1e-9, 1.0),
    "power_step": (0.0, 1.0),
    "power_ramp_w": (0.0, 1e6),
    "softmax_temperature": (1e-9, 1e9),
    "pu_skip_threshold": (0.0, 1.0),
    "a0_power_w": (1e-9, 1e6),
    "power_grid_levels": (1, 64),
}


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for key, (lo, hi) in _RANGES.items():
        v = getattr(cfg, key)
        if not (lo <= v <= hi):
            raise ConfigError(f"config key '{key}' = {v!r} outside [{lo}, {hi}]")
    for c in cfg.pu_channels:
        if not 1 <= c <= cfg.num_subchannels:
            raise ConfigError(f"config key 'pu_channels' entry {c} outside 1..{cfg.num_subchannels}")
    for m in cfg.m_list:
        if not 1 <= m <= 64:
            raise ConfigError(f"config key 'm_list' entry {m} outside 1..64")
    if cfg.preset and cfg.preset not in PRESETS:
        raise ConfigError(f"config key 'preset' = {cfg.preset!r}; known presets: {PRESETS}")
    if cfg.a0_power_w > cfg.p_max_w:
        raise ConfigError("config key 'a0_power_w' exceeds 'p_max_w'")
    if not cfg.seeds:
        raise ConfigError("config key 'seeds' must not be empty")
    return cfg


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")
    return _validate(ExperimentConfig(**data))


def load_config(path) -> ExperimentConfig:
    """Parse, validate and default a flat JSON config; empty file = defaults."""
    text = Path(path).read_text()
    if not text.strip():
        return _validate(ExperimentConfig())
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# environment and model construction


def _streams(seed: int) -> dict:
    names = ("scenario", "training", "channel", "online", "baseline")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def build_environment(cfg: ExperimentConfig, max_multiplexed: int,
                      rng: np.random.Generator) -> NetworkEnvironment:
    scenario = Scenario(
        cell_radius=cfg.cell_radius_m,
        uav_altitude=cfg.uav_altitude_m,
        uav_xy=np.zeros(2),
        su_positions=np.zeros((cfg.num_sus, 2)),
        min_uav_su_distance=cfg.min_uav_su_distance_m,
        num_subchannels=cfg.num_subchannels,
        num_sus=cfg.num_sus,
        episode_length=cfg.episode_length,
    )
    place_sus_uniform(scenario, rng)
    if cfg.pu_stay_prob >= 1.0:
        pu = PuActivityModel.static_occupied(cfg.num_subchannels,
                                             cfg.pu_channels_zero_based)
    else:
        stay = cfg.pu_stay_prob
        trans = np.tile(np.array([[stay, 1 - stay], [1 - stay, stay]]),
                        (cfg.num_subchannels, 1, 1))
        occ = np.zeros(cfg.num_subchannels, dtype=bool)
        occ[cfg.pu_channels_zero_based] = True
        pu = PuActivityModel(occupancy=occ, transition=trans,
                             pu_channels=frozenset(cfg.pu_channels_zero_based))
    return NetworkEnvironment(
        scenario=scenario,
        path_loss=PathLossConfig(rho0=cfg.rho0),
        fading=FadingConfig(rician_k=cfg.rician_k),
        pu_model=pu,
        subchannels=make_subchannels(cfg.num_subchannels, cfg.system_bandwidth_hz,
                                     cfg.noise_dbm_per_hz),
        constellation=ConstellationConfig(delta_y=cfg.delta_y, p_th=cfg.p_th),
        p_max=cfg.p_max_w,
        per_channel_cap=cfg.per_channel_cap_w,
        max_multiplexed=max_multiplexed,
        pu_amplitude=cfg.pu_amplitude,
        mobility_step=cfg.mobility_step_m,
    )


def generate_training_traces(env: NetworkEnvironment, cfg: ExperimentConfig,
                             rng: np.random.Generator, frozen_gains=None) -> dict:
    """Labeled observation traces for the three entities.

    Preferred (combined) transmissions come from the greedy allocator at full
    requested power, spaced by the ladder projection: the same transmissions
    the oracle converges to at desk scale.
    """
    samples_per_trace = cfg.episode_length * cfg.samples_per_slot
    free = [c for c in range(cfg.num_subchannels)
            if c not in env.pu_model.pu_channels or not env.pu_model.occupancy[c]]
    traces = {"noise": [], "pu": [], "combined": []}

    for _ in range(3):
        obs = rng.standard_normal((samples_per_trace, 2)) * np.sqrt(0.5)
        traces["noise"].append((free[0] if free else 0, obs))

    pu_channels = sorted(env.pu_model.pu_channels) or [0]
    for c in pu_channels:
        bits = rng.integers(0, 2, size=samples_per_trace)
        signal = env.pu_amplitude * np.real(noma.BPSK[bits])
        obs = np.column_stack((signal, np.zeros(samples_per_trace)))
        obs += rng.standard_normal((samples_per_trace, 2)) * np.sqrt(0.5)
        traces["pu"].append((c, obs))

    for _ in range(cfg.train_episodes):
        gains = frozen_gains if frozen_gains is not None else env.new_episode(rng)
        alloc = Allocation.empty(env.num_sus, cfg.num_subchannels)
        fill_greedy(alloc, gains, free, env.max_multiplexed, env.p_max,
                    env.constellation.delta_y, env.constellation.p_th,
                    env.noise_power)
        for c in free:
            members = alloc.sic_orders[c]
            if not members:
                continue
            powers = np.array([alloc.powers[u, c] for u in members])
            g = np.array([gains[u] for u in members])
            tx = simulate.simulate_slot(
                members, powers, g, env.noise_power, env.max_multiplexed,
                samples_per_trace, rng)
            traces["combined"].append((c, tx.observations))
    return traces


def observation_moments(traces: dict) -> dict:
    out = {}
    for entity, pairs in traces.items():
        obs = np.vstack([o for _, o in pairs])
        mean = obs.mean(axis=0)
        centered = obs - mean
        out[entity] = (mean, centered.T @ centered / obs.shape[0])
    return out


def train_model(cfg: ExperimentConfig, env: NetworkEnvironment,
                rng: np.random.Generator, gng_learning_rate=None,
                frozen_gains=None) -> LearnedModel:
    lr = cfg.gng_learning_rate if gng_learning_rate is None else gng_learning_rate
    traces = generate_training_traces(env, cfg, rng, frozen_gains)
    pc = PerceptionConfig(gng_learning_rate=lr, max_nodes=cfg.gng_max_nodes,
                          epochs=cfg.gng_epochs, tau_segments=cfg.tau_segments)
    model = learn_vocabularies(traces, pc, rng)
    model.meta["num_subchannels"] = cfg.num_subchannels
    model.meta["max_multiplexed"] = env.max_multiplexed
    model.meta["config_hash"] = config_hash(cfg)
    model.meta["obs_moments"] = {
        e: (mean.tolist(), cov.tolist())
        for e, (mean, cov) in observation_moments(traces).items()
    }
    return model


# --------------------------------------------------------------------------
# runs


@dataclass
class RunRecord:
    """Per-episode results of one labeled run."""

    label: str
    seed: int
    config_hash: str
    episodes: np.ndarray
    sum_rate_bps: np.ndarray
    cum_sum_rate_bps: np.ndarray
    cum_abnormality: np.ndarray
    mean_inphase_error: np.ndarray
    wall_clock_s: float = 0.0
    slot_series: dict = field(default_factory=dict)  # episode -> per-slot errors

    def rows(self):
        for i in range(len(self.episodes)):
            yield (int(self.episodes[i]), float(self.sum_rate_bps[i]),
                   float(self.cum_sum_rate_bps[i]), float(self.cum_abnormality[i]),
                   float(self.mean_inphase_error[i]), self.seed)


def _make_record(label: str, seed: int, chash: str, sum_rates, abnorms,
                 inphase, wall: float, slot_series=None) -> RunRecord:
    sum_rates = np.asarray(sum_rates, dtype=float)
    abnorms = np.asarray(abnorms, dtype=float)
    inphase = np.asarray(inphase, dtype=float)
    return RunRecord(
        label=label, seed=seed, config_hash=chash,
        episodes=np.arange(1, len(sum_rates) + 1),
        sum_rate_bps=sum_rates,
        cum_sum_rate_bps=np.cumsum(sum_rates),
        cum_abnormality=np.cumsum(abnorms),
        mean_inphase_error=inphase,
        wall_clock_s=wall,
        slot_series=slot_series or {},
    )


def run_active_inference(cfg: ExperimentConfig, seed: int, max_multiplexed: int,
                         episodes=None, gng_learning_rate=None,
                         model: LearnedModel = None,
                         keep_slot_episodes=()) -> RunRecord:
    """Train (unless a model is given) and run the active-inference allocator."""
    t0 = time.perf_counter()
    episodes = cfg.episodes if episodes is None else episodes
    streams = _streams(seed)
    env = build_environment(cfg, max_multiplexed, streams["scenario"])
    if model is None:
        model = train_model(cfg, env, streams["training"],
                            gng_learning_rate=gng_learning_rate)
    tables = init_policy(cfg.num_subchannels, cfg.num_sus, cfg.a0_power_w,
                         num_clusters=model.vocabulary("combined").num_clusters,
                         tau_segments=cfg.tau_segments)
    acfg = AgentConfig(particles=cfg.particles,
                       samples_per_slot=cfg.samples_per_slot,
                       policy_step=cfg.policy_step,
                       power_step=cfg.power_step,
                       power_ramp_w=cfg.power_ramp_w,
                       temperature=cfg.softmax_temperature,
                       pu_skip_threshold=cfg.pu_skip_threshold)
    online = streams["online"]
    sum_rates, abnorms, inphase = [], [], []
    slot_series = {}
    for ep in range(episodes):
        env.new_episode(streams["channel"])
        trace, tables, _ = run_episode(env, model, tables, acfg, online,
                                       episode=ep)
        sum_rates.append(trace.episode_sum_rate)
        abnorms.append(trace.episode_abnormality)
        inphase.append(trace.mean_inphase_error)
        if (ep + 1) in keep_slot_episodes:
            slot_series[ep + 1] = trace.inphase_error.copy()
    return _make_record(f"active_inference_m{max_multiplexed}", seed,
                        config_hash(cfg), sum_rates, abnorms, inphase,
                        time.perf_counter() - t0, slot_series)


def run_q_learning(cfg: ExperimentConfig, seed: int, max_multiplexed: int,
                   episodes=None) -> RunRecord:
    """Tabular Q-learning baseline under the identical environment stream."""
    t0 = time.perf_counter()
    episodes = cfg.episodes if episodes is None else episodes
    streams = _streams(seed)
    env = build_environment(cfg, max_multiplexed, streams["scenario"])
    grid = PowerGrid.linear(min(cfg.p_max_w, cfg.per_channel_cap_w),
                            cfg.power_grid_levels)
    ql = QLearningAllocator(cfg.num_sus, cfg.num_subchannels, grid,
                            QLearningConfig())
    rng = streams["baseline"]
    sum_rates = []
    for ep in range(episodes):
        gains = env.new_episode(streams["channel"])
        buckets = gain_buckets(gains, ql.config.num_gain_buckets)
        slot_rates = []
        for _ in range(cfg.episode_length):
            occ = env.pu_model.occupancy
            states = [ql.state_index(occ, buckets[u]) for u in range(cfg.num_sus)]
            actions = [ql.select(states[u], u, rng) for u in range(cfg.num_sus)]
            alloc = Allocation.empty(cfg.num_sus, cfg.num_subchannels)
            for u, a in enumerate(actions):
                choice = ql.decode_action(a)
                if choice is None:
                    continue
                c, p = choice
                if occ[c] or len(alloc.membership[c]) >= max_multiplexed:
                    continue
                alloc.membership[c].append(u)
                alloc.powers[u, c] = min(p, cfg.p_max_w)
            project_allocation(alloc, gains, cfg.delta_y, cfg.p_th,
                               env.noise_power,
                               min(cfg.p_max_w, cfg.per_channel_cap_w))
            reward = _simulated_goodput(alloc, env, gains, cfg, rng)
            slot_rates.append(reward)
            for u in range(cfg.num_sus):
                ql.update(u, states[u], actions[u], reward / 1e6, states[u])
            step_pu_activity(env.pu_model, rng)
        ql.decay_epsilon(ep / max(1, episodes - 1))
        sum_rates.append(float(np.mean(slot_rates)))
    zeros = np.zeros(len(sum_rates))
    return _make_record(f"q_learning_m{max_multiplexed}", seed, config_hash(cfg),
                        sum_rates, zeros, zeros, time.perf_counter() - t0)


def _simulated_goodput(alloc: Allocation, env: NetworkEnvironment, gains,
                       cfg: ExperimentConfig, rng) -> float:
    fractions = []
    for c in range(cfg.num_subchannels):
        members = alloc.sic_orders[c]
        powers = np.array([alloc.powers[u, c] for u in members])
        g = np.array([gains[u] for u in members])
        tx = simulate.simulate_slot(members, powers, g, env.noise_power,
                                    env.max_multiplexed, cfg.samples_per_slot,
                                    rng, pu_active=bool(env.pu_model.occupancy[c]),
                                    pu_amplitude=env.pu_amplitude)
        fractions.append(tx.decode_fraction)
    return float(simulate.goodput_rates(alloc, gains, env.subchannels,
                                        fractions).sum())


def run_fixed_allocator(cfg: ExperimentConfig, seed: int, max_multiplexed: int,
                        kind: str, episodes=None) -> RunRecord:
    """Greedy / OMA / random allocators evaluated on the same episode stream."""
    t0 = time.perf_counter()
    episodes = cfg.episodes if episodes is None else episodes
    streams = _streams(seed)
    env = build_environment(cfg, max_multiplexed, streams["scenario"])
    rng = streams["baseline"]
    grid = PowerGrid.linear(min(cfg.p_max_w, cfg.per_channel_cap_w),
                            cfg.power_grid_levels)
    sum_rates = []
    for _ in range(episodes):
        gains = env.new_episode(streams["channel"])
        free = [c for c in range(cfg.num_subchannels)
                if not env.pu_model.occupancy[c]]
        if kind == "greedy":
            alloc = Allocation.empty(cfg.num_sus, cfg.num_subchannels)
            fill_greedy(alloc, gains, free, max_multiplexed, cfg.p_max_w,
                        cfg.delta_y, cfg.p_th, env.noise_power)
        elif kind == "oma":
            alloc = oma_allocate(gains, free, cfg.num_subchannels, cfg.p_max_w,
                                 cfg.delta_y, cfg.p_th, env.noise_power)
        elif kind == "random":
            alloc = random_allocate(gains, free, cfg.num_subchannels,
                                    max_multiplexed, grid, cfg.p_max_w,
                                    cfg.delta_y, cfg.p_th, env.noise_power, rng)
        else:
            raise ValueError(f"unknown allocator kind {kind!r}")
        sum_rates.append(_simulated_goodput(alloc, env, gains, cfg, rng))
    zeros = np.zeros(len(sum_rates))
    return _make_record(f"{kind}_m{max_multiplexed}", seed, config_hash(cfg),
                        sum_rates, zeros, zeros, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# persistence


def _fmt(x) -> str:
    return repr(float(x))


def write_run_csv(record: RunRecord, path: Path):
    lines = [CSV_HEADER]
    for ep, sr, csr, cab, err, seed in record.rows():
        lines.append(f"{ep},{_fmt(sr)},{_fmt(csr)},{_fmt(cab)},{_fmt(err)},{seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_slot_csv(label: str, seed: int, episode: int, errors, path: Path):
    lines = ["slot,inphase_error,episode,seed"]
    for i, e in enumerate(np.asarray(errors, dtype=float)):
        lines.append(f"{i + 1},{_fmt(e)},{episode},{seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_model(model: LearnedModel, path, cfg_hash: str = ""):
    """Persist a learned model as a versioned JSON document."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "config_hash": cfg_hash or model.meta.get("config_hash", ""),
        "meta": {k: v for k, v in model.meta.items()},
        "entities": {},
    }
    for entity, vocab in model.vocabularies.items():
        dyn = model.dynamics[entity]
        doc["entities"][entity] = {
            "clusters": [
                {"id": c.id, "mean": c.mean.tolist(),
                 "covariance": c.covariance.tolist(), "hit_count": c.hit_count}
                for c in vocab.clusters
            ],
            "transitions": {str(k): [m.tolist() for m in mats]
                            for k, mats in vocab.transitions.items()},
            "pooled_transitions": [m.tolist() for m in vocab.pooled_transitions],
            "dynamics": {name: getattr(dyn, name).tolist()
                         for name in ("C", "D", "control_vectors", "Q", "H", "R")},
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path, expect_subchannels: int = None) -> LearnedModel:
    """Load and validate a persisted model document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupted model document: {exc}") from exc
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {doc.get('version')!r} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})")
    meta = doc.get("meta", {})
    if expect_subchannels is not None and meta.get("num_subchannels") not in (
            None, expect_subchannels):
        raise ModelFormatError(
            f"model num_subchannels = {meta.get('num_subchannels')} does not "
            f"match the configured {expect_subchannels}")
    vocabularies, dynamics = {}, {}
    for entity, blob in doc["entities"].items():
        clusters = [DiscreteCluster(id=c["id"], mean=np.array(c["mean"]),
                                    covariance=np.array(c["covariance"]),
                                    hit_count=int(c["hit_count"]))
                    for c in blob["clusters"]]
        vocab = Vocabulary(
            entity=entity, clusters=clusters,
            transitions={int(k): [np.array(m) for m in mats]
                         for k, mats in blob["transitions"].items()},
            pooled_transitions=[np.array(m) for m in blob["pooled_transitions"]])
        d = blob["dynamics"]
        dynamics[entity] = ContinuousDynamics(
            C=np.array(d["C"]), D=np.array(d["D"]),
            control_vectors=np.array(d["control_vectors"]),
            Q=np.array(d["Q"]), H=np.array(d["H"]), R=np.array(d["R"]))
        vocabularies[entity] = vocab
    return LearnedModel(vocabularies=vocabularies, dynamics=dynamics, meta=meta)


def write_manifest(out_dir: Path, cfg: ExperimentConfig, files: list):
    entries = []
    for name in sorted(files):
        payload = (out_dir / name).read_bytes()
        entries.append({"name": name,
                        "sha256": hashlib.sha256(payload).hexdigest()})
    manifest = {"config_hash": config_hash(cfg), "files": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True,
                                                      indent=2))
    return manifest


# --------------------------------------------------------------------------
# presets


def run_experiment(cfg: ExperimentConfig):
    """Execute the configured preset; returns records and writes CSVs."""
    if not cfg.preset:
        raise ConfigError("config key 'preset' must be set for run_experiment")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, files = [], []

    def emit(record: RunRecord, name: str):
        write_run_csv(record, out_dir / name)
        files.append(name)
        records.append(record)

    if cfg.preset == "fig3_convergence":
        for m in cfg.m_list:
            rec = run_active_inference(cfg, cfg.seed, m)
            emit(rec, f"fig3_sum_rate_m{m}_seed{cfg.seed}.csv")
        _chart(out_dir, files, records, "sum_rate_bps", "fig3_sum_rate.svg",
               "episode sum rate", cfg)

    elif cfg.preset == "fig4_cum_abnormality":
        for m in cfg.m_list:
            rec = run_active_inference(cfg, cfg.seed, m)
            emit(rec, f"fig4_cum_abnormality_m{m}_seed{cfg.seed}.csv")
        _chart(out_dir, files, records, "cum_abnormality",
               "fig4_cum_abnormality.svg", "cumulative abnormality", cfg)

    elif cfg.preset == "fig5_gng_lr":
        for lr in cfg.lr_list:
            rec = run_active_inference(cfg, cfg.seed, cfg.num_multiplexed,
                                       gng_learning_rate=lr)
            rec.label = f"active_inference_lr{lr}"
            emit(rec, f"fig5_cum_abnormality_lr{lr}_seed{cfg.seed}.csv")
        _chart(out_dir, files, records, "cum_abnormality",
               "fig5_cum_abnormality.svg", "cumulative abnormality", cfg)

    elif cfg.preset == "fig6_baselines":
        m = cfg.num_multiplexed
        emit(run_active_inference(cfg, cfg.seed, m),
             f"fig6_active_inference_m{m}_seed{cfg.seed}.csv")
        emit(run_q_learning(cfg, cfg.seed, m),
             f"fig6_q_learning_m{m}_seed{cfg.seed}.csv")
        for kind in ("greedy", "random", "oma"):
            emit(run_fixed_allocator(cfg, cfg.seed, m, kind),
                 f"fig6_{kind}_m{m}_seed{cfg.seed}.csv")
        _chart(out_dir, files, records, "cum_sum_rate_bps",
               "fig6_cum_sum_rate.svg", "cumulative sum rate (bits/s)", cfg)

    elif cfg.preset == "fig7_inphase_errors":
        rec = run_active_inference(cfg, cfg.seed, cfg.num_multiplexed,
                                   keep_slot_episodes=(1, 10, 30))
        emit(rec, f"fig7_run_m{cfg.num_multiplexed}_seed{cfg.seed}.csv")
        for ep, series in sorted(rec.slot_series.items()):
            name = f"fig7_inphase_episode{ep}_seed{cfg.seed}.csv"
            write_slot_csv(rec.label, cfg.seed, ep, series, out_dir / name)
            files.append(name)
        if cfg.emit_charts:
            series = {f"episode {ep}": list(enumerate(vals, start=1))
                      for ep, vals in sorted(rec.slot_series.items())}
            svg = line_chart_svg({k: [(float(x), float(y)) for x, y in v]
                                  for k, v in series.items()},
                                 "in-phase prediction error per slot",
                                 "slot", "mean |error|")
            (out_dir / "fig7_inphase_errors.svg").write_text(svg)
            files.append("fig7_inphase_errors.svg")

    write_manifest(out_dir, cfg, files)
    return records


def _chart(out_dir: Path, files: list, records: list, column: str,
           name: str, y_label: str, cfg: ExperimentConfig):
    if not cfg.emit_charts:
        return
    series = {}
    for rec in records:
        ys = getattr(rec, column)
        series[rec.label] = [(float(e), float(y))
                             for e, y in zip(rec.episodes, ys)]
    (out_dir / name).write_text(line_chart_svg(series, name.replace(".svg", ""),
                                               "episode", y_label))
    files.append(name)


# --------------------------------------------------------------------------
# reporting


def episodes_to_fraction_of_final(values, fraction: float = 0.95,
                                  final_window: int = 10) -> int:
    """First episode reaching the fraction of the final-window mean."""
    values = np.asarray(values, dtype=float)
    final = values[-final_window:].mean() if len(values) >= final_window else values.mean()
    target = fraction * final
    hits = np.nonzero(values >= target)[0]
    return int(hits[0]) + 1 if hits.size else len(values)


def emit_report(records) -> str:
    """Summary table: one row per record, deterministic column order."""
    if not records:
        raise ValueError("emit_report needs at least one record")
    lines = ["label,seed,final_sum_rate_bps,episodes_to_95pct,total_abnormality"]
    for rec in sorted(records, key=lambda r: (r.label, r.seed)):
        final = float(np.mean(rec.sum_rate_bps[-10:]))
        ep95 = episodes_to_fraction_of_final(rec.sum_rate_bps)
        total_ab = float(rec.cum_abnormality[-1])
        lines.append(f"{rec.label},{rec.seed},{_fmt(final)},{ep95},{_fmt(total_ab)}")
    return "\n".join(lines) + "\n"
