"""Demonstration dataset pipeline.

Builds the 108-scenario grid (drift x volatility x jump intensity x dt x
liquidity), runs an expert tournament per scenario on shared seeds, rolls the
winning teacher to collect observation-window / action-chunk pairs, and
persists everything with the normalization statistics needed at train and
inference time.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .env import ScenarioConfig
from .errors import InputError, LoadError, UsageError
from .evaluation import UndefinedSharpeError, run_episode, sharpe
from .experts import default_candidates, expert_code
from .seeding import DOMAIN_GRID

GRID_DRIFT = (0.01, 0.05, 0.2)
GRID_VOLATILITY = (0.05, 0.1, 0.3)
GRID_JUMP_INTENSITY = (0.0, 0.02)
GRID_DT = (0.01, 0.02)
GRID_LIQUIDITY = (10.0, 20.0, 40.0)

T_OBS = 2
T_PRED = 16
T_EXEC = 8

_DATASET_FORMAT = "flowmm-dataset"
_DATASET_VERSION = 1
_HEADER_STRUCT = struct.Struct("<Q")


def build_scenario_grid(base: ScenarioConfig = None) -> list:
    """All 108 scenario configs, Cartesian product in axis order
    (drift, volatility, jump_intensity, dt, liquidity), last axis fastest.

    Non-grid fields are taken from ``base`` (package defaults when omitted).
    """
    from dataclasses import replace

    base = base if base is not None else ScenarioConfig()
    grid = []
    for mu, vol, jump, dt, liq in itertools.product(
        GRID_DRIFT, GRID_VOLATILITY, GRID_JUMP_INTENSITY, GRID_DT, GRID_LIQUIDITY
    ):
        grid.append(
            replace(
                base,
                dt=dt,
                drift=mu,
                volatility=vol,
                jump_intensity=jump,
                base_intensity_buy=liq,
                base_intensity_sell=liq,
            )
        )
    return grid


# ---------------------------------------------------------------------------
# Tournament
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateScore:
    name: str
    mean_reward: float
    sharpe: float


def evaluate_candidates(config, candidates, episodes, seed, stream_key=()) -> list:
    """Score candidates on identical seed sequences.

    Score is the mean total episode reward; the per-candidate Sharpe over
    episode rewards is kept for tie-breaking (0.0 when undefined).
    """
    if not candidates:
        raise UsageError("evaluate_candidates needs at least one candidate")
    if episodes < 1:
        raise InputError("episodes must be >= 1")
    scoreboard = []
    for cand in candidates:
        totals = np.empty(episodes)
        for e in range(episodes):
            res = run_episode(
                config, cand, seed, episode_key=(DOMAIN_GRID, *stream_key, 0, e)
            )
            totals[e] = res.total_reward
        try:
            sr = sharpe(totals) if episodes >= 2 else 0.0
        except UndefinedSharpeError:
            sr = 0.0
        scoreboard.append(CandidateScore(cand.name, math.fsum(totals) / episodes, sr))
    return scoreboard


def select_expert_index(scoreboard) -> int:
    """Argmax by mean reward; ties broken by Sharpe, then by candidate order."""
    if not scoreboard:
        raise UsageError("empty scoreboard")
    return max(
        range(len(scoreboard)),
        key=lambda i: (scoreboard[i].mean_reward, scoreboard[i].sharpe, -i),
    )


def select_expert(scoreboard) -> str:
    return scoreboard[select_expert_index(scoreboard)].name


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

def collect_demonstrations(
    config, strategy, episodes, seed, stream_key=(), t_obs=T_OBS, t_pred=T_PRED
):
    """Roll the teacher and emit one (window, chunk) pair per step.

    The window holds the last ``t_obs`` states (front-padded by repeating the
    first state), the chunk the teacher's next ``t_pred`` actions (end-padded
    by repeating the last action).  Actions are returned raw; normalization
    happens once global stats exist.  Returns (windows, chunks_raw).
    """
    n = config.n_steps
    rows = np.arange(n)[:, None]
    w_idx = np.clip(rows + np.arange(-(t_obs - 1), 1)[None, :], 0, n)
    c_idx = np.minimum(rows + np.arange(t_pred)[None, :], n - 1)
    windows = np.empty((episodes * n, t_obs, 5))
    chunks = np.empty((episodes * n, t_pred, 2))
    for e in range(episodes):
        res = run_episode(
            config, strategy, seed, episode_key=(DOMAIN_GRID, *stream_key, 1, e),
            keep_states=True,
        )
        state_mat = np.array([s.as_vector() for s in res.states])
        act_mat = np.array([(a.delta_bid, a.delta_ask) for a in res.actions])
        windows[e * n:(e + 1) * n] = state_mat[w_idx]
        chunks[e * n:(e + 1) * n] = act_mat[c_idx]
    return windows, chunks


# ---------------------------------------------------------------------------
# Normalization statistics
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Dataset statistics stored with every dataset and checkpoint.

    Actions map linearly to [-1, 1] from their min/max; observations are
    standardized to zero mean / unit variance from dataset moments (the
    min/max of observations are kept alongside for range checks).
    """

    obs_min: np.ndarray
    obs_max: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_min: np.ndarray
    act_max: np.ndarray

    def __post_init__(self):
        for name in ("obs_min", "obs_max", "obs_mean", "obs_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.act_min = np.asarray(self.act_min, dtype=np.float64)
        self.act_max = np.asarray(self.act_max, dtype=np.float64)
        if np.any(self.obs_min > self.obs_max) or np.any(self.act_min > self.act_max):
            raise InputError("NormStats requires min <= max componentwise")

    def _act_span(self):
        return np.maximum(self.act_max - self.act_min, 1e-12)

    def normalize_action(self, a):
        return 2.0 * (np.asarray(a, dtype=np.float64) - self.act_min) / self._act_span() - 1.0

    def unnormalize_action(self, x):
        return self.act_min + (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * self._act_span()

    def standardize_obs(self, obs):
        std = np.maximum(self.obs_std, 1e-8)
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / std

    def as_dict(self):
        return {
            "obs_min": self.obs_min.tolist(),
            "obs_max": self.obs_max.tolist(),
            "obs_mean": self.obs_mean.tolist(),
            "obs_std": self.obs_std.tolist(),
            "act_min": self.act_min.tolist(),
            "act_max": self.act_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.array(v) for k, v in d.items()})


def compute_stats(windows, chunks_raw) -> NormStats:
    """Global stats over all window rows and raw chunk entries."""
    obs = windows.reshape(-1, windows.shape[-1])
    act = chunks_raw.reshape(-1, chunks_raw.shape[-1])
    return NormStats(
        obs_min=obs.min(axis=0),
        obs_max=obs.max(axis=0),
        obs_mean=obs.mean(axis=0),
        obs_std=obs.std(axis=0),
        act_min=act.min(axis=0),
        act_max=act.max(axis=0),
    )


# ---------------------------------------------------------------------------
# Dataset container and file format
# ---------------------------------------------------------------------------

@dataclass
class DemoRecord:
    observation_window: np.ndarray
    action_chunk: np.ndarray
    scenario_id: int
    expert: str


@dataclass
class DemoDataset:
    """Raw observation windows, normalized action chunks, and provenance tags."""

    windows: np.ndarray        # (n, t_obs, 5) raw observations
    chunks: np.ndarray         # (n, t_pred, 2) normalized to [-1, 1]
    scenario_ids: np.ndarray   # (n,) int16
    expert_codes: np.ndarray   # (n,) int16, index into EXPERT_TAGS
    stats: NormStats
    t_obs: int = T_OBS
    t_pred: int = T_PRED

    def __len__(self):
        return self.windows.shape[0]

    def record(self, i) -> DemoRecord:
        from .experts import EXPERT_TAGS

        return DemoRecord(
            observation_window=self.windows[i],
            action_chunk=self.chunks[i],
            scenario_id=int(self.scenario_ids[i]),
            expert=EXPERT_TAGS[int(self.expert_codes[i])],
        )


def save_dataset(path, ds: DemoDataset) -> None:
    """uint64 header length + JSON header + float64 LE records (window then
    chunk, contiguous per record) + int16 LE (scenario_id, expert) per record."""
    n = len(ds)
    header = {
        "format": _DATASET_FORMAT,
        "version": _DATASET_VERSION,
        "count": n,
        "t_obs": int(ds.t_obs),
        "t_pred": int(ds.t_pred),
        "obs_dim": 5,
        "act_dim": 2,
        "stats": ds.stats.as_dict(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    floats = np.concatenate(
        [ds.windows.reshape(n, -1), ds.chunks.reshape(n, -1)], axis=1
    )
    tags = np.stack(
        [ds.scenario_ids.astype("<i2"), ds.expert_codes.astype("<i2")], axis=1
    )
    with open(path, "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(floats, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tags, dtype="<i2").tobytes())


def load_dataset(path) -> DemoDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_STRUCT.size:
        raise LoadError(f"{path}: truncated header")
    (hlen,) = _HEADER_STRUCT.unpack_from(raw, 0)
    body = _HEADER_STRUCT.size + hlen
    if len(raw) < body:
        raise LoadError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_HEADER_STRUCT.size:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != _DATASET_FORMAT:
        raise LoadError(f"{path}: not a dataset file")
    if header.get("version") != _DATASET_VERSION:
        raise LoadError(f"{path}: unsupported dataset version {header.get('version')}")
    n = int(header["count"])
    t_obs, t_pred = int(header["t_obs"]), int(header["t_pred"])
    obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
    rec_floats = t_obs * obs_dim + t_pred * act_dim
    float_bytes = 8 * n * rec_floats
    tag_bytes = 2 * n * 2
    if len(raw) != body + float_bytes + tag_bytes:
        raise LoadError(
            f"{path}: body length {len(raw) - body}, expected {float_bytes + tag_bytes}"
        )
    floats = np.frombuffer(raw, dtype="<f8", count=n * rec_floats, offset=body)
    floats = floats.astype(np.float64).reshape(n, rec_floats)
    tags = np.frombuffer(raw, dtype="<i2", count=n * 2, offset=body + float_bytes)
    tags = tags.astype(np.int16).reshape(n, 2)
    split = t_obs * obs_dim
    return DemoDataset(
        windows=floats[:, :split].reshape(n, t_obs, obs_dim).copy(),
        chunks=floats[:, split:].reshape(n, t_pred, act_dim).copy(),
        scenario_ids=tags[:, 0].copy(),
        expert_codes=tags[:, 1].copy(),
        stats=NormStats.from_dict(header["stats"]),
        t_obs=t_obs,
        t_pred=t_pred,
    )


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioOutcome:
    scenario_id: int
    winner: str
    scoreboard: tuple


def _scenario_job(args):
    (scenario_id, config, tournament_episodes, collect_episodes, seed,
     t_obs, t_pred) = args
    candidates = default_candidates(config)
    scoreboard = evaluate_candidates(
        config, candidates, tournament_episodes, seed, stream_key=(scenario_id,)
    )
    winner_i = select_expert_index(scoreboard)
    windows, chunks = collect_demonstrations(
        config, candidates[winner_i], collect_episodes, seed,
        stream_key=(scenario_id,), t_obs=t_obs, t_pred=t_pred,
    )
    return scenario_id, scoreboard, candidates[winner_i].name, windows, chunks


def generate_dataset(
    collect_episodes=100,
    tournament_episodes=16,
    seed=0,
    grid=None,
    workers=1,
    t_obs=T_OBS,
    t_pred=T_PRED,
    extra_candidates=None,
):
    """Tournament + collection over the scenario grid.

    Returns (DemoDataset, list[ScenarioOutcome]).  ``workers`` > 1 fans
    scenarios out to a process pool; results are merged in scenario order so
    the output is identical for any worker count.  ``extra_candidates`` may
    map a (config, scenario_id) to additional Strategy objects (e.g. a
    per-scenario direct-PPO teacher); it forces single-process execution.
    """
    grid = build_scenario_grid() if grid is None else list(grid)
    jobs = [
        (i, cfg, tournament_episodes, collect_episodes, seed, t_obs, t_pred)
        for i, cfg in enumerate(grid)
    ]
    results = []
    if extra_candidates is not None:
        for job in jobs:
            results.append(_scenario_job_with_extras(job, extra_candidates))
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scenario_job, jobs, chunksize=4))
    else:
        results = [_scenario_job(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    outcomes = []
    all_windows, all_chunks, scen_ids, codes = [], [], [], []
    for scenario_id, scoreboard, winner, windows, chunks in results:
        outcomes.append(ScenarioOutcome(scenario_id, winner, tuple(scoreboard)))
        all_windows.append(windows)
        all_chunks.append(chunks)
        n = windows.shape[0]
        scen_ids.append(np.full(n, scenario_id, dtype=np.int16))
        codes.append(np.full(n, expert_code(winner), dtype=np.int16))
    windows = np.concatenate(all_windows)
    chunks_raw = np.concatenate(all_chunks)
    stats = compute_stats(windows, chunks_raw)
    ds = DemoDataset(
        windows=windows,
        chunks=stats.normalize_action(chunks_raw),
        scenario_ids=np.concatenate(scen_ids),
        expert_codes=np.concatenate(codes),
        stats=stats,
        t_obs=t_obs,
        t_pred=t_pred,
    )
    return ds, outcomes


def _scenario_job_with_extras(args, extra_candidates):
    (scenario_id, config, tournament_episodes, collect_episodes, seed,
     t_obs, t_pred) = args
    candidates = default_candidates(config) + list(extra_candidates(config, scenario_id))
    scoreboard = evaluate_candidates(
        config, candidates, tournament_episodes, seed, stream_key=(scenario_id,)
    )
    winner_i = select_expert_index(scoreboard)
    windows, chunks = collect_demonstrations(
        config, candidates[winner_i], collect_episodes, seed,
        stream_key=(scenario_id,), t_obs=t_obs, t_pred=t_pred,
    )
    return scenario_id, scoreboard, candidates[winner_i].name, windows, chunks


def winners_csv_text(outcomes, grid) -> str:
    """Per-scenario winner table (CSV), one row per scenario."""
    header = [
        "scenario_id", "drift", "volatility", "jump_intensity", "dt", "liquidity", "winner",
    ]
    if outcomes:
        for cs in outcomes[0].scoreboard:
            header += [f"{cs.name}_mean", f"{cs.name}_sharpe"]
    lines = [",".join(header)]
    for out in outcomes:
        cfg = grid[out.scenario_id]
        row = [
            str(out.scenario_id), repr(cfg.drift), repr(cfg.volatility),
            repr(cfg.jump_intensity), repr(cfg.dt), repr(cfg.base_intensity_buy),
            out.winner,
        ]
        for cs in out.scoreboard:
            row += [repr(cs.mean_reward), repr(cs.sharpe)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
