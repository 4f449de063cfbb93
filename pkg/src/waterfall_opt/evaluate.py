"""Fidelity of a valuation matrix against observed impressions, and per-network
calibration coefficients fitted by coordinate descent over a grid."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Waterfall
from .errors import DimensionError, UndefinedWeightsError
from .rng import derive_seed
from .simulate import SimulationConfig, Simulator
from .valuation import ValuationMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("score weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", w)


def score_weights(w: Waterfall, q) -> ScoreWeights:
    """Each instance's share of observed revenue."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(w),):
        raise DimensionError(f"impression vector has length {q.size}, waterfall has {len(w)}")
    contrib = q * w.prices
    total = contrib.sum()
    if not total > 0:
        raise UndefinedWeightsError("observed revenue is zero; weights are undefined")
    return ScoreWeights(contrib / total)


def fidelity_score(q_sim, q_obs, weights: ScoreWeights) -> float:
    """Revenue-weighted mean relative error ``sum |q'_i - q_i| / q_i * We_i``.

    Instances with zero observed impressions carry zero weight; their term is
    ``|q'_i| * 0`` and a warning is logged.
    """
    q_obs = np.asarray(q_obs, dtype=np.float64)
    zero = q_obs == 0
    if zero.any():
        log.warning("instances %s have zero observed impressions; scored with denominator 1",
                    np.flatnonzero(zero).tolist())
    return _score(q_sim, q_obs, weights.weights)


def _score(q_sim, q_obs, we) -> float:
    q_sim = np.asarray(q_sim, dtype=np.float64)
    q_obs = np.asarray(q_obs, dtype=np.float64)
    if not (q_sim.shape == q_obs.shape == we.shape):
        raise DimensionError("simulated, observed and weight vectors differ in length")
    zero = q_obs == 0
    denom = np.where(zero, 1.0, q_obs)
    rel = np.abs(q_sim - q_obs) / denom
    return float(np.sum(np.where(zero, 0.0, rel * we)))


@dataclass(frozen=True)
class CalibrationConfig:
    lo: float = 0.5
    hi: float = 2.0
    step: float = 0.05
    sweep_tolerance: float = 1e-4
    max_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.lo > 0 and self.step > 0 and self.lo <= 1.0 <= self.hi):
            raise ValueError("calibration grid needs lo > 0, step > 0 and lo <= 1 <= hi")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")

    def grid(self) -> np.ndarray:
        n = int(np.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(n), 10)


@dataclass
class CalibrationResult:
    zeta: dict[str, float]
    initial_score: float
    score: float
    trajectory: list[dict] = field(default_factory=list)
    rounds: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "zeta": dict(self.zeta),
            "initial_score": self.initial_score,
            "final_score": self.score,
            "rounds": self.rounds,
            "trajectory": self.trajectory,
            "diagnostics": self.diagnostics,
        }


def calibrate_zeta(source: ValuationMatrix | Simulator, w: Waterfall, q_obs, cfg: CalibrationConfig | None = None,
                   sim_cfg: SimulationConfig | None = None, zeta0: Mapping[str, float] | None = None,
                   threads: int = 1) -> CalibrationResult:
    """Round-robin grid search of one network's coefficient at a time.

    Networks are visited in a fresh seeded permutation each round. A grid value
    replaces the current one only if it lowers the score, so the trajectory is
    non-increasing. Stops after a round that gains less than
    ``sweep_tolerance`` or after ``max_rounds`` rounds.
    """
    cfg = cfg or CalibrationConfig()
    if isinstance(source, Simulator):
        simulator = source
    else:
        simulator = Simulator.from_config(source, sim_cfg or SimulationConfig())
    q_obs = np.asarray(q_obs)
    weights = score_weights(w, q_obs)
    networks = sorted(set(w.networks))
    zeta = {k: 1.0 for k in networks}
    zeta.update({k: float(v) for k, v in (zeta0 or {}).items()})
    diagnostics = []
    if np.any(q_obs == 0):
        diagnostics.append(f"zero observed impressions at positions {np.flatnonzero(q_obs == 0).tolist()}")
        log.warning(diagnostics[-1])

    def score(z):
        return _score(simulator.run(w, z).q_prime, q_obs, weights.weights)

    current = score(zeta)
    result = CalibrationResult(dict(zeta), current, current, diagnostics=diagnostics)
    result.trajectory.append({"round": 0, "network": None, "zeta": None, "score": current})
    grid = cfg.grid()
    threads = max(1, int(threads))
    for rnd in range(1, cfg.max_rounds + 1):
        start = current
        order = np.random.default_rng(derive_seed(cfg.seed, f"calibrate-round-{rnd}")).permutation(len(networks))
        for idx in order:
            k = networks[int(idx)]
            trials = [{**zeta, k: float(g)} for g in grid]
            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    scores = list(pool.map(score, trials))
            else:
                scores = [score(t) for t in trials]
            best = int(np.argmin(scores))
            if scores[best] < current:
                zeta[k] = float(grid[best])
                current = scores[best]
            result.trajectory.append({"round": rnd, "network": k, "zeta": zeta[k], "score": current})
        result.rounds = rnd
        if start - current < cfg.sweep_tolerance:
            break
    result.zeta = dict(zeta)
    result.score = current
    return result
