"""Per-(user, network) Beta valuation models.

Prices are divided by ``price_scale`` to land in Beta's unit support before
fitting and multiplied back (times a per-network calibration coefficient)
when sampling.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betaincinv

from . import rng
from .errors import EstimationError, FormatError


class Provenance(IntEnum):
    DIRECT = 0
    POOLED = 1
    GLOBAL = 2

    @property
    def label(self) -> str:
        return ("direct", "pooled-other-networks", "global-network")[self]


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float
    provenance: Provenance = Provenance.DIRECT

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class EstimationConfig:
    min_other_networks: int = 3
    variance_floor: float = 1e-6
    support_clamp: float = 1e-4
    # degenerate moments (nu <= 0) fall back to this alpha + beta
    fallback_concentration: float = 2.0
    # converts per-impression revenue into waterfall price units (eCPM)
    price_multiplier: float = 1000.0
    # None: max observed price times scale_margin
    price_scale: float | None = None
    scale_margin: float = 1.05

    def __post_init__(self):
        if self.min_other_networks < 1:
            raise ValueError("min_other_networks must be >= 1")
        if not 0 < self.support_clamp < 0.5:
            raise ValueError("support_clamp must lie in (0, 0.5)")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")


def fit_beta(samples, cfg: EstimationConfig | None = None,
             provenance: Provenance = Provenance.DIRECT) -> BetaParams:
    """Method-of-moments Beta fit for samples on the unit interval."""
    cfg = cfg or EstimationConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot fit a Beta distribution to no samples")
    d = cfg.support_clamp
    x = np.clip(x, d, 1.0 - d)
    m = float(x.mean())
    v = max(float(x.var()), cfg.variance_floor)
    nu = m * (1.0 - m) / v - 1.0
    if nu <= 0:
        nu = cfg.fallback_concentration
    return BetaParams(m * nu, (1.0 - m) * nu, provenance)


@dataclass(frozen=True, eq=False)
class ValuationMatrix:
    users: tuple[str, ...]
    networks: tuple[str, ...]
    alpha: np.ndarray  # (U, K)
    beta: np.ndarray
    provenance: np.ndarray  # uint8 codes of Provenance
    price_scale: float
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        users, networks = tuple(self.users), tuple(self.networks)
        shape = (len(users), len(networks))
        alpha = np.ascontiguousarray(self.alpha, dtype=np.float64)
        beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        prov = np.ascontiguousarray(self.provenance, dtype=np.uint8)
        if alpha.shape != shape or beta.shape != shape or prov.shape != shape:
            raise ValueError(f"parameter arrays must have shape {shape}")
        if not (np.all(alpha > 0) and np.all(beta > 0)):
            raise ValueError("all Beta parameters must be positive")
        if not self.price_scale > 0:
            raise ValueError("price_scale must be positive")
        if len(set(users)) != len(users) or len(set(networks)) != len(networks):
            raise ValueError("user and network ids must be unique")
        for arr in (alpha, beta, prov):
            arr.flags.writeable = False
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "networks", networks)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "price_scale", float(self.price_scale))
        object.__setattr__(self, "_index", {
            "user": {u: i for i, u in enumerate(users)},
            "network": {k: j for j, k in enumerate(networks)},
        })

    @classmethod
    def homogeneous(cls, users: Sequence[str], params: Mapping[str, BetaParams], price_scale: float):
        """Every user shares one Beta per network."""
        networks = tuple(params)
        a = np.array([params[k].alpha for k in networks], dtype=np.float64)
        b = np.array([params[k].beta for k in networks], dtype=np.float64)
        p = np.array([int(params[k].provenance) for k in networks], dtype=np.uint8)
        n = len(users)
        return cls(tuple(users), networks, np.tile(a, (n, 1)), np.tile(b, (n, 1)), np.tile(p, (n, 1)), price_scale)

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape

    def user_index(self, user: str) -> int:
        try:
            return self._index["user"][user]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None

    def network_index(self, network: str) -> int:
        try:
            return self._index["network"][network]
        except KeyError:
            raise KeyError(f"unknown network {network!r}") from None

    def has_network(self, network: str) -> bool:
        return network in self._index["network"]

    def params(self, user: str, network: str) -> BetaParams:
        i, j = self.user_index(user), self.network_index(network)
        return BetaParams(float(self.alpha[i, j]), float(self.beta[i, j]), Provenance(int(self.provenance[i, j])))

    def user_hash_words(self) -> tuple[np.ndarray, np.ndarray]:
        cached = self._index.get("user_hash")
        if cached is None:
            cached = rng.hash64_words(self.users)
            self._index["user_hash"] = cached
        return cached

    def unit_draws(self, user_rows: np.ndarray, network: int, occurrence: int,
                   replicas: np.ndarray | int, seed: int) -> np.ndarray:
        """Beta draws on [0, 1] for the given matrix rows, keyed per draw."""
        lo, hi = self.user_hash_words()
        user_rows = np.asarray(user_rows, dtype=np.intp)
        u = rng.keyed_uniform(seed, lo[user_rows], hi[user_rows],
                              rng.hash32(self.networks[network]), occurrence, replicas)
        return betaincinv(self.alpha[user_rows, network], self.beta[user_rows, network], u)


def zeta_vector(matrix: ValuationMatrix, zeta: Mapping[str, float] | None) -> np.ndarray:
    """Per-network multipliers in matrix network order; absent networks get 1."""
    out = np.ones(len(matrix.networks), dtype=np.float64)
    for net, z in (zeta or {}).items():
        if matrix.has_network(net):
            out[matrix.network_index(net)] = float(z)
    return out


@dataclass(frozen=True)
class DrawKey:
    user: str
    network: str
    occurrence: int = 0
    replica: int = 0


def sample_valuation(matrix: ValuationMatrix, key: DrawKey, zeta: Mapping[str, float] | None = None,
                     seed: int = 0) -> float:
    """One valuation ``zeta_k * price_scale * X`` with ``X ~ Beta(alpha, beta)``.

    The draw is a pure function of (seed, key); repeated calls agree exactly.
    """
    i, j = matrix.user_index(key.user), matrix.network_index(key.network)
    x = matrix.unit_draws(np.array([i]), j, key.occurrence, key.replica, seed)[0]
    z = zeta_vector(matrix, zeta)[j]
    return float((z * matrix.price_scale) * x)


def resolve_price_scale(vectors: Mapping, cfg: EstimationConfig) -> float:
    if cfg.price_scale is not None:
        return float(cfg.price_scale)
    peak = max((float(np.max(v)) for v in vectors.values() if len(v)), default=0.0)
    if peak <= 0:
        raise EstimationError("cannot derive price_scale: no positive prices in the data")
    return peak * cfg.price_multiplier * cfg.scale_margin


def _unit(prices, price_scale, cfg):
    return np.asarray(prices, dtype=np.float64) * cfg.price_multiplier / price_scale


def global_params(vectors: Mapping, network: str, cfg: EstimationConfig | None = None,
                  price_scale: float | None = None) -> BetaParams:
    """Fit over every user's samples for ``network``."""
    cfg = cfg or EstimationConfig()
    chunks = [v for (_, k), v in sorted(vectors.items()) if k == network and len(v)]
    if not chunks:
        raise EstimationError(f"network {network!r} has no samples in the dataset")
    if price_scale is None:
        price_scale = resolve_price_scale(vectors, cfg)
    return fit_beta(_unit(np.concatenate(chunks), price_scale, cfg), cfg, Provenance.GLOBAL)


def _estimate_rows(users, networks, by_user, cfg, price_scale, global_cache):
    K = len(networks)
    alpha = np.empty((len(users), K))
    beta = np.empty((len(users), K))
    prov = np.empty((len(users), K), dtype=np.uint8)
    for row, user in enumerate(users):
        cells = by_user.get(user, {})
        for j, k in enumerate(networks):
            own = cells.get(k)
            if own is not None and len(own):
                bp = fit_beta(_unit(own, price_scale, cfg), cfg, Provenance.DIRECT)
            else:
                others = [z for z in networks if z != k and len(cells.get(z, ())) > 0]
                others += sorted(z for z in cells if z not in networks and len(cells[z]))
                if len(others) >= cfg.min_other_networks:
                    pooled = np.concatenate([cells[z] for z in others])
                    bp = fit_beta(_unit(pooled, price_scale, cfg), cfg, Provenance.POOLED)
                else:
                    bp = global_cache(k)
            alpha[row, j], beta[row, j], prov[row, j] = bp.alpha, bp.beta, int(bp.provenance)
    return alpha, beta, prov


def estimate_matrix(vectors: Mapping, users: Sequence[str], networks: Sequence[str],
                    cfg: EstimationConfig | None = None, threads: int = 1) -> ValuationMatrix:
    """Direct fit where a user sold to the network; otherwise pool the user's
    other networks when there are at least ``min_other_networks`` of them;
    otherwise fall back to the network's global fit.
    """
    cfg = cfg or EstimationConfig()
    users, networks = tuple(users), tuple(networks)
    if not users or not networks:
        raise ValueError("users and networks must be non-empty")
    price_scale = resolve_price_scale(vectors, cfg)
    by_user: dict[str, dict[str, np.ndarray]] = {}
    for (u, k), v in vectors.items():
        by_user.setdefault(u, {})[k] = v

    # global fits are computed up front so worker threads only read them
    globals_: dict[str, BetaParams | EstimationError] = {}
    for k in networks:
        try:
            globals_[k] = global_params(vectors, k, cfg, price_scale)
        except EstimationError as exc:
            globals_[k] = exc

    def global_cache(k):
        bp = globals_[k]
        if isinstance(bp, EstimationError):
            raise bp
        return bp

    threads = max(1, int(threads))
    chunks = [users[i::threads] for i in range(threads)] if threads > 1 else [users]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _estimate_rows(c, networks, by_user, cfg, price_scale, global_cache),
                                  chunks))
    else:
        parts = [_estimate_rows(users, networks, by_user, cfg, price_scale, global_cache)]
    alpha = np.empty((len(users), len(networks)))
    beta = np.empty_like(alpha)
    prov = np.empty(alpha.shape, dtype=np.uint8)
    for t, (a, b, p) in enumerate(parts):
        sl = slice(t, None, len(parts))
        alpha[sl], beta[sl], prov[sl] = a, b, p
    return ValuationMatrix(users, networks, alpha, beta, prov, price_scale)


# ---------------------------------------------------------------- persistence
# Binary layout (little-endian): magic b"WFVMAT", u16 version, u32 U, u32 K,
# then U user ids and K network ids as (u32 length, utf-8 bytes), then alpha
# and beta as f64[U*K] row-major, then provenance as u8[U*K].

MATRIX_MAGIC = b"WFVMAT"
MATRIX_VERSION = 1


def config_hash(cfg) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_matrix(matrix: ValuationMatrix, path, seed: int | None = None,
                cfg: EstimationConfig | None = None) -> None:
    parts = [MATRIX_MAGIC, struct.pack("<HII", MATRIX_VERSION, *matrix.shape)]
    for s in (*matrix.users, *matrix.networks):
        raw = s.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(matrix.alpha.astype("<f8").tobytes())
    parts.append(matrix.beta.astype("<f8").tobytes())
    parts.append(matrix.provenance.astype("u1").tobytes())
    Path(path).write_bytes(b"".join(parts))
    meta = {
        "format": "waterfall-valuation-matrix",
        "version": MATRIX_VERSION,
        "price_scale": matrix.price_scale,
        "seed": seed,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "config": asdict(cfg) if cfg is not None else None,
        "provenance_counts": {Provenance(c).label: int((matrix.provenance == c).sum()) for c in Provenance},
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_matrix(path) -> ValuationMatrix:
    data = Path(path).read_bytes()
    if not data.startswith(MATRIX_MAGIC):
        raise FormatError(f"{path}: not a valuation matrix file")
    off = len(MATRIX_MAGIC)
    try:
        version, U, K = struct.unpack_from("<HII", data, off)
        if version != MATRIX_VERSION:
            raise FormatError(f"{path}: unsupported matrix version {version}")
        off += struct.calcsize("<HII")
        names = []
        for _ in range(U + K):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            names.append(data[off:off + n].decode("utf-8"))
            off += n
        cells = U * K
        alpha = np.frombuffer(data, "<f8", cells, off).reshape(U, K)
        off += 8 * cells
        beta = np.frombuffer(data, "<f8", cells, off).reshape(U, K)
        off += 8 * cells
        prov = np.frombuffer(data, "u1", cells, off).reshape(U, K)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt matrix file ({exc})") from None
    scale = None
    side = sidecar_path(path)
    if side.exists():
        scale = json.loads(side.read_text(encoding="utf-8")).get("price_scale")
    if scale is None:
        raise FormatError(f"{path}: missing sidecar {side.name} with price_scale")
    return ValuationMatrix(tuple(names[:U]), tuple(names[U:]), alpha.copy(), beta.copy(), prov.copy(), scale)
