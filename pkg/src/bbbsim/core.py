"""Geometry, configuration state, the randomness contract, and run manifests.

Positions live in R^d with unit-diffusivity Brownian motion per coordinate.
A configuration is an ordered list of up to ``capacity`` particles; fewer than
``capacity`` particles is allowed (the growth phase of a run started small).
All particle indices in this package are 0-based.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError

# A point is simply a float64 vector of length d.
Point = NDArray[np.float64]

RECENTER_RTOL = 1e-12

# Draw-buffer block sizes. Both simulation kernels consume randomness through
# the same block-refill discipline, so one (seed, stream) pair yields the same
# draw sequence no matter which kernel runs.
NORMAL_BLOCK = 4096
EXP_BLOCK = 1024
UNIFORM_BLOCK = 1024


def _as_positions(x) -> NDArray[np.float64]:
    """Coerce a Configuration, array, or nested sequence to an (n, d) array."""
    if isinstance(x, Configuration):
        return x.positions
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DomainError(f"positions must be an (n, d) array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Configuration:
    """An ordered particle configuration with a fixed capacity.

    Parameters
    ----------
    positions : (n, d) array
        Particle positions; 1 <= n <= capacity, all coordinates finite.
    capacity : int
        The population ceiling (the ``N`` of the process).
    """

    positions: NDArray[np.float64]
    capacity: int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        if pos.ndim != 2:
            raise DomainError(f"positions must be (n, d), got shape {pos.shape}")
        n = pos.shape[0]
        if self.capacity < 1:
            raise DomainError("capacity must be >= 1")
        if not 1 <= n <= self.capacity:
            raise DomainError(f"particle count {n} outside [1, {self.capacity}]")
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def barycenter(c: Union[Configuration, NDArray]) -> Point:
    """Coordinate-wise arithmetic mean of the particle positions."""
    pos = _as_positions(c)
    if pos.shape[0] == 0:
        raise DomainError("barycenter of an empty configuration")
    return pos.mean(axis=0)


def extent(c: Union[Configuration, NDArray]) -> float:
    """Maximum pairwise Euclidean distance; 0 for a single particle."""
    pos = _as_positions(c)
    n = pos.shape[0]
    if n == 0:
        raise DomainError("extent of an empty configuration")
    if n == 1:
        return 0.0
    diff = pos[:, None, :] - pos[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2).max()))


def recenter(c: Union[Configuration, NDArray]):
    """Shift every position by minus the barycenter.

    The output barycenter is the origin to within RECENTER_RTOL relative
    floating-point tolerance.
    """
    pos = _as_positions(c)
    out = pos - barycenter(pos)
    if isinstance(c, Configuration):
        return Configuration(out, c.capacity)
    return out


class RngStream:
    """A reproducible, buffered randomness source.

    One stream is identified by ``(seed, stream)``; the same pair always
    yields the same draw sequence within one build, and distinct stream ids
    give statistically independent streams (numpy Philox keyed through
    ``SeedSequence(seed, spawn_key=(stream,))``).  Gaussian/exponential draws
    use numpy's ziggurat samplers.  ``counter`` counts variates consumed.
    """

    __slots__ = (
        "seed", "stream", "_gen",
        "_norm_buf", "_norm_pos", "_exp_buf", "_exp_pos", "_uni_buf", "_uni_pos",
        "_drawn",
    )

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._norm_buf = np.empty(0)
        self._norm_pos = 0
        self._exp_buf = np.empty(0)
        self._exp_pos = 0
        self._uni_buf = np.empty(0)
        self._uni_pos = 0
        self._drawn = 0

    # Refill hooks are called by both kernels; each returns the fresh buffer.
    def _refill_normals(self) -> NDArray[np.float64]:
        self._norm_buf = self._gen.standard_normal(NORMAL_BLOCK)
        self._norm_pos = 0
        self._drawn += NORMAL_BLOCK
        return self._norm_buf

    def _refill_exponentials(self) -> NDArray[np.float64]:
        self._exp_buf = self._gen.standard_exponential(EXP_BLOCK)
        self._exp_pos = 0
        self._drawn += EXP_BLOCK
        return self._exp_buf

    def _refill_uniforms(self) -> NDArray[np.float64]:
        self._uni_buf = self._gen.random(UNIFORM_BLOCK)
        self._uni_pos = 0
        self._drawn += UNIFORM_BLOCK
        return self._uni_buf

    @property
    def counter(self) -> int:
        """Variates consumed so far (monotone)."""
        left = (
            (self._norm_buf.shape[0] - self._norm_pos)
            + (self._exp_buf.shape[0] - self._exp_pos)
            + (self._uni_buf.shape[0] - self._uni_pos)
        )
        return self._drawn - left

    def normals(self, k: int) -> NDArray[np.float64]:
        """k standard normal draws."""
        out = np.empty(k)
        filled = 0
        while filled < k:
            if self._norm_pos == self._norm_buf.shape[0]:
                self._refill_normals()
            take = min(k - filled, self._norm_buf.shape[0] - self._norm_pos)
            out[filled:filled + take] = self._norm_buf[self._norm_pos:self._norm_pos + take]
            self._norm_pos += take
            filled += take
        return out

    def exponential(self) -> float:
        """One standard exponential draw (mean 1)."""
        if self._exp_pos == self._exp_buf.shape[0]:
            self._refill_exponentials()
        v = float(self._exp_buf[self._exp_pos])
        self._exp_pos += 1
        return v

    def uniform(self) -> float:
        """One uniform draw on [0, 1)."""
        if self._uni_pos == self._uni_buf.shape[0]:
            self._refill_uniforms()
        v = float(self._uni_buf[self._uni_pos])
        self._uni_pos += 1
        return v


def brownian_increment(c: Configuration, dt: float, rng: RngStream) -> Configuration:
    """Advance every coordinate by an independent N(0, dt) increment.

    dt = 0 returns the input unchanged (and consumes no randomness).
    """
    if dt < 0:
        raise DomainError(f"negative time step dt={dt}")
    if dt == 0:
        return c
    pos = _as_positions(c)
    n, d = pos.shape
    z = rng.normals(n * d).reshape(n, d)
    out = pos + np.sqrt(dt) * z
    if isinstance(c, Configuration):
        return Configuration(out, c.capacity)
    return out


@dataclass(frozen=True)
class InitialCondition:
    """Initial-condition choice: point mass, explicit list, or Gaussian cloud.

    ``count`` may be smaller than the manifest's N (growth phase); it defaults
    to N.  A Gaussian cloud is drawn from the replica's own stream, so each
    replica gets an independent, reproducible cloud.
    """

    kind: str = "point"
    point: Optional[Sequence[float]] = None
    positions: Optional[Sequence[Sequence[float]]] = None
    scale: float = 1.0
    count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("point", "explicit", "gaussian"):
            raise DomainError(f"unknown initial-condition kind {self.kind!r}")
        if self.kind == "explicit" and self.positions is None:
            raise DomainError("explicit initial condition needs positions")

    def build(self, N: int, d: int, rng: RngStream) -> NDArray[np.float64]:
        n0 = N if self.count is None else int(self.count)
        if not 1 <= n0 <= N:
            raise DomainError(f"initial particle count {n0} outside [1, {N}]")
        if self.kind == "explicit":
            pos = np.asarray(self.positions, dtype=np.float64)
            if pos.ndim == 1:
                pos = pos.reshape(-1, 1)
            if pos.shape != (n0, d) and self.count is None:
                n0 = pos.shape[0]
            if pos.shape != (n0, d):
                raise DomainError(f"explicit positions have shape {pos.shape}, want ({n0}, {d})")
            if not 1 <= n0 <= N:
                raise DomainError(f"initial particle count {n0} outside [1, {N}]")
            return pos
        center = np.zeros(d) if self.point is None else np.asarray(self.point, dtype=np.float64)
        if center.shape != (d,):
            raise DomainError(f"initial point has shape {center.shape}, want ({d},)")
        if self.kind == "point":
            return np.tile(center, (n0, 1))
        z = rng.normals(n0 * d).reshape(n0, d)
        return center + self.scale * z

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.point is not None:
            out["point"] = [float(v) for v in self.point]
        if self.positions is not None:
            out["positions"] = [[float(v) for v in row] for row in np.atleast_2d(np.asarray(self.positions, dtype=float))]
        if self.kind == "gaussian":
            out["scale"] = float(self.scale)
        if self.count is not None:
            out["count"] = int(self.count)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "InitialCondition":
        return cls(
            kind=data.get("kind", "point"),
            point=data.get("point"),
            positions=data.get("positions"),
            scale=float(data.get("scale", 1.0)),
            count=data.get("count"),
        )


@dataclass(frozen=True)
class RunManifest:
    """Full description of one experiment; the unit of reproducibility.

    JSON schema (stable field names): ``N`` (int), ``d`` (int), ``horizon``
    (float), ``dt_obs`` (float), ``seed`` (int), ``replicas`` (int),
    ``initial`` (object, see InitialCondition.to_dict).  Floats round-trip at
    full precision (Python repr).
    """

    N: int
    d: int
    horizon: float
    dt_obs: float
    seed: int
    replicas: int = 1
    initial: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise DomainError("need N >= 1 and d >= 1")
        if self.horizon < 0:
            raise DomainError("horizon must be >= 0")
        if self.dt_obs <= 0:
            raise DomainError("dt_obs must be > 0")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "d": self.d,
            "horizon": float(self.horizon),
            "dt_obs": float(self.dt_obs),
            "seed": int(self.seed),
            "replicas": int(self.replicas),
            "initial": self.initial.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        return cls(
            N=int(data["N"]),
            d=int(data["d"]),
            horizon=float(data["horizon"]),
            dt_obs=float(data["dt_obs"]),
            seed=int(data["seed"]),
            replicas=int(data.get("replicas", 1)),
            initial=InitialCondition.from_dict(data.get("initial", {})),
        )

    def hash(self) -> str:
        """sha256 of the canonical JSON form; embedded in every artifact."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replica_stream(self, replica: int) -> RngStream:
        """Stream for one replica: stream id = replica index."""
        return RngStream(self.seed, replica)

    def initial_positions(self, rng: RngStream) -> NDArray[np.float64]:
        return self.initial.build(self.N, self.d, rng)
