"""Seeded random sampling primitives.

Every Monte Carlo routine in the package draws through an
:class:`RngStream`.  Streams are backed by numpy's counter-based
``Philox`` bit generator keyed by a :class:`numpy.random.SeedSequence`,
so ``(seed, stream_id)`` pins the draw sequence and distinct stream ids
give independent streams that can be handed to concurrent workers.

Samplers return a Python scalar by default, or a numpy array when
``size`` is given.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from activity_forecast.errors import DomainError

FloatOrArray = Union[float, np.ndarray]
IntOrArray = Union[int, np.ndarray]


class RngStream:
    """A reproducible, independently seedable random stream.

    Args:
        seed: Root seed (64-bit unsigned integer).
        stream_id: Replication index; streams with the same seed but
            different ids are statistically independent.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        if seed < 0 or stream_id < 0:
            raise DomainError("seed and stream_id must be nonnegative integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._seed_seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._generator = np.random.Generator(np.random.Philox(self._seed_seq))

    @classmethod
    def _from_seed_sequence(cls, seed_seq: np.random.SeedSequence, stream_id: int) -> "RngStream":
        stream = cls.__new__(cls)
        stream.seed = int(seed_seq.entropy)
        stream.stream_id = int(stream_id)
        stream._seed_seq = seed_seq
        stream._generator = np.random.Generator(np.random.Philox(seed_seq))
        return stream

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy generator (owned by this stream)."""
        return self._generator

    def spawn(self, n: int) -> Tuple["RngStream", ...]:
        """Derive ``n`` child streams, independent of this one and of each other.

        Spawning is deterministic: the k-th call on identically seeded
        streams yields identical children.
        """
        children = self._seed_seq.spawn(n)
        return tuple(
            RngStream._from_seed_sequence(child, child.spawn_key[-1]) for child in children
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class NegBinLaw:
    """Negative binomial law ``P(X=k) = C(k+r-1, k) p^r (1-p)^k``.

    Attributes:
        r: Size parameter, strictly positive, may be non-integer.
        p: Success probability in ``(0, 1]``; ``p == 1`` is the point
            mass at zero.
    """

    r: float
    p: float

    def __post_init__(self) -> None:
        if not self.r > 0.0:
            raise DomainError(f"NegBin size r must be positive, got {self.r!r}")
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"NegBin probability p must lie in (0, 1], got {self.p!r}")

    @property
    def mean(self) -> float:
        return self.r * (1.0 - self.p) / self.p

    @property
    def var(self) -> float:
        return self.r * (1.0 - self.p) / self.p ** 2

    def pmf(self, k: IntOrArray) -> FloatOrArray:
        return stats.nbinom.pmf(k, self.r, self.p)

    def logpmf(self, k: IntOrArray) -> FloatOrArray:
        return stats.nbinom.logpmf(k, self.r, self.p)

    def quantile(self, q: FloatOrArray) -> IntOrArray:
        """Smallest ``k`` with ``P(X <= k) >= q``."""
        out = stats.nbinom.ppf(q, self.r, self.p)
        if np.ndim(out) == 0:
            return int(out)
        return np.asarray(out, dtype=np.int64)


def sample_gamma(shape: float, rate: float, rng: RngStream,
                 size: Optional[int] = None) -> FloatOrArray:
    """Draw from ``Gamma(shape, rate)`` (mean ``shape / rate``).

    Raises:
        DomainError: On nonpositive ``shape`` or ``rate``.
    """
    if not (shape > 0.0 and rate > 0.0):
        raise DomainError(f"Gamma needs positive shape and rate, got ({shape!r}, {rate!r})")
    draw = rng.generator.gamma(shape, 1.0 / rate, size=size)
    return float(draw) if size is None else draw


def sample_poisson(mean: FloatOrArray, rng: RngStream,
                   size: Optional[int] = None) -> IntOrArray:
    """Draw from ``Poisson(mean)``; a zero mean always returns 0.

    Raises:
        DomainError: On a negative mean.
    """
    if np.any(np.asarray(mean) < 0.0):
        raise DomainError(f"Poisson mean must be nonnegative, got {mean!r}")
    draw = rng.generator.poisson(mean, size=size)
    if size is None and np.ndim(draw) == 0:
        return int(draw)
    return draw


def sample_negbin(law: NegBinLaw, rng: RngStream,
                  size: Optional[int] = None) -> IntOrArray:
    """Draw from ``law`` through its Gamma–Poisson mixture.

    ``λ ~ Gamma(r, rate = p / (1 - p))`` followed by ``Poisson(λ)``; exact
    for non-integer ``r``.
    """
    if law.p >= 1.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    lam = rng.generator.gamma(law.r, (1.0 - law.p) / law.p, size=size)
    draw = rng.generator.poisson(lam)
    return int(draw) if size is None else draw


def sample_beta(a: FloatOrArray, b: FloatOrArray, rng: RngStream,
                size: Optional[int] = None) -> FloatOrArray:
    """Draw from ``Beta(a, b)``; array parameters broadcast.

    Raises:
        DomainError: On nonpositive parameters.
    """
    if np.any(np.asarray(a) <= 0.0) or np.any(np.asarray(b) <= 0.0):
        raise DomainError("Beta parameters must be positive")
    draw = rng.generator.beta(a, b, size=size)
    if size is None and np.ndim(draw) == 0:
        return float(draw)
    return draw


def sample_categorical_logw(log_weights: Sequence[float], rng: RngStream,
                            size: Optional[int] = None) -> IntOrArray:
    """Draw an index with probability ``exp(lw_i - logsumexp(lw))``.

    Raises:
        DomainError: If ``log_weights`` is empty, contains NaN or +inf,
            or is entirely ``-inf``.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise DomainError("categorical draw needs at least one weight")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DomainError("categorical log-weights must be finite or -inf")
    norm = special.logsumexp(lw)
    if not math.isfinite(norm):
        raise DomainError("categorical log-weights are all -inf")
    probs = np.exp(lw - norm)
    probs /= probs.sum()
    if lw.size == 1:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    draw = rng.generator.choice(lw.size, size=size, p=probs)
    return int(draw) if size is None else draw
