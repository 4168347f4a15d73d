"""Locality-preserving set hashing over Z_r^b and witness-set selection.

A history (a set of byte strings) is hashed into a point of the ring
Z_r^B by letting every item take one independent +-1 step along a
coordinate chosen by its hash. Two histories that differ in s items land
at ring distance at most s. Witness selection compares every member id,
shuffled per event, against a per-member b-dimensional projection of that
point.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable

from .errors import ParameterError
from .analysis import max_ring_distance, radius_for_size


@dataclass(frozen=True)
class SlashParams:
    """Hash width ``c`` (bits), selection dims ``b``, internal dims ``B``, ring modulus ``r``.

    ``seed`` indexes the hash family: h_i(x) = SHA256(r_i || x) with r_i
    the 32-byte big-endian encoding of ``seed``.
    """

    c: int = 256
    b: int = 16
    B: int = 64
    r: int = 2**16
    seed: int = 0

    def __post_init__(self):
        if not 8 <= self.c <= 256:
            raise ParameterError(f"hash width c={self.c} outside [8, 256]")
        if self.r < 2:
            raise ParameterError(f"ring modulus r={self.r} must be >= 2")
        if self.b < 1 or self.B < self.b:
            raise ParameterError(f"need 1 <= b <= B, got b={self.b}, B={self.B}")
        if self.b * self.chunk_bits > self.c:
            raise ParameterError(
                f"b*ceil(log2 r) = {self.b * self.chunk_bits} exceeds c = {self.c}")

    @property
    def chunk_bits(self) -> int:
        return (self.r - 1).bit_length()

    @property
    def reveal_horizon(self) -> int:
        """Instances after which the accumulator is close to uniform: b * r^2."""
        return self.b * self.r**2


DEFAULT_PARAMS = SlashParams()


@dataclass(frozen=True)
class RingPoint:
    coords: tuple[int, ...]
    r: int

    def __post_init__(self):
        if self.r < 2 or not self.coords:
            raise ParameterError("ring point needs r >= 2 and at least one coordinate")
        if any(not 0 <= x < self.r for x in self.coords):
            raise ParameterError(f"coordinates must lie in [0, {self.r})")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __add__(self, other: "RingPoint") -> "RingPoint":
        _check_compatible(self, other)
        return RingPoint(tuple((a + b) % self.r for a, b in zip(self.coords, other.coords)), self.r)

    @classmethod
    def zeros(cls, dim: int, r: int) -> "RingPoint":
        return cls((0,) * dim, r)


def _check_compatible(x: RingPoint, y: RingPoint):
    if x.r != y.r or x.dim != y.dim:
        raise ParameterError(
            f"ring points disagree: (b={x.dim}, r={x.r}) vs (b={y.dim}, r={y.r})")


def _ring_dist(xs, ys, r: int) -> int:
    total = 0
    for a, b in zip(xs, ys):
        diff = (a - b) % r
        total += min(diff, r - diff)
    return total


def ring_dist(x: RingPoint, y: RingPoint) -> int:
    """Wrap-around L1 distance on Z_r^b."""
    _check_compatible(x, y)
    return _ring_dist(x.coords, y.coords, x.r)


def set_dist(s: Iterable, t: Iterable) -> int:
    """Size of the symmetric difference."""
    return len(set(s) ^ set(t))


# -- hashing -----------------------------------------------------------------


def hash_int(data: bytes, params: SlashParams = DEFAULT_PARAMS) -> int:
    """h_i(data) as a c-bit integer."""
    digest = hashlib.sha256(params.seed.to_bytes(32, "big") + data).digest()
    return int.from_bytes(digest, "big") >> (256 - params.c)


def int_bytes(value: int, params: SlashParams = DEFAULT_PARAMS) -> bytes:
    return value.to_bytes((params.c + 7) // 8, "big")


def id_bytes(pid: int) -> bytes:
    return pid.to_bytes(8, "big")


def event_bytes(source: int, seq: int) -> bytes:
    """Canonical encoding of an event key (source || seq)."""
    return source.to_bytes(8, "big") + seq.to_bytes(8, "big")


# -- accumulator -------------------------------------------------------------


@dataclass(frozen=True)
class SlashState:
    params: SlashParams = DEFAULT_PARAMS
    acc: tuple[int, ...] = field(default=None)
    count: int = 0

    def __post_init__(self):
        if self.acc is None:
            object.__setattr__(self, "acc", (0,) * self.params.B)
        elif len(self.acc) != self.params.B:
            raise ParameterError(f"accumulator must have {self.params.B} coordinates")

    @classmethod
    def of(cls, items: Iterable[bytes], params: SlashParams = DEFAULT_PARAMS) -> "SlashState":
        """Hash the set of ``items``; repeats are absorbed once."""
        acc = [0] * params.B
        count = 0
        for item in dict.fromkeys(items):
            coord, sign = step_of(item, params)
            acc[coord] = (acc[coord] + sign) % params.r
            count += 1
        return cls(params, tuple(acc), count)

    @property
    def point(self) -> RingPoint:
        return RingPoint(self.acc, self.params.r)


def step_of(item: bytes, params: SlashParams = DEFAULT_PARAMS) -> tuple[int, int]:
    """(coordinate, +-1) contributed by one item."""
    h = hash_int(item, params)
    coord = h % params.B
    sign = -1 if (h // params.B) & 1 else 1
    return coord, sign


def slash_absorb(state: SlashState, item: bytes) -> SlashState:
    """Absorb one new item: exactly one coordinate moves by +-1 mod r."""
    p = state.params
    coord, sign = step_of(item, p)
    acc = list(state.acc)
    acc[coord] = (acc[coord] + sign) % p.r
    return replace(state, acc=tuple(acc), count=state.count + 1)


def slash(items: Iterable[bytes], params: SlashParams = DEFAULT_PARAMS) -> RingPoint:
    return SlashState.of(items, params).point


# -- selection ---------------------------------------------------------------


def _map_coords(value: int, params: SlashParams) -> tuple[int, ...]:
    w = params.chunk_bits
    mask = (1 << w) - 1
    top = params.c
    return tuple(((value >> (top - (j + 1) * w)) & mask) % params.r for j in range(params.b))


def map_id(value: int, params: SlashParams = DEFAULT_PARAMS) -> RingPoint:
    """Map a c-bit value to Z_r^b: b big-endian chunks of ceil(log2 r) bits, each mod r."""
    if not 0 <= value < 1 << params.c:
        raise ParameterError(f"value does not fit in {params.c} bits")
    return RingPoint(_map_coords(value, params), params.r)


def _stream_words(seed: int):
    key = seed.to_bytes(32, "big")
    counter = 0
    while True:
        block = hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        counter += 1
        for i in range(0, 32, 8):
            yield int.from_bytes(block[i:i + 8], "big")


@lru_cache(maxsize=65536)
def selection_indices(seed: int, B: int, b: int) -> tuple[int, ...]:
    """First b positions of a keyed Fisher-Yates shuffle of range(B).

    The generator is SHA256(seed || counter) read as 64-bit big-endian
    words; draws use rejection sampling so every permutation is equally
    likely.
    """
    words = _stream_words(seed)
    perm = list(range(B))
    for i in range(B - 1, 0, -1):
        bound = i + 1
        limit = (1 << 64) - ((1 << 64) % bound)
        x = next(words)
        while x >= limit:
            x = next(words)
        j = x % bound
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm[:b])


def permute_filter(vec: RingPoint, seed: int, params: SlashParams = DEFAULT_PARAMS) -> RingPoint:
    if vec.dim != params.B:
        raise ParameterError(f"expected a {params.B}-dimensional vector, got {vec.dim}")
    idx = selection_indices(seed, params.B, params.b)
    return RingPoint(tuple(vec.coords[i] for i in idx), vec.r)


@dataclass(frozen=True)
class OracleParams:
    """Own-witness radius ``d``, slack ``gamma`` for potential witnesses, threshold ``k``."""

    d: int
    gamma: int = 0
    mu: int = 0
    expected_w: float | None = None
    k: int = 1

    def __post_init__(self):
        if self.d < 0 or self.gamma < 0 or self.mu < 0:
            raise ParameterError("d, gamma and mu must be nonnegative")
        if self.k < 1:
            raise ParameterError("witness threshold k must be >= 1")

    @property
    def potential_radius(self) -> int:
        return self.d + self.gamma


def oracle_params_for(members: int, own_size: float, potential_size: float,
                      params: SlashParams = DEFAULT_PARAMS, k: int | None = None) -> OracleParams:
    """Calibrate radii so expected |W| and |V| match the requested sizes (rounded down).

    ``k`` defaults to floor(own_size / 2) + 1.
    """
    d = radius_for_size(members, own_size, params.r, params.b)
    d_pot = max(d, radius_for_size(members, potential_size, params.r, params.b))
    if k is None:
        k = int(own_size // 2) + 1
    return OracleParams(d=d, gamma=d_pot - d, expected_w=own_size, k=k)


@lru_cache(maxsize=4096)
def _event_context(source: int, seq: int, params: SlashParams):
    ev_hash = hash_int(event_bytes(source, seq), params)
    offset = _map_coords(ev_hash, params)
    return int_bytes(ev_hash, params), offset


@lru_cache(maxsize=1 << 18)
def _shuffled_point(pid: int, ev_key: bytes, params: SlashParams) -> tuple[int, ...]:
    return _map_coords(hash_int(id_bytes(pid) + ev_key, params), params)


@lru_cache(maxsize=1 << 16)
def _member_seed(pid: int, params: SlashParams) -> int:
    return hash_int(id_bytes(pid), params)


def member_distance(history: SlashState, pid: int, source: int, seq: int) -> int:
    """Ring distance between member ``pid``'s shuffled id and its history projection."""
    p = history.params
    ev_key, offset = _event_context(source, seq, p)
    idx = selection_indices(_member_seed(pid, p), p.B, p.b)
    r = p.r
    y = [(history.acc[i] + o) % r for i, o in zip(idx, offset)]
    return _ring_dist(_shuffled_point(pid, ev_key, p), y, r)


def select_witnesses(history: SlashState, members: Iterable[int], event,
                     params: OracleParams) -> tuple[frozenset[int], frozenset[int]]:
    """Own and potential witness sets of one event, from a local history.

    ``event`` is any object with ``source`` and ``seq`` attributes.
    """
    own, potential = set(), set()
    d, d_pot = params.d, params.potential_radius
    for v in members:
        dist = member_distance(history, v, event.source, event.seq)
        if dist <= d_pot:
            potential.add(v)
            if dist <= d:
                own.add(v)
    return frozenset(own), frozenset(potential)


# -- commit / reveal ---------------------------------------------------------


@dataclass(frozen=True)
class Commitment:
    owner: int
    commit_hash: int
    reveal_after: int
    revealed_value: int | None = None

    def reveal(self, value: int, params: SlashParams = DEFAULT_PARAMS) -> "Commitment":
        if not _matches(self.commit_hash, value, params):
            raise ParameterError("revealed value does not match the commitment")
        return replace(self, revealed_value=value)


def _matches(commit_hash: int, value: int, params: SlashParams = DEFAULT_PARAMS) -> bool:
    return hash_int(int_bytes(value, params), params) == commit_hash


def commit(value: int, owner: int = 0, reveal_after: int | None = None,
           params: SlashParams = DEFAULT_PARAMS) -> Commitment:
    """Commit to a future c-bit step value; ``reveal_after`` defaults to b * r^2 instances."""
    if reveal_after is None:
        reveal_after = params.reveal_horizon
    return Commitment(owner, hash_int(int_bytes(value, params), params), reveal_after)


def verify_reveal(cm: Commitment, value: int, params: SlashParams = DEFAULT_PARAMS) -> bool:
    return _matches(cm.commit_hash, value, params)


__all__ = [
    "SlashParams", "RingPoint", "SlashState", "OracleParams", "Commitment",
    "ring_dist", "set_dist", "slash_absorb", "slash", "map_id", "permute_filter",
    "select_witnesses", "commit", "verify_reveal", "oracle_params_for",
    "max_ring_distance", "hash_int", "event_bytes",
]
