"""Elite-pool discrete search over the integer pattern space.

The optimizer minimizes the oracle's average detection score using only
queries, no gradients. It keeps a *solid pool* of the best-scoring
candidates found so far and alternates two mutation strategies:

* scatter steps: random per-channel step sizes inside an epsilon ball
  along a fixed +-1 direction, used to probe for a descent direction;
* directed steps: the same randomized steps, but along the sign of the
  last improvement, which moves faster once a direction works.

Each outer loop refines the top pool members with a few inner iterations
of the interleaved mutations, merges the refined candidates back, and
then applies larger-radius undirected mutations to every pool member so
the search can escape local minima.

All randomness flows through one numpy Generator, and mutants are scored
in generation order, so a run is bit-reproducible for a given seed no
matter how many oracle queries run concurrently.
"""

from __future__ import annotations

import hashlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import training_grid
from .oracles import DetectionOracle, OracleQuery
from .textures import ErConfig, Pattern

PHASES = ("init", "scatter", "directed", "global")


class OracleFailure(RuntimeError):
    """An oracle query failed; carries the hash of the offending candidate."""

    def __init__(self, message: str, candidate_hash: str | None = None):
        super().__init__(message)
        self.candidate_hash = candidate_hash
        self.checkpoint_path: str | None = None


class ResumeMismatchError(RuntimeError):
    """A checkpoint replay diverged from what the run would actually do."""


@dataclass(frozen=True)
class SearchConfig:
    """Search hyperparameters; the defaults are the standard setting."""

    init_count: int = 100        # random candidates drawn before seeding the pool
    pool_size: int = 20          # solid-pool capacity
    start_count: int = 5         # pool members refined per outer loop
    mutants_per_step: int = 20   # mutants scored per inner iteration
    inner_steps: int = 3         # inner iterations per starting point
    outer_loops: int = 5
    global_mutants: int = 20     # wide-radius mutants per pool member per loop
    inner_radius: float = 5.0    # epsilon for scatter/directed steps
    global_radius: float = 10.0  # epsilon for global exploration
    seed: int = 0
    parallelism: int = 1         # max concurrent oracle queries

    def __post_init__(self):
        counts = {
            "init_count": self.init_count,
            "pool_size": self.pool_size,
            "start_count": self.start_count,
            "mutants_per_step": self.mutants_per_step,
            "inner_steps": self.inner_steps,
            "outer_loops": self.outer_loops,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.global_mutants < 0:
            raise ValueError("global_mutants must be >= 0")
        if not self.start_count < self.pool_size <= self.init_count:
            raise ValueError(
                "need start_count < pool_size <= init_count, got "
                f"{self.start_count}/{self.pool_size}/{self.init_count}"
            )
        if not 0 < self.inner_radius <= self.global_radius <= 255:
            raise ValueError("need 0 < inner_radius <= global_radius <= 255")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def planned_queries(self) -> int:
        """Total oracle evaluations a full run issues (before cache hits)."""
        per_loop = (
            self.start_count * self.inner_steps * self.mutants_per_step
            + self.pool_size * self.global_mutants
        )
        return self.init_count + self.outer_loops * per_loop


def pattern_digest(pattern: Pattern) -> str:
    h = hashlib.sha256()
    h.update(f"{pattern.side}:".encode())
    h.update(pattern.pixels.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Candidate:
    """A scored pattern. ``id`` is a run-wide insertion counter used to break
    score ties deterministically (older wins)."""

    pattern: Pattern
    score: float | None
    id: int
    content_hash: str


@dataclass(frozen=True)
class QueryRecord:
    index: int
    content_hash: str
    score: float
    phase: str


@dataclass(frozen=True)
class PoolBestRecord:
    after_query: int
    score: float


@dataclass
class SearchTrace:
    """Per-query log plus the pool-best score after every pool update."""

    records: list[QueryRecord] = field(default_factory=list)
    pool_best: list[PoolBestRecord] = field(default_factory=list)
    cache_hits: int = 0

    @property
    def query_count(self) -> int:
        return len(self.records)


class SolidPool:
    """Elite set: at most ``capacity`` candidates, ascending by score,
    ties broken by smaller id, duplicate pixel content excluded."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        self.capacity = capacity
        self.members: list[Candidate] = []

    def update(self, candidates) -> None:
        merged = {c.content_hash: c for c in self.members}
        for c in candidates:
            if c.score is None:
                raise ValueError("cannot rank an unscored candidate")
            held = merged.get(c.content_hash)
            if held is None or c.id < held.id:
                merged[c.content_hash] = c
        ranked = sorted(merged.values(), key=lambda c: (c.score, c.id))
        self.members = ranked[:self.capacity]

    @property
    def best(self) -> Candidate:
        if not self.members:
            raise ValueError("pool is empty")
        return self.members[0]

    @property
    def best_score(self) -> float:
        return self.best.score

    def __len__(self):
        return len(self.members)


# --- primitive moves ---------------------------------------------------------


def random_pattern(rng: np.random.Generator, side_exponent: int) -> Pattern:
    """Draw every channel independently and uniformly from {0..255}."""
    side = 1 << side_exponent
    return Pattern(rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8))


def clip(value):
    """Round half away from zero, then clamp into [0, 255].

    Accepts scalars or arrays; returns int or an int64 array.
    """
    v = np.asarray(value, dtype=np.float64)
    rounded = np.sign(v) * np.floor(np.abs(v) + 0.5)
    out = np.clip(rounded, 0, 255).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


def random_delta(rng: np.random.Generator, side_exponent: int) -> np.ndarray:
    """A direction with every entry +-1, equiprobable (never 0)."""
    side = 1 << side_exponent
    bits = rng.integers(0, 2, size=(side, side, 3), dtype=np.int8)
    return (bits << 1) - 1


def directed_delta(current: Candidate, best_mutant: Candidate) -> np.ndarray:
    """Entrywise sign of (best_mutant - current); 0 where they agree."""
    a = current.pattern.pixels
    b = best_mutant.pattern.pixels
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.sign(b.astype(np.int16) - a.astype(np.int16)).astype(np.int8)


def mutate_scatter(
    candidate: Candidate, delta: np.ndarray, eps: float, rng: np.random.Generator
) -> Pattern:
    """One randomized step: per channel, move by u * eps * direction with
    u ~ U[0,1), then round and clamp. Zero-direction channels stay put."""
    if eps <= 0:
        raise ValueError("mutation radius must be positive")
    px = candidate.pattern.pixels
    if delta.shape != px.shape:
        raise ValueError(f"direction shape {delta.shape} does not match pattern {px.shape}")
    moved = px.astype(np.float64) + rng.random(px.shape) * eps * delta
    stepped = np.clip(np.sign(moved) * np.floor(np.abs(moved) + 0.5), 0, 255)
    return Pattern(stepped.astype(np.uint8))


# --- scoring plumbing --------------------------------------------------------


class Scorer:
    """Scores batches of patterns through the oracle.

    Owns the query cache (content-hash keyed; repeat patterns cost no
    budget), the trace, candidate id assignment, and the optional thread
    pool. Results are consumed in generation order so the outcome does
    not depend on completion order. When ``replay`` records are supplied,
    they are consumed positionally instead of querying the oracle, which
    is how checkpoint resumption reproduces an uninterrupted run.
    """

    def __init__(self, oracle: DetectionOracle, transforms, *, er: ErConfig | None = None,
                 parallelism: int = 1, replay=None):
        self.oracle = oracle
        self.transforms = tuple(transforms)
        self.er = er
        self.parallelism = max(1, int(parallelism))
        self.cache: dict[str, float] = {}
        self.trace = SearchTrace()
        self.next_id = 0
        self._replay = deque(replay or ())
        self._executor: ThreadPoolExecutor | None = None

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=False, cancel_futures=True)
            self._executor = None

    def _query_once(self, pattern: Pattern) -> float:
        query = OracleQuery(transforms=self.transforms, pattern=pattern, er=self.er)
        response = self.oracle.evaluate(query)
        if len(response.scores) != len(self.transforms):
            raise ValueError(
                f"oracle returned {len(response.scores)} scores for "
                f"{len(self.transforms)} transforms"
            )
        return float(np.mean(response.scores))

    def _evaluate_ordered(self, pending: list[tuple[str, Pattern]], phase: str) -> None:
        """Evaluate (digest, pattern) pairs in order, recording each query."""
        replayed: list[tuple[str, float]] = []
        live: list[tuple[str, Pattern]] = []
        for digest, pattern in pending:
            if self._replay:
                record = self._replay.popleft()
                if record.content_hash != digest or record.phase != phase:
                    raise ResumeMismatchError(
                        "checkpoint does not match this configuration/seed "
                        f"(expected query on {record.content_hash[:12]}/{record.phase}, "
                        f"got {digest[:12]}/{phase})"
                    )
                replayed.append((digest, record.score))
            else:
                live.append((digest, pattern))

        for digest, score in replayed:
            self._record(digest, score, phase)

        if not live:
            return
        if self.parallelism > 1 and len(live) > 1:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self.parallelism)
            results = self._executor.map(lambda item: self._safe_query(*item), live)
        else:
            results = (self._safe_query(digest, pattern) for digest, pattern in live)
        for (digest, _), outcome in zip(live, results):
            score, error = outcome
            if error is not None:
                failure = OracleFailure(
                    f"oracle query failed for candidate {digest[:12]}: {error}",
                    candidate_hash=digest,
                )
                failure.__cause__ = error
                raise failure
            self._record(digest, score, phase)

    def _safe_query(self, digest: str, pattern: Pattern):
        # exceptions are carried as values so ordered consumption decides
        # which failure surfaces first, independent of thread timing
        try:
            return self._query_once(pattern), None
        except Exception as exc:  # noqa: BLE001 - every oracle error aborts the same way
            return None, exc

    def _record(self, digest: str, score: float, phase: str) -> None:
        self.trace.records.append(
            QueryRecord(index=len(self.trace.records), content_hash=digest,
                        score=score, phase=phase)
        )
        self.cache[digest] = score

    def score_batch(self, patterns, phase: str) -> list[Candidate]:
        """Score patterns (cache-aware) and mint candidates in input order."""
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        patterns = list(patterns)
        digests = [pattern_digest(p) for p in patterns]
        pending: list[tuple[str, Pattern]] = []
        scheduled: set[str] = set()
        for digest, pattern in zip(digests, patterns):
            if digest not in self.cache and digest not in scheduled:
                scheduled.add(digest)
                pending.append((digest, pattern))
        self._evaluate_ordered(pending, phase)

        out = []
        for digest, pattern in zip(digests, patterns):
            if digest not in scheduled:
                self.trace.cache_hits += 1
            else:
                scheduled.discard(digest)  # only the first occurrence was a query
            out.append(
                Candidate(pattern=pattern, score=self.cache[digest],
                          id=self.next_id, content_hash=digest)
            )
            self.next_id += 1
        return out

    def note_pool_best(self, pool: SolidPool) -> None:
        self.trace.pool_best.append(
            PoolBestRecord(after_query=len(self.trace.records), score=pool.best_score)
        )


# --- search loops ------------------------------------------------------------


def _make_scorer(cfg, oracle, er, transforms, replay=None) -> Scorer:
    return Scorer(
        oracle,
        training_grid() if transforms is None else transforms,
        er=er,
        parallelism=cfg.parallelism,
        replay=replay,
    )


def inner_search(
    start: Candidate,
    cfg: SearchConfig,
    oracle: DetectionOracle,
    rng: np.random.Generator,
    *,
    er: ErConfig | None = None,
    transforms=None,
    scorer: Scorer | None = None,
) -> tuple[Candidate, SearchTrace]:
    """Refine one candidate with interleaved scatter/directed mutations.

    Runs ``inner_steps`` iterations of ``mutants_per_step`` mutants each.
    A strictly better best-mutant is adopted and sets the direction for
    the next iteration; otherwise the direction is re-randomized and the
    incumbent stays. The result is never worse than the start.
    """
    if start.score is None:
        raise ValueError("inner_search requires an already-scored start")
    own_scorer = scorer is None
    if own_scorer:
        scorer = _make_scorer(cfg, oracle, er, transforms)
    try:
        side_exponent = start.pattern.side_exponent
        delta = random_delta(rng, side_exponent)
        phase = "scatter"
        current = start
        for _ in range(cfg.inner_steps):
            mutants = [
                mutate_scatter(current, delta, cfg.inner_radius, rng)
                for _ in range(cfg.mutants_per_step)
            ]
            scored = scorer.score_batch(mutants, phase)
            best = min(scored, key=lambda c: (c.score, c.id))
            if best.score < current.score:
                delta = directed_delta(current, best)
                current = best
                phase = "directed"
            else:
                delta = random_delta(rng, side_exponent)
                phase = "scatter"
        return current, scorer.trace
    finally:
        if own_scorer:
            scorer.close()


def global_explore(
    pool: SolidPool,
    cfg: SearchConfig,
    oracle: DetectionOracle,
    rng: np.random.Generator,
    *,
    er: ErConfig | None = None,
    transforms=None,
    scorer: Scorer | None = None,
) -> SolidPool:
    """Wide-radius undirected mutations of every pool member, then re-rank.

    Each mutant gets a fresh +-1 direction so steps can move channels in
    both directions even though no direction guidance is used.
    """
    if not pool.members:
        raise ValueError("global exploration needs a non-empty pool")
    own_scorer = scorer is None
    if own_scorer:
        scorer = _make_scorer(cfg, oracle, er, transforms)
    try:
        mutants = []
        for member in pool.members:
            side_exponent = member.pattern.side_exponent
            for _ in range(cfg.global_mutants):
                delta = random_delta(rng, side_exponent)
                mutants.append(mutate_scatter(member, delta, cfg.global_radius, rng))
        if mutants:
            pool.update(scorer.score_batch(mutants, "global"))
        scorer.note_pool_best(pool)
        return pool
    finally:
        if own_scorer:
            scorer.close()


def run_search(
    cfg: SearchConfig,
    er: ErConfig,
    oracle: DetectionOracle,
    *,
    transforms=None,
    checkpoint_path=None,
    replay=None,
) -> tuple[SolidPool, SearchTrace]:
    """Full search: random initialization, pool seeding, then outer loops of
    per-start inner refinement, pool merge, and global exploration.

    Issues exactly ``cfg.planned_queries()`` oracle queries minus cache
    hits. If the oracle fails after at least one successful query and
    ``checkpoint_path`` is set, the run state is checkpointed before the
    failure propagates; passing the checkpoint's records as ``replay``
    continues the run as if it had never been interrupted.
    """
    rng = np.random.default_rng(cfg.seed)
    pool = SolidPool(capacity=cfg.pool_size)
    scorer = _make_scorer(cfg, oracle, er, transforms, replay=replay)
    try:
        side_exponent = er.pattern_exponent
        initial = [random_pattern(rng, side_exponent) for _ in range(cfg.init_count)]
        pool.update(scorer.score_batch(initial, "init"))
        scorer.note_pool_best(pool)

        for _ in range(cfg.outer_loops):
            starts = pool.members[: cfg.start_count]
            refined = []
            for start in starts:
                best, _ = inner_search(start, cfg, oracle, rng, scorer=scorer)
                refined.append(best)
            pool.update(refined)
            scorer.note_pool_best(pool)
            global_explore(pool, cfg, oracle, rng, scorer=scorer)
        return pool, scorer.trace
    except OracleFailure as failure:
        if checkpoint_path is not None and scorer.trace.records:
            from .checkpoint import write_checkpoint

            write_checkpoint(checkpoint_path, cfg=cfg, er=er, rng=rng,
                             pool=pool, trace=scorer.trace)
            failure.checkpoint_path = str(checkpoint_path)
        raise
    finally:
        scorer.close()
