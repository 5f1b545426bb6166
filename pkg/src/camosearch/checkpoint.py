"""Checkpointing for interrupted search runs.

A checkpoint is a single versioned JSON document holding the search and
ER configuration, the RNG state at the moment of failure, the current
pool (patterns inline), and the full query trace. Because the search is
deterministic given its seed, resumption replays the recorded queries
positionally (consuming no oracle budget) and then continues live; the
finished run is byte-identical to one that was never interrupted.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .search import (
    Candidate,
    PoolBestRecord,
    QueryRecord,
    SearchConfig,
    SearchTrace,
    SolidPool,
)
from .textures import ErConfig, Pattern

FORMAT_NAME = "camosearch-checkpoint"
FORMAT_VERSION = 1


def config_to_dict(cfg: SearchConfig) -> dict:
    return {
        "init_count": cfg.init_count,
        "pool_size": cfg.pool_size,
        "start_count": cfg.start_count,
        "mutants_per_step": cfg.mutants_per_step,
        "inner_steps": cfg.inner_steps,
        "outer_loops": cfg.outer_loops,
        "global_mutants": cfg.global_mutants,
        "inner_radius": cfg.inner_radius,
        "global_radius": cfg.global_radius,
        "seed": cfg.seed,
        "parallelism": cfg.parallelism,
    }


def config_from_dict(data: dict) -> SearchConfig:
    return SearchConfig(**data)


def er_to_dict(er: ErConfig) -> dict:
    return {
        "pattern_exponent": er.pattern_exponent,
        "enlarge_exponent": er.enlarge_exponent,
        "repeat_exponent": er.repeat_exponent,
    }


def candidate_to_dict(c: Candidate) -> dict:
    return {
        "id": c.id,
        "score": c.score,
        "content_hash": c.content_hash,
        "side": c.pattern.side,
        "pixels_b64": base64.b64encode(c.pattern.pixels.tobytes()).decode("ascii"),
    }


def candidate_from_dict(data: dict) -> Candidate:
    side = int(data["side"])
    raw = base64.b64decode(data["pixels_b64"])
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(side, side, 3)
    return Candidate(
        pattern=Pattern(pixels),
        score=data["score"],
        id=int(data["id"]),
        content_hash=data["content_hash"],
    )


def trace_to_dict(trace: SearchTrace) -> dict:
    return {
        "records": [
            {"index": r.index, "content_hash": r.content_hash, "score": r.score,
             "phase": r.phase}
            for r in trace.records
        ],
        "pool_best": [
            {"after_query": b.after_query, "score": b.score} for b in trace.pool_best
        ],
        "cache_hits": trace.cache_hits,
    }


def trace_from_dict(data: dict) -> SearchTrace:
    return SearchTrace(
        records=[QueryRecord(**r) for r in data["records"]],
        pool_best=[PoolBestRecord(**b) for b in data["pool_best"]],
        cache_hits=int(data["cache_hits"]),
    )


def pool_to_list(pool: SolidPool) -> list[dict]:
    return [candidate_to_dict(c) for c in pool.members]


def iter_trace_events(trace: SearchTrace):
    """Query and pool-best events in chronological order (for jsonl logs)."""
    pending = list(trace.pool_best)
    pos = 0
    for record in trace.records:
        while pos < len(pending) and pending[pos].after_query <= record.index:
            yield {"type": "pool_best", "after_query": pending[pos].after_query,
                   "score": pending[pos].score}
            pos += 1
        yield {"type": "query", "index": record.index, "hash": record.content_hash,
               "score": record.score, "phase": record.phase}
    for best in pending[pos:]:
        yield {"type": "pool_best", "after_query": best.after_query, "score": best.score}


def write_checkpoint(path, *, cfg: SearchConfig, er: ErConfig,
                     rng: np.random.Generator, pool: SolidPool,
                     trace: SearchTrace) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "er": er_to_dict(er),
        "rng_state": rng.bit_generator.state,
        "pool": pool_to_list(pool),
        "trace": trace_to_dict(trace),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)


class Checkpoint:
    def __init__(self, doc: dict):
        if doc.get("format") != FORMAT_NAME:
            raise ValueError("not a camosearch checkpoint")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        self.config = config_from_dict(doc["config"])
        self.er = ErConfig(**doc["er"])
        self.rng_state = doc["rng_state"]
        self.pool_members = [candidate_from_dict(d) for d in doc["pool"]]
        self.trace = trace_from_dict(doc["trace"])

    @property
    def replay_records(self) -> list[QueryRecord]:
        return self.trace.records


def read_checkpoint(path) -> Checkpoint:
    return Checkpoint(json.loads(Path(path).read_text()))
