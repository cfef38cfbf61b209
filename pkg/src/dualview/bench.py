"""Batch-1 latency/throughput measurement over pre-loaded embeddings."""

from __future__ import annotations

import json
import math
import statistics
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from dualview.errors import ConfigError, InputError
from dualview.evaluation import _as_ranker, config_fingerprint


@dataclass
class LatencyReport:
    mean_ms: float
    p95_ms: float
    qps: float
    n_warmup: int
    n_measured: int
    candidate_size: int
    min_ms: float = 0.0
    median_ms: float = 0.0
    max_ms: float = 0.0
    mode: str = "single-stream"
    threads: int = 1
    aggregate_qps: float | None = None  # only set in multi-stream mode
    fingerprint: str = ""
    phases: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"mode           {self.mode} (threads={self.threads})",
            f"candidates     {self.candidate_size}",
            f"warmup/measure {self.n_warmup}/{self.n_measured}",
            f"mean (ms)      {self.mean_ms:.3f}",
            f"P95 (ms)       {self.p95_ms:.3f}",
            f"QPS            {self.qps:.1f}",
        ]
        if self.aggregate_qps is not None:
            lines.append(f"aggregate QPS  {self.aggregate_qps:.1f}  (multi-stream, not batch-1)")
        return "\n".join(lines)


def nearest_rank_percentile(samples: Sequence[float], pct: float) -> float:
    """Smallest sample with at least ``pct`` percent of samples at or below it."""
    if not samples:
        raise InputError("no samples")
    ordered = sorted(samples)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def _summarize(samples_ms, **kw) -> LatencyReport:
    mean = math.fsum(samples_ms) / len(samples_ms)
    return LatencyReport(
        mean_ms=mean,
        p95_ms=nearest_rank_percentile(samples_ms, 95),
        qps=1000.0 / mean,
        min_ms=min(samples_ms),
        median_ms=statistics.median(samples_ms),
        max_ms=max(samples_ms),
        **kw,
    )


def bench_rerank(model, dataset: Sequence, warmup: int = 100, iters: int = 1000,
                 threads: int = 1, blas_threads: int = 1) -> LatencyReport:
    """Times one query at a time, cycling through ``dataset``.

    The dataset is materialized and its arrays made contiguous before any
    timing starts. ``threads > 1`` runs independent streams over the shared
    frozen model and additionally reports their aggregate QPS.
    """
    if iters < 20:
        raise ConfigError(f"iters={iters} is too few for a percentile estimate (need >= 20)")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    phases = {"preload_start": time.perf_counter()}
    dataset = list(dataset)
    if not dataset:
        raise InputError("benchmark dataset is empty")
    for cs in dataset:
        cs.query_embedding = np.ascontiguousarray(cs.query_embedding, dtype=np.float32)
        cs.doc_embeddings = np.ascontiguousarray(cs.doc_embeddings, dtype=np.float32)
    rank = _as_ranker(model)
    config = getattr(model, "config", None)
    n_mode = Counter(cs.n for cs in dataset).most_common(1)[0][0]
    phases["preload_end"] = time.perf_counter()

    with threadpool_limits(limits=blas_threads):
        for i in range(warmup):
            rank(dataset[i % len(dataset)])
        phases["warmup_end"] = time.perf_counter()

        samples = [0.0] * iters
        phases["measure_start"] = time.perf_counter()
        for i in range(iters):
            cs = dataset[i % len(dataset)]
            t0 = time.perf_counter_ns()
            rank(cs)
            samples[i] = (time.perf_counter_ns() - t0) / 1e6
        phases["measure_end"] = time.perf_counter()

        aggregate = None
        if threads > 1:
            per_thread = max(1, iters // threads)

            def stream(offset):
                for i in range(per_thread):
                    rank(dataset[(offset + i) % len(dataset)])

            workers = [threading.Thread(target=stream, args=(t * per_thread,))
                       for t in range(threads)]
            t0 = time.perf_counter()
            for w in workers:
                w.start()
            for w in workers:
                w.join()
            aggregate = per_thread * threads / (time.perf_counter() - t0)

    fingerprint = config_fingerprint(asdict(config)) if config is not None else ""
    return _summarize(
        samples,
        n_warmup=warmup,
        n_measured=iters,
        candidate_size=n_mode,
        mode="single-stream" if threads == 1 else "single-stream + multi-stream",
        threads=threads,
        aggregate_qps=aggregate,
        fingerprint=fingerprint,
        phases=phases,
    )
