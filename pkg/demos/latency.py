"""Batch-1 latency at full size (768-dim embeddings, 10 candidates).

Embeddings are generated up front so only the forward pass is timed. BLAS
is pinned to one thread.

    python demos/latency.py
"""

from dualview import DualView, ModelConfig, SyntheticSpec, generate_synthetic, parameter_count
from dualview.bench import bench_rerank

model = DualView(ModelConfig(), seed=42)
print(f"{parameter_count(model):,} parameters")

queries = generate_synthetic(SyntheticSpec("planted_similarity", 64, 10, 768, seed=42))
report = bench_rerank(model, queries, warmup=100, iters=1000)
print(report.to_text())
print(f"min {report.min_ms:.2f} / median {report.median_ms:.2f} / max {report.max_ms:.2f} ms")
