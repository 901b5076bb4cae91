"""Timing and storage benchmark for the three attention kernels.

Two measurement series per sequence length:

* throughput grid (batched, wide model): baseline vs efficient-relative
  forward+backward, reporting the relative overhead ratio;
* scaling grid (batch 1, small model): per-pair reference vs efficient,
  documenting how far the loop oracle falls behind as n grows.

Each point also carries the exact storage accounting.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import Tensor, backward
from .relpos import init_tables
from .attention import (AttentionConfig, init_attention_params, baseline_attention,
                        rel_attention_efficient, rel_attention_reference,
                        relative_storage_report)


@dataclass
class BenchConfig:
    n_list: list = field(default_factory=lambda: [16, 32, 64])
    batch_size: int = 8
    h: int = 4
    d_x: int = 512
    d_z: int = 32
    k: int = 4
    # reduced grid for timing the O(n^2) loop reference
    ref_batch_size: int = 1
    ref_h: int = 2
    ref_d_x: int = 64
    repeats: int = 9
    warmup_repeats: int = 2
    seed: int = 0
    include_reference: bool = True

    def __post_init__(self):
        if self.repeats < 5:
            raise ValueError("repeats must be >= 5 (median timing)")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("n_list must be nonempty with lengths >= 1")


def _time_median(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _time_median_interleaved(fns: list, repeats: int, warmup: int) -> list[float]:
    """Median-of-repeats for several functions with their repetitions
    interleaved, so machine-load drift hits all of them equally."""
    for fn in fns:
        for _ in range(warmup):
            fn()
    times = [[] for _ in fns]
    for _ in range(repeats):
        for i, fn in enumerate(fns):
            t0 = time.perf_counter()
            fn()
            times[i].append(time.perf_counter() - t0)
    return [statistics.median(t) for t in times]


def _make_setup(rng, b: int, n: int, d_x: int, d_z: int, h: int, k: int):
    base_cfg = AttentionConfig(d_x=d_x, d_z=d_z, h=h, k=k, mode="baseline")
    rel_cfg = AttentionConfig(d_x=d_x, d_z=d_z, h=h, k=k, mode="relative",
                              edge_sharing="per_layer")
    params = init_attention_params(rel_cfg, rng)
    tables = init_tables(k, rel_cfg.d_a, rng)
    x = Tensor(rng.normal(size=(b, n, d_x)), requires_grad=True)
    probe = Tensor(rng.normal(size=(b, n, d_x)))

    def step(kernel: str):
        if kernel == "baseline":
            trace = baseline_attention(x, params, base_cfg)
        elif kernel == "efficient":
            trace = rel_attention_efficient(x, params, tables, rel_cfg)
        else:
            trace = rel_attention_reference(x, params, tables, rel_cfg)
        for t in (params.w_q, params.w_k, params.w_v, params.w_o,
                  tables.w_k_table, tables.w_v_table, x):
            t.grad = None
        backward((trace.output * probe).sum())

    return step, rel_cfg


def run_bench(cfg: BenchConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    points = []
    for n in cfg.n_list:
        step, rel_cfg = _make_setup(rng, cfg.batch_size, n, cfg.d_x,
                                    cfg.d_z, cfg.h, cfg.k)
        t_base, t_eff = _time_median_interleaved(
            [lambda: step("baseline"), lambda: step("efficient")],
            cfg.repeats, cfg.warmup_repeats)
        point = {
            "n": n,
            "batch_size": cfg.batch_size,
            "h": cfg.h,
            "k": cfg.k,
            "baseline_steps_per_sec": 1.0 / t_base,
            "efficient_steps_per_sec": 1.0 / t_eff,
            "efficient_over_baseline": t_eff / t_base,
            "storage": relative_storage_report(rel_cfg, n=n, b=cfg.batch_size).as_dict(),
        }
        if cfg.include_reference:
            ref_step, _ = _make_setup(rng, cfg.ref_batch_size, n, cfg.ref_d_x,
                                      cfg.d_z, cfg.ref_h, cfg.k)
            t_eff_small = _time_median(lambda: ref_step("efficient"),
                                       cfg.repeats, cfg.warmup_repeats)
            t_ref = _time_median(lambda: ref_step("reference"),
                                 cfg.repeats, cfg.warmup_repeats)
            point["reference_steps_per_sec"] = 1.0 / t_ref
            point["reference_over_efficient"] = t_ref / t_eff_small
        points.append(point)
    return {"config": asdict(cfg), "points": points}
