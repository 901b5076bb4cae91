"""Verification drivers: the randomized efficient-vs-reference equivalence
sweep and the finite-difference gradient suites. Used both by the CLI
`check` subcommand and by the test suite."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, finite_diff_grad
from .relpos import init_tables
from .attention import (AttentionConfig, init_attention_params,
                        rel_attention_reference, rel_attention_efficient)
from .model import EncoderConfig, init_model, named_parameters, model_forward
from .training import label_smoothed_ce, make_example

FORWARD_TOL = 1e-9
GRAD_TOL = 1e-7


@dataclass
class CaseResult:
    case: dict
    max_forward_err: float
    max_grad_err: float
    passed: bool


def sweep_cases(num_cases: int, seed: int) -> list[dict]:
    """Deterministic case list covering n in 1..12, h in {1,2,4}, k in 0..4,
    b in {1,2}, all four ablation-flag combinations, mask on/off, and both
    head-sharing granularities."""
    rng = np.random.default_rng(seed)
    grid = list(itertools.product(
        [1, 2, 4],                     # h
        range(0, 5),                   # k
        [1, 2],                        # b
        [(True, True), (True, False), (False, True), (False, False)],
        [False, True],                 # causal mask
    ))
    cases = []
    for idx in range(num_cases):
        h, k, b, (use_a_v, use_a_k), causal = grid[idx % len(grid)]
        cases.append({
            "n": int(rng.integers(1, 13)),
            "h": h, "k": k, "b": b,
            "use_a_v": use_a_v, "use_a_k": use_a_k,
            "causal": causal,
            "edge_sharing": "per_layer_and_head" if idx % 2 else "per_layer",
            "d_x": 6, "d_z": 5,
            "case_seed": int(rng.integers(0, 2 ** 31)),
        })
    return cases


def _grad_snapshot(tensors: list[Tensor]) -> list[np.ndarray]:
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
            for t in tensors]


def run_case(case: dict, flip_edge_logit_sign: bool = False) -> CaseResult:
    """Compare the efficient kernel against the per-pair reference on one
    random configuration, forward values and parameter gradients."""
    rng = np.random.default_rng(case["case_seed"])
    cfg = AttentionConfig(
        d_x=case["d_x"], d_z=case["d_z"], h=case["h"], k=case["k"],
        mode="relative", use_a_v=case["use_a_v"], use_a_k=case["use_a_k"],
        causal_mask=case["causal"], edge_sharing=case["edge_sharing"])
    params = init_attention_params(cfg, rng)
    if case["edge_sharing"] == "per_layer_and_head":
        tables = [init_tables(cfg.k, cfg.d_a, rng) for _ in range(cfg.h)]
        table_tensors = [t.w_k_table for t in tables] + [t.w_v_table for t in tables]
    else:
        tables = init_tables(cfg.k, cfg.d_a, rng)
        table_tensors = [tables.w_k_table, tables.w_v_table]
    # scale tables up so edge terms are O(1) and a broken edge term is loud
    for t in table_tensors:
        t.data = rng.normal(0.0, 0.5, size=t.data.shape)

    x = Tensor(rng.normal(size=(case["b"], case["n"], cfg.d_x)), requires_grad=True)
    leaves = [params.w_q, params.w_k, params.w_v, params.w_o, x] + table_tensors
    probe = rng.normal(size=(case["b"], case["n"], cfg.d_x))

    ref = rel_attention_reference(x, params, tables, cfg)
    for t in leaves:
        t.grad = None
    backward((ref.output * Tensor(probe)).sum())
    ref_grads = _grad_snapshot(leaves)

    eff = rel_attention_efficient(x, params, tables, cfg,
                                  _flip_edge_logit_sign=flip_edge_logit_sign)
    for t in leaves:
        t.grad = None
    backward((eff.output * Tensor(probe)).sum())
    eff_grads = _grad_snapshot(leaves)

    def max_abs(a: np.ndarray, b: np.ndarray) -> float:
        both_ninf = np.isneginf(a) & np.isneginf(b)
        with np.errstate(invalid="ignore"):
            diff = np.abs(a - b)
        diff[both_ninf] = 0.0
        return float(diff.max()) if diff.size else 0.0

    fwd_err = max(max_abs(ref.logits.data, eff.logits.data),
                  max_abs(ref.weights.data, eff.weights.data),
                  max_abs(ref.output.data, eff.output.data))
    grad_err = max(max_abs(a, b) for a, b in zip(ref_grads, eff_grads))
    passed = fwd_err <= FORWARD_TOL and grad_err <= GRAD_TOL
    return CaseResult(case, fwd_err, grad_err, passed)


def run_equivalence_sweep(num_cases: int = 240, seed: int = 0,
                          flip_edge_logit_sign: bool = False) -> list[CaseResult]:
    return [run_case(c, flip_edge_logit_sign) for c in sweep_cases(num_cases, seed)]


# ---- finite-difference gradient suites ------------------------------------


def _compare_grads(analytic: np.ndarray, numeric: np.ndarray,
                   rel_tol: float = 1e-4, abs_tol: float = 1e-7) -> float:
    """Max relative error, with an absolute floor near zero. Returns the
    worst normalized error (<= 1 means within tolerance)."""
    scale = np.maximum(np.abs(numeric), abs_tol / rel_tol)
    return float((np.abs(analytic - numeric) / (rel_tol * scale)).max())


def tiny_model_config() -> EncoderConfig:
    return EncoderConfig(num_layers=2, d_x=8, d_z=4, h=2, d_ff=8, vocab_size=7,
                         position_mode="relative", k=2, edge_sharing="per_layer_and_head")


def model_gradient_check(seed: int, cfg: EncoderConfig | None = None,
                         n: int = 5, eps: float = 1e-5) -> dict[str, float]:
    """Check every parameter of a small end-to-end model against central
    finite differences of the label-smoothed loss. Returns per-parameter
    normalized errors (<= 1 means within 1e-4 relative / 1e-7 absolute)."""
    cfg = cfg or tiny_model_config()
    rng = np.random.default_rng(seed)
    params = init_model(cfg, seed)
    named = named_parameters(params)
    tokens = rng.integers(1, cfg.vocab_size, size=(2, n))
    targets = rng.integers(1, cfg.vocab_size, size=(2, n))

    def loss_value() -> float:
        logits = model_forward(tokens, params, cfg)
        return label_smoothed_ce(logits, targets, 0.1).item()

    for p in named.values():
        p.grad = None
    loss = label_smoothed_ce(model_forward(tokens, params, cfg), targets, 0.1)
    backward(loss)

    errors = {}
    for name, p in named.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        saved = p.data

        def f(arr, _p=p):
            _p.data = arr
            return loss_value()

        numeric = finite_diff_grad(f, saved.copy(), eps)
        p.data = saved
        errors[name] = _compare_grads(analytic, numeric)
    return errors


def attention_gradient_check(seed: int, eps: float = 1e-5) -> dict[str, float]:
    """FD gradient check of a single relation-aware attention layer."""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(d_x=5, d_z=4, h=2, k=2, mode="relative",
                          causal_mask=bool(seed % 2), edge_sharing="per_layer")
    params = init_attention_params(cfg, rng)
    tables = init_tables(cfg.k, cfg.d_a, rng)
    x = Tensor(rng.normal(size=(2, 4, cfg.d_x)), requires_grad=True)
    probe = rng.normal(size=(2, 4, cfg.d_x))
    leaves = {"w_q": params.w_q, "w_k": params.w_k, "w_v": params.w_v,
              "w_o": params.w_o, "x": x,
              "w_k_table": tables.w_k_table, "w_v_table": tables.w_v_table}

    def loss_value() -> float:
        out = rel_attention_efficient(x, params, tables, cfg).output
        return float((out.data * probe).sum())

    for t in leaves.values():
        t.grad = None
    out = rel_attention_efficient(x, params, tables, cfg)
    backward((out.output * Tensor(probe)).sum())

    errors = {}
    for name, t in leaves.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        saved = t.data

        def f(arr, _t=t):
            _t.data = arr
            return loss_value()

        numeric = finite_diff_grad(f, saved.copy(), eps)
        t.data = saved
        errors[name] = _compare_grads(analytic, numeric)
    return errors
