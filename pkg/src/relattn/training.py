"""Toy-scale experiment harness: Adam with warmup/inverse-sqrt decay,
label-smoothed cross entropy, synthetic position-sensitive tasks, and the
train/eval drivers.

Tasks (token id 0 is reserved as padding and never generated):
  reverse       target[i] = input[n-1-i]
  copy          target = input
  shift-by-one  target[0] = BOS (id 1), target[i] = input[i-1]; inputs
                drawn from ids >= 2 so BOS is unambiguous.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import Tensor, backward, log_softmax_rows
from .model import EncoderConfig, ModelParams, init_model, named_parameters, model_forward
from .attention import relative_storage_report

TASKS = ("reverse", "copy", "shift-by-one")
PAD_ID = 0
BOS_ID = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the run is aborted."""


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    task: str = "reverse"
    train_length_min: int = 4
    train_length_max: int = 12
    eval_lengths: list = field(default_factory=lambda: [4, 8, 12])
    batch_size: int = 32
    steps: int = 3000
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    label_smoothing: float = 0.1
    seed: int = 0
    log_every: int = 100
    eval_sequences: int = 128

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if not 1 <= self.train_length_min <= self.train_length_max:
            raise ValueError("train length range must be nonempty and >= 1")
        if not self.eval_lengths or any(n < 1 for n in self.eval_lengths):
            raise ValueError("eval_lengths must be nonempty with lengths >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")


@dataclass
class RunMetrics:
    losses: list
    final_train_accuracy: float
    per_length_accuracy: dict
    steps_per_sec: float
    chance_accuracy: float
    storage: dict | None

    def as_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, d_model: int, warmup_steps: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup to
    a peak exactly at warmup_steps, inverse-sqrt decay after."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9) -> None:
    """Standard bias-corrected Adam update, in place. A parameter whose
    .grad is None (unreached by backward) is treated as zero gradient."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.data.shape} for {name}")
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def label_smoothed_ce(logits: Tensor, targets: np.ndarray, eps_ls: float) -> Tensor:
    """Cross entropy against the smoothed target distribution: mass
    1 - eps_ls on the target class, eps_ls/(V-1) on each other class;
    mean over tokens."""
    targets = np.asarray(targets)
    b, n, vocab = logits.shape
    if targets.shape != (b, n):
        raise ValueError(f"targets shape {targets.shape} != {(b, n)}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        bad = targets.flat[np.argmax((targets < 0) | (targets >= vocab))]
        raise IndexError(f"target id {bad} out of range [0, {vocab})")
    if not 0.0 <= eps_ls < 1.0:
        raise ValueError("label smoothing must be in [0, 1)")
    smooth = np.full((b, n, vocab), eps_ls / (vocab - 1))
    bi, ni = np.indices((b, n))
    smooth[bi, ni, targets] = 1.0 - eps_ls
    logp = log_softmax_rows(logits)
    return -(logp * Tensor(smooth)).sum() * (1.0 / (b * n))


def smoothed_entropy(eps_ls: float, vocab: int) -> float:
    """Entropy of the smoothed target distribution: the loss floor."""
    probs = np.full(vocab, eps_ls / (vocab - 1))
    probs[0] = 1.0 - eps_ls
    probs = probs[probs > 0]
    return float(-(probs * np.log(probs)).sum())


def chance_accuracy(task: str, vocab_size: int) -> float:
    """Best blind per-token accuracy: inputs are uniform over the symbol
    alphabet, so guessing one symbol hits 1/|alphabet| of target tokens."""
    lo = 2 if task == "shift-by-one" else 1
    return 1.0 / (vocab_size - lo)


def position_blind_bound(task: str, vocab_size: int, length_min: int,
                         length_max: int, samples: int = 4000,
                         seed: int = 0) -> float:
    """Best achievable per-token accuracy for a predictor that sees the
    token at the queried position and the multiset of sequence tokens but
    nothing about positions.

    This is the right collapse threshold for permutation-equivariant
    models on the reverse task: reverse targets are a permutation of the
    inputs, so content alone (duplicates, the token at the center of an
    odd-length sequence) already beats naive 1/|alphabet| guessing. The
    bound is the Bayes accuracy of that blind view, estimated by
    deterministic Monte Carlo; an equivariant model cannot exceed it.

    For copy the blind view contains the answer, so the bound is 1.
    """
    if task == "copy":
        return 1.0
    if task != "reverse":
        raise ValueError(f"no position-blind bound implemented for {task!r}")
    if not 1 <= length_min <= length_max:
        raise ValueError("invalid length range")
    rng = np.random.default_rng(seed)
    alphabet = vocab_size - 1  # ids 1..vocab-1; 0 is padding
    total = 0.0
    weight = 0
    for _ in range(samples):
        n = int(rng.integers(length_min, length_max + 1))
        tokens = rng.integers(1, vocab_size, size=n)
        counts = np.bincount(tokens, minlength=vocab_size).astype(float)
        if n == 1:
            total += 1.0  # the single token is its own reverse
            weight += 1
            continue
        center = (1.0 / n) if n % 2 == 1 else 0.0
        for x in tokens:
            # P(target == t) given the blind view: the mirror position is
            # the center (target == x) with probability `center`, else a
            # uniform draw from the other positions' tokens.
            others = counts.copy()
            others[x] -= 1.0
            p = (1.0 - center) * others / (n - 1)
            p[x] += center
            total += p.max()
            weight += 1
    return total / weight


def make_example(task: str, length: int, vocab_size: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lo = 2 if task == "shift-by-one" else 1
    tokens = rng.integers(lo, vocab_size, size=length)
    if task == "reverse":
        targets = tokens[::-1].copy()
    elif task == "copy":
        targets = tokens.copy()
    else:
        targets = np.concatenate(([BOS_ID], tokens[:-1]))
    return tokens, targets


def _batch(task: str, length: int, vocab_size: int, batch_size: int,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    pairs = [make_example(task, length, vocab_size, rng) for _ in range(batch_size)]
    return (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))


def make_toy_dataset(task: str, length_range: tuple[int, int], vocab_size: int,
                     count: int, seed: int, batch_size: int = 32) -> list:
    """`count` batches of (tokens, targets); each batch has one length
    drawn from length_range. Deterministic given the seed."""
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {length_range}")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(count):
        length = int(rng.integers(lo, hi + 1))
        batches.append(_batch(task, length, vocab_size, batch_size, rng))
    return batches


def token_accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Per-token exact match, excluding padding positions."""
    pred = logits.argmax(axis=-1)
    keep = targets != PAD_ID
    return float((pred[keep] == targets[keep]).mean())


def evaluate_lengths(params: ModelParams, cfg: EncoderConfig, task: str,
                     lengths: list, seed: int, sequences_per_length: int = 128,
                     batch_size: int = 32) -> dict[int, float]:
    """Per-token accuracy on freshly generated data at each length;
    deterministic given the seed."""
    out = {}
    for length in lengths:
        rng = np.random.default_rng((seed, length))
        correct, total = 0, 0
        remaining = sequences_per_length
        while remaining > 0:
            bsz = min(batch_size, remaining)
            tokens, targets = _batch(task, length, cfg.vocab_size, bsz, rng)
            logits = model_forward(tokens, params, cfg).data
            pred = logits.argmax(axis=-1)
            keep = targets != PAD_ID
            correct += int((pred[keep] == targets[keep]).sum())
            total += int(keep.sum())
            remaining -= bsz
        out[length] = correct / total
    return out


def train_run(cfg: TrainConfig, step_callback=None) -> tuple[RunMetrics, ModelParams]:
    """Run the full training loop and final per-length evaluation.

    Fully reproducible from cfg.seed: model init, data order, and dropout
    all derive from it. Aborts with TrainingDiverged on non-finite loss.
    """
    enc = cfg.encoder
    params = init_model(enc, cfg.seed)
    named = named_parameters(params)
    state = AdamState(named)
    data_rng = np.random.default_rng((cfg.seed, 1))
    dropout_rng = np.random.default_rng((cfg.seed, 2)) if enc.dropout_rate > 0 else None

    losses = []
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        length = int(data_rng.integers(cfg.train_length_min, cfg.train_length_max + 1))
        tokens, targets = _batch(cfg.task, length, enc.vocab_size,
                                 cfg.batch_size, data_rng)
        logits = model_forward(tokens, params, enc, dropout_rng=dropout_rng)
        loss = label_smoothed_ce(logits, targets, cfg.label_smoothing)
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        losses.append(loss_val)
        for p in named.values():
            p.grad = None
        backward(loss)
        lr = lr_schedule(step, enc.d_x, cfg.warmup_steps)
        adam_step(named, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        if step_callback is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            step_callback(step, loss_val, lr)
    elapsed = time.perf_counter() - t0

    train_lengths = sorted(set(
        range(cfg.train_length_min, cfg.train_length_max + 1)))
    train_acc_map = evaluate_lengths(params, enc, cfg.task, train_lengths,
                                     seed=(cfg.seed + 7919),
                                     sequences_per_length=cfg.eval_sequences)
    final_train_accuracy = float(np.mean(list(train_acc_map.values())))
    per_length = evaluate_lengths(params, enc, cfg.task, cfg.eval_lengths,
                                  seed=(cfg.seed + 7919),
                                  sequences_per_length=cfg.eval_sequences)
    storage = None
    if enc.relative:
        storage = relative_storage_report(
            enc.attention_config(), n=cfg.train_length_max, b=cfg.batch_size).as_dict()
    metrics = RunMetrics(
        losses=losses,
        final_train_accuracy=final_train_accuracy,
        per_length_accuracy=per_length,
        steps_per_sec=cfg.steps / elapsed if elapsed > 0 else float("inf"),
        chance_accuracy=chance_accuracy(cfg.task, enc.vocab_size),
        storage=storage,
    )
    return metrics, params
