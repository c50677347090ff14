"""Round execution for split learning, FedAvg and minibatch SGD.

A single run is strictly sequential (the split protocol is inherently
relay-based); distinct runs are pure functions of (objective, config) and
can execute concurrently.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import objectives as obj
from .objectives import SplitMlp, monolithic_loss_grad, split_forward_backward
from .rng import ORDER, STEP, stream

ALGORITHMS = ("sl", "fl", "minibatch")


class Divergence(RuntimeError):
    """Signals a non-finite iterate; carries the last finite one."""

    def __init__(self, last_finite: np.ndarray, step: int, round_index: int | None = None):
        super().__init__(f"non-finite iterate at step {step}"
                         + ("" if round_index is None else f" of round {round_index}"))
        self.last_finite = last_finite
        self.step = step
        self.round_index = round_index


@dataclass
class TrainConfig:
    algorithm: str = "sl"
    n_clients: int = 2
    rounds: int = 1
    local_steps: int = 1
    lr: float = 0.01
    global_lr: float = 1.0
    clients_per_round: int | None = None  # None means full participation
    batch_size: int = 1
    seed: int = 0
    order_policy: str = "random"  # or "fixed"
    divergence_factor: float = 10.0
    x0: Sequence[float] | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.lr < 0 or self.global_lr < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.local_steps < 1 or self.rounds < 1 or self.n_clients < 1:
            raise ValueError("counts must be >= 1")
        s = self.clients_per_round
        if s is not None and not (1 <= s <= self.n_clients):
            raise ValueError("clients_per_round must satisfy 1 <= S <= N")
        if self.order_policy not in ("random", "fixed"):
            raise ValueError("order_policy must be 'random' or 'fixed'")

    @property
    def participants(self) -> int:
        return self.n_clients if self.clients_per_round is None else self.clients_per_round


@dataclass
class RunTrace:
    """Per-round series plus the final and round-averaged iterates."""

    loss: np.ndarray
    grad_norm_sq: np.ndarray
    drift: np.ndarray
    steps: np.ndarray
    diverged: np.ndarray
    iterates: np.ndarray            # (R, d), x^0 .. x^{R-1}
    final_x: np.ndarray
    avg_x: np.ndarray
    avg_grad_norm_sq: float
    final_grad_norm_sq: float
    diverged_at: int | None = None

    @property
    def rounds(self) -> int:
        return len(self.loss)

    @property
    def any_diverged(self) -> bool:
        return bool(self.diverged.any())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "loss", "grad_norm_sq", "drift", "diverged"])
            for r in range(self.rounds):
                w.writerow([r, _fmt(self.loss[r]), _fmt(self.grad_norm_sq[r]),
                            _fmt(self.drift[r]), int(self.diverged[r])])

    def summary(self) -> dict:
        return {
            "rounds": self.rounds,
            "diverged": self.any_diverged,
            "diverged_at": self.diverged_at,
            "final_loss": _json_real(self.loss[-1]),
            "final_grad_norm_sq": _json_real(self.final_grad_norm_sq),
            "avg_grad_norm_sq": _json_real(self.avg_grad_norm_sq),
            "final_x": [_json_real(v) for v in self.final_x],
            "avg_x": [_json_real(v) for v in self.avg_x],
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _json_real(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _check_finite(x: np.ndarray, prev: np.ndarray, step: int):
    if not np.all(np.isfinite(x)):
        raise Divergence(prev, step)


def _step_rngs(rng) -> Callable[[int], np.random.Generator]:
    if callable(rng):
        return rng
    return lambda k: rng


def local_update(x, objective, client: int, steps: int, lr: float, rng):
    """Run ``steps`` sequential stochastic gradient steps on client ``client``.

    ``rng`` is either a Generator (used sequentially) or a callable mapping
    the step index to a Generator. Returns (x_out, visited) where visited[k]
    is the iterate before step k.
    """
    x = np.asarray(x, dtype=float).copy()
    get = _step_rngs(rng)
    visited = []
    for k in range(steps):
        visited.append(x.copy())
        g = objective.stochastic_grad(client, x, get(k))
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = x - lr * g
        _check_finite(nxt, x, k)
        x = nxt
    return x, visited


def _round_order(config: TrainConfig, r: int) -> list[int]:
    if config.order_policy == "fixed":
        return list(range(config.participants))
    g = stream(config.seed, ORDER, r)
    return list(g.permutation(config.n_clients)[: config.participants])


def sl_round(x, objective, config: TrainConfig, r: int):
    """One sequential split-learning round.

    Clients in the sampled order each run local_update seeded from the
    previous client's output; the returned iterate interpolates between x
    and the raw relay output with the global learning rate. Drift is the
    summed squared distance of every visited iterate from x.
    """
    x = np.asarray(x, dtype=float)
    order = _round_order(config, r)
    cur = x.copy()
    drift = 0.0
    for i in order:
        try:
            cur, visited = local_update(
                cur, objective, i, config.local_steps, config.lr,
                lambda k, i=i: stream(config.seed, STEP, r, i, k))
        except Divergence as d:
            d.round_index = r
            raise
        drift += sum(float(np.sum((v - x) ** 2)) for v in visited)
    # eta_g = 1 must reproduce the vanilla relay output bit-for-bit
    out = cur if config.global_lr == 1.0 else x + config.global_lr * (cur - x)
    return out, drift, order


def fl_round(x, objective, config: TrainConfig, r: int):
    """One FedAvg round: parallel local updates from x, weighted averaging."""
    x = np.asarray(x, dtype=float)
    order = _round_order(config, r)
    sizes = getattr(objective, "client_sizes", None)
    weights = np.array([1.0 if sizes is None else sizes[i] for i in order], dtype=float)
    weights /= weights.sum()
    avg = np.zeros_like(x)
    drift = 0.0
    for w, i in zip(weights, order):
        try:
            out, visited = local_update(
                x, objective, i, config.local_steps, config.lr,
                lambda k, i=i: stream(config.seed, STEP, r, i, k))
        except Divergence as d:
            d.round_index = r
            raise
        avg += w * out
        drift += sum(float(np.sum((v - x) ** 2)) for v in visited)
    out = avg if config.global_lr == 1.0 else x + config.global_lr * (avg - x)
    return out, drift


def minibatch_round(x, objective, config: TrainConfig, r: int):
    """All N*K stochastic gradients evaluated at x, averaged, one step."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    count = 0
    for i in range(config.n_clients):
        for k in range(config.local_steps):
            total += objective.stochastic_grad(i, x, stream(config.seed, STEP, r, i, k))
            count += 1
    nxt = x - config.lr * total / count
    _check_finite(nxt, x, 0)
    return nxt


def run_training(objective, config: TrainConfig) -> RunTrace:
    """Run R rounds of the configured algorithm, fully deterministically.

    Divergence (non-finite iterate, or round loss exceeding
    divergence_factor times the initial loss) marks the offending and all
    later rounds; earlier records stay valid.
    """
    d = objective.dim
    x = (np.zeros(d) if config.x0 is None
         else np.asarray(config.x0, dtype=float).copy())
    if x.shape != (d,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({d},)")

    R = config.rounds
    loss = np.full(R, np.nan)
    gnorm = np.full(R, np.nan)
    drift = np.zeros(R)
    steps = np.zeros(R, dtype=int)
    diverged = np.zeros(R, dtype=bool)
    iterates = np.full((R, d), np.nan)
    diverged_at = None
    init_loss = None

    per_round_steps = {
        "sl": config.participants * config.local_steps,
        "fl": config.participants * config.local_steps,
        "minibatch": config.n_clients * config.local_steps,
    }[config.algorithm]

    for r in range(R):
        iterates[r] = x
        loss[r] = obj.global_loss(objective, x)
        gnorm[r] = float(np.sum(obj.global_grad(objective, x) ** 2))
        if init_loss is None:
            init_loss = loss[r]
        # loss-blowup check is meaningless from an exact optimum (init loss 0)
        blowup = (init_loss > 0
                  and loss[r] > config.divergence_factor * init_loss)
        if not np.isfinite(loss[r]) or blowup:
            diverged_at = r
            diverged[r:] = True
            break
        try:
            if config.algorithm == "sl":
                x, drift[r], _ = sl_round(x, objective, config, r)
            elif config.algorithm == "fl":
                x, drift[r] = fl_round(x, objective, config, r)
            else:
                x = minibatch_round(x, objective, config, r)
            steps[r] = per_round_steps
        except Divergence as d_exc:
            diverged_at = r
            diverged[r:] = True
            x = d_exc.last_finite
            break

    valid = ~np.isnan(iterates).any(axis=1)
    avg_x = iterates[valid].mean(axis=0) if valid.any() else np.full(d, np.nan)
    if diverged_at is None:
        avg_grad = float(np.sum(obj.global_grad(objective, avg_x) ** 2))
        final_grad = float(np.sum(obj.global_grad(objective, x) ** 2))
    else:
        avg_grad = float("nan")
        final_grad = float("nan")

    return RunTrace(loss=loss, grad_norm_sq=gnorm, drift=drift, steps=steps,
                    diverged=diverged, iterates=iterates, final_x=x, avg_x=avg_x,
                    avg_grad_norm_sq=avg_grad, final_grad_norm_sq=final_grad,
                    diverged_at=diverged_at)


def split_local_update(model: SplitMlp, data, steps: int, lr: float, rng) -> SplitMlp:
    """K split-protocol SGD steps stepping both sides with the same rate.

    The sequence of full-model iterates equals local_update run on the
    concatenated monolithic model, because the split backward computes the
    same chain rule in two stages.
    """
    feats, targets = data
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    get = _step_rngs(rng)
    cur = model.copy()
    for k in range(steps):
        _, cgrad, sgrad, _ = split_forward_backward(cur, (feats, targets))
        cur.client_params = cur.client_params - lr * cgrad
        cur.server_params = cur.server_params - lr * sgrad
        if not (np.all(np.isfinite(cur.client_params))
                and np.all(np.isfinite(cur.server_params))):
            raise Divergence(cur.params, k)
    return cur


def split_local_update_minibatch(model: SplitMlp, data, steps: int, lr: float,
                                 batch_size: int, rng) -> SplitMlp:
    """As split_local_update but drawing a fresh minibatch per step."""
    feats, targets = data
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = feats.shape[0]
    get = _step_rngs(rng)
    cur = model.copy()
    for k in range(steps):
        g = get(k)
        if batch_size and batch_size < n:
            idx = g.choice(n, size=batch_size, replace=False)
            batch = (feats[idx], targets[idx])
        else:
            batch = (feats, targets)
        _, cgrad, sgrad, _ = split_forward_backward(cur, batch)
        cur.client_params = cur.client_params - lr * cgrad
        cur.server_params = cur.server_params - lr * sgrad
    return cur
