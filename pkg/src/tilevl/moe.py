"""Mixture-of-experts FFN with shared + routed experts.

Routing picks the top-K experts by ``affinity + bias``; the bias only steers
selection and never scales an expert's output. Gate weights come from the raw
affinities (renormalised over the selected experts in sigmoid mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adaptor import mlp_backward, mlp_forward
from .numcore import ContractError, Tensor, init_normal, sigmoid, softmax, softmax_backward

SOFTMAX = "softmax"
SIGMOID = "sigmoid"
_EXPERT_KEYS = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class MoEConfig:
    n_routed: int
    n_shared: int
    top_k: int
    d_model: int
    d_expert_hidden: int
    routing: str = SOFTMAX
    bias_enabled: bool = False
    bias_step: float = 0.0
    aux_weight: float = 0.0

    def __post_init__(self):
        if not 1 <= self.top_k <= self.n_routed:
            raise ContractError(f"need 1 <= top_k <= n_routed, got {self.top_k}/{self.n_routed}")
        if self.routing not in (SOFTMAX, SIGMOID):
            raise ContractError(f"unknown routing function {self.routing!r}")
        if self.bias_step < 0 or self.aux_weight < 0:
            raise ContractError("bias_step and aux_weight must be >= 0")
        if self.n_shared < 0:
            raise ContractError("n_shared must be >= 0")


@dataclass(frozen=True)
class RoutingDecision:
    affinities: np.ndarray
    selected: np.ndarray  # ascending expert ids
    gates: np.ndarray  # aligned with ``selected``
    load_counts: np.ndarray


def affinities(logits: Tensor, routing: str) -> Tensor:
    if routing == SOFTMAX:
        return softmax(logits, axis=-1)
    return sigmoid(logits)


def select_top_k(scores: Tensor, k: int) -> np.ndarray:
    """Indices of the k largest scores (ties to the lower index), ascending.

    Works row-wise on a (tokens, experts) array.
    """
    order = np.argsort(-scores, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def gates_from_affinities(s: Tensor, selected: np.ndarray, routing: str) -> Tensor:
    g = s[selected]
    if routing == SIGMOID:
        g = g / g.sum()
    return g


def route(h: Tensor, W_gate: Tensor, bias: Tensor, cfg: MoEConfig) -> RoutingDecision:
    s = affinities(W_gate @ h, cfg.routing)
    selected = select_top_k(s + bias, cfg.top_k)
    gates = gates_from_affinities(s, selected, cfg.routing)
    load = np.bincount(selected, minlength=cfg.n_routed)
    return RoutingDecision(s, selected, gates, load)


def moe_forward(
    h: Tensor,
    shared_experts: Sequence[Callable[[Tensor], Tensor]],
    routed_experts: Sequence[Callable[[Tensor], Tensor]],
    decision: RoutingDecision,
) -> Tensor:
    """``sum(shared(h)) + sum_k gate_k * routed[selected_k](h)``."""
    if len(decision.selected) and max(decision.selected) >= len(routed_experts):
        raise ContractError("decision selects an expert that does not exist")
    y = np.zeros_like(np.asarray(h, dtype=np.float64))
    for expert in shared_experts:
        y = y + expert(h)
    for e, g in zip(decision.selected, decision.gates):
        y = y + g * routed_experts[e](h)
    return y


def update_bias(bias: Tensor, load_counts, step: float) -> Tensor:
    """Sign-rule correction: overloaded experts drop by ``step``, underloaded rise."""
    if step < 0:
        raise ContractError("bias step must be >= 0")
    load = np.asarray(load_counts, dtype=np.float64)
    mean = load.mean()
    return bias - step * np.sign(load - mean)


def aux_balance_loss(load_fractions, mean_gate_probs, alpha: float, n_routed: int) -> float:
    """``alpha * n_routed * sum_i f_i * P_i``."""
    f = np.asarray(load_fractions, dtype=np.float64)
    p = np.asarray(mean_gate_probs, dtype=np.float64)
    return float(alpha * n_routed * np.sum(f * p))


# ---------------------------------------------------------------------------
# parameterised layer used by the language model


def init_moe(rng: np.random.Generator, cfg: MoEConfig) -> dict:
    d, hid = cfg.d_model, cfg.d_expert_hidden

    def bank(count):
        return {
            "W1": init_normal(rng, (count, hid, d)),
            "b1": np.zeros((count, hid)),
            "W2": init_normal(rng, (count, d, hid)),
            "b2": np.zeros((count, d)),
        }

    params = {"W_gate": init_normal(rng, (cfg.n_routed, d))}
    for prefix, count in (("routed", cfg.n_routed), ("shared", cfg.n_shared)):
        for k, v in bank(count).items():
            params[f"{prefix}_{k}"] = v
    return params


def expert_params(params: dict, kind: str, i: int) -> dict:
    return {k: params[f"{kind}_{k}"][i] for k in _EXPERT_KEYS}


def expert_fn(params: dict, kind: str, i: int) -> Callable[[Tensor], Tensor]:
    p = expert_params(params, kind, i)
    return lambda h: mlp_forward(p, h)[0]


def moe_layer_forward(params: dict, cfg: MoEConfig, x: Tensor, bias: Tensor, selected=None):
    """Route and combine every token of ``x`` (t, d).

    ``selected`` (t, top_k) freezes the expert choice, e.g. for gradient checks.
    Returns ``(y, aux_loss, ctx)``; ``ctx["load_counts"]`` holds per-expert token counts.
    """
    t = x.shape[0]
    logits = x @ params["W_gate"].T
    s = affinities(logits, cfg.routing)
    if selected is None:
        selected = select_top_k(s + bias, cfg.top_k)
    selected = np.asarray(selected, dtype=np.int64)
    rows = np.arange(t)[:, None]
    raw = s[rows, selected]
    denom = raw.sum(axis=1, keepdims=True) if cfg.routing == SIGMOID else None
    gates = raw / denom if denom is not None else raw

    y = np.zeros_like(x)
    shared_ctx = []
    for i in range(cfg.n_shared):
        out, c = mlp_forward(expert_params(params, "shared", i), x)
        y += out
        shared_ctx.append(c)
    routed_ctx = {}
    for e in range(cfg.n_routed):
        tok, slot = np.nonzero(selected == e)
        if tok.size == 0:
            continue
        out, c = mlp_forward(expert_params(params, "routed", e), x[tok])
        y[tok] += gates[tok, slot][:, None] * out
        routed_ctx[e] = (tok, slot, out, c)

    load = np.bincount(selected.ravel(), minlength=cfg.n_routed)
    aux = 0.0
    probs = None
    if cfg.aux_weight > 0 and t:
        probs = s / s.sum(axis=1, keepdims=True) if cfg.routing == SIGMOID else s
        aux = aux_balance_loss(load / t, probs.mean(axis=0), cfg.aux_weight, cfg.n_routed)
    ctx = {
        "x": x, "s": s, "selected": selected, "gates": gates, "raw": raw, "denom": denom,
        "shared": shared_ctx, "routed": routed_ctx, "load_counts": load, "probs": probs,
    }
    return y, aux, ctx


def moe_layer_backward(params: dict, cfg: MoEConfig, ctx, dy: Tensor, daux: float = 1.0):
    """Gradients with the expert selection held fixed. Returns (dx, grads)."""
    x, s, selected, gates = ctx["x"], ctx["s"], ctx["selected"], ctx["gates"]
    t = x.shape[0]
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dx = np.zeros_like(x)
    for i, c in enumerate(ctx["shared"]):
        dxi, g = mlp_backward(expert_params(params, "shared", i), c, dy)
        dx += dxi
        for k in _EXPERT_KEYS:
            grads[f"shared_{k}"][i] += g[k]
    dgates = np.zeros_like(gates)
    for e, (tok, slot, out, c) in ctx["routed"].items():
        g_tok = gates[tok, slot][:, None]
        dgates[tok, slot] = np.sum(dy[tok] * out, axis=1)
        dxi, g = mlp_backward(expert_params(params, "routed", e), c, g_tok * dy[tok])
        np.add.at(dx, tok, dxi)
        for k in _EXPERT_KEYS:
            grads[f"routed_{k}"][e] += g[k]

    rows = np.arange(t)[:, None]
    if cfg.routing == SIGMOID:
        # g_k = raw_k / sum(raw): d raw_k = (dg_k - sum_j dg_j g_j) / sum(raw)
        draw = (dgates - np.sum(dgates * gates, axis=1, keepdims=True)) / ctx["denom"]
    else:
        draw = dgates
    ds = np.zeros_like(s)
    np.add.at(ds, (np.broadcast_to(rows, selected.shape), selected), draw)

    if ctx["probs"] is not None and daux != 0.0:
        f = ctx["load_counts"] / t
        dprobs = np.broadcast_to(daux * cfg.aux_weight * cfg.n_routed * f / t, s.shape)
        if cfg.routing == SIGMOID:
            tot = s.sum(axis=1, keepdims=True)
            ds += (dprobs - np.sum(dprobs * ctx["probs"], axis=1, keepdims=True)) / tot
        else:
            ds += dprobs

    if cfg.routing == SOFTMAX:
        dlogits = softmax_backward(s, ds)
    else:
        dlogits = ds * s * (1.0 - s)
    grads["W_gate"] = dlogits.T @ x
    dx += dlogits @ params["W_gate"]
    return dx, grads


# ---------------------------------------------------------------------------
# load-balancing dynamics on a synthetic routing stream


def load_cv(load) -> float:
    """Coefficient of variation of per-expert loads."""
    load = np.asarray(load, dtype=np.float64)
    return float(load.std() / load.mean())


def simulate_bias_balancing(
    n_routed: int = 8,
    top_k: int = 2,
    tokens_per_step: int = 64,
    steps: int = 5000,
    window: int = 500,
    step: float = 0.001,
    margin: float = 2.0,
    routing: str = SIGMOID,
    seed: int = 0,
) -> list[float]:
    """Route a fixed, skewed batch of gate logits every step and correct the bias.

    Expert 0's logit is raised by ``margin`` for every token. Returns the load
    coefficient of variation of each ``window``-step block.
    """
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 0.5, size=(tokens_per_step, n_routed))
    logits[:, 0] += margin
    s = affinities(logits, routing)
    bias = np.zeros(n_routed)
    cvs = []
    acc = np.zeros(n_routed, dtype=np.int64)
    for i in range(steps):
        load = np.bincount(select_top_k(s + bias, top_k).ravel(), minlength=n_routed)
        acc += load
        bias = update_bias(bias, load, step)
        if (i + 1) % window == 0:
            cvs.append(load_cv(acc))
            acc[:] = 0
    return cvs
