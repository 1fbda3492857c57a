"""Shared builders for model-level tests."""

import numpy as np

from tilevl.imaging import Image
from tilevl.model import (
    build_config,
    forward,
    init_params,
    is_buffer,
    loss_and_grads,
    make_batch,
    next_token_loss,
    prepare_image,
)
from tilevl.numcore import grad_check, make_rng


def random_image(seed, h=200, w=300):
    return Image(make_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def random_point(params, seed):
    """Parameters away from init: N(0, 1/fan_in) matrices, non-trivial gains and biases.

    At the tiny default init most gradient entries are ~1e-9, where central
    differences drown in rounding noise.
    """
    rng = make_rng(seed)
    out = {}
    for k, v in params.items():
        if is_buffer(k):
            out[k] = v.copy()
        elif k.endswith("norm") or k.endswith("norm1") or k.endswith("norm2"):
            out[k] = 1.0 + rng.normal(0, 0.3, v.shape)
        elif v.ndim >= 2 and not k.endswith("pos"):
            out[k] = rng.normal(0, 1.0 / np.sqrt(v.shape[-1]), v.shape)
        else:
            out[k] = rng.normal(0, 0.3, v.shape)
    return out


def toy_setup(seed=0, **overrides):
    cfg = build_config("toy", **overrides)
    vis = prepare_image(random_image(seed), cfg)
    ids = [cfg.image_token_id] + [int(t) for t in make_rng(seed).integers(0, cfg.vocab_size - 1, size=5)]
    batch = make_batch(ids, [0], [vis.layout])
    return cfg, batch, vis


def pipeline_grad_error(seed=0, per_param=4, h=1e-4):
    """Worst relative error over sampled entries of every trainable parameter."""
    cfg, batch, vis = toy_setup(seed)
    params = random_point(init_params(cfg, seed), seed + 1)
    routing = forward(params, cfg, batch, [vis]).selected
    _, grads, _ = loss_and_grads(params, cfg, batch, [vis], routing)
    rng = make_rng(seed + 2)
    worst = 0.0
    for name, g in grads.items():
        # sample where the gradient is largest plus a few random entries
        flat = np.abs(g).reshape(-1)
        idx = set(np.argsort(-flat)[:per_param].tolist())
        idx |= set(rng.integers(0, flat.size, size=per_param).tolist())
        idx = [i for i in idx if flat[i] > 1e-7]

        def f(w, name=name):
            # grad_check reads the gradient only at the unperturbed point
            q = dict(params, **{name: w})
            res = forward(q, cfg, batch, [vis], routing)
            loss = next_token_loss(res.logits, batch.labels, batch.loss_mask) + res.aux_loss
            return loss, grads[name]

        if idx:
            worst = max(worst, grad_check(f, params[name], h=h, indices=idx))
    return worst
