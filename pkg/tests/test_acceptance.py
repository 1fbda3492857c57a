"""Exit criteria. Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion."""

import math
import random

import numpy as np
import pytest

from tilevl import adaptor as ad
from tilevl.attention import (
    MHA,
    MLA,
    AttnConfig,
    KVCache,
    attention_backward,
    attention_forward,
    attention_train_forward,
    init_attention,
    kv_cache_floats_per_token,
)
from tilevl.grounding import (
    BoundingBox,
    GroundedMessage,
    GroundedSpan,
    PromptKind,
    build_prompt,
    denormalize_box,
    normalize_box,
    parse_grounded,
    serialize_grounded,
)
from tilevl.model import build_config, init_params, is_language_param, next_token_loss, train_step
from tilevl.moe import (
    SIGMOID,
    SOFTMAX,
    MoEConfig,
    aux_balance_loss,
    init_moe,
    moe_layer_backward,
    moe_layer_forward,
    route,
    simulate_bias_balancing,
)
from tilevl.numcore import make_rng
from tilevl.schedsim import balance_tiles, split_pipeline_stages
from tilevl.tiling import candidate_resolutions, select_resolution

from helpers import pipeline_grad_error, random_point, toy_setup
from oracles import (
    brute_force_partition,
    brute_force_resolution,
    central_difference,
    enumerate_grids,
    optimal_makespan,
    visual_length_formula,
)

pytestmark = pytest.mark.acceptance


def report(num, name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def rel_err(analytic, numeric):
    a, b = np.ravel(analytic), np.ravel(numeric)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def test_01_token_count_exactness():
    bad = [
        (m, n)
        for m, n in sorted(enumerate_grids(9))
        if len(ad.layout_visual_tokens(m, n)) != visual_length_formula(m, n)
    ]
    anchors = (len(ad.layout_visual_tokens(1, 1)), len(ad.layout_visual_tokens(2, 3)))
    report(1, "token-count exactness", not bad and anchors == (421, 1415),
           f"23 grids checked, mismatches={bad}, anchors={anchors}")


def test_02_candidate_cardinality():
    c9, c18 = candidate_resolutions(max_tiles=9), candidate_resolutions(max_tiles=18)
    ok = (
        len(c9) == 23 and len(c18) == 58
        and {(c.m, c.n) for c in c9} == enumerate_grids(9)
        and {(c.m, c.n) for c in c18} == enumerate_grids(18)
    )
    report(2, "candidate-set cardinality", ok, f"{len(c9)} at 9 tiles, {len(c18)} at 18 tiles")


def test_03_resolution_selection_oracle():
    rnd = random.Random(3)
    mismatches = 0
    for _ in range(200):
        h, w = rnd.randint(64, 4096), rnd.randint(64, 4096)
        p = select_resolution(h, w)
        if (p.m, p.n, p.resized_h, p.resized_w, p.padding_area) != brute_force_resolution(h, w):
            mismatches += 1
    report(3, "resolution-selection oracle", mismatches == 0, f"200 random sizes, {mismatches} mismatches")


def test_04_mla_mha_equivalence():
    worst = 0.0
    mha = AttnConfig(4, 8, MHA)
    mla = AttnConfig(4, 8, MLA, rank=32, d_rope=0)
    for seed in range(20):
        rng = make_rng(seed)
        p = {k: rng.normal(0, 0.3, v.shape) for k, v in init_attention(rng, mha).items()}
        q = {
            "Wq": p["Wq"], "Wqr": np.zeros((0, 32)), "Wdkv": np.eye(32), "Wuk": p["Wk"],
            "Wuv": p["Wv"], "Wkr": np.zeros((0, 32)), "Wo": p["Wo"],
        }
        x = rng.normal(size=(10, 32))
        worst = max(worst, float(np.max(np.abs(attention_forward(p, mha, x)[0] - attention_forward(q, mla, x)[0]))))
    report(4, "MLA/MHA full-rank equivalence", worst <= 1e-9, f"20 seeds, max abs diff {worst:.2e}")


def test_05_incremental_equivalence():
    worst = 0.0
    cfgs = [AttnConfig(2, 8, MHA), AttnConfig(2, 8, MLA, rank=8, d_rope=4)]
    for cfg in cfgs:
        for seed, t in enumerate((1, 2, 7, 16, 32)):
            rng = make_rng(seed)
            p = {k: rng.normal(0, 0.4, v.shape) for k, v in init_attention(rng, cfg).items()}
            x = rng.normal(size=(t, 16))
            full, _ = attention_forward(p, cfg, x)
            cache = KVCache.empty(cfg)
            steps = []
            for i in range(t):
                y, cache = attention_forward(p, cfg, x[i:i + 1], cache)
                steps.append(y)
            worst = max(worst, float(np.max(np.abs(np.vstack(steps) - full))))
    report(5, "incremental vs full attention", worst <= 1e-9, f"both modes up to 32 tokens, max diff {worst:.2e}")


def test_06_kv_cache_accounting():
    small = build_config("small")
    mla = kv_cache_floats_per_token(small.attn_config)
    mha = kv_cache_floats_per_token(AttnConfig(small.n_heads, small.d_head, MHA))
    ok = (mla, mha) == (576, 4096) and mla * 7 < mha
    report(6, "KV-cache accounting", ok, f"small: {mla} vs {mha} floats/token, ratio {mla / mha:.4f}")


def _layer_errors():
    errs = {}
    rng = make_rng(70)
    # projector
    p = {k: rng.normal(0, 0.5, v.shape) for k, v in ad.init_mlp(rng, 4, 6, 3).items()}
    x = rng.normal(size=(3, 4))
    up = rng.normal(size=(3, 3))
    y, c = ad.mlp_forward(p, x)
    dx, g = ad.mlp_backward(p, c, up)
    errs["projector.x"] = rel_err(dx, central_difference(lambda v: np.sum(ad.mlp_forward(p, v)[0] * up), x, 1e-5))
    for k in p:
        num = central_difference(lambda w, k=k: np.sum(ad.mlp_forward(dict(p, **{k: w}), x)[0] * up), p[k], 1e-5)
        errs[f"projector.{k}"] = rel_err(g[k], num)
    # attention, both modes
    for cfg in (AttnConfig(2, 4, MHA), AttnConfig(2, 4, MLA, rank=8, d_rope=4)):
        p = {k: rng.normal(0, 0.5, v.shape) for k, v in init_attention(rng, cfg).items()}
        x = rng.normal(size=(4, 8))
        up = rng.normal(size=(4, 8))
        _, ctx = attention_train_forward(p, cfg, x, True)
        dx, g = attention_backward(p, cfg, ctx, up)

        def val(q, v, cfg=cfg, up=up):
            return np.sum(attention_train_forward(q, cfg, v, True)[0] * up)

        errs[f"{cfg.mode}.x"] = rel_err(dx, central_difference(lambda v, p=p: val(p, v), x, 1e-5))
        for k in p:
            num = central_difference(lambda w, k=k, p=p, x=x: val(dict(p, **{k: w}), x), p[k], 1e-5)
            errs[f"{cfg.mode}.{k}"] = rel_err(g[k], num)
    # MoE with routing frozen at the base point
    cfg = MoEConfig(6, 1, 2, 4, 4, routing=SIGMOID, aux_weight=0.01)
    p = {k: rng.normal(0, 0.5, v.shape) for k, v in init_moe(rng, cfg).items()}
    x = rng.normal(size=(5, 4))
    up = rng.normal(size=(5, 4))
    bias = np.zeros(6)
    _, _, ctx = moe_layer_forward(p, cfg, x, bias)
    sel = ctx["selected"]
    dx, g = moe_layer_backward(p, cfg, ctx, up)

    def mval(q, v):
        y, aux, _ = moe_layer_forward(q, cfg, v, bias, sel)
        return np.sum(y * up) + aux

    errs["moe.x"] = rel_err(dx, central_difference(lambda v: mval(p, v), x, 1e-4))
    for k in p:
        errs[f"moe.{k}"] = rel_err(g[k], central_difference(lambda w, k=k: mval(dict(p, **{k: w}), x), p[k], 1e-4))
    return errs


def test_07_gradient_checks():
    errs = _layer_errors()
    layer_worst = max(errs.values())
    pipe = pipeline_grad_error(seed=0, per_param=4)
    ok = layer_worst <= 1e-5 and pipe <= 1e-4
    report(7, "gradient checks", ok,
           f"layers max rel err {layer_worst:.2e} ({max(errs, key=errs.get)}), full pipeline {pipe:.2e}")


def test_08_bias_balancing():
    cvs = simulate_bias_balancing(steps=5000, window=500, step=0.001)
    drop = 1 - cvs[-1] / cvs[0]
    rng = make_rng(8)
    cfg = MoEConfig(8, 0, 2, 8, 4, routing=SOFTMAX)
    changed = 0
    for i in range(10_000):
        cfg_i = cfg if i % 2 == 0 else MoEConfig(8, 0, 2, 8, 4, routing=SIGMOID)
        z = rng.normal(0, 2, size=8)
        b = rng.normal(0, 0.5, size=8)
        c = rng.normal(0, 5)
        d1, d2 = route(z, np.eye(8), b, cfg_i), route(z, np.eye(8), b + c, cfg_i)
        if not (np.array_equal(d1.selected, d2.selected) and np.array_equal(d1.gates, d2.gates)):
            changed += 1
    ok = drop >= 0.5 and changed == 0
    report(8, "bias-balancing dynamics", ok,
           f"CV {cvs[0]:.3f} -> {cvs[-1]:.3f} ({drop:.0%} drop), {changed}/10000 shifted draws changed")


def test_09_aux_loss_closed_forms():
    n, k, a = 64, 6, 0.001
    uniform = aux_balance_loss(np.full(n, k / n), np.full(n, 1 / n), a, n)
    onehot = np.eye(n)[3]
    collapsed = aux_balance_loss(onehot, onehot, a, n)
    ok = abs(uniform - a * k) <= 1e-12 and abs(collapsed - a * n) <= 1e-12
    report(9, "aux loss closed forms", ok, f"uniform {uniform!r} (want {a * k}), collapsed {collapsed!r} (want {a * n})")


def _random_message(rnd):
    alphabet = "abc XYZ.,!?\t\n[]0123é"
    segs = []
    for _ in range(rnd.randint(0, 5)):
        if rnd.random() < 0.5:
            segs.append("".join(rnd.choice(alphabet) for _ in range(rnd.randint(0, 8))))
        else:
            boxes = []
            for _ in range(rnd.randint(0, 3)):
                x1, x2 = sorted(rnd.randint(0, 999) for _ in range(2))
                y1, y2 = sorted(rnd.randint(0, 999) for _ in range(2))
                boxes.append(BoundingBox(x1, y1, x2, y2))
            ref = "".join(rnd.choice(alphabet) for _ in range(rnd.randint(1, 8)))
            segs.append(GroundedSpan(ref, tuple(boxes)))
    return GroundedMessage(tuple(segs), rnd.random() < 0.5)


def test_10_grounding_grammar():
    rnd = random.Random(10)
    failures = sum(
        parse_grounded(serialize_grounded(m)) != m for m in (_random_message(rnd) for _ in range(10_000))
    )
    template = parse_grounded(
        "Two <|ref|>dogs<|/ref|><|det|>[[100, 200, 300, 400]]<|/det|> are running on the grass."
    )
    prompts_ok = (
        build_prompt(PromptKind.LOCATE, "car") == "Locate <|ref|>car<|/ref|> in the given image."
        and build_prompt(PromptKind.GROUNDED_CONVERSATION)
        == "<|grounding|>Can you describe the content of the image?"
        and build_prompt(PromptKind.IN_CONTEXT, "an object within the red bounding box")
        == "<|grounding|>The first image shows an object within the red bounding box."
        "Please identify the object of the same category in the second image."
    )
    ok = failures == 0 and len(template.spans) == 1 and prompts_ok
    report(10, "grounding grammar", ok,
           f"{failures}/10000 round-trip failures, template spans={len(template.spans)}, prompts ok={prompts_ok}")


def test_11_coordinate_quantization():
    rng = make_rng(11)
    worst = 0.0
    violations = 0
    for _ in range(10_000):
        w, h = (int(v) for v in rng.integers(1, 5000, size=2))
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        back = denormalize_box(normalize_box((x, y, x, y), w, h), w, h)
        ex, ey = abs(back[0] - x) / (w / 999), abs(back[1] - y) / (h / 999)
        worst = max(worst, ex, ey)
        violations += ex > 1 or ey > 1
    report(11, "coordinate quantization", violations == 0,
           f"10000 points, worst error {worst:.3f} x D/999, {violations} violations")


def test_12_scheduler():
    rnd = random.Random(12)
    stage_bad = 0
    for _ in range(300):
        n = rnd.randint(1, 12)
        s = rnd.randint(1, min(4, n))
        costs = [rnd.uniform(0.1, 5) if rnd.random() < 0.5 else float(rnd.randint(1, 4)) for _ in range(n)]
        p = split_pipeline_stages(costs, s)
        if (p.max_cost, p.boundaries) != brute_force_partition(costs, s):
            stage_bad += 1
    lpt_bad = 0
    worst_ratio = 0.0
    for _ in range(500):
        counts = [rnd.randint(1, 19) for _ in range(rnd.randint(1, 12))]
        ranks = rnd.randint(1, 4)
        opt = optimal_makespan(counts, ranks)
        got = balance_tiles(counts, ranks).max_load
        worst_ratio = max(worst_ratio, got / opt)
        lpt_bad += got > (4 / 3 - 1 / (3 * ranks)) * opt + 1e-9
    report(12, "scheduler", stage_bad == 0 and lpt_bad == 0,
           f"stage DP {stage_bad}/300 mismatches, LPT {lpt_bad}/500 bound violations (worst ratio {worst_ratio:.3f})")


def test_13_training_contracts():
    cfg, batch, vis = toy_setup(13)
    params = random_point(init_params(cfg, 13), 14)
    new, _ = train_step(params, cfg, batch, [vis], stage=1, lr=0.5)
    moved = [k for k in params if is_language_param(k) and not np.array_equal(new[k], params[k])]
    rng = make_rng(13)
    logits = rng.normal(size=(6, 9))
    mask = [1, 0, 1, 0, 0, 1]
    labels = [1, 2, 3, 4, 5, 6]
    relabeled = [1, 8, 3, 0, 7, 6]
    mask_inv = next_token_loss(logits, labels, mask) == next_token_loss(logits, relabeled, mask)
    V = cfg.vocab_size
    uni = next_token_loss(np.zeros((3, V)), [0, 5, 9], [0, 1, 0])
    ok = not moved and mask_inv and abs(uni - math.log(V)) <= 1e-9
    report(13, "training contracts", ok,
           f"stage-1 LM params moved: {len(moved)}, mask invariant={mask_inv}, uniform loss {uni:.12f} vs ln V {math.log(V):.12f}")


def test_14_config_fidelity():
    want = {
        "tiny": dict(vocab_size=129280, d_model=1280, n_heads=10, n_layers=12, attention=MHA,
                     n_routed=64, n_shared=2, top_k=6, routing=SOFTMAX, bias_correction=False),
        "small": dict(vocab_size=102400, d_model=2048, n_heads=16, n_layers=27, attention=MLA, kv_rank=512,
                      n_routed=64, n_shared=2, top_k=6, routing=SOFTMAX, bias_correction=False),
        "base": dict(vocab_size=129280, d_model=2560, n_heads=32, n_layers=30, attention=MLA, kv_rank=512,
                     n_routed=72, n_shared=2, top_k=6, routing=SIGMOID, bias_correction=True),
    }
    diffs = []
    for variant, cells in want.items():
        cfg = build_config(variant)
        diffs += [f"{variant}.{k}" for k, v in cells.items() if getattr(cfg, k) != v]
    report(14, "config fidelity", not diffs, f"{sum(map(len, want.values()))} cells checked, mismatches={diffs}")
