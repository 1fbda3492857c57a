"""Overfit the toy model on one image-text sample through the three training stages."""

import argparse

import numpy as np

from tilevl.imaging import Image
from tilevl.model import build_config, init_params, make_batch, prepare_image, train_step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=10, help="steps per stage")
    ap.add_argument("--lr", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = build_config("toy", bias_correction=True, bias_step=0.001)
    rng = np.random.default_rng(args.seed)
    img = Image(rng.integers(0, 256, size=(240, 480, 3), dtype=np.uint8))
    vis = prepare_image(img, cfg)
    text = [int(t) for t in rng.integers(0, cfg.vocab_size - 1, size=8)]
    # prompt tokens unsupervised, answer tokens supervised
    ids = [cfg.image_token_id] + text
    batch = make_batch(ids, [0], [vis.layout], supervised=[False] * 4 + [True] * 5)
    params = init_params(cfg, args.seed)
    print(f"grid {vis.layout.m}x{vis.layout.n}, {len(vis.layout)} visual tokens, {sum(batch.loss_mask)} supervised")
    for stage in (1, 2, 3):
        for i in range(args.steps):
            params, loss = train_step(params, cfg, batch, [vis], stage, args.lr)
            if i in (0, args.steps - 1):
                print(f"stage {stage} step {i:3d} loss {loss:.4f}")
    bias = params["lm.layers.0.expert_bias"]
    print("layer 0 expert bias:", np.array2string(bias, precision=4))


if __name__ == "__main__":
    main()
