"""KV-cache footprint per token and for a full context, per model variant."""

import argparse

from tilevl.attention import MHA, AttnConfig, kv_cache_floats_per_token
from tilevl.model import VARIANTS, build_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--context", type=int, default=4096)
    ap.add_argument("--bytes-per-float", type=int, default=2)
    args = ap.parse_args()
    print(f"{'variant':<8}{'attn':>5}{'per token':>11}{'MHA equiv':>11}{'ratio':>8}{'context MiB':>13}")
    for v in VARIANTS:
        cfg = build_config(v)
        per = kv_cache_floats_per_token(cfg.attn_config)
        mha = kv_cache_floats_per_token(AttnConfig(cfg.n_heads, cfg.d_head, MHA))
        mib = per * cfg.n_layers * args.context * args.bytes_per_float / 2**20
        print(f"{v:<8}{cfg.attention:>5}{per:>11}{mha:>11}{per / mha:>8.3f}{mib:>13.1f}")


if __name__ == "__main__":
    main()
