"""Command-line entry point. Output is line-oriented ``key=value``.

Exit codes: 0 success, 1 bad input data, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import grounding as gr
from .adaptor import layout_visual_tokens, visual_token_count
from .attention import kv_cache_floats_per_token
from .imaging import ImageError, load_ppm
from .model import (
    VARIANTS,
    ConfigError,
    build_config,
    config_to_dict,
    forward,
    init_params,
    load_config,
    make_batch,
    prepare_image,
)
from .numcore import make_rng
from .schedsim import balance_tiles, split_pipeline_stages
from .tiling import BASE_TILE, MAX_TILES, candidate_resolutions, select_resolution


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tilevl", description=__doc__.splitlines()[0])
    subs = p.add_subparsers(dest="command", required=True)

    t = subs.add_parser("tile", help="choose a tiling grid for an image size or PPM file")
    t.add_argument("--height", type=_positive_int)
    t.add_argument("--width", type=_positive_int)
    t.add_argument("--image")
    t.add_argument("--max-tiles", type=_positive_int, default=MAX_TILES)

    lay = subs.add_parser("layout", help="dump the visual token layout")
    lay.add_argument("--m", type=_positive_int, required=True)
    lay.add_argument("--n", type=_positive_int, required=True)
    lay.add_argument("--images", type=_positive_int, default=1)

    f = subs.add_parser("forward", help="run one forward pass of a small model")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--image", required=True)
    f.add_argument("--prompt-len", type=_positive_int, required=True)

    g = subs.add_parser("ground", help="parse or render grounding markup (stdin)")
    g.add_argument("action", choices=("parse", "render"))
    g.add_argument("--grounding", action="store_true", help="render: add the grounding prefix")

    b = subs.add_parser("balance", help="LPT tile balancing across ranks")
    b.add_argument("--counts", type=_int_list, required=True)
    b.add_argument("--ranks", type=_positive_int, required=True)

    s = subs.add_parser("stages", help="min-max contiguous pipeline stage split")
    s.add_argument("--costs", type=_float_list, required=True)
    s.add_argument("--stages", type=_positive_int, required=True)

    c = subs.add_parser("config", help="print a model variant's architecture")
    c.add_argument("--variant", choices=VARIANTS, required=True)
    c.add_argument("--json", action="store_true", help="emit the full config as JSON")
    return p


def _emit(out, **kv):
    for k, v in kv.items():
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        out.write(f"{k}={v}\n")


def _read_image(path):
    try:
        with open(path, "rb") as fh:
            return load_ppm(fh.read())
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc.strerror}") from None


def cmd_tile(args, out):
    if args.image is not None:
        if args.height is not None or args.width is not None:
            raise UsageError("use either --image or --height/--width")
        img = _read_image(args.image)
        h, w = img.height, img.width
    else:
        if args.height is None or args.width is None:
            raise UsageError("tile needs --height and --width (or --image)")
        h, w = args.height, args.width
    plan = select_resolution(h, w, candidate_resolutions(BASE_TILE, args.max_tiles))
    _emit(
        out,
        height=h,
        width=w,
        m=plan.m,
        n=plan.n,
        scale=plan.scale,
        resized_h=plan.resized_h,
        resized_w=plan.resized_w,
        padding_area=plan.padding_area,
        tile_count=plan.tile_count,
        visual_tokens=visual_token_count(plan.m, plan.n),
    )


def cmd_layout(args, out):
    out.write(layout_visual_tokens(args.m, args.n, args.images).dump())


def cmd_forward(args, out):
    cfg = load_config(args.config)
    img = _read_image(args.image)
    params = init_params(cfg, args.seed)
    vis = prepare_image(img, cfg)
    rng = make_rng(args.seed)
    prompt = [int(t) for t in rng.integers(0, cfg.vocab_size - 1, size=args.prompt_len)]
    prompt = [t if t != cfg.image_token_id else t - 1 for t in prompt]
    batch = make_batch([cfg.image_token_id] + prompt, [0], [vis.layout])
    res = forward(params, cfg, batch, [vis])
    seq, vocab = res.logits.shape
    per_tok = kv_cache_floats_per_token(cfg.attn_config)
    _emit(
        out,
        variant=cfg.variant,
        m=vis.layout.m,
        n=vis.layout.n,
        tiles=len(vis.tiles),
        visual_tokens=len(vis.layout),
        seq_len=seq,
        logits_shape=f"{seq}x{vocab}",
        next_token=int(np.argmax(res.logits[-1])),
        kv_cache_floats_per_token=per_tok,
        kv_cache_floats_total=per_tok * seq * cfg.n_layers,
    )


def _render_lines(text: str, prefix: bool) -> str:
    segments = []
    for line in text.splitlines():
        if "\t" not in line:
            segments.append(line)
            continue
        ref, coords = line.split("\t", 1)
        boxes = []
        for chunk in coords.split(";"):
            if not chunk.strip():
                continue
            vals = chunk.split(",")
            if len(vals) != 4:
                raise gr.GrammarError(f"box needs 4 coordinates: {chunk!r}")
            try:
                boxes.append(gr.BoundingBox(*(int(v) for v in vals)))
            except ValueError as exc:
                if isinstance(exc, gr.GroundingError):
                    raise
                raise gr.GrammarError(f"non-integer coordinate in {chunk!r}") from None
        segments.append(gr.GroundedSpan(ref, tuple(boxes)))
    return gr.serialize_grounded(gr.GroundedMessage(tuple(segments), prefix))


def cmd_ground(args, out, stdin):
    text = stdin.read()
    if args.action == "render":
        out.write(_render_lines(text, args.grounding) + "\n")
        return
    if text.endswith("\n"):
        text = text[:-1]
    msg = gr.parse_grounded(text)
    _emit(out, grounding=msg.grounding_prefix, segments=len(msg.segments), spans=len(msg.spans))
    for seg in msg.segments:
        if isinstance(seg, str):
            out.write(f"text={json.dumps(seg)}\n")
        else:
            out.write(f"ref={json.dumps(seg.ref_text)} boxes={gr.serialize_boxes(seg.boxes)}\n")


def cmd_balance(args, out):
    if not args.counts or any(c < 1 for c in args.counts):
        raise UsageError("--counts must list positive integers")
    res = balance_tiles(args.counts, args.ranks)
    for r, (idx, load) in enumerate(zip(res.assignments, res.loads)):
        out.write(f"rank{r}_load={load} samples={','.join(map(str, idx))}\n")
    _emit(out, max_load=res.max_load)


def cmd_stages(args, out):
    if not args.costs or any(c <= 0 for c in args.costs):
        raise UsageError("--costs must list positive numbers")
    if args.stages > len(args.costs):
        raise UsageError(f"--stages {args.stages} exceeds the {len(args.costs)} layers")
    part = split_pipeline_stages(args.costs, args.stages)
    for i, (rng_, cost) in enumerate(zip(part.stages(len(args.costs)), part.stage_costs)):
        out.write(f"stage{i}_layers={rng_.start}-{rng_.stop - 1} cost={cost!r}\n")
    _emit(out, boundaries=",".join(map(str, part.boundaries)), max_cost=part.max_cost)


def cmd_config(args, out):
    cfg = build_config(args.variant)
    if args.json:
        out.write(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
        return
    _emit(
        out,
        variant=cfg.variant,
        vocab_size=cfg.vocab_size,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        attention=cfg.attention,
        kv_rank=cfg.kv_rank,
        n_routed=cfg.n_routed,
        n_shared=cfg.n_shared,
        top_k=cfg.top_k,
        routing=cfg.routing,
        bias_correction=cfg.bias_correction,
        kv_cache_floats_per_token=kv_cache_floats_per_token(cfg.attn_config),
    )


def run(argv=None, out=None, stdin=None) -> int:
    out = sys.stdout if out is None else out
    stdin = sys.stdin if stdin is None else stdin
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "tile":
            cmd_tile(args, out)
        elif args.command == "layout":
            cmd_layout(args, out)
        elif args.command == "forward":
            cmd_forward(args, out)
        elif args.command == "ground":
            cmd_ground(args, out, stdin)
        elif args.command == "balance":
            cmd_balance(args, out)
        elif args.command == "stages":
            cmd_stages(args, out)
        elif args.command == "config":
            cmd_config(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tilevl: error: {exc}", file=sys.stderr)
        return 2
    except (ImageError, ConfigError, gr.GroundingError, ValueError) as exc:
        print(f"tilevl: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
