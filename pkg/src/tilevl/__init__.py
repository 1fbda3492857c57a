"""Desk-scale vision-language building blocks: dynamic tiling, visual token
layout, latent-attention KV caching, bias-balanced MoE routing, grounding
markup and training-load balancing."""

__version__ = "0.1.0"
