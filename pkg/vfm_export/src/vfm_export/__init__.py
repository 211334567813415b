"""Export adapter: turns RGB-D capture directories into scene bundles.

Runs a grounding model over the color frames (2D instance masks), an
image-text encoder over per-proposal multi-scale crops (embeddings), and
writes everything in the ov3dis bundle format. Strictly a format producer:
no proposal generation, tracking, or classification happens here.
"""

__version__ = "0.1.0"
