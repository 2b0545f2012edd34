"""Generative relation classification by text infilling.

Builds entity-oriented prompts with trainable continuous tokens, trains a
compact encoder-decoder on sentinel-delimited targets, and predicts relations
with entity-guided decoding, length-normalized label scoring, and entity-type
filtering.
"""

__version__ = "0.1.0"
