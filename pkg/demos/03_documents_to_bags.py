"""
From a long token sequence to a bag prediction
==============================================

A document is cut into 512-token chunks, each chunk becomes one embedding
row, and the model reads the whole bag through its category row.
"""

import numpy as np

from laficmil.attention import AttentionConfig
from laficmil.corpus import Document, chunk, document_to_bag
from laficmil.model import ModelConfig, init_params, score_bag

rng = np.random.default_rng(2)
doc = Document("long-doc", rng.integers(0, 30000, size=2300).tolist(), 1)

pieces = chunk(doc, 512)
print("chunk lengths", [len(p) for p in pieces])

bag = document_to_bag(doc, d=32)
print("bag instances", bag.instances.shape)
# every instance row has unit RMS
print(np.sqrt((bag.instances ** 2).mean(axis=1)))

cfg = ModelConfig(AttentionConfig(32, 4, 4), num_layers=2, max_bag=16, num_labels=1, task="binary")
params = init_params(cfg, seed=0)
pred = score_bag(bag.instances, params, cfg)
print("logit", pred.logits, "probability", pred.scores, "decision", pred.decision)
