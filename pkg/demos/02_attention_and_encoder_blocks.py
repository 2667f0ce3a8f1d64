"""What the attention stack computes: scaled dot-product weights, padding
masks, multi-head projections, and a full encoder forward pass.

Run:  python demos/02_attention_and_encoder_blocks.py
"""

import numpy as np

from switchtext import EncoderModel, ModelConfig, Tensor
from switchtext.attention import MultiHeadParams, multi_head_attention, scaled_dot_product_attention

rng = np.random.default_rng(1)

# --- scaled dot-product attention on a 3-token sequence ------------------
q = Tensor(rng.standard_normal((3, 4)))
k = Tensor(rng.standard_normal((3, 4)))
v = Tensor(np.eye(3))

# With v = I the output rows ARE the attention weights.
weights = scaled_dot_product_attention(q, k, v, np.array([True, True, True]))
print("attention weights (rows sum to 1):\n", np.round(weights.data, 4))
print("row sums:", weights.data.sum(axis=1))

# Mask the last key: its column collapses to exactly zero.
masked = scaled_dot_product_attention(q, k, v, np.array([True, True, False]))
print("\nwith key 3 masked:\n", np.round(masked.data, 4))

# --- multi-head attention over a batch -----------------------------------
p = MultiHeadParams.create(d_model=8, num_heads=2, rng=np.random.default_rng(2))
x = Tensor(rng.standard_normal((2, 5, 8)))
mask = np.array([[True] * 5, [True, True, True, False, False]])
out = multi_head_attention(x, p, mask)
print("\nmulti-head output shape:", out.shape)

# --- a whole encoder model ------------------------------------------------
config = ModelConfig(variant="dense", num_layers=2, num_heads=2, d_model=16,
                     d_ff=64, vocab_size=30, max_len=12, dropout=0.0, seed=4)
model = EncoderModel.build(config)
ids = rng.integers(2, 30, size=(2, 6))
ids[1, 4:] = 0  # pad the second sequence
result = model.forward(ids, ids != 0)
print("\nlogits:\n", result.logits.data)
print("hidden states per layer:", [h.shape for h in result.hidden])

# Padding invariance: appending PAD tokens never changes the logits.
padded = np.concatenate([ids, np.zeros((2, 3), dtype=ids.dtype)], axis=1)
delta = np.abs(model.forward(padded, padded != 0).logits.data - result.logits.data).max()
print("max logit change after appending PADs:", delta)
