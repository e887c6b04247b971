"""Build a tiny attention block on the tensor library and verify its gradients.

The library records every op on a tape; calling backward() on a scalar
fills .grad on every parameter. The same finite-difference checker used by
the test suite is available for ad-hoc verification.
"""

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor, grad_check
from avinseg.fusion import CrossAttentionLayer, cross_attention

rng = np.random.default_rng(0)
d = 8

print("A single cross-attention layer: 3 queries attend to 2 key/value rows.")
layer = CrossAttentionLayer.create(d_model=d, d_ff=4 * d, rng=rng)
queries = Tensor(rng.uniform(-1, 1, (3, d)), requires_grad=True)
audio = Tensor(rng.uniform(-1, 1, (2, d)), requires_grad=True)

out = cross_attention(layer, queries, audio)
print("output shape:", out.shape)

# a fixed random readout; summing the squared output would be degenerate
# because layernorm pins each row's second moment
probe = ad.constant(rng.uniform(-1, 1, (3, d)))
loss = ad.tsum(ad.mul(out, probe))
loss.backward()
print(f"loss = {loss.item():.4f}")
print(f"gradient magnitudes: queries {np.abs(queries.grad).max():.4f}, "
      f"audio {np.abs(audio.grad).max():.4f}, W_V {np.abs(layer.w_v.grad).max():.4f}")

print("\nChecking analytic gradients against central finite differences:")
report = grad_check(
    lambda q, a: ad.tsum(ad.mul(cross_attention(layer, q, a), probe)),
    [queries, audio],
    eps=1e-5,
    tol=1e-4,
)
print(report)
for name, err in zip(("queries", "audio"), report.per_input):
    print(f"  {name}: max rel err {err:.2e}")
