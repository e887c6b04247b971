"""How the ordinal counting head represents, learns, and decodes counts.

Counts are encoded as exceedance bits (is the count > 0? > 1? ...). The
sigmoid of logit k is the conditional probability of exceeding k given
exceedance of k-1, so the chain of unconditional probabilities can only
decrease: the prediction is rank-consistent by construction, never by luck.
"""

import numpy as np

from avinseg.autodiff import Tensor
from avinseg.counting import (
    decode_count_from_probs,
    ordinal_probs,
    ordinal_targets,
    saoc_loss,
)

k_max = 3
print("Ordinal targets for counts 0..4 at k_max=3:")
for n in range(5):
    print(f"  count {n} -> {ordinal_targets(n, k_max).astype(int)}")

print("\nDecoding walks the probability chain and stops at 0.5:")
for probs in ([0.9, 0.8, 0.1], [0.4, 0.9, 0.9], [0.99, 0.97, 0.9]):
    chain = np.cumprod(probs)
    print(f"  conditionals {probs} -> chain {np.round(chain, 3)} -> count {decode_count_from_probs(probs)}")

print("\nThe chain is non-increasing for any logits (one million random checks):")
rng = np.random.default_rng(0)
logits = rng.uniform(-12, 12, (10**6 // k_max, k_max))
chains = np.cumprod(1 / (1 + np.exp(-logits)), axis=1)
print("  violations:", int((np.diff(chains, axis=1) > 0).sum()))

print("\nGradient descent on the counting loss saturates the right bits:")
logits = Tensor(np.zeros((1, k_max)), requires_grad=True)
true_count = 2
for step in range(2000):
    loss = saoc_loss([logits], [true_count], k_max)
    loss.backward()
    logits.data = logits.data - 0.05 * logits.grad
probs = ordinal_probs(logits)
print(f"  after training on count={true_count}: probs {np.round(probs.probs.data, 3)}")
print(f"  decoded count: {decode_count_from_probs(probs.probs.data.ravel())}")
print(f"  final loss: {saoc_loss([logits], [true_count], k_max).item():.2e}")
