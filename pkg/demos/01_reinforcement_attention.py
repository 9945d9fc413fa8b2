"""Walk through self-reinforcement attention on a toy chromosome.

Run with ``python demos/01_reinforcement_attention.py``.
"""

import numpy as np

from epiga.attention import attention_weights, init_head, reinforce

# A weight of 1 keeps a gene as it is, below 1 silences it, above 1 enhances it.
v = np.array([1.0, 1.0, 0.0, 1.0])
print("identity :", reinforce(np.ones(4), v).value)
print("silence  :", reinforce(np.array([0.0, 1.0, 1.0, 1.0]), v).value)
print("enhance  :", reinforce(np.array([1.0, 10 / 9, 1.0, 1.0]), v).value)

# Learned weights come from query/key networks: a_i = 2 * sigmoid(q_i . k_i / sqrt(d_k)),
# so every weight sits in (0, 2).
rng = np.random.default_rng(0)
head = init_head(in_dim=4, d_v=4, d_k=8, rng=rng)
a = attention_weights(head, v)
print("weights  :", np.round(a.value, 3))
print("epi      :", np.round(reinforce(a, v).value, 3))

# Two heads reading the same chromosome give two different epi-chromosomes,
# like identical twins with different methylation.
other = init_head(in_dim=4, d_v=4, d_k=8, rng=rng)
print("twin     :", np.round(reinforce(attention_weights(other, v), v).value, 3))
