"""Training and evaluation lab for contrastive sequential recommendation.

The pipeline goes raw interaction logs -> deduplicated 5-core corpus ->
leave-one-out splits -> stochastic sequence augmentation -> causal
self-attention encoder -> joint next-item plus contrastive objective ->
full-catalog ranking metrics. Baseline modes (plain next-item training,
augmented next-item training, item popularity) share the same data and
evaluation path so ablations compare like with like.
"""

__version__ = "0.1.0"
