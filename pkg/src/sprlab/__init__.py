"""sprlab: a desk-scale laboratory for self-predictive reinforcement learning.

Trains ablation variants of a latent self-prediction auxiliary task (cosine
self-distillation, Barlow Twins, VICReg) with the RL-specific loss
modifications under study (terminal masking, prioritized-replay weighting),
on toy grid environments, with bootstrap evaluation statistics and
representation diagnostics.
"""

import os as _os

# Matrices here are tiny; BLAS thread fan-out costs more than it saves.
# Honored only when numpy is first imported after sprlab; users can override.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
