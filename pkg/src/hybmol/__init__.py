"""Pocket-conditioned 3D ligand generation.

Protein-ligand complexes are encoded as hybrid sequences of discrete tokens
and continuous 3D coordinates.  A causal transformer models the discrete part
autoregressively; a small diffusion MLP, conditioned on the transformer's
hidden states, samples the per-atom coordinates.  Training combines a
cross-entropy loss on tokens with a diffusion loss on coordinates, and a
regularized maximum-likelihood RL stage finetunes the transformer against
pluggable rewards.
"""

__version__ = "0.1.0"
