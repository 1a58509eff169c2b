"""Two-stage adversarial patch pipeline for face-embedding models.

Stage 1 inpaints a patch region with attacker-styled, identity-bearing content
through an attention-guided style generator; stage 2 refines the patch for
stealth. Evaluation covers attack success rate against pluggable face
recognition backbones plus MSE/LPIPS/FID stealthiness metrics.
"""

__version__ = "0.1.0"
