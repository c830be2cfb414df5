"""Single-shot novel view synthesis at desk scale.

Pipeline: a procedural scene generator with exact ground-truth geometry
stands in for a pretrained 3D GAN; truncated latents drive multi-view
triplet synthesis; an image-conditioned radiance field is trained with
reconstruction losses and a pose-conditioned depth discriminator.
"""

__version__ = "0.1.0"
