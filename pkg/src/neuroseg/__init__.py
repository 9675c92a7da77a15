"""Desk-scale 3D neuron segmentation: SWC parsing, label rasterization,
a minimal 2D/3D ViT with hand-written gradients, 2D-to-3D weight
transfer (average / center inflation), training, stitched inference,
and Dice / Hd95 evaluation."""

__version__ = "0.1.0"
