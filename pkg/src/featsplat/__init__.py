"""featsplat: 3D Gaussian splatting with semantic feature fields.

Reconstructs scenes as Gaussians carrying per-primitive feature vectors,
trains them against photographs plus encoder feature maps, and answers
open-vocabulary text queries with heatmaps, masks, and point prompts.
"""

__version__ = "0.1.0"
