"""Joint occlusion, motion/depth boundary, optical flow, disparity and scene
flow toolkit: exact synthetic ground truth, derivation rules, differentiable
kernels, desk-scale refinement stacks and the full evaluation metric suite."""

__version__ = "0.1.0"
