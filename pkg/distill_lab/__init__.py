"""
Desk-scale laboratory for adaptive margin-softmax knowledge distillation.

The package trains a toy teacher with a margin-penalty softmax loss, distills
compact students under several methods and measures them with the usual
verification metrics (best-threshold accuracy, TAR@FAR, rank-1).
"""

__version__ = "0.3.0"
