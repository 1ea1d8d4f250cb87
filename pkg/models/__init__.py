"""Models package.

The model layer holds the domain entities and the numerical core:
annotation formats and summaries, temporal segmentation and knapsack
selection, the DPP, the differentiable networks, evaluation metrics and
feature alignment.  Nothing here reads files or knows about runs.
"""
