"""ViewModel package.

ViewModels orchestrate the pipeline: turning model outputs into
summaries, running the training loops and driving whole experiments.
They expose plain result objects that the view layer renders.
"""
