"""Losses, metrics, the synthetic dataset, SGD and the training loop."""
