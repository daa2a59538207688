"""Testing framework for noisy-label segmentation experiments."""
