"""Rotation defense against targeted FGSM on a from-scratch LeNet-5."""
