"""Adversarial full waveform inversion with a least-squares baseline."""
