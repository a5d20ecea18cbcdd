"""Desk-scale projection predictor: frontends, causal transformer, training, checkpoints."""
