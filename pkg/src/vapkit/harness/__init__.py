"""Synthetic dialogs, phrase-pair analysis, the evaluation pipeline and report plots."""
