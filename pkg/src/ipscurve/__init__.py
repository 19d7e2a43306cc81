"""Incremental propensity score effect curves.

Cross-fitted doubly robust estimation of the mean outcome when every unit's
odds of exposure are multiplied by ``delta``, with Wald intervals, multiplier
bootstrap uniform bands and an enumerable-truth simulation harness.
"""
__version__ = "0.1.0"
