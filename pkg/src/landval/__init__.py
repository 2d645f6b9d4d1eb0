"""Similarity-based land valuation.

Labeled land pairs are built from spatial proximity and price difference,
tabular and image similarity models score them, the scores are ensembled, and
prices are predicted by similarity-weighted averaging of nearby appraisals.
"""

__version__ = "0.1.0"
