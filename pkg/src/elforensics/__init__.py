"""Electoral forensics: digit screening, Z-score outliers, ordered-outlier
bias tests and counterfactual result estimates for polling-station tallies."""

__version__ = "0.1.0"
