"""Context-aware transport-mode recommendation toolkit.

Feature engineering over map-query sessions, SMOTE resampling, a
histogram gradient-boosted tree classifier, multinomial logit estimation
and weighted-F1 evaluation, plus a synthetic city generator for testing.
"""

__version__ = "0.1.0"
