"""Transfer learning for ionic-liquid properties with a neural recommender.

Pre-train per-ion embeddings on dense single-condition data, freeze them,
then fit small temperature/pressure-aware heads on sparse measurements.
"""

__version__ = "0.1.0"
