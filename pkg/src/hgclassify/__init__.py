"""Hierarchy-graph-enhanced multi-level classification.

Class taxonomies become graphs; per-class text features and visual
prototypes are enriched by graph encoders, fused into image features via
attention, and trained with a weighted multi-level cross-entropy.
"""

__version__ = "0.1.0"
