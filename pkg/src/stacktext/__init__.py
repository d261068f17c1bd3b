"""stacktext: a from-scratch heterogeneous stacking-ensemble text
classification toolkit (TF-IDF classical baselines, toy transformer
encoders with lineage-specific pretraining, and a stacking meta-level
classifier), driven by a config-based experiment runner."""

__version__ = "0.1.0"
