"""SIGNL kit: spatio-temporal vision-graph non-contrastive learning for
bona-fide/fake audio-feature classification with limited labels."""

__version__ = "0.1.0"
