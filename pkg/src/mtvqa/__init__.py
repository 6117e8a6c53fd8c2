"""Multi-task trainer for multi-modal video question answering on
synthetic episodes: a QA network with context-query attention plus two
auxiliary heads (modality alignment, temporal localization) trained
jointly under a scheduled weighted-sum loss."""

__version__ = "0.1.0"
