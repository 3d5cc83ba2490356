"""Open-set few-shot and cross-modal few-shot evaluation toolkit."""

__version__ = "0.1.0"
