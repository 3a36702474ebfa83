"""motionchat: two-person motion tokenization, a small motion-text language
model, conversation-data synthesis with quality gating, and motion metrics."""

__version__ = "0.1.0"
