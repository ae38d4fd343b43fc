"""n-best ASR hypotheses as LLM prompts for spoken intent classification."""

__version__ = "0.1.0"
