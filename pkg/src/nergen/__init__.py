"""nergen: LLM-driven synthesis of NER training datasets."""

__version__ = "0.1.0"
