"""Discourse-graph machine reading comprehension over multiparty dialogues."""
__version__ = "0.1.0"
