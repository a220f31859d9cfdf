"""Premise retrieval for formal-mathematics libraries.

Ingests extracted theorem/tactic corpora, trains a formal-language
WordPiece tokenizer and a bi-encoder/cross-encoder pair from scratch,
and serves ranked premise lists for a proof state via CLI and HTTP.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
