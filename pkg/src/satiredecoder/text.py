"""Tokenization shared by the metrics engine and the mock embedder."""

from __future__ import annotations

import re

_TOKEN = re.compile(r"[^\W_]+")
_SENTENCE_END = re.compile(r"[.?!]+")

# longest suffix first; a suffix is only stripped if at least 3 characters remain
_SUFFIXES = ("ingly", "edly", "ing", "ies", "ed", "ly", "es", "s")
_SIBILANT_ENDINGS = ("s", "x", "z", "ch", "sh")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation; punctuation is dropped.

    >>> tokenize("A man, kicking.")
    ['a', 'man', 'kicking']
    >>> tokenize("soccer-ball")
    ['soccer', 'ball']
    """
    return _TOKEN.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split on runs of ``.?!``; sentences without any token are dropped."""
    return [s.strip() for s in _SENTENCE_END.split(text) if tokenize(s)]


def stem(token: str) -> str:
    """Crude suffix-stripping stemmer (kicks/kicked/kicking -> kick, trees -> tree)."""
    for suffix in _SUFFIXES:
        if not token.endswith(suffix) or len(token) - len(suffix) < 3:
            continue
        root = token[: -len(suffix)]
        if suffix == "ies":
            return root + "y"
        if suffix == "es" and not root.endswith(_SIBILANT_ENDINGS):
            # plain plural of an -e word: drop only the s
            return token[:-1]
        if suffix == "s" and root.endswith("s"):
            return token
        return root
    return token
