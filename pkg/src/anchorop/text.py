"""Tokenization shared by the corpus reader and the normalizer."""

import re
import string

PLACEHOLDER_RE = re.compile(r"^<[a-z0-9_]+>$")
_STRIP = string.punctuation + "‘’“”…।"
_STRIP_KEEP_ANGLE = _STRIP.replace("<", "").replace(">", "")


def is_placeholder(token: str) -> bool:
    return bool(PLACEHOLDER_RE.match(token))


def tokenize(text: str) -> list[str]:
    """Whitespace split, lowercase, strip surrounding punctuation.

    ``<name>``-style placeholders survive as single tokens. Tokens that are
    pure punctuation disappear.
    """
    out = []
    for raw in text.split():
        tok = raw.lower().strip(_STRIP_KEEP_ANGLE)
        if is_placeholder(tok):
            out.append(tok)
            continue
        tok = tok.strip(_STRIP)
        if tok:
            out.append(tok)
    return out
