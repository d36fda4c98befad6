"""Byte-pair-encoding tokenizer.

Reads GPT-2-format assets (a JSON token-to-id vocab plus a merges text
file) and also ships a 256-entry byte-level fallback vocabulary so every
test and toy run works with zero external files.

Pre-tokenization uses a simple whitespace/punctuation split (runs of
letters, digits, other symbols, or whitespace, with one leading space
attached to word-like runs) instead of the full GPT-2 regex. Merges never
cross pre-token boundaries; round-tripping is unaffected because the
byte-level base alphabet covers all input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

__all__ = ["VocabError", "BpeVocab", "load_vocab", "byte_level_vocab", "encode", "decode", "END_OF_TEXT"]

END_OF_TEXT = "<|endoftext|>"

_PRETOKEN_RE = re.compile(r" ?[A-Za-z]+| ?[0-9]+| ?[^A-Za-z0-9\s]+|\s+")


class VocabError(ValueError):
    """Malformed vocabulary or merges input."""


def _bytes_to_unicode() -> dict[int, str]:
    """GPT-2's reversible byte-to-printable-character remapping."""
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("\xa1"), ord("\xac") + 1)) + list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(bs, cs)}


_BYTE_TO_CHAR = _bytes_to_unicode()
_CHAR_TO_BYTE = {c: b for b, c in _BYTE_TO_CHAR.items()}


@dataclass
class BpeVocab:
    """Immutable token tables: safe for concurrent readers after load."""

    token_to_id: dict[str, int]
    id_to_token: dict[int, str]
    merge_ranks: dict[tuple[str, str], int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def end_of_text_id(self) -> int | None:
        return self.token_to_id.get(END_OF_TEXT)


def _validate_tables(token_to_id: dict[str, int]) -> dict[int, str]:
    id_to_token: dict[int, str] = {}
    for tok, i in token_to_id.items():
        if i in id_to_token:
            raise VocabError(f"duplicate token id {i} (tokens {id_to_token[i]!r} and {tok!r})")
        id_to_token[i] = tok
    ids = sorted(id_to_token)
    if ids != list(range(len(ids))):
        missing = next(k for k, v in enumerate(ids) if k != v)
        raise VocabError(f"token ids are not contiguous from 0: first gap at id {missing}")
    return id_to_token


def load_vocab(vocab_path: str, merges_path: str) -> BpeVocab:
    """Load GPT-2-format vocab (JSON object token -> id) and merges files.

    The merges file lists one space-separated symbol pair per line; a first
    line starting with ``#`` is treated as a header comment. Duplicate
    pairs, duplicate ids, and non-contiguous ids are rejected.
    """
    try:
        with open(vocab_path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise VocabError(f"cannot read vocab file {vocab_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise VocabError(f"vocab file {vocab_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise VocabError(f"vocab file {vocab_path} must contain one JSON object")
    token_to_id = {str(tok): int(i) for tok, i in raw.items()}
    id_to_token = _validate_tables(token_to_id)

    merge_ranks: dict[tuple[str, str], int] = {}
    try:
        with open(merges_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise VocabError(f"cannot read merges file {merges_path}: {exc}") from exc
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise VocabError(f"merges line {lineno} is not a symbol pair: {line!r}")
        pair = (parts[0], parts[1])
        if pair in merge_ranks:
            raise VocabError(f"duplicate merge pair {pair[0]!r} {pair[1]!r}")
        merge_ranks[pair] = len(merge_ranks)
    return BpeVocab(token_to_id, id_to_token, merge_ranks)


def byte_level_vocab(include_end_of_text: bool = False) -> BpeVocab:
    """The 256-entry byte fallback vocabulary (no merges).

    Token strings use the same byte remapping as GPT-2 vocab files, so
    encode/decode share one code path. When ``include_end_of_text`` is set,
    the end-of-text token is appended as id 256 for generation tasks.
    """
    token_to_id = {_BYTE_TO_CHAR[b]: b for b in range(256)}
    if include_end_of_text:
        token_to_id[END_OF_TEXT] = 256
    return BpeVocab(token_to_id, _validate_tables(token_to_id))


def _merge_symbols(symbols: list[str], ranks: dict[tuple[str, str], int]) -> list[str]:
    # Repeatedly apply the lowest-rank adjacent pair until none remains.
    while len(symbols) > 1:
        best_rank = None
        best_pair = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pair = pair
        if best_pair is None:
            break
        merged: list[str] = []
        i = 0
        while i < len(symbols):
            if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == best_pair:
                merged.append(symbols[i] + symbols[i + 1])
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def encode(text: str, vocab: BpeVocab) -> list[int]:
    """Tokenize UTF-8 text to ids, applying merges greedily by rank."""
    ids: list[int] = []
    for pretoken in _PRETOKEN_RE.findall(text):
        symbols = [_BYTE_TO_CHAR[b] for b in pretoken.encode("utf-8")]
        for sym in _merge_symbols(symbols, vocab.merge_ranks):
            try:
                ids.append(vocab.token_to_id[sym])
            except KeyError:
                raise VocabError(f"symbol {sym!r} missing from vocabulary; byte-level base alphabet incomplete")
    return ids


def decode(ids: list[int], vocab: BpeVocab) -> str:
    """Invert ``encode``: ids to tokens, then byte remapping back to UTF-8."""
    chars: list[str] = []
    for i in ids:
        tok = vocab.id_to_token.get(int(i))
        if tok is None:
            raise VocabError(f"unknown token id {int(i)}")
        chars.append(tok)
    data = bytes(_CHAR_TO_BYTE[c] for c in "".join(chars))
    return data.decode("utf-8", errors="replace")
