"""Deterministic text cleaning and vectorization shared by training and inference."""

from __future__ import annotations

import enum
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, InvalidArgument

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"

VOCAB_FORMAT_VERSION = 1
DEFAULT_MAX_LEN = 64
DEFAULT_VOCAB_SIZE = 10_000


class Label(enum.Enum):
    NEGATIVE = 0
    POSITIVE = 1

    @classmethod
    def from_string(cls, s: str) -> "Label":
        try:
            return cls[s.strip().upper()]
        except KeyError:
            raise InvalidArgument(f"unknown sentiment label: {s!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


class EmojiStyle(enum.Enum):
    DROP = "drop"
    NAMED_MARKER = "named_marker"


def load_default_stopwords() -> frozenset:
    text = resources.files("pulsestream.data").joinpath("stopwords_id.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class CleanConfig:
    stopword_list: frozenset = frozenset()
    emoji_marker_style: EmojiStyle = EmojiStyle.DROP
    lowercase: bool = True  # always true; kept explicit for the record

    def __post_init__(self):
        for w in self.stopword_list:
            if w != w.lower() or any(c.isspace() for c in w):
                raise InvalidArgument(f"stopword must be lowercase without whitespace: {w!r}")


def default_clean_config(style: EmojiStyle = EmojiStyle.DROP) -> CleanConfig:
    return CleanConfig(stopword_list=load_default_stopwords(), emoji_marker_style=style)


_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"#\w+")
_MARKER_RE = re.compile(r":[a-z0-9_]+:")
# Ranges: emoticons, misc symbols & pictographs, transport, flags, supplemental.
_EMOJI_RANGES = (
    (0x1F600, 0x1F64F),
    (0x1F300, 0x1F5FF),
    (0x1F680, 0x1F6FF),
    (0x1F1E6, 0x1F1FF),
    (0x1F900, 0x1F9FF),
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
)


def _is_emoji(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


def _emoji_marker(ch: str) -> str:
    name = unicodedata.name(ch, "emoji").lower()
    return ":" + re.sub(r"[^a-z0-9]+", "_", name).strip("_") + ":"


def _strip_punct(tok: str) -> str:
    # Keep hyphens/apostrophes only between word characters ("anak-anak", "don't").
    out = []
    for i, ch in enumerate(tok):
        if unicodedata.category(ch).startswith("P"):
            if ch in "-'’" and 0 < i < len(tok) - 1 and tok[i - 1].isalnum() and tok[i + 1].isalnum():
                out.append(ch)
        else:
            out.append(ch)
    return "".join(out)


def clean_text(raw: str, config: CleanConfig) -> str:
    """Normalize raw text to the token stream the model consumes. Idempotent."""
    text = raw.lower()
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = _HASHTAG_RE.sub(" ", text)

    chars = []
    for ch in text:
        if _is_emoji(ch):
            if config.emoji_marker_style is EmojiStyle.NAMED_MARKER:
                chars.append(" " + _emoji_marker(ch) + " ")
            else:
                chars.append(" ")
        else:
            chars.append(ch)
    text = "".join(chars)

    tokens = []
    for tok in text.split():
        # Emoji markers are atomic; never punctuation-stripped or stopworded.
        if _MARKER_RE.fullmatch(tok):
            tokens.append(tok)
            continue
        tok = _strip_punct(tok)
        if not tok or tok in config.stopword_list:
            continue
        tokens.append(tok)
    return " ".join(tokens)


@dataclass
class Vocabulary:
    token_to_id: dict
    id_to_token: list
    max_size: int
    max_len: int = DEFAULT_MAX_LEN

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def save(self, path) -> None:
        doc = {
            "version": VOCAB_FORMAT_VERSION,
            "max_len": self.max_len,
            "max_size": self.max_size,
            "tokens": self.id_to_token[2:],  # reserved ids implicit
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False), "utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
            tokens = doc["tokens"]
            max_len = int(doc["max_len"])
            max_size = int(doc.get("max_size", len(tokens) + 2))
            if doc["version"] != VOCAB_FORMAT_VERSION:
                raise FormatError(f"unsupported vocabulary version: {doc['version']}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad vocabulary file {path}: {e}") from e
        id_to_token = [PAD_TOKEN, OOV_TOKEN] + list(tokens)
        token_to_id = {t: i for i, t in enumerate(id_to_token) if i >= 2}
        return cls(token_to_id=token_to_id, id_to_token=id_to_token,
                   max_size=max_size, max_len=max_len)


def build_vocabulary(corpus: Iterable[str], max_size: int = DEFAULT_VOCAB_SIZE,
                     max_len: int = DEFAULT_MAX_LEN) -> Vocabulary:
    """Frequency-ranked vocabulary; ties broken lexicographically. Deterministic."""
    if max_size < 3:
        raise InvalidArgument(f"max_size must be >= 3, got {max_size}")
    counts = Counter()
    for text in corpus:
        counts.update(text.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 2]]
    id_to_token = [PAD_TOKEN, OOV_TOKEN] + kept
    token_to_id = {t: i + 2 for i, t in enumerate(kept)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token,
                      max_size=max_size, max_len=max_len)


@dataclass
class TokenSeq:
    ids: np.ndarray  # int64, length max_len, pad-filled past true_len
    true_len: int


def vectorize(text: str, vocab: Vocabulary, max_len: int | None = None) -> TokenSeq:
    if max_len is None:
        max_len = vocab.max_len
    toks = text.split()[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(toks):
        ids[i] = vocab.lookup(tok)
    return TokenSeq(ids=ids, true_len=len(toks))


def one_hot(label: Label) -> np.ndarray:
    v = np.zeros(2, dtype=np.float64)
    v[label.value] = 1.0
    return v
