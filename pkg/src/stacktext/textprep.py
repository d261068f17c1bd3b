"""Text cleaning, word tokenization, stopword removal, POS tagging and
rule-based lemmatization.

Cleaning rules fire in a fixed, documented order: URLs, handles, numbers,
symbols, lowercasing, whitespace collapse. The POS tagger and lemmatizer
are deterministic lexicon+suffix rule tables, not learned models.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_HANDLE_RE = re.compile(r"@\w+")
_NUMBER_RE = re.compile(r"\d+")
_SYMBOL_RE = re.compile(r"[^A-Za-z0-9'\s]")
_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"[A-Za-z']+")

VOWELS = set("aeiou")


def _read_resource(name: str) -> list[str]:
    text = importlib_resources.files("stacktext.resources").joinpath(name).read_text("utf-8")
    lines = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        words = _read_resource("stopwords.txt")
    else:
        words = [ln.strip() for ln in Path(path).read_text("utf-8").splitlines()
                 if ln.strip() and not ln.startswith("#")]
    return frozenset(w.lower() for w in words)


def load_lemma_lexicon(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        lines = _read_resource("lemma_lexicon.txt")
    else:
        lines = [ln.strip() for ln in Path(path).read_text("utf-8").splitlines()
                 if ln.strip() and not ln.startswith("#")]
    lexicon = {}
    for line in lines:
        surface, lemma = line.split()
        lexicon[surface] = lemma
    return lexicon


@dataclass(frozen=True)
class CleanConfig:
    lowercase: bool = True
    strip_urls: bool = True
    strip_handles: bool = True
    strip_numbers: bool = True
    strip_symbols: bool = True
    stopword_list: frozenset[str] = field(default_factory=load_stopwords)


@dataclass(frozen=True)
class TaggedToken:
    surface: str
    pos: str  # NOUN | VERB | ADJ | ADV | OTHER


def clean(text: str, cfg: CleanConfig) -> str:
    if cfg.strip_urls:
        text = _URL_RE.sub(" ", text)
    if cfg.strip_handles:
        text = _HANDLE_RE.sub(" ", text)
    if cfg.strip_numbers:
        text = _NUMBER_RE.sub(" ", text)
    if cfg.strip_symbols:
        text = _SYMBOL_RE.sub(" ", text)
    if cfg.lowercase:
        text = text.lower()
    return _WS_RE.sub(" ", text).strip()


def tokenize_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def remove_stopwords(tokens: list[str], stoplist: frozenset[str]) -> list[str]:
    return [t for t in tokens if t.lower() not in stoplist]


# Small closed-class lexicon for tagging; open-class words fall through to
# the suffix rules below.
_POS_LEXICON = {
    "be": "VERB", "is": "VERB", "are": "VERB", "was": "VERB", "were": "VERB",
    "have": "VERB", "has": "VERB", "had": "VERB", "do": "VERB", "does": "VERB",
    "did": "VERB", "go": "VERB", "went": "VERB", "run": "VERB", "make": "VERB",
    "made": "VERB", "get": "VERB", "got": "VERB", "say": "VERB", "said": "VERB",
    "work": "VERB", "works": "VERB", "use": "VERB", "take": "VERB", "took": "VERB",
    "good": "ADJ", "bad": "ADJ", "great": "ADJ", "new": "ADJ", "old": "ADJ",
    "big": "ADJ", "small": "ADJ", "nice": "ADJ", "poor": "ADJ", "best": "ADJ",
    "worst": "ADJ", "better": "ADJ", "worse": "ADJ", "slow": "ADJ", "fast": "ADJ",
    "easy": "ADJ", "hard": "ADJ", "happy": "ADJ", "free": "ADJ",
    "very": "ADV", "never": "ADV", "always": "ADV", "often": "ADV",
    "again": "ADV", "here": "ADV", "there": "ADV", "now": "ADV", "well": "ADV",
    "app": "NOUN", "apps": "NOUN", "time": "NOUN", "day": "NOUN",
    "service": "NOUN", "review": "NOUN", "hotel": "NOUN", "room": "NOUN",
    "people": "NOUN", "man": "NOUN", "men": "NOUN", "woman": "NOUN",
    "women": "NOUN", "child": "NOUN", "children": "NOUN",
}

# (suffix, tag) pairs, checked in order; longest-specific suffixes first.
_SUFFIX_TAGS = (
    ("ly", "ADV"),
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ment", "NOUN"),
    ("ness", "NOUN"),
    ("ity", "NOUN"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("ish", "ADJ"),
    ("al", "ADJ"),
    ("er", "NOUN"),
    ("or", "NOUN"),
    ("ist", "NOUN"),
    ("ism", "NOUN"),
    ("s", "NOUN"),
)


def pos_tag(tokens: list[str]) -> list[TaggedToken]:
    tagged = []
    for tok in tokens:
        low = tok.lower()
        tag = _POS_LEXICON.get(low)
        if tag is None:
            for suffix, t in _SUFFIX_TAGS:
                if low.endswith(suffix) and len(low) > len(suffix) + 1:
                    tag = t
                    break
        tagged.append(TaggedToken(surface=tok, pos=tag or "OTHER"))
    return tagged


def _strip_verb(word: str) -> str:
    if word.endswith("ying") and len(word) > 5:
        return word[:-4] + "y"
    if word.endswith("ing") and len(word) > 4:
        stem = word[:-3]
        if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in VOWELS:
            return stem[:-1]
        return stem
    if word.endswith("ied") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ed") and len(word) > 3:
        stem = word[:-2]
        if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in VOWELS:
            return stem[:-1]
        return stem
    if word.endswith("es") and len(word) > 3:
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss") and len(word) > 2:
        return word[:-1]
    return word


def _strip_noun(word: str) -> str:
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    for suf in ("ches", "shes", "sses", "xes", "zes"):
        if word.endswith(suf) and len(word) > len(suf) + 1:
            return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")) and len(word) > 2:
        return word[:-1]
    return word


def lemmatize(tagged: list[TaggedToken], lexicon: dict[str, str] | None = None) -> list[str]:
    if lexicon is None:
        lexicon = _DEFAULT_LEXICON
    out = []
    for tt in tagged:
        low = tt.surface.lower()
        if low in lexicon:
            out.append(lexicon[low])
        elif tt.pos == "VERB":
            out.append(_strip_verb(low))
        elif tt.pos == "NOUN":
            out.append(_strip_noun(low))
        else:
            out.append(low)
    return out


_DEFAULT_LEXICON = load_lemma_lexicon()


def preprocess_pipeline(text: str, cfg: CleanConfig,
                        lexicon: dict[str, str] | None = None) -> list[str]:
    """clean -> tokenize -> stopword removal -> POS tag -> lemmatize."""
    tokens = tokenize_words(clean(text, cfg))
    tokens = remove_stopwords(tokens, cfg.stopword_list)
    return lemmatize(pos_tag(tokens), lexicon)
