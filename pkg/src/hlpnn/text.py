"""Tokenization, vocabularies, field encoding, and dataset ingestion."""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

# fields in fusion order after the tweets
META_FIELDS = ("description", "profile_location", "name")

_URL = re.compile(r"^(?:https?://|www\.)\S+", re.IGNORECASE)
_EMOJI = re.compile(
    "(?:[\U0001F000-\U0001FAFF\u2600-\u27BF\u2B00-\u2BFF\u2300-\u23FF]"
    "[\uFE0F\U0001F3FB-\U0001F3FF]*"
    "(?:\u200D[\U0001F000-\U0001FAFF\u2600-\u27BF]\uFE0F?)*)"
)
_URL_TRAIL = ".,!?;:'\")]}"


def _is_punct(ch):
    if ch.isalnum() or ch == "_" or _EMOJI.match(ch):
        return False
    return unicodedata.category(ch)[0] in "PS"


def _split_emoji(core):
    out, pos = [], 0
    for m in _EMOJI.finditer(core):
        if m.start() > pos:
            out.append(core[pos:m.start()])
        out.append(m.group())
        pos = m.end()
    if pos < len(core):
        out.append(core[pos:])
    return out


def tokenize(text):
    """Lowercase and split a tweet-like string.

    @mentions, #hashtags and URLs survive as single tokens; leading and
    trailing punctuation runs become their own tokens; emoji are split out.

    >>> tokenize("Hello WORLD!")
    ['hello', 'world', '!']
    """
    tokens = []
    for chunk in text.lower().split():
        if _URL.match(chunk):
            end = len(chunk)
            while end > 0 and chunk[end - 1] in _URL_TRAIL:
                end -= 1
            tokens.append(chunk[:end])
            if end < len(chunk):
                tokens.append(chunk[end:])
            continue
        start = 0
        while start < len(chunk) and _is_punct(chunk[start]):
            start += 1
        # keep the sigil of @mention / #hashtag attached
        if 0 < start < len(chunk) and chunk[start - 1] in "@#":
            start -= 1
        end = len(chunk)
        while end > start and _is_punct(chunk[end - 1]):
            end -= 1
        if start == end:
            tokens.append(chunk)
            continue
        if start:
            tokens.append(chunk[:start])
        tokens.extend(_split_emoji(chunk[start:end]))
        if end < len(chunk):
            tokens.append(chunk[end:])
    return tokens


@dataclass
class UserRecord:
    user_id: str
    tweets: list = field(default_factory=list)
    description: str = ""
    profile_location: str = ""
    name: str = ""
    user_language: str = ""
    time_zone: str = ""
    latitude: float = 0.0
    longitude: float = 0.0
    gold_city: str | None = None

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")

    def text_fields(self):
        return [*self.tweets, self.description, self.profile_location, self.name]

    def to_json(self):
        return {
            "user_id": self.user_id,
            "tweets": list(self.tweets),
            "description": self.description,
            "profile_location": self.profile_location,
            "name": self.name,
            "user_language": self.user_language,
            "time_zone": self.time_zone,
            "lat": self.latitude,
            "lon": self.longitude,
            "city": self.gold_city,
        }


class IngestionError(ValueError):
    """A dataset line violates the JSONL schema."""


_REQUIRED = {"user_id": str, "tweets": list, "lat": (int, float), "lon": (int, float)}
_OPTIONAL_STR = ("description", "profile_location", "name", "user_language", "time_zone")


def parse_user(obj, line_no=None):
    where = f"line {line_no}: " if line_no is not None else ""
    if not isinstance(obj, dict):
        raise IngestionError(f"{where}expected a JSON object")
    for key, typ in _REQUIRED.items():
        if key not in obj:
            raise IngestionError(f"{where}missing field '{key}'")
        if not isinstance(obj[key], typ) or isinstance(obj[key], bool):
            raise IngestionError(f"{where}field '{key}' has wrong type")
    if not all(isinstance(t, str) for t in obj["tweets"]):
        raise IngestionError(f"{where}field 'tweets' must be a list of strings")
    for key in _OPTIONAL_STR:
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise IngestionError(f"{where}field '{key}' must be a string")
    city = obj.get("city")
    if city is not None and not isinstance(city, str):
        raise IngestionError(f"{where}field 'city' must be a string")
    try:
        return UserRecord(
            user_id=obj["user_id"],
            tweets=list(obj["tweets"]),
            latitude=float(obj["lat"]),
            longitude=float(obj["lon"]),
            gold_city=city,
            **{key: obj.get(key) or "" for key in _OPTIONAL_STR},
        )
    except ValueError as exc:
        field_name = "lat" if "latitude" in str(exc) else "lon"
        raise IngestionError(f"{where}field '{field_name}': {exc}") from None


def load_dataset(path):
    """Stream UserRecords from a JSONL file in file order."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            yield parse_user(obj, line_no)


def write_dataset(users, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u in users:
            fh.write(json.dumps(u.to_json(), ensure_ascii=False) + "\n")


# -- vocabularies -----------------------------------------------------------
@dataclass
class Vocabulary:
    word_to_id: dict
    char_to_id: dict
    word_counts: dict = field(default_factory=dict)
    char_counts: dict = field(default_factory=dict)
    word_min_count: int = 10
    char_min_count: int = 5

    @property
    def n_words(self):
        return len(self.word_to_id)

    @property
    def n_chars(self):
        return len(self.char_to_id)

    def id_to_word(self):
        return {i: w for w, i in self.word_to_id.items()}

    def decode(self, word_ids):
        inv = self.id_to_word()
        return [inv[int(i)] for i in word_ids]


def _table_from_counts(counts, min_count):
    table = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
    kept = sorted((t for t, c in counts.items() if c > min_count), key=lambda t: (-counts[t], t))
    for tok in kept:
        table[tok] = len(table)
    return table


def build_vocab(corpus, word_min=10, char_min=5):
    """Word and character vocabularies over every text field of ``corpus``.

    Only tokens seen strictly more than ``word_min`` times (characters: more
    than ``char_min`` times) are kept; ids follow (count desc, token asc)
    after the reserved PAD=0 and UNK=1.
    """
    words, chars = Counter(), Counter()
    for user in corpus:
        for text in user.text_fields():
            for tok in tokenize(text):
                words[tok] += 1
                chars.update(tok)
    return Vocabulary(
        word_to_id=_table_from_counts(words, word_min),
        char_to_id=_table_from_counts(chars, char_min),
        word_counts=dict(words),
        char_counts=dict(chars),
        word_min_count=word_min,
        char_min_count=char_min,
    )


def save_table(table, counts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tok, idx in sorted(table.items(), key=lambda kv: kv[1]):
            fh.write(f"{tok}\t{idx}\t{counts.get(tok, 0)}\n")


def load_table(path):
    table, counts = {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok, idx, count = line.rstrip("\n").split("\t")
            table[tok] = int(idx)
            counts[tok] = int(count)
    return table, counts


def save_vocab(vocab, words_path, chars_path):
    save_table(vocab.word_to_id, vocab.word_counts, words_path)
    save_table(vocab.char_to_id, vocab.char_counts, chars_path)


def load_vocab(words_path, chars_path, word_min=10, char_min=5):
    w, wc = load_table(words_path)
    c, cc = load_table(chars_path)
    return Vocabulary(w, c, wc, cc, word_min, char_min)


def build_category_table(values):
    """Id table for a categorical field; "" and unseen values map to UNK."""
    table = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
    for v in sorted(set(values) - {""}):
        table[v] = len(table)
    return table


# -- encoding ---------------------------------------------------------------
@dataclass
class EncodedField:
    word_ids: np.ndarray
    char_ids: np.ndarray
    length: int
    mask: np.ndarray


def encode_field(tokens, vocab, n_max=30, k_max=20):
    """Fixed-size id arrays for one text field.

    Out-of-vocabulary words become UNK at word level but keep their
    character ids. Tokens beyond ``n_max`` and characters beyond ``k_max``
    are dropped.
    """
    tokens = tokens[:n_max]
    word_ids = np.full(n_max, PAD, dtype=np.int64)
    char_ids = np.full((n_max, k_max), PAD, dtype=np.int64)
    for i, tok in enumerate(tokens):
        word_ids[i] = vocab.word_to_id.get(tok, UNK)
        for j, ch in enumerate(tok[:k_max]):
            char_ids[i, j] = vocab.char_to_id.get(ch, UNK)
    mask = np.zeros(n_max, dtype=bool)
    mask[:len(tokens)] = True
    return EncodedField(word_ids, char_ids, len(tokens), mask)


@dataclass
class EncodedUser:
    fields: list
    t_used: int
    language_id: int
    timezone_id: int
    user_id: str = ""


def assemble_user(user, vocab, t_max, language_table, timezone_table, n_max=30, k_max=20):
    """Encode the first ``t_max`` tweets then description, location and name.

    An empty field keeps a single attendable PAD token so every field yields
    a representation.
    """
    tweets = user.tweets[:t_max]
    fields = []
    for text in [*tweets, user.description, user.profile_location, user.name]:
        enc = encode_field(tokenize(text), vocab, n_max, k_max)
        if enc.length == 0:
            enc.mask[0] = True
        fields.append(enc)
    return EncodedUser(
        fields=fields,
        t_used=len(tweets),
        language_id=language_table.get(user.user_language, UNK),
        timezone_id=timezone_table.get(user.time_zone, UNK),
        user_id=user.user_id,
    )


def load_pretrained_embeddings(path, vocab, dim, rng):
    """Word table initialized from a "token v1 ... vD" text file.

    Rows for tokens absent from the file are drawn from U(-0.25, 0.25).
    Returns the table and the number of rows taken from the file.
    """
    table = rng.uniform(-0.25, 0.25, size=(vocab.n_words, dim))
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ConfigError(
                    f"line {line_no}: embedding has {len(parts) - 1} values, config expects {dim}"
                )
            idx = vocab.word_to_id.get(parts[0])
            if idx is not None and idx > UNK:
                table[idx] = np.asarray(parts[1:], dtype=np.float64)
                hits += 1
    return table, hits
