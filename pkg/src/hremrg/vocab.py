"""Tokenisation and the token <-> id table."""
from __future__ import annotations

import re
from collections import Counter
from pathlib import Path

from .errors import ContractError, VocabularyError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SPECIAL_IDS = frozenset((PAD, BOS, EOS))

_TRAILING_PUNCT = re.compile(r"^(.*?)([.,:;]+)$")


def tokenize(text):
    """Lowercase, split on whitespace, and detach trailing ``. , : ;``."""
    tokens = []
    for word in text.lower().split():
        m = _TRAILING_PUNCT.match(word)
        if m is None:
            tokens.append(word)
            continue
        stem, punct = m.groups()
        if stem:
            tokens.append(stem)
        tokens.extend(punct)
    return tokens


class Vocab:
    """Reserved ids 0..3 are PAD, BOS, EOS, UNK; the rest follow by
    descending training count, ties broken lexicographically."""

    def __init__(self, tokens, min_count=5):
        self.itos = list(RESERVED) + list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate tokens in vocabulary")
        self.min_count = min_count

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos and self.min_count == other.min_count

    def id(self, token):
        return self.stoi.get(token, UNK)

    def token(self, idx):
        if not 0 <= idx < len(self.itos):
            raise VocabularyError(f"token id {idx} outside vocabulary of size {len(self.itos)}")
        return self.itos[idx]

    def encode(self, text, max_len):
        """``BOS + ids + EOS``, truncated to ``max_len`` with EOS kept last."""
        if max_len < 2:
            raise ContractError("max_len must be at least 2")
        ids = [self.id(tok) for tok in tokenize(text)][: max_len - 2]
        return [BOS, *ids, EOS]

    def decode(self, ids):
        """Words for ``ids`` with BOS/EOS/PAD dropped."""
        return [self.token(i) for i in ids if i not in SPECIAL_IDS]

    def detokenize(self, ids):
        return " ".join(self.decode(ids))

    def save(self, path):
        lines = [f"# min_count={self.min_count}", *self.itos[len(RESERVED):]]
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        min_count = 5
        if lines and lines[0].startswith("# min_count="):
            min_count = int(lines[0].split("=", 1)[1])
            lines = lines[1:]
        return cls([ln for ln in lines if ln], min_count=min_count)


def build_vocab(reports, min_count=5):
    """Vocabulary over the training reports keeping tokens seen ``min_count``+ times."""
    reports = list(reports)
    if not reports:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in reports for tok in tokenize(text))
    kept = [tok for tok, c in counts.items() if c >= min_count and tok not in RESERVED]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(kept, min_count=min_count)


def encode_report(text, vocab, max_len):
    return vocab.encode(text, max_len)
