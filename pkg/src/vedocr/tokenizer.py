"""Character-level tokenizer in which diacritic marks are ordinary symbols."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, MASK = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>", "<mask>")
NUM_SPECIAL = len(SPECIALS)

# 18 base letters, 4 combining marks (fatha, damma, kasra, sukun) and space.
BASE_GLYPHS = tuple("ابجدهوزحطيكلمنسعفص")
DIACRITICS = ("َ", "ُ", "ِ", "ْ")
SPACE = " "
DEFAULT_SYMBOLS = BASE_GLYPHS + DIACRITICS + (SPACE,)


class Tokenizer:
    """Maps characters to ids.

    Ids 0-4 are PAD, BOS, EOS, UNK, MASK; symbol ``i`` of the vocabulary gets
    id ``i + 5``.  A combining diacritic is its own symbol, so a base letter
    followed by a mark encodes to two ids.
    """

    def __init__(self, symbols: Iterable[str]):
        self.symbols: list[str] = list(symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        for s in self.symbols:
            if len(s) != 1:
                raise ValueError(f"symbols must be single characters, got {s!r}")
        self._ids = {s: i + NUM_SPECIAL for i, s in enumerate(self.symbols)}

    @classmethod
    def default(cls) -> "Tokenizer":
        return cls(DEFAULT_SYMBOLS)

    def __len__(self) -> int:
        return NUM_SPECIAL + len(self.symbols)

    @property
    def vocab_size(self) -> int:
        return len(self)

    def __contains__(self, ch: str) -> bool:
        return ch in self._ids

    def encode(self, text: str) -> list[int]:
        """Symbol ids without BOS/EOS; unknown characters become UNK."""
        return [self._ids.get(ch, UNK) for ch in text]

    def tokenize(self, text: str) -> list[int]:
        return [BOS, *self.encode(text), EOS]

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS, MASK):
                continue
            if i == UNK:
                out.append("�")
            elif NUM_SPECIAL <= i < len(self):
                out.append(self.symbols[i - NUM_SPECIAL])
            else:
                raise IndexError(f"token id {i} outside vocabulary of size {len(self)}")
        return "".join(out)

    def batch(self, texts: Sequence[str], length: int | None = None):
        """Tokenize and right-pad with PAD to a common length; returns an int array [B, L]."""
        import numpy as np

        seqs = [self.tokenize(t) for t in texts]
        L = max(len(s) for s in seqs) if length is None else length
        out = np.full((len(seqs), L), PAD, dtype=np.int64)
        for i, s in enumerate(seqs):
            if len(s) > L:
                raise ValueError(f"sequence of length {len(s)} exceeds {L}")
            out[i, : len(s)] = s
        return out

    # ------------------------------------------------------------------ files
    def save(self, path: str | Path) -> None:
        """One symbol per line; line k holds id k + 5."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s in self.symbols:
                fh.write(s + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        with open(path, encoding="utf-8", newline="\n") as fh:
            text = fh.read()
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)
