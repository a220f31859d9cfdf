"""WordPiece tokenizer trained on the formal corpus.

Pre-tokenization splits on whitespace and then peels off Unicode
punctuation/symbol characters (Lean operators like ->, forall, and
turnstiles must be standalone candidates). Merges are scored with the
WordPiece criterion pair_count / (left_count * right_count); ties break
on the lexicographically smallest pair so training is byte-deterministic.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
VAR, GOAL = "<VAR>", "<GOAL>"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK, VAR, GOAL)


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    # desk-scale default; the paper-scale vocabulary (30,522) is a config choice
    vocab_size: int = 4096
    min_frequency: int = 2
    continuation_prefix: str = "##"
    lowercase: bool = False

    def __post_init__(self):
        if self.vocab_size <= len(SPECIAL_TOKENS):
            raise TokenizerError(
                f"vocab_size must exceed the {len(SPECIAL_TOKENS)} special tokens"
            )


@dataclass
class Vocabulary:
    tokens: list[str]
    config: TokenizerConfig
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        for sp in SPECIAL_TOKENS:
            if sp not in self.token_to_id:
                raise TokenizerError(f"special token {sp} missing from vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK]

    @property
    def var_id(self) -> int:
        return self.token_to_id[VAR]

    @property
    def goal_id(self) -> int:
        return self.token_to_id[GOAL]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[t] for t in SPECIAL_TOKENS)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def _split_words(chunk: str) -> list[str]:
    """Split a whitespace-free chunk into words, isolating punctuation."""
    words: list[str] = []
    buf: list[str] = []
    for ch in chunk:
        if _is_punct(ch):
            if buf:
                words.append("".join(buf))
                buf = []
            words.append(ch)
        else:
            buf.append(ch)
    if buf:
        words.append("".join(buf))
    return words


def pre_tokenize(text: str, lowercase: bool = False) -> list[tuple[str, bool]]:
    """Yield (word, is_special) pairs for a text."""
    out: list[tuple[str, bool]] = []
    for chunk in text.split():
        if chunk in SPECIAL_TOKENS:
            out.append((chunk, True))
            continue
        if lowercase:
            chunk = chunk.lower()
        for w in _split_words(chunk):
            out.append((w, False))
    return out


def _word_symbols(word: str, prefix: str) -> list[str]:
    return [word[0]] + [prefix + c for c in word[1:]]


def train_tokenizer(
    corpus_texts: Sequence[str], config: TokenizerConfig | None = None
) -> Vocabulary:
    """Learn a WordPiece vocabulary from raw texts."""
    config = config or TokenizerConfig()
    if not corpus_texts:
        raise TokenizerError("cannot train a tokenizer on an empty corpus")

    word_counts: Counter[str] = Counter()
    for text in corpus_texts:
        for word, special in pre_tokenize(text, config.lowercase):
            if not special:
                word_counts[word] += 1
    if not word_counts:
        raise TokenizerError("corpus contains no trainable words")

    prefix = config.continuation_prefix
    words = {w: _word_symbols(w, prefix) for w in word_counts}
    alphabet = sorted({s for syms in words.values() for s in syms})

    vocab: list[str] = list(SPECIAL_TOKENS)
    seen = set(vocab)
    for sym in alphabet:
        if len(vocab) >= config.vocab_size:
            break
        if sym not in seen:
            vocab.append(sym)
            seen.add(sym)

    while len(vocab) < config.vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        sym_counts: Counter[str] = Counter()
        for w, syms in words.items():
            c = word_counts[w]
            for s in syms:
                sym_counts[s] += c
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += c
        best = None
        best_score = 0.0
        for pair in sorted(pair_counts):
            count = pair_counts[pair]
            if count < config.min_frequency:
                continue
            score = count / (sym_counts[pair[0]] * sym_counts[pair[1]])
            if best is None or score > best_score:
                best, best_score = pair, score
        if best is None:
            break
        left, right = best
        merged = left + right[len(prefix):]
        for w, syms in words.items():
            i = 0
            out = []
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
        if merged not in seen:
            vocab.append(merged)
            seen.add(merged)

    return Vocabulary(tokens=vocab, config=config)


def tokenize_word(word: str, vocab: Vocabulary) -> list[str] | None:
    """Greedy longest-match-first segmentation; None if unsegmentable."""
    prefix = vocab.config.continuation_prefix
    pieces: list[str] = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        match = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = prefix + sub
            if sub in vocab.token_to_id:
                match = sub
                break
            end -= 1
        if match is None:
            return None
        pieces.append(match)
        start = end
    return pieces


def encode(text: str, vocab: Vocabulary, max_len: int | None = None) -> list[int]:
    """Token ids for a text; head-kept truncation; no implicit CLS/SEP."""
    ids: list[int] = []
    for word, special in pre_tokenize(text, vocab.config.lowercase):
        if special:
            ids.append(vocab.token_to_id[word])
            continue
        pieces = tokenize_word(word, vocab)
        if pieces is None:
            ids.append(vocab.unk_id)
        else:
            ids.extend(vocab.token_to_id[p] for p in pieces)
    if max_len is not None and len(ids) > max_len:
        ids = ids[:max_len]
    return ids


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Detokenize, merging continuation pieces back into their words."""
    prefix = vocab.config.continuation_prefix
    parts: list[str] = []
    for i in ids:
        if i < 0 or i >= len(vocab.tokens):
            raise TokenizerError(f"token id {i} out of range for vocabulary of {len(vocab.tokens)}")
        tok = vocab.tokens[i]
        if tok.startswith(prefix) and parts:
            parts[-1] += tok[len(prefix):]
        else:
            parts.append(tok)
    return " ".join(parts)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """One token per line; '# ' header lines echo the config."""
    cfg = vocab.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# format_version=1\n")
        fh.write(f"# vocab_size={cfg.vocab_size}\n")
        fh.write(f"# min_frequency={cfg.min_frequency}\n")
        fh.write(f"# continuation_prefix={cfg.continuation_prefix}\n")
        fh.write(f"# lowercase={int(cfg.lowercase)}\n")
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocabulary(path) -> Vocabulary:
    header: dict[str, str] = {}
    tokens: list[str] = []
    with open(path, encoding="utf-8") as fh:
        in_header = True
        for line in fh:
            line = line.rstrip("\n")
            if in_header and line.startswith("# "):
                key, _, value = line[2:].partition("=")
                header[key] = value
                continue
            in_header = False
            tokens.append(line)
    config = TokenizerConfig(
        vocab_size=int(header.get("vocab_size", max(len(tokens), len(SPECIAL_TOKENS) + 1))),
        min_frequency=int(header.get("min_frequency", 2)),
        continuation_prefix=header.get("continuation_prefix", "##"),
        lowercase=bool(int(header.get("lowercase", "0"))),
    )
    return Vocabulary(tokens=tokens, config=config)
