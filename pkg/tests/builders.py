"""Small hand-built tokenizers used across the tests."""

from __future__ import annotations

from vocab_adapt.tokenizer import DEFAULT_MARKER, TokenizerDef

M = DEFAULT_MARKER


def _bpe(symbols: list[str], ranks: dict) -> list[str]:
    while len(symbols) > 1:
        best = min(
            ((ranks[p], i) for i, p in enumerate(zip(symbols, symbols[1:])) if p in ranks),
            default=None,
        )
        if best is None:
            break
        i = best[1]
        symbols[i : i + 2] = [symbols[i] + symbols[i + 1]]
    return symbols


def segmentation_tokenizer(
    pieces,
    *,
    alphabet: str = "",
    marker: str = M,
    specials: tuple[str, ...] = (),
    filler: int = 0,
) -> TokenizerDef:
    """A BPE tokenizer whose merges turn every piece into a single token.

    ``pieces`` use a leading space for the boundary marker. Each piece is
    handled in turn: it is run through the merges so far and a new merge is
    appended for an adjacent pair until one symbol remains (word-initial pieces
    go first). New merges always
    rank last, so earlier pieces keep encoding to one token. ``filler`` adds
    that many unused composite tokens (removable ids that never occur).
    """
    surfaces = []
    for p in pieces:
        s = p.replace(" ", marker)
        if s not in surfaces:
            surfaces.append(s)
    vocab: dict[str, int] = {}
    for ch in sorted(set("".join(surfaces).replace(marker, "")) | set(alphabet)):
        vocab[ch] = len(vocab)
    vocab[marker] = len(vocab)
    ranks: dict[tuple[str, str], int] = {}
    merges: list[tuple[str, str]] = []

    def split(s):
        return [marker, *s[len(marker):]] if s.startswith(marker) else list(s)

    # word-initial pieces first, so a marker merge outranks merges inside words
    for s in sorted(surfaces, key=lambda s: not s.startswith(marker)):
        while True:
            syms = _bpe(split(s), ranks)
            if len(syms) == 1:
                break
            for a, b in zip(syms, syms[1:]):
                if a + b not in vocab:
                    vocab[a + b] = len(vocab)
                    ranks[(a, b)] = len(merges)
                    merges.append((a, b))
                    break
            else:
                raise ValueError(f"cannot build a merge path for {s!r}")
    chars = sorted(c for c in vocab if len(c) == 1 and c != marker)
    n = 0
    while n < filler:
        # unused composites: doubled-up characters that never occur in the pieces
        a = chars[n % len(chars)]
        left = a * (n // len(chars) + 1)
        out = left + a
        if out not in vocab and left in vocab:
            vocab[out] = len(vocab)
            merges.append((left, a))
        n += 1
    for sp in specials:
        vocab[sp] = len(vocab)
    return TokenizerDef(vocab, merges, marker, [vocab[s] for s in specials])


def toy_ab() -> TokenizerDef:
    return TokenizerDef({"a": 0, "b": 1, "ab": 2}, [("a", "b")])


def letters(n: int = 8, composites: int = 12) -> TokenizerDef:
    """Atomic letters a.. with ids 0..n-1 plus a few composites (removable ids)."""
    chars = "abcdefghijklmnop"[:n]
    vocab = {c: i for i, c in enumerate(chars)}
    merges = []
    for k in range(composites):
        left, right = chars[k % n], chars[(k * 3 + 1) % n]
        if left + right in vocab:
            continue
        vocab[left + right] = len(vocab)
        merges.append((left, right))
    return TokenizerDef(vocab, merges, M, [])
