"""Unified token space and the motion-span grammar.

Id layout is three contiguous, disjoint ranges:

    [0, T)            text tokens (byte-level by default)
    [T, T+K)          motion codes, one id per codebook entry
    [T+K, T+K+6)      structural specials

A two-person motion span serializes a code grid as

    motion_token_start
      ( motion_token_a_start k_1..k_D motion_token_a_end
        motion_token_b_start k_1..k_D motion_token_b_end )  x L
    motion_token_end

giving L*(2D+4)+2 tokens; single-person spans omit the b-blocks,
giving L*(D+2)+2. Parsing is strict: structural damage always raises
GrammarError with the offending token offset, never a silently wrong grid.
"""

from dataclasses import dataclass
import json

import numpy as np

from .errors import GrammarError, ValidationError
from .quantizer import CodeGrid

SPECIAL_NAMES = (
    "motion_token_start",
    "motion_token_end",
    "motion_token_a_start",
    "motion_token_a_end",
    "motion_token_b_start",
    "motion_token_b_end",
)

# Control ids appended after the 256 byte values.
PAD, BOS, EOS, SEP = 256, 257, 258, 259
BYTE_VOCAB_SIZE = 260


class ByteTextTokenizer:
    """Self-contained byte-level text tokenizer with 4 reserved control ids."""

    vocab_size = BYTE_VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class VocabManifest:
    """Sizes and derived id ranges of the unified vocabulary."""

    text_vocab_size: int = BYTE_VOCAB_SIZE
    codebook_size: int = 512

    @property
    def motion_code_base(self) -> int:
        return self.text_vocab_size

    @property
    def special_base(self) -> int:
        return self.text_vocab_size + self.codebook_size

    @property
    def total_size(self) -> int:
        return self.special_base + len(SPECIAL_NAMES)

    def special(self, name: str) -> int:
        return self.special_base + SPECIAL_NAMES.index(name)

    @property
    def special_ids(self) -> dict:
        return {name: self.special_base + i for i, name in enumerate(SPECIAL_NAMES)}

    def motion_code(self, code: int) -> int:
        if not 0 <= code < self.codebook_size:
            raise ValidationError(f"code {code} outside [0, {self.codebook_size})")
        return self.motion_code_base + code

    def classify(self, token_id: int) -> str:
        """Total partition of the id space into text / motion / special."""
        if 0 <= token_id < self.text_vocab_size:
            return "text"
        if token_id < self.special_base:
            return "motion"
        if token_id < self.total_size:
            return "special"
        raise ValidationError(f"id {token_id} outside vocabulary of size {self.total_size}")

    def save(self, path) -> None:
        doc = {
            "text_vocab_size": self.text_vocab_size,
            "codebook_size": self.codebook_size,
            "motion_code_base": self.motion_code_base,
            "special_tokens": self.special_ids,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)

    @classmethod
    def load(cls, path) -> "VocabManifest":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        manifest = cls(
            text_vocab_size=doc["text_vocab_size"], codebook_size=doc["codebook_size"]
        )
        if doc.get("special_tokens", manifest.special_ids) != manifest.special_ids:
            raise ValidationError(f"special token map in {path} does not match the id layout")
        return manifest


@dataclass
class TokenSequence:
    ids: list[int]
    manifest: VocabManifest

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        limit = self.manifest.total_size
        for pos, i in enumerate(self.ids):
            if not 0 <= i < limit:
                raise ValidationError(f"token id {i} at position {pos} outside vocabulary")

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + other.ids, self.manifest)


def encode_interactive(grid: CodeGrid, manifest: VocabManifest) -> TokenSequence:
    """Two-person span; length L*(2D+4)+2."""
    if grid.persons != 2:
        raise ValidationError("encode_interactive needs a 2-person grid")
    return _encode(grid, manifest, persons=2)


def encode_single(grid: CodeGrid, manifest: VocabManifest) -> TokenSequence:
    """One-person span (no b-blocks); length L*(D+2)+2."""
    if grid.persons != 1:
        raise ValidationError("encode_single needs a 1-person grid")
    return _encode(grid, manifest, persons=1)


def encode_grid(grid: CodeGrid, manifest: VocabManifest) -> TokenSequence:
    return encode_interactive(grid, manifest) if grid.persons == 2 else encode_single(grid, manifest)


def _encode(grid: CodeGrid, manifest: VocabManifest, persons: int) -> TokenSequence:
    grid.validate_range(manifest.codebook_size)
    s = manifest.special
    base = manifest.motion_code_base
    block_specials = [
        (s("motion_token_a_start"), s("motion_token_a_end")),
        (s("motion_token_b_start"), s("motion_token_b_end")),
    ]
    ids = [s("motion_token_start")]
    for t in range(grid.length):
        for p in range(persons):
            start, end = block_specials[p]
            ids.append(start)
            ids.extend(int(base + c) for c in grid.codes[t, p])
            ids.append(end)
    ids.append(s("motion_token_end"))
    return TokenSequence(ids, manifest)


@dataclass
class MotionSpan:
    """Result of parsing one motion span out of a token stream."""

    grid: CodeGrid
    has_person_b: bool
    start: int
    end: int  # one past the motion_token_end token


def _read_block(ids, pos, manifest, start_id, end_id, depth, label):
    """Parse one person block; depth=None infers it from the run length."""
    n = len(ids)
    if pos >= n:
        raise GrammarError(f"span ended before {label} block", pos)
    if ids[pos] != start_id:
        raise GrammarError(f"expected {label} block start", pos)
    pos += 1
    codes = []
    lo, hi = manifest.motion_code_base, manifest.special_base
    while True:
        if pos >= n:
            raise GrammarError(f"span ended inside {label} block", pos)
        tok = ids[pos]
        if tok == end_id:
            if depth is None and not codes:
                raise GrammarError(f"empty {label} block", pos)
            if depth is not None and len(codes) != depth:
                raise GrammarError(
                    f"{label} block has {len(codes)} codes, expected {depth}", pos
                )
            return codes, pos + 1
        if not lo <= tok < hi:
            raise GrammarError(f"motion-code id outside [{lo}, {hi}) in {label} block", pos)
        codes.append(tok - lo)
        if depth is not None and len(codes) > depth:
            raise GrammarError(f"{label} block exceeds depth {depth}", pos)
        pos += 1


def decode_motion_span(ids, manifest: VocabManifest, start: int = 0) -> MotionSpan:
    """Strict parse of one motion span beginning at ``start``.

    Depth is inferred from the first person-a block; every later block must
    match it, and the b-block must be present either in every timestep or
    in none.
    """
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    s = manifest.special
    tok_start, tok_end = s("motion_token_start"), s("motion_token_end")
    a_start, a_end = s("motion_token_a_start"), s("motion_token_a_end")
    b_start, b_end = s("motion_token_b_start"), s("motion_token_b_end")

    pos = start
    if pos >= len(ids) or ids[pos] != tok_start:
        raise GrammarError("expected motion_token_start", pos)
    pos += 1

    depth = None
    has_b = None
    steps = []
    while True:
        if pos >= len(ids):
            raise GrammarError("missing motion_token_end", pos)
        tok = ids[pos]
        if tok == tok_end:
            if not steps:
                raise GrammarError("motion span has no timesteps", pos)
            persons = 2 if has_b else 1
            codes = np.array(steps, dtype=np.int64).reshape(len(steps), persons, depth)
            return MotionSpan(CodeGrid(codes), bool(has_b), start, pos + 1)
        a_codes, pos = _read_block(ids, pos, manifest, a_start, a_end, depth, "person-a")
        if depth is None:
            depth = len(a_codes)
        step = list(a_codes)
        b_here = pos < len(ids) and ids[pos] == b_start
        if has_b is None:
            has_b = b_here
        elif b_here != has_b:
            raise GrammarError("person-b block present in some timesteps but not others", pos)
        if b_here:
            b_codes, pos = _read_block(ids, pos, manifest, b_start, b_end, depth, "person-b")
            step += b_codes
        steps.append(step)


def splice_text_and_motion(segments, manifest: VocabManifest, text_tokenizer) -> TokenSequence:
    """Concatenate text strings and code grids into one token sequence."""
    ids: list[int] = []
    for seg in segments:
        if isinstance(seg, str):
            ids.extend(text_tokenizer.encode(seg))
        elif isinstance(seg, CodeGrid):
            ids.extend(encode_grid(seg, manifest).ids)
        else:
            raise ValidationError(f"segment must be str or CodeGrid, got {type(seg).__name__}")
    return TokenSequence(ids, manifest)


def scan_sequence(seq, manifest: VocabManifest, text_tokenizer, strict: bool = True):
    """Inverse of splice: split a sequence into text strings and CodeGrids.

    Control ids (PAD/BOS/EOS/SEP) are dropped from text. Structural specials
    outside a motion span raise GrammarError when ``strict``; otherwise they
    are skipped (useful when scanning raw model output).
    """
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    parts = []
    text_run: list[int] = []
    start_id = manifest.special("motion_token_start")

    def flush():
        if text_run:
            parts.append(text_tokenizer.decode(text_run))
            text_run.clear()

    pos = 0
    while pos < len(ids):
        tok = ids[pos]
        kind = manifest.classify(tok)
        if tok == start_id:
            flush()
            span = decode_motion_span(ids, manifest, pos)
            parts.append(span.grid)
            pos = span.end
        elif kind == "text":
            text_run.append(tok)
            pos += 1
        elif strict:
            raise GrammarError(f"unexpected {kind} token outside a motion span", pos)
        else:
            pos += 1
    flush()
    return parts
