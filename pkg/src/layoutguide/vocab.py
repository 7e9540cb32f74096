"""Fixed word-level vocabulary for the procedural shapes captions."""

from __future__ import annotations

PAD, BOS = 0, 1

WORDS = ["<pad>", "<bos>", "a", "and", "red", "green", "blue", "yellow", "magenta", "cyan",
         "square", "circle", "triangle"]
TOKEN = {w: i for i, w in enumerate(WORDS)}

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
}
SHAPES = ("square", "circle", "triangle")


def tokenize(text: str, n_ctx: int) -> list[int]:
    """BOS + word ids, padded with PAD to ``n_ctx``."""
    ids = [BOS] + [TOKEN[w] for w in text.split()]
    if len(ids) > n_ctx:
        raise ValueError(f"caption {text!r} needs {len(ids)} tokens, context holds {n_ctx}")
    return ids + [PAD] * (n_ctx - len(ids))


def empty_prompt(n_ctx: int) -> list[int]:
    return [BOS] + [PAD] * (n_ctx - 1)


def detokenize(ids) -> str:
    return " ".join(WORDS[i] for i in ids if i not in (PAD, BOS) and i < len(WORDS))


def color_of(label: str) -> str | None:
    for w in label.split():
        if w in COLORS:
            return w
    return None
