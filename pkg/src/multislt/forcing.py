"""Target-language forcing: inject a learnable language embedding.

Two mechanisms: *concat* prepends the embedding as an extra time frame,
*merge* adds it to every frame, translating the representation to a
language-specific region of the space. Injection sites: pre (raw
features), post (after the 2D self-attention stack), final (after the
projection to d_model), decoder (on the character embeddings).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .modules import Module
from .tensor import ShapeError, Tensor

MODES = ("none", "concat", "merge")
SITES = ("pre", "post", "final", "decoder")


class LanguageEmbeddingTable(Module):
    """One learnable vector per language, for a single injection site.

    Vectors are separate named parameters so checkpoints carry them by
    language name and optimizer state stays per-language.
    """

    def __init__(self, languages, width: int, rng: np.random.Generator, std: float = 0.02):
        super().__init__()
        self.languages = list(languages)
        self.width = width
        for lang in self.languages:
            setattr(self, lang, Tensor(rng.normal(0.0, std, width), requires_grad=True))

    def vector(self, lang: str) -> Tensor:
        if lang not in self._params:
            raise KeyError(f"unknown language {lang!r}; table has {self.languages}")
        return self._params[lang]

    def rows(self, langs) -> Tensor:
        """Stack per-utterance vectors into a B×W tensor."""
        return T.concat([T.reshape(self.vector(l), (1, self.width)) for l in langs], axis=0)


def apply_concat(x: Tensor, l: Tensor) -> Tensor:
    """Prepend ``l`` as row 0 of a T×W sequence; rows 1..T are unchanged."""
    if x.shape[-1] != l.shape[-1]:
        raise ShapeError(f"width mismatch: sequence {x.shape} vs embedding {l.shape}")
    return T.concat([T.reshape(l, (1, l.shape[-1])), x], axis=0)


def apply_merge(x: Tensor, l: Tensor) -> Tensor:
    """Add ``l`` to every row of a T×W sequence; length unchanged."""
    if x.shape[-1] != l.shape[-1]:
        raise ShapeError(f"width mismatch: sequence {x.shape} vs embedding {l.shape}")
    return T.add(x, l)


def _rows_as(rows: Tensor, shape) -> Tensor:
    """Broadcast B×W rows to an explicit shape ending in W (for concat)."""
    return T.add(T.reshape(rows, (shape[0],) + (1,) * (len(shape) - 2) + (shape[-1],)),
                 Tensor(np.zeros(shape)))


class TargetForcing(Module):
    """Dispatches concat/merge injection for one configured site."""

    def __init__(self, mode: str, site: str, languages, width: int,
                 rng: np.random.Generator, std: float = 0.02):
        super().__init__()
        if mode not in MODES or site not in SITES:
            raise ValueError(f"unconfigured forcing mode/site: {mode!r}/{site!r}")
        self.mode = mode
        self.site = site
        self.table = LanguageEmbeddingTable(languages, width, rng, std=std)

    def inject_seq(self, x: Tensor, langs) -> tuple[Tensor, bool]:
        """Inject into a B×T×W sequence. Returns (tensor, length_grew)."""
        rows = self.table.rows(langs)
        if self.mode == "merge":
            return T.add(x, T.reshape(rows, (x.shape[0], 1, x.shape[-1]))), False
        front = _rows_as(rows, (x.shape[0], 1, x.shape[-1]))
        return T.concat([front, x], axis=1), True

    def inject_4d(self, x: Tensor, langs) -> tuple[Tensor, bool]:
        """Inject into a B×C×T×F tensor (the post site).

        Merge broadcasts the vector over channel and time on the frequency
        axis; concat prepends one learned time frame across all channels.
        """
        rows = self.table.rows(langs)
        if self.mode == "merge":
            return T.add(x, T.reshape(rows, (x.shape[0], 1, 1, x.shape[-1]))), False
        front = _rows_as(rows, (x.shape[0], x.shape[1], 1, x.shape[-1]))
        return T.concat([front, x], axis=2), True

    def inject_decoder(self, emb: Tensor, langs) -> Tensor:
        """Merge adds to every character embedding; concat replaces bos."""
        rows = self.table.rows(langs)
        if self.mode == "merge":
            return T.add(emb, T.reshape(rows, (emb.shape[0], 1, emb.shape[-1])))
        front = T.reshape(rows, (emb.shape[0], 1, emb.shape[-1]))
        return T.concat([front, emb[:, 1:, :]], axis=1)
