"""Desk-scale behavioral experiment on the synthetic multilingual task.

Generates the dataset, trains a merge-at-pre multilingual model, decodes a
held-out split, and reports training losses, the output-language audit,
and token accuracy in one metrics dict.
"""

from __future__ import annotations

import os
import time

import numpy as np

from .decoding import decode_corpus
from .evaluate import language_audit, token_accuracy
from .manifest import build_vocab, read_manifest
from .model import ModelConfig, SpeechTransformer
from .optim import AdamState
from .synth import alphabet_map, default_languages, synth_dataset
from .trainer import (BatchComposer, LRSchedule, load_examples,
                      save_checkpoint, train_loop)


def moving_average(values, window: int) -> list[float]:
    if window < 1 or window > len(values):
        raise ValueError("bad window")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return [(csum[i + window] - csum[i]) / window
            for i in range(len(values) - window + 1)]


def run_toy_experiment(work_dir: str, seed: int = 17, n_languages: int = 3,
                       n_utt_per_lang: int = 3000, steps: int = 600,
                       accum: int = 1, warmup: int = 400, lr_max: float = 0.003,
                       eval_split: str = "test", max_eval: int | None = None,
                       checkpoint: str | None = None, workers: int = 4,
                       verbose: bool = False) -> dict:
    """Train merge-at-pre on the synthetic task and measure the outcome.

    Returns a dict with per-update ``losses``, the per-language ``audit``
    fractions, corpus ``token_accuracy``, and wall-clock ``seconds``.
    """
    t0 = time.monotonic()
    languages = default_languages(n_languages)
    data_dir = os.path.join(work_dir, "data")
    manifest_path, _ = synth_dataset(data_dir, seed=seed,
                                     n_utt_per_lang=n_utt_per_lang,
                                     languages=languages)
    entries = read_manifest(manifest_path)
    lang_ids = [l.lang_id for l in languages]
    vocab = build_vocab(entries, lang_ids)
    train_examples = load_examples(entries, vocab, base_dir=data_dir, split="train")

    cfg = ModelConfig.desk(vocab_size=len(vocab), languages=lang_ids,
                           forcing_mode="merge", forcing_site="pre")
    model = SpeechTransformer(cfg, seed=seed)
    model.set_rng(np.random.default_rng((seed, 999)))
    sched = LRSchedule(lr_max=lr_max, warmup=warmup)
    state = AdamState()
    composer = BatchComposer(train_examples, seed=seed)

    losses = []
    for step, lr, loss in train_loop(model, composer, state, sched,
                                     steps=steps, accum=accum):
        losses.append(loss)
        if verbose and (step == 1 or step % 50 == 0):
            print(f"step {step}  lr {lr:.6g}  loss {loss:.4f}", flush=True)
    if checkpoint:
        save_checkpoint(checkpoint, model, vocab, state)

    model.eval()
    held = load_examples(entries, vocab, base_dir=data_dir, split=eval_split)
    if max_eval is not None:
        held = held[:max_eval]
    hyps = decode_corpus(model, vocab, [(ex.features, ex.lang) for ex in held],
                         max_len=14, workers=workers)
    refs = {ex.utt_id: vocab.decode(ex.target_ids) for ex in held}
    audit = language_audit([(ex.lang, h.text) for ex, h in zip(held, hyps)],
                           alphabet_map(languages))
    acc = token_accuracy([h.text for h in hyps],
                         [refs[ex.utt_id] for ex in held])
    return {
        "losses": losses,
        "audit": audit,
        "token_accuracy": acc,
        "n_eval": len(held),
        "updates": len(losses),
        "seconds": time.monotonic() - t0,
    }
