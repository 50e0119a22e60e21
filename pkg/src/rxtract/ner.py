"""Medication mention extraction: example building, fine-tuning, and
span prediction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import AnnotatedDocument, CharSpan, Corpus
from .encoder import (
    EncoderConfig,
    EncoderModel,
    TrainConfig,
    fit,
    forward_batch,
    init_model,
    token_logits,
)
from .errors import DataError
from .evaluation import ner_metrics
from .preproc import (
    DEFAULT_MAX_LEN,
    DEFAULT_VOCAB_SIZE,
    BioTag,
    LabeledSequence,
    Vocabulary,
    align_to_subtokens,
    build_vocab,
    decode_bio,
    spans_to_bio,
    split_sentences,
    tokenize,
)

PREDICT_BATCH = 64


@dataclass
class NerModelBundle:
    """A trained extraction model with its vocabulary and training record."""

    model: EncoderModel
    vocab: Vocabulary
    train_config: TrainConfig
    history: list[float]  # per-epoch dev micro-F1


def build_ner_examples(
    docs: Sequence[AnnotatedDocument],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[LabeledSequence]:
    """One tagged sequence per sentence; sentences without mentions are kept
    as all-O examples."""
    examples: list[LabeledSequence] = []
    for doc in docs:
        tokens = tokenize(doc.text)
        for sent in split_sentences(doc.text, tokens):
            spans = []
            for m in doc.mentions:
                if not m.span.overlaps(sent.span):
                    continue
                if not sent.span.contains(m.span):
                    warnings.warn(
                        f"{doc.doc_id}: mention {m.span} crosses a sentence "
                        "boundary and will be split"
                    )
                spans.append(m.span)
            tags = spans_to_bio(sent, spans)
            examples.append(
                align_to_subtokens(sent, tags, vocab, max_len, doc_id=doc.doc_id)
            )
    return examples


def _predict_doc_spans(
    model: EncoderModel, vocab: Vocabulary, text: str, max_len: int
) -> list[CharSpan]:
    tokens = tokenize(text)
    sentences = split_sentences(text, tokens)
    if not sentences:
        return []
    seqs = [
        align_to_subtokens(s, [BioTag.O] * len(s.tokens), vocab, max_len)
        for s in sentences
    ]
    spans: list[CharSpan] = []
    for start in range(0, len(seqs), PREDICT_BATCH):
        chunk = seqs[start : start + PREDICT_BATCH]
        hidden, _ = forward_batch(model, chunk)
        logits = token_logits(model, hidden)
        best = np.argmax(logits, axis=-1)  # first index wins ties: B < I < O
        for row, seq, sent in zip(
            best, chunk, sentences[start : start + PREDICT_BATCH]
        ):
            tags = [BioTag(int(t)) for t in row]
            tags += [BioTag.O] * (len(seq) - len(tags))  # trimmed padding tail
            spans.extend(decode_bio(seq, tags, sent))
    return spans


def predict_ner(bundle: NerModelBundle, text: str) -> list[CharSpan]:
    """Predicted mention spans, sorted and non-overlapping."""
    return _predict_doc_spans(
        bundle.model, bundle.vocab, text, bundle.model.config.max_len
    )


def train_ner(
    corpus: Corpus,
    enc_cfg: EncoderConfig = EncoderConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    vocab_target_size: int = DEFAULT_VOCAB_SIZE,
    vocab: Optional[Vocabulary] = None,
    log: Optional[Callable[[str], None]] = None,
) -> NerModelBundle:
    """Fine-tune on the train split, keeping the epoch with the best strict
    micro-F1 on the dev split."""
    if not corpus.train or not corpus.dev:
        raise DataError("train and dev splits must be non-empty")
    if vocab is None:
        vocab = build_vocab([d.text for d in corpus.train], vocab_target_size)
    enc_cfg = replace(enc_cfg, vocab_size=len(vocab))
    model = init_model(enc_cfg)
    examples = build_ner_examples(corpus.train, vocab, enc_cfg.max_len)

    def dev_f1(m: EncoderModel) -> float:
        preds = {
            doc.doc_id: _predict_doc_spans(m, vocab, doc.text, enc_cfg.max_len)
            for doc in corpus.dev
        }
        return ner_metrics(corpus.dev, preds).micro.f1

    result = fit(model, examples, "token", train_cfg, dev_f1, log=log)
    return NerModelBundle(
        model=model, vocab=vocab, train_config=train_cfg, history=result.history
    )
