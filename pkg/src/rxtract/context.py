"""Event classification and the five context-dimension classifiers.

Every task uses the same mention-anchored input: the sentence's pieces with
[S]/[E] markers bracketing the mention, classified from the concatenation
of the CLS and marker representations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import (
    CONTEXT_DIMENSIONS,
    AnnotatedDocument,
    CharSpan,
    ContextAttributes,
    Corpus,
    EventLabel,
)
from .encoder import (
    EncoderConfig,
    EncoderModel,
    TrainConfig,
    fit,
    init_model,
    sequence_logits_batch,
)
from .errors import SpanRangeError
from .preproc import (
    CLS_ID,
    E_MARK_ID,
    NO_WORD,
    PAD_ID,
    S_MARK_ID,
    SEP_ID,
    LabeledSequence,
    Sentence,
    Vocabulary,
    split_sentences,
    subword_encode,
    tokenize,
)

CLASSIFY_MAX_LEN = 256
CLASSIFY_BATCH = 64


@dataclass(frozen=True)
class ClassificationTask:
    name: str
    classes: tuple[str, ...]


EVENT_TASK = ClassificationTask(
    "Event", tuple(e.value for e in EventLabel)
)

TASKS: dict[str, ClassificationTask] = {"Event": EVENT_TASK}
for _dim, (_enum, _) in CONTEXT_DIMENSIONS.items():
    TASKS[_dim] = ClassificationTask(_dim, tuple(v.value for v in _enum))

DIMENSION_TASKS = tuple(t for name, t in TASKS.items() if name != "Event")


def build_classification_example(
    sent: Sentence,
    mention: CharSpan,
    vocab: Vocabulary,
    max_len: int = CLASSIFY_MAX_LEN,
    doc_id: str = "",
) -> LabeledSequence:
    """Marker-bracketed sequence for one mention, padded to exactly max_len.

    When the sentence is too long, whole words farthest from the mention are
    dropped (a window centered on the mention); the specials and every
    mention piece are always kept.
    """
    if not sent.span.contains(mention):
        raise SpanRangeError(f"mention {mention} outside sentence {sent.span}")

    tokens = sent.tokens
    pieces = [subword_encode(t.text, vocab) for t in tokens]
    inside = [i for i, t in enumerate(tokens) if t.span.overlaps(mention)]
    if inside:
        a, b = inside[0], inside[-1]
    else:
        # Mention covers no token (whitespace-only); markers sit between words.
        a = next((i for i, t in enumerate(tokens) if t.span.start >= mention.end),
                 len(tokens))
        b = a - 1

    mention_pieces: list[tuple[int, int]] = []  # (word, piece id)
    for w in range(a, b + 1):
        mention_pieces.extend((w, pid) for pid in pieces[w])
    budget = max_len - 4 - len(mention_pieces)
    if budget < 0:
        mention_pieces = mention_pieces[: max_len - 4]
        budget = 0

    lo, hi = a, b
    while True:
        can_left = lo > 0
        can_right = hi < len(tokens) - 1
        if not can_left and not can_right:
            break
        if can_left and (not can_right or a - (lo - 1) <= (hi + 1) - b):
            side, w = "left", lo - 1
        else:
            side, w = "right", hi + 1
        if len(pieces[w]) > budget:
            break
        budget -= len(pieces[w])
        if side == "left":
            lo = w
        else:
            hi = w

    ids = [CLS_ID]
    word_index = [NO_WORD]
    for w in range(lo, a):
        ids.extend(pieces[w])
        word_index.extend([w] * len(pieces[w]))
    ids.append(S_MARK_ID)
    word_index.append(NO_WORD)
    for w, pid in mention_pieces:
        ids.append(pid)
        word_index.append(w)
    ids.append(E_MARK_ID)
    word_index.append(NO_WORD)
    for w in range(b + 1, hi + 1):
        ids.extend(pieces[w])
        word_index.extend([w] * len(pieces[w]))
    ids.append(SEP_ID)
    word_index.append(NO_WORD)

    mask = [1] * len(ids)
    while len(ids) < max_len:
        ids.append(PAD_ID)
        mask.append(0)
        word_index.append(NO_WORD)

    return LabeledSequence(
        subtoken_ids=ids,
        attention_mask=mask,
        word_index=word_index,
        origin=(doc_id, sent.span),
    )


@dataclass
class TaskModel:
    model: EncoderModel
    train_config: TrainConfig
    history: list[float]  # per-epoch dev accuracy


@dataclass
class ClassifierBundle:
    """One independently trained model per classification task."""

    tasks: dict[str, TaskModel]
    vocab: Vocabulary


def _sentence_for(sentences: Sequence[Sentence], span: CharSpan) -> Optional[Sentence]:
    for sent in sentences:
        if sent.span.start <= span.start < sent.span.end:
            return sent
    return None


def collect_task_examples(
    docs: Sequence[AnnotatedDocument],
    task: ClassificationTask,
    vocab: Vocabulary,
    max_len: int = CLASSIFY_MAX_LEN,
) -> list[LabeledSequence]:
    """Labeled examples for one task.

    The Event task covers every gold mention; dimension tasks cover only
    gold Disposition mentions.
    """
    examples: list[LabeledSequence] = []
    attr = None if task.name == "Event" else CONTEXT_DIMENSIONS[task.name][1]
    for doc in docs:
        sentences = split_sentences(doc.text, tokenize(doc.text))
        for m in doc.mentions:
            if task.name != "Event" and m.event is not EventLabel.DISPOSITION:
                continue
            sent = _sentence_for(sentences, m.span)
            if sent is None or not sent.span.contains(m.span):
                warnings.warn(
                    f"{doc.doc_id}: mention {m.span} not contained in a "
                    "sentence; skipped for classification"
                )
                continue
            seq = build_classification_example(sent, m.span, vocab, max_len, doc.doc_id)
            if task.name == "Event":
                seq.label = task.classes.index(m.event.value)
            else:
                seq.label = task.classes.index(getattr(m.context, attr).value)
            examples.append(seq)
    return examples


def classify_batch(
    model: EncoderModel, task: ClassificationTask, seqs: Sequence[LabeledSequence]
) -> list[int]:
    """Argmax class ids; ties break toward the lowest class index."""
    out: list[int] = []
    for start in range(0, len(seqs), CLASSIFY_BATCH):
        logits = sequence_logits_batch(model, seqs[start : start + CLASSIFY_BATCH], task.name)
        out.extend(int(i) for i in np.argmax(logits, axis=-1))
    return out


def _accuracy(model: EncoderModel, task: ClassificationTask,
              seqs: Sequence[LabeledSequence]) -> float:
    if not seqs:
        return 1.0
    preds = classify_batch(model, task, seqs)
    hits = sum(1 for p, s in zip(preds, seqs) if p == s.label)
    return hits / len(seqs)


def train_task(
    corpus: Corpus,
    task: ClassificationTask,
    enc_cfg: EncoderConfig = EncoderConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    vocab: Optional[Vocabulary] = None,
    log: Optional[Callable[[str], None]] = None,
) -> TaskModel:
    """Fine-tune one classifier, keeping the best dev-accuracy epoch.

    With fewer than two observed classes in training data a constant
    classifier is produced (with a warning) instead of training.
    """
    if vocab is None:
        from .preproc import build_vocab

        vocab = build_vocab([d.text for d in corpus.train])
    enc_cfg = replace(enc_cfg, vocab_size=len(vocab))
    train_examples = collect_task_examples(corpus.train, task, vocab, enc_cfg.max_len)
    dev_examples = collect_task_examples(corpus.dev, task, vocab, enc_cfg.max_len)

    observed = sorted({s.label for s in train_examples})
    model = init_model(enc_cfg, {task.name: len(task.classes)})
    if len(observed) < 2:
        warnings.warn(
            f"task {task.name}: fewer than two classes observed in training "
            "data; producing a constant classifier"
        )
        head_w = model.params[f"seq_head.{task.name}.w"]
        head_b = model.params[f"seq_head.{task.name}.b"]
        head_w[:] = 0.0
        head_b[:] = 0.0
        if observed:
            head_b[observed[0]] = 1.0
        history = [_accuracy(model, task, dev_examples)]
        return TaskModel(model=model, train_config=train_cfg, history=history)

    result = fit(
        model,
        train_examples,
        "sequence",
        train_cfg,
        lambda m: _accuracy(m, task, dev_examples),
        task=task.name,
        log=log,
    )
    return TaskModel(model=model, train_config=train_cfg, history=result.history)


def train_all_tasks(
    corpus: Corpus,
    enc_cfg: EncoderConfig = EncoderConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    vocab: Optional[Vocabulary] = None,
    log: Optional[Callable[[str], None]] = None,
) -> ClassifierBundle:
    if vocab is None:
        from .preproc import build_vocab

        vocab = build_vocab([d.text for d in corpus.train])
    tasks = {}
    for name, task in TASKS.items():
        if log:
            log(f"training task {name}")
        tasks[name] = train_task(corpus, task, enc_cfg, train_cfg, vocab, log=log)
    return ClassifierBundle(tasks=tasks, vocab=vocab)


def classify_event(
    bundle: ClassifierBundle, sent: Sentence, mention: CharSpan
) -> EventLabel:
    task = TASKS["Event"]
    seq = build_classification_example(
        sent, mention, bundle.vocab, bundle.tasks["Event"].model.config.max_len
    )
    idx = classify_batch(bundle.tasks["Event"].model, task, [seq])[0]
    return EventLabel(task.classes[idx])


def classify_context(
    bundle: ClassifierBundle, sent: Sentence, mention: CharSpan
) -> ContextAttributes:
    """Run the five dimension classifiers independently and assemble the
    resulting labels."""
    kwargs = {}
    for task in DIMENSION_TASKS:
        tm = bundle.tasks[task.name]
        seq = build_classification_example(
            sent, mention, bundle.vocab, tm.model.config.max_len
        )
        idx = classify_batch(tm.model, task, [seq])[0]
        enum_cls, attr = CONTEXT_DIMENSIONS[task.name]
        kwargs[attr] = enum_cls(task.classes[idx])
    return ContextAttributes(**kwargs)
