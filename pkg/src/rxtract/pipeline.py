"""End-to-end prediction: extraction, then event classification, then
context classification for Disposition mentions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .context import (
    ClassifierBundle,
    TASKS,
    build_classification_example,
    classify_batch,
)
from .corpus import (
    CONTEXT_DIMENSIONS,
    AnnotatedDocument,
    CharSpan,
    ContextAttributes,
    EventLabel,
    MedicationMention,
    normalize_newlines,
)
from .errors import ConfigError
from .evaluation import MentionKey
from .ner import NerModelBundle, predict_ner
from .preproc import split_sentences, tokenize


@dataclass
class PipelineBundle:
    """The three stages chained over one shared vocabulary."""

    ner: NerModelBundle
    classifiers: ClassifierBundle

    def validate(self) -> None:
        if self.ner.vocab.pieces != self.classifiers.vocab.pieces:
            raise ConfigError("pipeline components do not share one vocabulary")
        for name in TASKS:
            if name not in self.classifiers.tasks:
                raise ConfigError(f"pipeline is missing the {name} classifier")


def _classify_spans(
    bundle: ClassifierBundle, sentences, spans: Sequence[CharSpan], task_name: str
) -> list[int]:
    tm = bundle.tasks[task_name]
    seqs = []
    for span in spans:
        sent = next(
            s for s in sentences if s.span.start <= span.start < s.span.end
        )
        seqs.append(
            build_classification_example(sent, span, bundle.vocab, tm.model.config.max_len)
        )
    return classify_batch(tm.model, TASKS[task_name], seqs)


def run_pipeline(p: PipelineBundle, text: str, doc_id: str = "doc") -> AnnotatedDocument:
    """Predict mentions with events and, for Disposition, context attributes."""
    text = normalize_newlines(text)
    spans = predict_ner(p.ner, text)
    if not spans:
        return AnnotatedDocument(doc_id=doc_id, text=text, mentions=[])

    sentences = split_sentences(text, tokenize(text))
    event_ids = _classify_spans(p.classifiers, sentences, spans, "Event")
    event_task = TASKS["Event"]
    events = [EventLabel(event_task.classes[i]) for i in event_ids]

    disp_spans = [s for s, e in zip(spans, events) if e is EventLabel.DISPOSITION]
    dim_preds: dict[str, list[int]] = {}
    for name in CONTEXT_DIMENSIONS:
        if disp_spans:
            dim_preds[name] = _classify_spans(p.classifiers, sentences, disp_spans, name)

    mentions = []
    disp_i = 0
    for span, event in zip(spans, events):
        context = None
        if event is EventLabel.DISPOSITION:
            kwargs = {}
            for name, (enum_cls, attr) in CONTEXT_DIMENSIONS.items():
                value = TASKS[name].classes[dim_preds[name][disp_i]]
                kwargs[attr] = enum_cls(value)
            context = ContextAttributes(**kwargs)
            disp_i += 1
        mentions.append(
            MedicationMention(
                span=span,
                surface=text[span.start : span.end],
                event=event,
                context=context,
            )
        )
    doc = AnnotatedDocument(doc_id=doc_id, text=text, mentions=mentions)
    doc.validate()
    return doc


def mentions_to_jsonl(doc: AnnotatedDocument) -> str:
    """One JSON object per mention; context fields only for Disposition."""
    lines = []
    for m in doc.mentions:
        record = {
            "doc_id": doc.doc_id,
            "start": m.span.start,
            "end": m.span.end,
            "surface": m.surface,
            "event": m.event.value,
        }
        if m.context is not None:
            record.update(
                action=m.context.action.value,
                negation=m.context.negation.value,
                temporality=m.context.temporality.value,
                certainty=m.context.certainty.value,
                actor=m.context.actor.value,
            )
        lines.append(json.dumps(record))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# gold-span evaluation helpers


def classify_gold_events(
    bundle: ClassifierBundle, docs: Sequence[AnnotatedDocument]
) -> dict[str, list[MedicationMention]]:
    """Predicted events on gold spans, for NER-error-free event scoring."""
    out: dict[str, list[MedicationMention]] = {}
    task = TASKS["Event"]
    for doc in docs:
        sentences = split_sentences(doc.text, tokenize(doc.text))
        spans = [m.span for m in doc.mentions]
        mentions = []
        if spans:
            ids = _classify_spans(bundle, sentences, spans, "Event")
            for span, idx in zip(spans, ids):
                mentions.append(
                    MedicationMention(
                        span=span,
                        surface=doc.text[span.start : span.end],
                        event=EventLabel(task.classes[idx]),
                    )
                )
        out[doc.doc_id] = mentions
    return out


def classify_gold_context(
    bundle: ClassifierBundle, docs: Sequence[AnnotatedDocument]
) -> dict[MentionKey, ContextAttributes]:
    """Predicted context attributes on gold Disposition mentions."""
    out: dict[MentionKey, ContextAttributes] = {}
    for doc in docs:
        sentences = split_sentences(doc.text, tokenize(doc.text))
        spans = [
            m.span for m in doc.mentions if m.event is EventLabel.DISPOSITION
        ]
        if not spans:
            continue
        per_dim = {
            name: _classify_spans(bundle, sentences, spans, name)
            for name in CONTEXT_DIMENSIONS
        }
        for i, span in enumerate(spans):
            kwargs = {}
            for name, (enum_cls, attr) in CONTEXT_DIMENSIONS.items():
                kwargs[attr] = enum_cls(TASKS[name].classes[per_dim[name][i]])
            out[(doc.doc_id, span.start, span.end)] = ContextAttributes(**kwargs)
    return out


def run_pipeline_over(
    p: PipelineBundle, docs: Sequence[AnnotatedDocument]
) -> dict[str, list[MedicationMention]]:
    """End-to-end predictions for a split, keyed by doc_id."""
    return {d.doc_id: run_pipeline(p, d.text, d.doc_id).mentions for d in docs}
