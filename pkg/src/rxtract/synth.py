"""Deterministic synthetic corpus generator.

Produces desk-scale clinical-flavored (entirely fictional) notes whose
mention spans and labels are known exactly, recorded in an emission ledger.
In separable mode every label value is signalled by a cue word unique to
it, so competent models can approach perfect scores; noisy mode swaps cues
at a configurable rate to blur the signal.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .corpus import (
    CONTEXT_DIMENSIONS,
    AnnotatedDocument,
    CharSpan,
    ContextAttributes,
    Corpus,
    EventLabel,
    MedicationMention,
    SplitStats,
)
from .errors import ConfigError

# Default class-distribution targets (training-split proportions of the
# challenge corpus this generator stands in for).
EVENT_TARGETS = {
    "NoDisposition": 0.728,
    "Disposition": 0.195,
    "Undetermined": 0.077,
}
ACTION_TARGETS = {
    "Start": 0.402, "Stop": 0.241, "Increase": 0.091, "Decrease": 0.038,
    "UniqueDose": 0.202, "OtherChange": 0.001, "Unknown": 0.025,
}
NEGATION_TARGETS = {"Negated": 0.023, "NotNegated": 0.977}
TEMPORALITY_TARGETS = {"Past": 0.527, "Present": 0.350, "Future": 0.103, "Unknown": 0.021}
CERTAINTY_TARGETS = {"Certain": 0.833, "Hypothetical": 0.095, "Conditional": 0.071, "Unknown": 0.001}
ACTOR_TARGETS = {"Physician": 0.905, "Patient": 0.075, "Unknown": 0.020}

ACTION_CUES = {
    "Start": "started", "Stop": "stopped", "Increase": "increased",
    "Decrease": "decreased", "UniqueDose": "bolused", "OtherChange": "retimed",
    "Unknown": "adjusted",
}
NEGATION_CUES = {"Negated": "never", "NotNegated": "duly"}
TEMPORALITY_CUES = {
    "Past": "yesterday", "Present": "today", "Future": "tomorrow", "Unknown": "someday",
}
CERTAINTY_CUES = {
    "Certain": "definitely", "Hypothetical": "hypothetically",
    "Conditional": "conditionally", "Unknown": "possibly",
}
ACTOR_CUES = {"Physician": "clinician", "Patient": "patient", "Unknown": "caregiver"}

FILLER_SENTENCES = (
    "vitals remained stable overnight.",
    "labs are pending at this time.",
    "followup visit scheduled in two weeks.",
    "no acute distress noted on exam.",
    "diet and activity as tolerated.",
)

DOSES = ("5mg", "10mg", "20mg", "40mg", "125mg", "250mg", "2ml", "80units")

_NAME_PREFIXES = (
    "zal", "brev", "cor", "dex", "flum", "gri", "hald", "jor", "kel", "lum",
    "mir", "nov", "oxa", "pem", "quor", "ris", "sol", "torv", "vel", "wex",
)
_NAME_SUFFIXES = (
    "amab", "inib", "opril", "olol", "arin", "izole", "ivir", "omycin",
    "utide", "axine",
)
_MODIFIERS = ("depot", "xr", "forte")

# Dose-form words reserved for dev/test mentions (never in training data),
# so extraction faces genuinely novel mention boundaries.
NOVEL_MODIFIERS = ("retard", "sr", "hfa")


def default_lexicon(size: int) -> tuple[str, ...]:
    """Fictional drug names; roughly a third get a second word."""
    names = []
    i = 0
    for suf in _NAME_SUFFIXES:
        for pre in _NAME_PREFIXES:
            name = pre + suf
            if i % 3 == 2:
                name = f"{name} {_MODIFIERS[i % len(_MODIFIERS)]}"
            names.append(name)
            i += 1
            if len(names) == size:
                return tuple(names)
    return tuple(names)


@dataclass
class GeneratorSpec:
    seed: int = 7
    n_train: int = 200
    n_dev: int = 40
    n_test: int = 40
    lexicon_size: int = 40
    min_sentences: int = 4
    max_sentences: int = 8
    mention_prob: float = 0.7
    difficulty: str = "separable"  # or "noisy"
    noise_rate: float = 0.1
    # fraction of dev/test mentions wearing a dose-form word unseen in training
    novel_form_rate: float = 0.0
    event_targets: dict[str, float] = field(default_factory=lambda: dict(EVENT_TARGETS))
    action_targets: dict[str, float] = field(default_factory=lambda: dict(ACTION_TARGETS))
    negation_targets: dict[str, float] = field(default_factory=lambda: dict(NEGATION_TARGETS))
    temporality_targets: dict[str, float] = field(default_factory=lambda: dict(TEMPORALITY_TARGETS))
    certainty_targets: dict[str, float] = field(default_factory=lambda: dict(CERTAINTY_TARGETS))
    actor_targets: dict[str, float] = field(default_factory=lambda: dict(ACTOR_TARGETS))

    def validate(self) -> None:
        if self.difficulty not in ("separable", "noisy"):
            raise ConfigError(f"unknown difficulty {self.difficulty!r}")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ConfigError("split sizes must be non-negative")
        if not (0 < self.mention_prob <= 1):
            raise ConfigError("mention_prob must lie in (0, 1]")
        if not (0.0 <= self.novel_form_rate <= 1.0):
            raise ConfigError("novel_form_rate must lie in [0, 1]")
        if not (1 <= self.min_sentences <= self.max_sentences):
            raise ConfigError("bad sentence count range")
        for name, targets in self._target_tables().items():
            total = sum(targets.values())
            if total <= 0 or any(v < 0 for v in targets.values()):
                raise ConfigError(f"bad distribution targets for {name}")
        lexicon = set(default_lexicon(self.lexicon_size))
        cues = set(self._all_cues())
        if lexicon & cues:
            raise ConfigError("drug lexicon overlaps cue phrases")

    def _target_tables(self) -> dict[str, dict[str, float]]:
        return {
            "Event": self.event_targets,
            "Action": self.action_targets,
            "Negation": self.negation_targets,
            "Temporality": self.temporality_targets,
            "Certainty": self.certainty_targets,
            "Actor": self.actor_targets,
        }

    def _all_cues(self) -> list[str]:
        out = []
        for table in (ACTION_CUES, NEGATION_CUES, TEMPORALITY_CUES, CERTAINTY_CUES, ACTOR_CUES):
            out.extend(table.values())
        return out


@dataclass(frozen=True)
class LedgerEntry:
    doc_id: str
    split: str
    span: CharSpan
    surface: str
    event: EventLabel
    context: Optional[ContextAttributes]


@dataclass
class SynthResult:
    corpus: Corpus
    ledger: list[LedgerEntry]
    stats: dict[str, SplitStats]  # the generator's own emission counts


def _quota_labels(targets: dict[str, float], total: int, rng: random.Random) -> list[str]:
    """Allocate `total` labels by largest-remainder quotas, then shuffle."""
    norm = sum(targets.values())
    shares = {k: v / norm * total for k, v in targets.items()}
    counts = {k: int(shares[k]) for k in targets}
    leftover = total - sum(counts.values())
    by_remainder = sorted(targets, key=lambda k: (-(shares[k] - counts[k]), k))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    labels = [k for k in targets for _ in range(counts[k])]
    rng.shuffle(labels)
    return labels


def _maybe_noisy(cue: str, table: dict[str, str], spec: GeneratorSpec, rng: random.Random) -> str:
    if spec.difficulty == "noisy" and rng.random() < spec.noise_rate:
        return rng.choice(sorted(table.values()))
    return cue


def _render_sentence(
    event: EventLabel,
    context: Optional[ContextAttributes],
    drug: str,
    spec: GeneratorSpec,
    rng: random.Random,
) -> tuple[str, int]:
    """Return (sentence text, offset of the drug mention within it)."""
    dose = rng.choice(DOSES)
    display = event
    if spec.difficulty == "noisy" and rng.random() < spec.noise_rate:
        display = rng.choice(list(EventLabel))

    if display is EventLabel.DISPOSITION:
        attrs = context if context is not None else ContextAttributes()
        actor = _maybe_noisy(ACTOR_CUES[attrs.actor.value], ACTOR_CUES, spec, rng)
        neg = _maybe_noisy(NEGATION_CUES[attrs.negation.value], NEGATION_CUES, spec, rng)
        action = _maybe_noisy(ACTION_CUES[attrs.action.value], ACTION_CUES, spec, rng)
        temp = _maybe_noisy(TEMPORALITY_CUES[attrs.temporality.value], TEMPORALITY_CUES, spec, rng)
        cert = _maybe_noisy(CERTAINTY_CUES[attrs.certainty.value], CERTAINTY_CUES, spec, rng)
        prefix = f"{actor} {neg} {action} "
        sentence = f"{prefix}{drug} {dose} {temp} {cert}."
    elif display is EventLabel.NO_DISPOSITION:
        variant = rng.randrange(2)
        if variant == 0:
            prefix = "med list shows "
            sentence = f"{prefix}{drug} {dose} continues unchanged."
        else:
            prefix = "home regimen keeps "
            sentence = f"{prefix}{drug} {dose} continues unchanged."
    else:
        variant = rng.randrange(2)
        if variant == 0:
            prefix = "note mentioned "
            sentence = f"{prefix}{drug} {dose} without clear plan."
        else:
            prefix = "chart reviewed regarding "
            sentence = f"{prefix}{drug} {dose} without clear plan."
    return sentence, len(prefix)


def gen_corpus(spec: GeneratorSpec) -> SynthResult:
    """Generate a corpus with an exact emission ledger; deterministic per seed."""
    spec.validate()
    rng = random.Random(spec.seed)
    lexicon = default_lexicon(spec.lexicon_size)

    corpus = Corpus()
    ledger: list[LedgerEntry] = []
    stats: dict[str, SplitStats] = {}

    for split, n_docs in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        # Structure first: which sentences carry a mention.
        plans = []
        total_mentions = 0
        for d in range(n_docs):
            n_sent = rng.randint(spec.min_sentences, spec.max_sentences)
            has_mention = [rng.random() < spec.mention_prob for _ in range(n_sent)]
            if not any(has_mention):
                has_mention[0] = True  # every note names at least one drug
            plans.append(has_mention)
            total_mentions += sum(has_mention)

        events = [EventLabel(v) for v in _quota_labels(spec.event_targets, total_mentions, rng)]
        n_disp = sum(1 for e in events if e is EventLabel.DISPOSITION)
        dim_labels = {
            "Action": _quota_labels(spec.action_targets, n_disp, rng),
            "Negation": _quota_labels(spec.negation_targets, n_disp, rng),
            "Temporality": _quota_labels(spec.temporality_targets, n_disp, rng),
            "Certainty": _quota_labels(spec.certainty_targets, n_disp, rng),
            "Actor": _quota_labels(spec.actor_targets, n_disp, rng),
        }

        split_events = {e.value: 0 for e in EventLabel}
        split_dims = {
            dim: {v.value: 0 for v in enum_cls}
            for dim, (enum_cls, _) in CONTEXT_DIMENSIONS.items()
        }
        split_total = 0
        docs = corpus.split(split)
        mention_idx = 0
        disp_idx = 0

        for d, has_mention in enumerate(plans):
            doc_id = f"{split}{d:04d}"
            parts: list[str] = []
            offset = 0
            mentions: list[MedicationMention] = []
            for s, carries in enumerate(has_mention):
                if carries:
                    event = events[mention_idx]
                    mention_idx += 1
                    context = None
                    if event is EventLabel.DISPOSITION:
                        kwargs = {}
                        for dim, (enum_cls, attr) in CONTEXT_DIMENSIONS.items():
                            kwargs[attr] = enum_cls(dim_labels[dim][disp_idx])
                        disp_idx += 1
                        context = ContextAttributes(**kwargs)
                    drug = rng.choice(lexicon)
                    if (
                        split != "train"
                        and spec.novel_form_rate > 0
                        and " " not in drug
                        and rng.random() < spec.novel_form_rate
                    ):
                        drug = f"{drug} {rng.choice(NOVEL_MODIFIERS)}"
                    sentence, drug_offset = _render_sentence(event, context, drug, spec, rng)
                    start = offset + drug_offset
                    span = CharSpan(start, start + len(drug))
                    mentions.append(
                        MedicationMention(span=span, surface=drug, event=event, context=context)
                    )
                    ledger.append(
                        LedgerEntry(doc_id, split, span, drug, event, context)
                    )
                    split_total += 1
                    split_events[event.value] += 1
                    if context is not None:
                        for dim, (_, attr) in CONTEXT_DIMENSIONS.items():
                            split_dims[dim][getattr(context, attr).value] += 1
                else:
                    sentence = rng.choice(FILLER_SENTENCES)
                sep = "\n" if (s + 1) % 4 == 0 else " "
                parts.append(sentence)
                offset += len(sentence)
                if s + 1 < len(has_mention):
                    parts.append(sep)
                    offset += len(sep)
            doc = AnnotatedDocument(doc_id=doc_id, text="".join(parts), mentions=mentions)
            doc.validate()
            docs.append(doc)

        stats[split] = SplitStats(
            documents=n_docs,
            medications=split_total,
            events=split_events,
            dimensions=split_dims,
        )

    return SynthResult(corpus=corpus, ledger=ledger, stats=stats)
