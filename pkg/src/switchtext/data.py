"""Corpus handling: whitespace-unigram vocabulary, encoding with padding
masks, stratified splitting, inverse-frequency class weights, JSON-lines
dataset files, and a synthetic note generator with planted keywords.

Tokenization lowercases and strips punctuation while preserving accents
(the corpora are French-like).  The shipped stop-word and negation lists
are illustrative, not canonical.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .layers import PAD_ID, UNK_ID

_TOKEN_CLEANER = re.compile(r"[^\w\s]", flags=re.UNICODE)

# Illustrative French stop-word and negation lists; callers may supply
# their own.
FRENCH_STOPWORDS = frozenset(
    "le la les un une des de du au aux et ou mais donc or ni car a est sont "
    "ce cette ces il elle on nous vous ils elles dans sur sous avec pour par "
    "plus tres que qui quoi dont".split()
)
NEGATION_MARKERS = frozenset({"pas", "sans", "no", "non", "aucun", "aucune"})


def tokenize(text: str, stopwords=None, merge_negations: bool = False) -> list[str]:
    """Lowercase, strip punctuation (accents preserved), split on whitespace.

    With ``merge_negations``, a negation marker fuses with the following
    token into a single ``NEG_<token>`` unigram.
    """
    tokens = _TOKEN_CLEANER.sub(" ", text.lower()).split()
    if merge_negations:
        merged, i = [], 0
        while i < len(tokens):
            if tokens[i] in NEGATION_MARKERS and i + 1 < len(tokens):
                merged.append(f"NEG_{tokens[i + 1]}")
                i += 2
            else:
                merged.append(tokens[i])
                i += 1
        tokens = merged
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


@dataclass
class Vocabulary:
    """Token ids with PAD=0 and UNK=1 reserved; bijective elsewhere."""

    id_to_token: list[str]
    token_to_id: dict[str, int]
    min_frequency: int = 1
    merge_negations: bool = False
    stopwords: frozenset[str] | None = None

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_dict(self) -> dict:
        return {
            "id_to_token": self.id_to_token,
            "min_frequency": self.min_frequency,
            "merge_negations": self.merge_negations,
            "stopwords": sorted(self.stopwords) if self.stopwords else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "Vocabulary":
        tokens = list(d["id_to_token"])
        return Vocabulary(
            id_to_token=tokens,
            token_to_id={t: i for i, t in enumerate(tokens)},
            min_frequency=int(d.get("min_frequency", 1)),
            merge_negations=bool(d.get("merge_negations", False)),
            stopwords=frozenset(d["stopwords"]) if d.get("stopwords") else None,
        )


def build_vocab(corpus, min_frequency: int = 1, stopwords=None,
                merge_negations: bool = False) -> Vocabulary:
    """Count unigrams over ``corpus`` (an iterable of texts) and keep those
    at or above ``min_frequency``; rarer tokens map to UNK.  Id assignment
    is deterministic: frequency-descending, ties alphabetical."""
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(tokenize(text, stopwords=stopwords, merge_negations=merge_negations))
    if n_texts == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_frequency),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = ["<pad>", "<unk>"] + kept
    return Vocabulary(
        id_to_token=id_to_token,
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        min_frequency=min_frequency,
        merge_negations=merge_negations,
        stopwords=frozenset(stopwords) if stopwords else None,
    )


def encode(text: str, vocab: Vocabulary, max_len: int, pad_to: int | None = None):
    """Tokenize and map to ids (UNK for out-of-vocabulary), truncating to the
    first ``max_len`` tokens.  Empty text encodes as a single UNK, never an
    all-PAD sequence.  Returns ``(ids, mask)`` where the mask marks real
    tokens; with ``pad_to`` the sequence is right-padded with PAD."""
    tokens = tokenize(text, stopwords=vocab.stopwords, merge_negations=vocab.merge_negations)
    ids = [vocab.lookup(t) for t in tokens[:max_len]] or [UNK_ID]
    real = len(ids)
    if pad_to is not None:
        if pad_to < real:
            raise ContractError(f"pad_to={pad_to} shorter than sequence length {real}")
        ids = ids + [PAD_ID] * (pad_to - real)
    mask = np.zeros(len(ids), dtype=bool)
    mask[:real] = True
    return np.asarray(ids, dtype=np.int64), mask


def decode(ids, vocab: Vocabulary) -> list[str]:
    """Inverse of encode for in-vocabulary tokens; PAD positions are dropped."""
    return [vocab.id_to_token[i] for i in np.asarray(ids) if i != PAD_ID]


def pad_batch(sequences: list[np.ndarray]):
    """Right-pad sequences with PAD to the batch maximum; returns [B, L] ids
    and a boolean mask of real positions."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask


# ---------------------------------------------------------------------------
# labeled datasets


@dataclass
class Example:
    example_id: int
    text: str
    label: int


@dataclass
class LabeledDataset:
    examples: list[Example]
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.asarray([e.label for e in self.examples])

    def subset(self, split: str) -> list[Example]:
        if split == "all":
            return list(self.examples)
        if split not in self.splits:
            raise ConfigError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return [self.examples[i] for i in self.splits[split]]


def read_jsonl(path) -> LabeledDataset:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no + 1}: invalid JSON record") from e
            if "text" not in record or "label" not in record:
                raise DataError(f"{path}:{line_no + 1}: record needs 'text' and 'label'")
            label = record["label"]
            if label not in (0, 1):
                raise DataError(f"{path}:{line_no + 1}: label must be 0 or 1, got {label!r}")
            examples.append(Example(example_id=record.get("id", len(examples)),
                                    text=str(record["text"]), label=int(label)))
    if not examples:
        raise DataError(f"{path}: no records found")
    return LabeledDataset(examples=examples)


def write_jsonl(path, dataset: LabeledDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in dataset.examples:
            fh.write(json.dumps({"id": e.example_id, "text": e.text, "label": e.label},
                                ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# splitting and class balance


def split_dataset(n_or_dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0,
                  stratify: bool = False, labels=None) -> dict[str, np.ndarray]:
    """Deterministic shuffled train/val/test assignment.

    Validation and test sizes are round(fraction * n); train takes the
    remainder.  With ``stratify`` the assignment is made per label so each
    split keeps the global positive fraction within rounding."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if isinstance(n_or_dataset, LabeledDataset):
        n = len(n_or_dataset)
        if labels is None:
            labels = n_or_dataset.labels()
    else:
        n = int(n_or_dataset)
    if stratify and labels is None:
        raise ConfigError("stratified splitting needs labels")

    rng = np.random.default_rng(seed)

    def assign(indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        shuffled = rng.permutation(indices)
        n_val = round(fractions[1] * len(indices))
        n_test = round(fractions[2] * len(indices))
        return shuffled[: len(indices) - n_val - n_test], \
            shuffled[len(indices) - n_val - n_test: len(indices) - n_test], \
            shuffled[len(indices) - n_test:]

    if stratify:
        labels = np.asarray(labels)
        parts = {"train": [], "val": [], "test": []}
        for value in np.unique(labels):
            tr, va, te = assign(np.nonzero(labels == value)[0])
            parts["train"].append(tr)
            parts["val"].append(va)
            parts["test"].append(te)
        splits = {k: rng.permutation(np.concatenate(v)) for k, v in parts.items()}
    else:
        tr, va, te = assign(np.arange(n))
        splits = {"train": tr, "val": va, "test": te}
    return splits


def class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (num_classes * N_c) for binary
    labels, so the weighted loss expectation is equal across classes."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=2)
    if (counts == 0).any():
        raise ConfigError(
            f"class weights need both classes present, got counts {counts.tolist()}"
        )
    return len(labels) / (2.0 * counts)


# ---------------------------------------------------------------------------
# synthetic corpus

POSITIVE_KEYWORDS = [
    "milrinone", "milri", "aorte", "aortique", "cardiomégalie", "dobutamine",
    "souffle", "ventricule", "œdème", "lasix",
]
NEGATIVE_KEYWORDS = [
    "respiratoire", "détresse", "bronchiolite", "oxygène", "ventolin",
    "pneumonie", "saturation", "toux", "wheezing", "crépitants",
]
FILLER_WORDS = [
    "patient", "admis", "pour", "examen", "jour", "soins", "suivi", "stable",
    "nuit", "dose", "traitement", "contrôle", "bilan", "radiographie",
    "perfusion", "alimentation", "poids", "température", "fréquence",
    "antibiotique", "observation", "transfert", "urgence", "consultation",
    "médicament", "voie", "orale", "tolérance", "surveillance", "évolution",
    "favorable", "parents", "pédiatrie", "prise", "sang", "glycémie",
    "résultat", "normale", "dossier", "note",
]


def generate_synthetic_corpus(n: int, positive_fraction: float = 0.36,
                              noise: float = 0.05, seed: int = 0,
                              min_tokens: int = 15, max_tokens: int = 45) -> LabeledDataset:
    """Template-generated short notes whose label is recoverable from planted
    keyword sets mixed into shared filler vocabulary.

    With probability ``noise`` a note carries the opposite class's keywords,
    so the best achievable accuracy from text alone is 1 - noise (1.0 at
    noise=0).  Deterministic per seed.
    """
    if n < 10:
        raise ConfigError(f"synthetic corpus needs n >= 10, got {n}")
    if not 0.0 < positive_fraction < 1.0:
        raise ConfigError(f"positive_fraction must be in (0, 1), got {positive_fraction}")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must be in [0, 1], got {noise}")
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        label = int(rng.random() < positive_fraction)
        keyword_class = label if rng.random() >= noise else 1 - label
        pool = POSITIVE_KEYWORDS if keyword_class == 1 else NEGATIVE_KEYWORDS
        length = int(rng.integers(min_tokens, max_tokens + 1))
        n_keywords = int(rng.integers(2, 5))
        words = list(rng.choice(FILLER_WORDS, size=max(1, length - n_keywords)))
        words += list(rng.choice(pool, size=n_keywords))
        rng.shuffle(words)
        examples.append(Example(example_id=i, text=" ".join(words), label=label))
    return LabeledDataset(examples=examples)


def keyword_label_guess(text: str) -> int:
    """Best-possible label guess from planted keywords (the generator's
    Bayes-optimal rule): 1 if positive keywords outnumber negative ones."""
    tokens = set(tokenize(text))
    pos = len(tokens & set(POSITIVE_KEYWORDS))
    neg = len(tokens & set(NEGATIVE_KEYWORDS))
    return int(pos > neg)
