"""Corpus ingestion, cleanup, variant selection, and deterministic splitting.

Raw corpus format: one JSON object per line with keys `id`, `lang`, `toxic`,
`civil_variants` (1-5 strings), optional `chosen_index`, optional
`corrected_civil` (curation-time replacement for foreign-language civil text).
"""

import json
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    DetoxError,
    InsufficientData,
    MalformedRecord,
    MissingAnnotation,
    MissingVariant,
    TranslationFailed,
)

SUPPORTED_LANGS = ("en", "hi")
MAX_VARIANTS = 5

NUM_TOKEN = "<num>"

# Legacy placeholders left by the upstream data, unified to one token.
_NUM_PATTERNS = re.compile(r"<number>|\bDIGIT\b|\bnumber\b|[0-9]+")
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class RawRecord:
    id: str
    lang: str
    toxic_text: str
    civil_variants: tuple
    chosen_index: int = None
    corrected_civil: str = None

    def __post_init__(self):
        if not (1 <= len(self.civil_variants) <= MAX_VARIANTS):
            raise MissingVariant(f"record {self.id}: needs 1-{MAX_VARIANTS} civil variants")
        if self.chosen_index is not None and not (0 <= self.chosen_index < len(self.civil_variants)):
            raise MalformedRecord(self.id, f"chosen_index {self.chosen_index} out of range")
        if self.lang not in SUPPORTED_LANGS:
            raise MalformedRecord(self.id, f"unsupported lang {self.lang!r}")


@dataclass(frozen=True)
class ParallelPair:
    id: str
    lang: str
    toxic: str
    civil: str


@dataclass
class CorpusSplit:
    train: list
    dev: list
    test: list
    seed: int

    def all_ids(self):
        return [p.id for part in (self.train, self.dev, self.test) for p in part]


def normalize_numbers(text):
    """Replace legacy number placeholders and digit runs with the canonical token."""
    return _NUM_PATTERNS.sub(NUM_TOKEN, text)


def cleanup_text(text):
    """Canonical text cleanup: placeholder unification plus whitespace squeeze."""
    return _WS.sub(" ", normalize_numbers(text)).strip()


def _parse_line(line, line_no):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRecord(line_no, f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    for key in ("id", "lang", "toxic", "civil_variants"):
        if key not in obj:
            raise MalformedRecord(line_no, f"missing key {key!r}")
    variants = obj["civil_variants"]
    if not isinstance(variants, list) or not all(isinstance(v, str) for v in variants):
        raise MalformedRecord(line_no, "civil_variants must be a list of strings")
    if len(variants) == 0:
        raise MissingVariant(f"line {line_no}: record has no civil variants")
    return obj


def load_raw(path):
    """Load raw records, merging records that share an identical toxic string.

    Merged records concatenate their civil variants in first-seen order,
    capped at MAX_VARIANTS. The first record's chosen_index/corrected_civil win.
    """
    by_toxic = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = _parse_line(line, line_no)
            key = obj["toxic"]
            if key not in by_toxic:
                by_toxic[key] = {
                    "id": obj["id"],
                    "lang": obj["lang"],
                    "toxic": obj["toxic"],
                    "variants": [],
                    "chosen_index": obj.get("chosen_index"),
                    "corrected_civil": obj.get("corrected_civil"),
                }
                order.append(key)
            entry = by_toxic[key]
            for v in obj["civil_variants"]:
                if len(entry["variants"]) < MAX_VARIANTS:
                    entry["variants"].append(v)
            if entry["chosen_index"] is None and obj.get("chosen_index") is not None:
                entry["chosen_index"] = obj["chosen_index"]
            if entry["corrected_civil"] is None and obj.get("corrected_civil") is not None:
                entry["corrected_civil"] = obj["corrected_civil"]

    records = []
    for key in order:
        e = by_toxic[key]
        records.append(
            RawRecord(
                id=e["id"],
                lang=e["lang"],
                toxic_text=e["toxic"],
                civil_variants=tuple(e["variants"]),
                chosen_index=e["chosen_index"],
                corrected_civil=e["corrected_civil"],
            )
        )
    return records


def select_pair(record, policy="annotated"):
    """Pick one civil variant and return a cleaned-up ParallelPair.

    Policies: "annotated" (expert-chosen index), "first", "shortest".
    A corrected_civil annotation overrides the selected variant.
    """
    if record.corrected_civil is not None:
        civil = record.corrected_civil
    elif policy == "annotated":
        if record.chosen_index is None:
            raise MissingAnnotation(f"record {record.id}: policy 'annotated' but no chosen_index")
        civil = record.civil_variants[record.chosen_index]
    elif policy == "first":
        civil = record.civil_variants[0]
    elif policy == "shortest":
        civil = min(record.civil_variants, key=len)
    else:
        raise ValueError(f"unknown selection policy {policy!r}")

    toxic = cleanup_text(record.toxic_text)
    civil = cleanup_text(civil)
    if not toxic or not civil:
        raise DetoxError(f"record {record.id}: empty text after cleanup")
    return ParallelPair(id=record.id, lang=record.lang, toxic=toxic, civil=civil)


def _fisher_yates(items, rng):
    items = list(items)
    for i in range(len(items) - 1, 0, -1):
        j = rng.randint(0, i)
        items[i], items[j] = items[j], items[i]
    return items


def split_corpus(pairs, sizes, seed):
    """Seeded shuffle and partition into train/dev/test of the requested sizes.

    Pairs are sorted by id before shuffling so the split is independent of the
    storage order of the input.
    """
    n_train, n_dev, n_test = sizes
    total = n_train + n_dev + n_test
    if total > len(pairs):
        raise InsufficientData(f"requested {total} pairs but corpus has {len(pairs)}")
    ordered = sorted(pairs, key=lambda p: p.id)
    shuffled = _fisher_yates(ordered, random.Random(seed))
    return CorpusSplit(
        train=shuffled[:n_train],
        dev=shuffled[n_train : n_train + n_dev],
        test=shuffled[n_train + n_dev : total],
        seed=seed,
    )


def synthesize_translation_split(split, translator, target_lang):
    """Machine-translate train and dev on both sides; test is left untouched.

    The real test set for the target language is curated separately and loaded
    on its own; only the training resources are synthetic.
    """

    def tr(pair):
        try:
            toxic = translator.translate(pair.toxic)
            civil = translator.translate(pair.civil)
        except Exception as e:
            raise TranslationFailed(f"pair {pair.id}: {e}") from e
        return replace(pair, lang=target_lang, toxic=toxic, civil=civil)

    return CorpusSplit(
        train=[tr(p) for p in split.train],
        dev=[tr(p) for p in split.dev],
        test=list(split.test),
        seed=split.seed,
    )


def write_pairs(pairs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"id": p.id, "lang": p.lang, "toxic": p.toxic, "civil": p.civil}, ensure_ascii=False))
            fh.write("\n")


def load_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(ParallelPair(id=obj["id"], lang=obj["lang"], toxic=obj["toxic"], civil=obj["civil"]))
            except (json.JSONDecodeError, KeyError) as e:
                raise MalformedRecord(line_no, str(e)) from e
    return pairs


def write_split(split, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("dev", split.dev), ("test", split.test)):
        write_pairs(part, out_dir / f"{name}.jsonl")
    manifest = {
        "seed": split.seed,
        "sizes": {"train": len(split.train), "dev": len(split.dev), "test": len(split.test)},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_split(out_dir):
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    return CorpusSplit(
        train=load_pairs(out_dir / "train.jsonl"),
        dev=load_pairs(out_dir / "dev.jsonl"),
        test=load_pairs(out_dir / "test.jsonl"),
        seed=manifest["seed"],
    )


def write_raw(records, path):
    """Serialize RawRecords back to the corpus line format (dedup round-trips)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {"id": r.id, "lang": r.lang, "toxic": r.toxic_text, "civil_variants": list(r.civil_variants)}
            if r.chosen_index is not None:
                obj["chosen_index"] = r.chosen_index
            if r.corrected_civil is not None:
                obj["corrected_civil"] = r.corrected_civil
            fh.write(json.dumps(obj, ensure_ascii=False))
            fh.write("\n")
