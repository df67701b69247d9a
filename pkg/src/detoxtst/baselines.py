"""Non-learned comparison systems: Duplicate and dictionary-based Delete.

Delete performs case-insensitive, whole-token, longest-phrase-first removal.
It deliberately keeps the crude surface of the classic baseline: punctuation
and dangling function words next to a deleted phrase are retained.
"""

from .errors import EmptyLexicon, TranslationFailed


class ToxicLexicon:
    """A set of lowercase word/phrase entries, matched longest-first."""

    def __init__(self, entries, lang="en"):
        cleaned = []
        seen = set()
        for e in entries:
            e = " ".join(e.lower().split())
            if e and e not in seen:
                seen.add(e)
                cleaned.append(e)
        if not cleaned:
            raise EmptyLexicon("lexicon has no entries")
        # longest token count first so phrases win over their constituent words
        self.entries = sorted(cleaned, key=lambda e: (-len(e.split()), e))
        self.lang = lang

    def __len__(self):
        return len(self.entries)

    def __contains__(self, entry):
        return entry in self.entries

    def __iter__(self):
        return iter(self.entries)


def duplicate(text):
    """Identity baseline: keeps the input intact."""
    return text


def delete_lexicon(text, lex):
    """Remove every whole-token lexicon match, longest phrase first, left to right.

    Deleting a token can make two lexicon words newly adjacent, so the pass is
    repeated until a fixpoint; the result is idempotent.
    """
    while True:
        out = _delete_pass(text, lex)
        if out == text:
            return out
        text = out


def _delete_pass(text, lex):
    tokens = text.split()
    lowered = [t.lower() for t in tokens]
    keep = [True] * len(tokens)
    for entry in lex.entries:
        phrase = entry.split()
        n = len(phrase)
        i = 0
        while i + n <= len(tokens):
            if all(keep[i + k] and lowered[i + k] == phrase[k] for k in range(n)):
                for k in range(n):
                    keep[i + k] = False
                i += n
            else:
                i += 1
    return " ".join(t for t, k in zip(tokens, keep) if k)


def load_lexicon(path, lang="en"):
    """One entry per line; blank lines and '#' comments ignored."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(line)
    if not entries:
        raise EmptyLexicon(f"{path}: no usable entries")
    return ToxicLexicon(entries, lang=lang)


def translate_lexicon(lex, translator, target_lang):
    """Translate each entry independently; merged on collision; failures collected."""
    translated = []
    provenance = {}
    failures = []
    for entry in lex.entries:
        try:
            out = translator.translate(entry)
        except Exception as e:
            failures.append(f"{entry!r}: {e}")
            continue
        translated.append(out)
        provenance.setdefault(" ".join(out.lower().split()), []).append(entry)
    if failures:
        raise TranslationFailed("; ".join(failures))
    result = ToxicLexicon(translated, lang=target_lang)
    result.provenance = provenance
    return result
