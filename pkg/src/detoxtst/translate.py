"""Translation provider stubs.

A provider is any object with translate(text) -> text. Real machine
translation backends plug in behind the same method; the toolkit ships an
identity stub and a word-dictionary stub so every pipeline stage runs offline.
"""

from .errors import TranslationFailed


class IdentityTranslator:
    """Returns the input unchanged."""

    def translate(self, text):
        return text


class DictionaryTranslator:
    """Whole-token replacement from a word mapping; unknown tokens pass through."""

    def __init__(self, mapping):
        self.mapping = dict(mapping)

    def translate(self, text):
        return " ".join(self.mapping.get(tok, tok) for tok in text.split())


class FailingTranslator:
    """Test helper: raises on configured inputs."""

    def __init__(self, fail_on=()):
        self.fail_on = set(fail_on)

    def translate(self, text):
        if text in self.fail_on:
            raise TranslationFailed(f"provider refused input: {text!r}")
        return text
