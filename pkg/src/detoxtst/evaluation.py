"""Evaluation protocol: toxicity classifier + detox accuracy, corpus BLEU,
sentence-embedding cosine similarity, perplexity, report assembly, and the
blinded human-evaluation export.

The shipped resources (hashed bag-of-tokens embedder, unigram LM) make the
whole path runnable offline; pretrained models are optional plug-ins behind
the same interfaces.
"""

import csv
import hashlib
import math
import random
from collections import Counter
from dataclasses import dataclass

import torch

from . import backbone as bb
from .backbone import tokenize
from .errors import EmptyInput, InsufficientOutputs, LengthMismatch, NonFiniteLoss
from .methods import LossBreakdown, binary_cls_loss, head_prob, pool_states, NON_TOXIC, TOXIC

BLEU_EPS = 1e-9


# -- toxicity classifier ------------------------------------------------------


@dataclass
class ClassifierConfig:
    epochs: int = 10
    lr: float = 5e-3
    batch_size: int = 8
    l2: float = 0.0
    optimizer: str = "adam"
    seed: int = 0
    emb_dim: int = 32
    hidden_dim: int = 64
    max_len: int = 32


class ToxicityClassifier:
    """Micro encoder + sigmoid head; classify(text) is P(non-toxic)."""

    def __init__(self, model, trained_on=None):
        self.model = model
        self.trained_on = trained_on

    def classify(self, text):
        self.model.eval_mode()
        with torch.no_grad():
            ids = bb.frame_source(self.model.vocab.encode_text(text)[: self.model.config.max_len - 2])
            src, mask = bb.pad_batch([ids])
            states, _ = self.model.encode_batch(src, mask)
            return float(head_prob(self.model, pool_states(states, mask), "ip")[0])

    def p_toxic(self, text):
        return 1.0 - self.classify(text)


class LexiconOracleClassifier:
    """Oracle stub: toxicity determined by planted-lexicon membership."""

    def __init__(self, lexicon, p_hit=0.9, p_miss=0.1):
        self.lexicon = {w.lower() for w in lexicon}
        self.p_hit = p_hit
        self.p_miss = p_miss

    def p_toxic(self, text):
        toks = set(text.lower().split())
        return self.p_hit if toks & self.lexicon else self.p_miss

    def classify(self, text):
        return 1.0 - self.p_toxic(text)


def train_toxicity_classifier(split, cfg=None):
    """Binary classifier over the train split: toxic texts 0, civil texts 1."""
    cfg = cfg or ClassifierConfig()
    if not split.train:
        raise EmptyInput("split.train is empty")
    texts = [(p.toxic, TOXIC) for p in split.train] + [(p.civil, NON_TOXIC) for p in split.train]

    vocab = bb.build_vocab(split.train, min_freq=1)
    config = bb.MicroConfig(
        vocab_size=len(vocab), emb_dim=cfg.emb_dim, hidden_dim=cfg.hidden_dim,
        max_len=cfg.max_len, seed=cfg.seed, dropout=0.0,
    )
    model = bb.MicroSeq2Seq(config, vocab)
    budget = cfg.max_len - 2
    items = [(bb.frame_source(vocab.encode_text(t)[:budget]), lab) for t, lab in texts]

    def loss_fn(m, batch):
        ids, mask = bb.pad_batch([s for s, _ in batch])
        states, _ = m.encode_batch(ids, mask)
        probs = head_prob(m, pool_states(states, mask), "ip")
        loss = binary_cls_loss(probs, [lab for _, lab in batch])
        return LossBreakdown(cls_ip=float(loss.detach()), total=float(loss.detach()), total_tensor=loss)

    rng = random.Random(cfg.seed)
    model.train_mode(True)
    for _ in range(cfg.epochs):
        order = list(range(len(items)))
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[start : start + cfg.batch_size]]
            breakdown = bb.train_step(model, batch, loss_fn, cfg.lr, cfg.l2, cfg.optimizer)
            if not math.isfinite(breakdown.total):
                raise NonFiniteLoss("classifier training diverged")
    model.eval_mode()

    clf = ToxicityClassifier(model, trained_on=_split_fingerprint(split))
    clf.dev_accuracy = classifier_accuracy(clf, split.dev) if split.dev else None
    return clf


def classifier_accuracy(clf, pairs):
    """Accuracy over both sides of a pair list, as a percentage."""
    if not pairs:
        raise EmptyInput("no pairs to score")
    correct = 0
    for p in pairs:
        correct += clf.classify(p.toxic) <= 0.5
        correct += clf.classify(p.civil) > 0.5
    return 100.0 * correct / (2 * len(pairs))


def _split_fingerprint(split):
    h = hashlib.sha256()
    for p in split.train:
        h.update(p.id.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


# -- stub resources -----------------------------------------------------------


class HashedBagEmbedder:
    """Deterministic bag-of-tokens embedding.

    Each token is bucketed by the first 4 bytes of its SHA-256 digest mod D;
    the count vector is L2-normalized. Empty texts fall back to the token
    "<unk>" so the unit-norm invariant always holds.
    """

    def __init__(self, dim=256):
        self.dim = dim

    def bucket(self, token):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def embed(self, text):
        toks = tokenize(text) or ["<unk>"]
        vec = [0.0] * self.dim
        for t in toks:
            vec[self.bucket(t)] += 1.0
        norm = math.sqrt(sum(v * v for v in vec))
        return [v / norm for v in vec]


class UniformLM:
    """Uniform unigram scorer over a vocabulary of size V."""

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def score(self, text):
        toks = tokenize(text) or ["<unk>"]
        return len(toks) * math.log(self.vocab_size), len(toks)


class UnigramLM:
    """Add-one-smoothed unigram model fit on a pair list (both sides)."""

    def __init__(self, pairs):
        self.counts = Counter()
        for p in pairs:
            self.counts.update(tokenize(p.toxic))
            self.counts.update(tokenize(p.civil))
        self.total = sum(self.counts.values())
        self.vsize = len(self.counts) + 1  # +1 for unseen tokens

    def score(self, text):
        toks = tokenize(text) or ["<unk>"]
        nll = 0.0
        denom = self.total + self.vsize
        for t in toks:
            nll -= math.log((self.counts.get(t, 0) + 1) / denom)
        return nll, len(toks)


# -- metrics -------------------------------------------------------------------


def detox_accuracy(clf, outputs):
    """Percentage of outputs the classifier labels non-toxic (prob > 0.5)."""
    if not outputs:
        raise EmptyInput("no outputs to score")
    hits = sum(1 for o in outputs if clf.classify(o if o.strip() else "<unk>") > 0.5)
    return 100.0 * hits / len(outputs)


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu(candidates, references, max_n=4):
    """Corpus-level BLEU in [0, 100].

    Clipped modified n-gram precision for n=1..4 with uniform 1/4 weights,
    geometric mean, brevity penalty exp(1 - r/c) when c < r. Zero precisions
    are replaced by BLEU_EPS (documented add-epsilon smoothing).
    """
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise EmptyInput("empty corpus")
    clipped = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    c_len = 0
    r_len = 0
    for cand, ref in zip(candidates, references):
        c_toks = tokenize(cand)
        r_toks = tokenize(ref)
        c_len += len(c_toks)
        r_len += len(r_toks)
        for n in range(1, max_n + 1):
            c_counts = Counter(_ngrams(c_toks, n))
            r_counts = Counter(_ngrams(r_toks, n))
            totals[n] += sum(c_counts.values())
            clipped[n] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
    log_p = 0.0
    for n in range(1, max_n + 1):
        p_n = clipped[n] / totals[n] if totals[n] > 0 else 0.0
        if p_n == 0.0:
            p_n = BLEU_EPS
        log_p += math.log(p_n) / max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len) if c_len > 0 else 0.0
    return 100.0 * bp * math.exp(log_p)


def embedding_similarity(emb, candidates, sources):
    """100 x mean cosine similarity between candidate and source embeddings."""
    if len(candidates) != len(sources):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(sources)} sources")
    if not candidates:
        raise EmptyInput("empty corpus")
    total = 0.0
    for cand, src in zip(candidates, sources):
        a = emb.embed(cand)
        b = emb.embed(src)
        total += sum(x * y for x, y in zip(a, b))
    return 100.0 * total / len(candidates)


def perplexity(lm, texts):
    """Corpus-pooled perplexity: exp(sum NLL / sum token count)."""
    if not texts:
        raise EmptyInput("no texts to score")
    total_nll = 0.0
    total_count = 0
    for t in texts:
        nll, count = lm.score(t)
        total_nll += nll
        total_count += count
    if total_count < 1:
        raise EmptyInput("no tokens to score")
    return math.exp(total_nll / total_count)


# -- report assembly ------------------------------------------------------------


@dataclass
class EvalRow:
    system: str
    lang: str
    acc: float
    bleu: float
    cs: float
    ppl: float
    n: int
    warnings: tuple = ()


def evaluate_system(outputs, test, resources, system="system", ref="source"):
    """Assemble the four-metric row for one system on a test set.

    resources is (toxicity classifier, sentence embedder, LM scorer). BLEU
    and CS reference the toxic sources by default; ref="gold" switches BLEU
    to the civil references.
    """
    if len(outputs) != len(test):
        raise LengthMismatch(f"{len(outputs)} outputs vs {len(test)} test pairs")
    clf, emb, lm = resources
    warnings = []
    cleaned = []
    for k, o in enumerate(outputs):
        if not o.strip():
            warnings.append(f"output {k} is empty; scored as <unk>")
            o = "<unk>"
        cleaned.append(o)
    sources = [p.toxic for p in test]
    refs = sources if ref == "source" else [p.civil for p in test]
    lang = test[0].lang if test else "?"
    return EvalRow(
        system=system,
        lang=lang,
        acc=detox_accuracy(clf, cleaned),
        bleu=bleu(cleaned, refs),
        cs=embedding_similarity(emb, cleaned, sources),
        ppl=perplexity(lm, cleaned),
        n=len(test),
        warnings=tuple(warnings),
    )


def export_human_eval(system_outputs, test, n, seed, rows_path, key_path):
    """Blinded human-evaluation sample: n test indices, all systems per index,
    system identity shuffled per row, with a separate code->system key file."""
    systems = sorted(system_outputs)
    for name in systems:
        if len(system_outputs[name]) != len(test):
            raise InsufficientOutputs(f"system {name!r} covers {len(system_outputs[name])} of {len(test)} test items")
    if n > len(test):
        raise InsufficientOutputs(f"requested {n} samples from {len(test)} test items")
    rng = random.Random(seed)
    indices = rng.sample(range(len(test)), n)
    codes = {name: f"S{i+1}" for i, name in enumerate(systems)}
    with open(rows_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "system_code", "source", "output", "accuracy", "content", "fluency"])
        row_id = 0
        for idx in indices:
            order = list(systems)
            rng.shuffle(order)
            for name in order:
                writer.writerow([row_id, codes[name], test[idx].toxic, system_outputs[name][idx], "", "", ""])
                row_id += 1
    with open(key_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system_code", "system_name"])
        for name in systems:
            writer.writerow([codes[name], name])
