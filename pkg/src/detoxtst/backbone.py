"""Tokenizer, vocabulary, and the micro encoder-decoder backbone.

The micro backbone is a single-layer tanh-RNN encoder and decoder with one
additive-attention step per decoder position, small enough for exhaustive
finite-difference gradient checks. Everything runs in float64 on CPU for
bit-reproducibility. External pretrained models plug in behind the
PretrainedAdapter interface; metrics always operate on surface strings, never
on adapter-internal token ids.
"""

import hashlib
import json
import math
import os
import random
import string
from dataclasses import dataclass, asdict
from pathlib import Path

import torch

from .errors import (
    CorruptModelFile,
    NonFiniteLoss,
    SequenceTooLong,
    VocabMismatch,
)

PAD, BOS, EOS, UNK, NUM = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<num>")

_PUNCT = set(string.punctuation)


def tokenize(text):
    """Lowercase whitespace tokenization with leading/trailing punctuation split off.

    Placeholder tokens of the form <word> survive intact.
    """
    out = []
    for chunk in text.lower().split():
        if chunk.startswith("<") and chunk.endswith(">") and len(chunk) > 2:
            out.append(chunk)
            continue
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


class Vocab:
    """Bijective token<->id mapping with fixed special ids 0..4."""

    def __init__(self, tokens):
        self.itos = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def encode_text(self, text):
        return self.encode(tokenize(text))

    def checksum(self):
        h = hashlib.sha256()
        for t in self.itos:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def build_vocab(pairs, min_freq=1):
    """Vocabulary over both sides of the corpus, frequency-thresholded.

    Tokens are ordered by (frequency desc, token asc) after the specials.
    """
    from collections import Counter

    counts = Counter()
    for p in pairs:
        counts.update(tokenize(p.toxic))
        counts.update(tokenize(p.civil))
    kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass
class MicroConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden_dim: int = 64
    attention: bool = True
    max_len: int = 32
    seed: int = 0
    dropout: float = 0.1

    def __post_init__(self):
        if self.emb_dim < 1 or self.hidden_dim < 1 or self.vocab_size < 1:
            raise ValueError("all widths must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")


class PretrainedAdapter:
    """Interface for plugging in an external pretrained encoder-decoder.

    Implementations carry their own tokenizer and must provide:
    encode(text) -> hidden states, forward(src_text, tgt_prefix_text) -> logits,
    generate(src_text, max_len) -> text, finetune_step(batch, lr) -> loss.
    """

    def encode(self, text):
        raise NotImplementedError

    def forward(self, src_text, tgt_prefix_text):
        raise NotImplementedError

    def generate(self, src_text, max_len):
        raise NotImplementedError

    def finetune_step(self, batch, lr):
        raise NotImplementedError


def adapter_dir():
    """Directory with optional pretrained-adapter resources, or None if unset.

    Controlled by the DETOX_ADAPTER_DIR environment variable; the shipped stub
    resources are used whenever it is absent.
    """
    path = os.environ.get("DETOX_ADAPTER_DIR")
    return Path(path) if path else None


class MicroSeq2Seq:
    """Deterministic differentiable micro encoder-decoder over a Vocab."""

    PARAM_NAMES = (
        "emb",
        "enc_W_ih", "enc_W_hh", "enc_b",
        "dec_W_ih", "dec_W_hh", "dec_b",
        "att_W", "att_U", "att_v",
        "out_W", "out_b",
        "head_ip_w", "head_ip_b",
        "head_op_w", "head_op_b",
    )

    def __init__(self, config, vocab, init="uniform"):
        if config.vocab_size != len(vocab):
            raise ValueError("config.vocab_size must match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.training = False
        self._opt_state = {}
        gen = torch.Generator().manual_seed(config.seed)
        self.dropout_gen = torch.Generator().manual_seed(config.seed + 1)
        K, E, H = config.vocab_size, config.emb_dim, config.hidden_dim
        shapes = {
            "emb": (K, E),
            "enc_W_ih": (E, H), "enc_W_hh": (H, H), "enc_b": (H,),
            "dec_W_ih": (E, H), "dec_W_hh": (H, H), "dec_b": (H,),
            "att_W": (H, H), "att_U": (H, H), "att_v": (H,),
            "out_W": (2 * H, K), "out_b": (K,),
            "head_ip_w": (H,), "head_ip_b": (),
            "head_op_w": (H,), "head_op_b": (),
        }
        self.params = {}
        for name in self.PARAM_NAMES:
            shape = shapes[name]
            if init == "zeros" or name.endswith("_b") or name == "out_b":
                t = torch.zeros(shape, dtype=torch.float64)
            else:
                t = (torch.rand(shape, generator=gen, dtype=torch.float64) - 0.5) * 0.16
            t.requires_grad_(True)
            self.params[name] = t

    # -- mode control -------------------------------------------------------

    def train_mode(self, on=True):
        self.training = on

    def eval_mode(self):
        self.training = False

    def _dropout(self, x):
        p = self.config.dropout
        if not self.training or p <= 0:
            return x
        keep = (torch.rand(x.shape, generator=self.dropout_gen, dtype=torch.float64) >= p).to(x.dtype)
        return x * keep / (1.0 - p)

    # -- core computation ---------------------------------------------------

    def _check_len(self, n):
        if n > self.config.max_len:
            raise SequenceTooLong(f"sequence of length {n} exceeds max_len {self.config.max_len}")

    def encode_batch(self, src, mask):
        """src: (B,T) long; mask: (B,T) float64. Returns states (B,T,H), final (B,H)."""
        p = self.params
        B, T = src.shape
        self._check_len(T)
        H = self.config.hidden_dim
        emb = self._dropout(p["emb"][src])
        h = torch.zeros(B, H, dtype=torch.float64)
        states = []
        for t in range(T):
            m = mask[:, t : t + 1]
            h_new = torch.tanh(emb[:, t] @ p["enc_W_ih"] + h @ p["enc_W_hh"] + p["enc_b"])
            h = m * h_new + (1.0 - m) * h
            states.append(h_new * m)
        return torch.stack(states, dim=1), h

    def decode_batch(self, tgt_in, tgt_mask, enc_states, enc_mask, h0):
        """Teacher-forced decode. Returns logits (B,T,K) and decoder states (B,T,H)."""
        p = self.params
        B, T = tgt_in.shape
        self._check_len(T)
        emb = self._dropout(p["emb"][tgt_in])
        h = h0
        keys = enc_states @ p["att_U"]
        neg_inf = torch.full_like(enc_mask, -1e30)
        logits_steps, state_steps = [], []
        for t in range(T):
            m = tgt_mask[:, t : t + 1]
            h_new = torch.tanh(emb[:, t] @ p["dec_W_ih"] + h @ p["dec_W_hh"] + p["dec_b"])
            h = m * h_new + (1.0 - m) * h
            if self.config.attention:
                query = (h_new @ p["att_W"]).unsqueeze(1)
                scores = torch.tanh(keys + query) @ p["att_v"]
                scores = torch.where(enc_mask > 0, scores, neg_inf)
                alpha = torch.softmax(scores, dim=1)
                context = (alpha.unsqueeze(-1) * enc_states).sum(dim=1)
            else:
                context = (enc_states * enc_mask.unsqueeze(-1)).sum(dim=1) / enc_mask.sum(dim=1, keepdim=True)
            z = self._dropout(torch.cat([h_new, context], dim=-1))
            logits_steps.append(z @ p["out_W"] + p["out_b"])
            state_steps.append(h_new * m)
        return torch.stack(logits_steps, dim=1), torch.stack(state_steps, dim=1)

    def parameters(self):
        return [self.params[n] for n in self.PARAM_NAMES]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def clone(self):
        m = MicroSeq2Seq(self.config, self.vocab, init="zeros")
        for name in self.PARAM_NAMES:
            m.params[name].data.copy_(self.params[name].data)
        m.dropout_gen.set_state(self.dropout_gen.get_state())
        return m

    def weights_equal(self, other):
        return all(torch.equal(self.params[n].data, other.params[n].data) for n in self.PARAM_NAMES)


# -- batching helpers --------------------------------------------------------


def pad_batch(seqs):
    """Pad id lists with PAD. Returns (ids (B,T) long, mask (B,T) float64)."""
    T = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), T), PAD, dtype=torch.long)
    mask = torch.zeros(len(seqs), T, dtype=torch.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[i, : len(s)] = 1.0
    return ids, mask


def frame_source(ids):
    return list(ids) + [EOS]


def frame_target(ids):
    """Returns (decoder input, gold targets) with BOS/EOS framing."""
    return [BOS] + list(ids), list(ids) + [EOS]


def forward(model, src, tgt_prefix):
    """Logits for every position of tgt_prefix given src. Shapes: (|tgt_prefix|, K)."""
    src_ids, src_mask = pad_batch([list(src)])
    tgt_ids, tgt_mask = pad_batch([list(tgt_prefix)])
    enc_states, h = model.encode_batch(src_ids, src_mask)
    logits, _ = model.decode_batch(tgt_ids, tgt_mask, enc_states, src_mask, h)
    return logits[0]


def generate(model, src, max_len=None, mode="greedy"):
    """Greedy argmax decoding from BOS until EOS or max_len.

    Ties break to the lowest token id. Returns generated ids without BOS/EOS.
    """
    if mode != "greedy":
        raise ValueError(f"unsupported decode mode {mode!r}")
    if max_len is None:
        max_len = model.config.max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    was_training = model.training
    model.eval_mode()
    try:
        with torch.no_grad():
            src_ids, src_mask = pad_batch([list(src)])
            enc_states, h = model.encode_batch(src_ids, src_mask)
            out = []
            prev = BOS
            state = h
            p = model.params
            keys = enc_states @ p["att_U"]
            for _ in range(max_len):
                emb = p["emb"][torch.tensor([prev])]
                state = torch.tanh(emb @ p["dec_W_ih"] + state @ p["dec_W_hh"] + p["dec_b"])
                if model.config.attention:
                    query = (state @ p["att_W"]).unsqueeze(1)
                    scores = torch.tanh(keys + query) @ p["att_v"]
                    scores = torch.where(src_mask > 0, scores, torch.full_like(scores, -1e30))
                    alpha = torch.softmax(scores, dim=1)
                    context = (alpha.unsqueeze(-1) * enc_states).sum(dim=1)
                else:
                    context = (enc_states * src_mask.unsqueeze(-1)).sum(dim=1) / src_mask.sum(dim=1, keepdim=True)
                logits = torch.cat([state, context], dim=-1) @ p["out_W"] + p["out_b"]
                nxt = int(torch.argmax(logits[0]).item())
                if nxt == EOS:
                    break
                out.append(nxt)
                prev = nxt
            return out
    finally:
        model.train_mode(was_training)


def detoxify_text(model, text, max_len=None):
    """Surface-string inference: tokenize, greedy-decode, join survivors."""
    src = frame_source(model.vocab.encode_text(text))
    ids = generate(model, src, max_len=max_len)
    toks = [model.vocab.itos[i] for i in ids if i not in (PAD, BOS, EOS)]
    return " ".join(toks)


# -- optimization ------------------------------------------------------------


def train_step(model, batch, loss_fn, lr, l2=0.0, optimizer="sgd"):
    """One gradient update on the batch; returns the pre-update loss breakdown.

    loss_fn(model, batch) must return a LossBreakdown whose .total_tensor is a
    torch scalar attached to the model's parameters.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    model.zero_grad()
    breakdown = loss_fn(model, batch)
    total = breakdown.total_tensor
    if not torch.isfinite(total):
        raise NonFiniteLoss(f"loss diverged: {breakdown}")
    total.backward()
    with torch.no_grad():
        if optimizer == "sgd":
            for name in model.PARAM_NAMES:
                p = model.params[name]
                g = p.grad if p.grad is not None else torch.zeros_like(p)
                p.data.add_(-(lr) * (g + l2 * p.data))
        elif optimizer == "adam":
            b1, b2, eps = 0.9, 0.999, 1e-8
            for name in model.PARAM_NAMES:
                p = model.params[name]
                g = p.grad if p.grad is not None else torch.zeros_like(p)
                g = g + l2 * p.data
                st = model._opt_state.setdefault(
                    name, {"step": 0, "m": torch.zeros_like(p), "v": torch.zeros_like(p)}
                )
                st["step"] += 1
                st["m"].mul_(b1).add_(g, alpha=1 - b1)
                st["v"].mul_(b2).addcmul_(g, g, value=1 - b2)
                mhat = st["m"] / (1 - b1 ** st["step"])
                vhat = st["v"] / (1 - b2 ** st["step"])
                p.data.addcdiv_(mhat, vhat.sqrt() + eps, value=-lr)
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    return breakdown


def sgd_update(params, grads, lr, l2=0.0):
    """Plain gradient-descent update with decoupled-in-gradient L2 penalty."""
    with torch.no_grad():
        for p, g in zip(params, grads):
            p.data.add_(-(lr) * (g + l2 * p.data))


def _central_diff(model, fn, name, i, eps):
    flat = model.params[name].data.view(-1)
    orig = flat[i].item()
    with torch.no_grad():
        flat[i] = orig + eps
    lp = float(fn())
    with torch.no_grad():
        flat[i] = orig - eps
    lm = float(fn())
    with torch.no_grad():
        flat[i] = orig
    return (lp - lm) / (2 * eps)


def finite_diff_check(model, batch, loss_spec, eps=1e-4, coords_per_param=4, seed=0):
    """Compare analytic gradients to central differences on sampled coordinates.

    loss_spec is either a callable loss_fn(model, batch) or a MethodConfig.
    Dropout is disabled for the check. Gradient reversal flips the analytic
    gradient upstream of the classification head while leaving the forward
    value unchanged, so central differences cannot observe it directly; for
    the reversed variant the oracle differences the base and classification
    components separately and applies the defining -lambda scale to the
    upstream component. Relative error uses a small denominator floor so
    coordinates whose true gradient is below fd noise do not dominate.
    """
    was_training = model.training
    model.eval_mode()
    try:
        if callable(loss_spec):
            loss_fn = loss_spec
            expected_of = None
        else:
            from . import methods

            loss_fn = methods.make_loss_fn(loss_spec)
            if loss_spec.method in methods._AUX_FIELD and loss_spec.aux_weight > 0:
                variant = loss_spec.method
                w, lam = loss_spec.aux_weight, loss_spec.lam
                base_cfg = methods.MethodConfig(
                    **{**methods._cfg_dict(loss_spec), "method": "seq2seq", "aux_weight": 0.0}
                )
                base_fn = methods.make_loss_fn(base_cfg)
                head_params = ("head_ip_w", "head_ip_b") if variant != "mt_cls_op" else ("head_op_w", "head_op_b")

                def expected_of(name, i):
                    fd_base = _central_diff(
                        model, lambda: base_fn(model, batch).total_tensor.item(), name, i, eps
                    )
                    fd_aux = _central_diff(
                        model,
                        lambda: methods.classification_term(model, batch, variant, lam).item(),
                        name, i, eps,
                    )
                    scale = 1.0
                    if variant == "mt_cls_gr_ip" and name not in head_params:
                        scale = -lam
                    return fd_base + w * scale * fd_aux
            else:
                expected_of = None

        model.zero_grad()
        loss_fn(model, batch).total_tensor.backward()
        analytic = {
            n: (model.params[n].grad.clone() if model.params[n].grad is not None
                else torch.zeros_like(model.params[n]))
            for n in model.PARAM_NAMES
        }
        rng = random.Random(seed)
        max_err = 0.0
        for name in model.PARAM_NAMES:
            n_el = model.params[name].data.numel()
            idxs = rng.sample(range(n_el), min(coords_per_param, n_el))
            for i in idxs:
                if expected_of is not None:
                    fd = expected_of(name, i)
                else:
                    fd = _central_diff(
                        model, lambda: loss_fn(model, batch).total_tensor.item(), name, i, eps
                    )
                an = analytic[name].view(-1)[i].item()
                err = abs(fd - an) / max(abs(fd) + abs(an), 1e-4)
                max_err = max(max_err, err)
        return max_err
    finally:
        model.train_mode(was_training)


# -- serialization -----------------------------------------------------------

_MAGIC = b"DTOXMDL1"
FORMAT_VERSION = 1


def save_model(model, path):
    """Write config, vocab, and flat float64 weight arrays to a stable container."""
    meta = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "vocab_tokens": model.vocab.itos,
        "vocab_sha256": model.vocab.checksum(),
        "arrays": [{"name": n, "shape": list(model.params[n].shape)} for n in model.PARAM_NAMES],
    }
    blob = json.dumps(meta, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in model.PARAM_NAMES:
            fh.write(model.params[n].detach().numpy().astype("<f8").tobytes())


def load_model(path, expected_vocab=None):
    """Load a saved model; forward outputs are bit-identical to the saved model."""
    import numpy as np

    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise CorruptModelFile(f"{path}: bad magic")
            size = int.from_bytes(fh.read(8), "little")
            blob = fh.read(size)
            if len(blob) != size:
                raise CorruptModelFile(f"{path}: truncated header")
            meta = json.loads(blob.decode("utf-8"))
            if meta.get("format_version") != FORMAT_VERSION:
                raise CorruptModelFile(f"{path}: unsupported format version")
            vocab = Vocab(meta["vocab_tokens"][len(SPECIAL_TOKENS):])
            if vocab.checksum() != meta["vocab_sha256"]:
                raise CorruptModelFile(f"{path}: vocab checksum mismatch in file")
            if expected_vocab is not None and expected_vocab.checksum() != meta["vocab_sha256"]:
                raise VocabMismatch(f"{path}: model was saved with a different vocabulary")
            config = MicroConfig(**meta["config"])
            model = MicroSeq2Seq(config, vocab, init="zeros")
            for entry in meta["arrays"]:
                shape = tuple(entry["shape"])
                count = int(math.prod(shape)) if shape else 1
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise CorruptModelFile(f"{path}: truncated weights for {entry['name']}")
                arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
                model.params[entry["name"]].data.copy_(torch.from_numpy(arr.copy()))
            return model
    except (OSError, json.JSONDecodeError, UnicodeDecodeError, KeyError, ValueError) as e:
        raise CorruptModelFile(f"{path}: {e}") from e
