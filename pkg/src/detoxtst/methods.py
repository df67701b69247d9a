"""Training objectives and procedures: seq2seq baseline, knowledge transfer,
the three multitask classification variants (input-side, input-side behind
gradient reversal, output-side), and delete-and-reconstruct.

All losses are batch sums, so logged values match the defining equations; a
mean is only ever a reporting view, never in the gradient path.
"""

import json
import random
import time
from dataclasses import dataclass, field

import torch

from . import backbone as bb
from .errors import (
    EmptySequence,
    EmptySplit,
    MissingComponent,
    ShapeMismatch,
)

TOXIC, NON_TOXIC = 0, 1

METHODS = ("seq2seq", "kt", "mt_cls_ip", "mt_cls_gr_ip", "mt_cls_op", "del_recon")

_EPS = 1e-7


@dataclass
class LossBreakdown:
    seq2seq: float = None
    cls_ip: float = None
    cls_gr_ip: float = None
    cls_op: float = None
    reconstruction: float = None
    total: float = 0.0
    total_tensor: object = field(default=None, repr=False, compare=False)


@dataclass
class MethodConfig:
    method: str = "seq2seq"
    aux_weight: float = 1.0
    lam: float = 1.0
    threshold: float = 0.5
    epochs: int = 5
    lr: float = 1e-5
    batch_size: int = 3
    l2: float = 0.01
    dropout: float = 0.1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must lie in [0, 1]")
        if self.aux_weight < 0 or self.lam < 0:
            raise ValueError("aux_weight and lambda must be non-negative")


# -- elementary losses -------------------------------------------------------


def seq2seq_loss(logits, target):
    """Token cross-entropy, summed over non-PAD target positions."""
    if not torch.is_tensor(logits):
        logits = torch.as_tensor(logits, dtype=torch.float64)
    target = list(target)
    if logits.shape[0] != len(target):
        raise ShapeMismatch(f"{logits.shape[0]} logit rows vs {len(target)} targets")
    logp = torch.log_softmax(logits, dim=-1)
    loss = logits.new_zeros(())
    for t, tok in enumerate(target):
        if tok != bb.PAD:
            loss = loss - logp[t, tok]
    return loss


def reconstruction_loss(logits, civil_target):
    """Cross-entropy of the reconstruction against the civil sentence.

    Identical functional form to seq2seq_loss; the input side differs (the
    deletion-filtered toxic text).
    """
    return seq2seq_loss(logits, civil_target)


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.lam * grad_output, None


def grad_reverse(x, lam=1.0):
    """Identity forward; backward scales the incoming gradient by -lam."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return _GradReverse.apply(x, lam)


def binary_cls_loss(probs, labels):
    """Binary cross-entropy, summed over the batch.

    probs are the head's probability of class 1 (non-toxic); clamped to
    [eps, 1-eps] before the logs.
    """
    if not torch.is_tensor(probs):
        probs = torch.as_tensor(probs, dtype=torch.float64)
    labels = [getattr(l, "value", l) for l in labels]
    if probs.shape[0] != len(labels):
        raise ShapeMismatch(f"{probs.shape[0]} probs vs {len(labels)} labels")
    p = probs.clamp(_EPS, 1.0 - _EPS)
    t = torch.tensor(labels, dtype=torch.float64)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).sum()


def combined_loss(parts, variant, w):
    """Total = L_seq2seq + w * L_variant."""
    comp = getattr(parts, _AUX_FIELD[variant], None) if variant in _AUX_FIELD else None
    if variant in _AUX_FIELD and comp is None:
        raise MissingComponent(f"breakdown lacks the {variant} component")
    base = parts.seq2seq if parts.seq2seq is not None else parts.reconstruction
    if base is None:
        raise MissingComponent("breakdown lacks a base sequence loss")
    return base + (w * comp if variant in _AUX_FIELD else 0.0)


_AUX_FIELD = {
    "mt_cls_ip": "cls_ip",
    "mt_cls_gr_ip": "cls_gr_ip",
    "mt_cls_op": "cls_op",
}


# -- classification heads ----------------------------------------------------


def pool_states(states, mask):
    """Mean over valid positions. states: (B,T,H); mask: (B,T)."""
    return (states * mask.unsqueeze(-1)).sum(dim=1) / mask.sum(dim=1, keepdim=True)


def head_prob(model, pooled, head):
    """Sigmoid linear head on pooled states; returns P(class 1 = non-toxic)."""
    w = model.params[f"head_{head}_w"]
    b = model.params[f"head_{head}_b"]
    return torch.sigmoid(pooled @ w + b)


# -- combined loss computation ------------------------------------------------


def _batch_tensors(batch):
    srcs = [list(s) for s, _ in batch]
    tgt_in, gold = [], []
    for _, t in batch:
        ti, g = bb.frame_target(t)
        tgt_in.append(ti)
        gold.append(g)
    src_ids, src_mask = bb.pad_batch(srcs)
    tgt_ids, tgt_mask = bb.pad_batch(tgt_in)
    gold_ids, _ = bb.pad_batch(gold)
    return src_ids, src_mask, tgt_ids, tgt_mask, gold_ids


def _masked_ce(logits, gold_ids):
    logp = torch.log_softmax(logits, dim=-1)
    mask = (gold_ids != bb.PAD).to(logits.dtype)
    picked = logp.gather(-1, gold_ids.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum()


def classification_term(model, batch, variant, lam=1.0):
    """The auxiliary classification loss of one multitask variant, on its own."""
    src_ids, src_mask, tgt_ids, tgt_mask, gold_ids = _batch_tensors(batch)
    enc_states, h = model.encode_batch(src_ids, src_mask)
    if variant in ("mt_cls_ip", "mt_cls_gr_ip"):
        civil_srcs = [bb.frame_source(t) for _, t in batch]
        civ_ids, civ_mask = bb.pad_batch(civil_srcs)
        civ_states, _ = model.encode_batch(civ_ids, civ_mask)
        pooled = torch.cat([pool_states(enc_states, src_mask), pool_states(civ_states, civ_mask)], dim=0)
        if variant == "mt_cls_gr_ip":
            pooled = grad_reverse(pooled, lam)
        probs = head_prob(model, pooled, "ip")
        labels = [TOXIC] * len(batch) + [NON_TOXIC] * len(batch)
        return binary_cls_loss(probs, labels)
    if variant == "mt_cls_op":
        logits, dec_states = model.decode_batch(tgt_ids, tgt_mask, enc_states, src_mask, h)
        probs = head_prob(model, pool_states(dec_states, tgt_mask), "op")
        return binary_cls_loss(probs, [NON_TOXIC] * len(batch))
    raise ValueError(f"unknown variant {variant!r}")


def make_loss_fn(cfg):
    """Build loss_fn(model, batch) -> LossBreakdown for a MethodConfig.

    Batch items are (framed source ids, raw target ids). When aux_weight is 0
    the auxiliary branch is skipped entirely, so the computation (including
    the dropout RNG stream) is identical to the seq2seq baseline.
    """
    variant = cfg.method
    w = cfg.aux_weight
    lam = cfg.lam

    def loss_fn(model, batch):
        src_ids, src_mask, tgt_ids, tgt_mask, gold_ids = _batch_tensors(batch)
        enc_states, h = model.encode_batch(src_ids, src_mask)
        logits, dec_states = model.decode_batch(tgt_ids, tgt_mask, enc_states, src_mask, h)
        seq = _masked_ce(logits, gold_ids)

        breakdown = LossBreakdown()
        total = seq
        if variant == "del_recon":
            breakdown.reconstruction = float(seq.detach())
        else:
            breakdown.seq2seq = float(seq.detach())

        if variant in _AUX_FIELD and w > 0:
            if variant in ("mt_cls_ip", "mt_cls_gr_ip"):
                civil_srcs = [bb.frame_source(t) for _, t in batch]
                civ_ids, civ_mask = bb.pad_batch(civil_srcs)
                civ_states, _ = model.encode_batch(civ_ids, civ_mask)
                pooled = torch.cat(
                    [pool_states(enc_states, src_mask), pool_states(civ_states, civ_mask)], dim=0
                )
                if variant == "mt_cls_gr_ip":
                    pooled = grad_reverse(pooled, lam)
                probs = head_prob(model, pooled, "ip")
                labels = [TOXIC] * len(batch) + [NON_TOXIC] * len(batch)
                aux = binary_cls_loss(probs, labels)
            else:  # mt_cls_op: teacher-forced decoder states, target label non-toxic
                probs = head_prob(model, pool_states(dec_states, tgt_mask), "op")
                aux = binary_cls_loss(probs, [NON_TOXIC] * len(batch))
            setattr(breakdown, _AUX_FIELD[variant], float(aux.detach()))
            total = seq + w * aux

        breakdown.total = float(total.detach())
        breakdown.total_tensor = total
        return breakdown

    return loss_fn


# -- training procedures ------------------------------------------------------


def encode_pairs(pairs, vocab, max_len):
    """(framed source ids, raw target ids) per pair, truncated to fit max_len."""
    items = []
    budget = max_len - 2
    for p in pairs:
        src = vocab.encode_text(p.toxic)[:budget]
        tgt = vocab.encode_text(p.civil)[:budget]
        items.append((bb.frame_source(src), tgt))
    return items


def make_micro_backbone(pairs, cfg, min_freq=1, emb_dim=32, hidden_dim=64, max_len=32):
    vocab = bb.build_vocab(pairs, min_freq=min_freq)
    config = bb.MicroConfig(
        vocab_size=len(vocab),
        emb_dim=emb_dim,
        hidden_dim=hidden_dim,
        max_len=max_len,
        seed=cfg.seed,
        dropout=cfg.dropout,
    )
    return bb.MicroSeq2Seq(config, vocab)


def _run_epochs(model, items, cfg, loss_fn):
    log = []
    rng = random.Random((cfg.seed << 16) ^ 0x5EED)
    model.train_mode(True)
    for epoch in range(cfg.epochs):
        order = list(range(len(items)))
        rng.shuffle(order)
        sums = {}
        n_batches = 0
        t0 = time.perf_counter()
        for start in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[start : start + cfg.batch_size]]
            breakdown = bb.train_step(model, batch, loss_fn, cfg.lr, cfg.l2, cfg.optimizer)
            n_batches += 1
            for name in ("seq2seq", "cls_ip", "cls_gr_ip", "cls_op", "reconstruction", "total"):
                v = getattr(breakdown, name)
                if v is not None:
                    sums[name] = sums.get(name, 0.0) + v
        row = {"epoch": epoch}
        row.update({k: v / max(n_batches, 1) for k, v in sums.items()})
        row["wall_seconds"] = time.perf_counter() - t0
        log.append(row)
    model.eval_mode()
    return log


def train_method(split, cfg, model=None):
    """Train one detox method on split.train; returns the model with .loss_log."""
    if not split.train:
        raise EmptySplit("split.train is empty")
    if model is None:
        model = make_micro_backbone(split.train, cfg)
    items = encode_pairs(split.train, model.vocab, model.config.max_len)
    loss_fn = make_loss_fn(cfg)
    model.loss_log = _run_epochs(model, items, cfg, loss_fn)
    return model


def train_kt(aux_split, detox_split, cfg, stage2_cfg=None, model=None, checkpoint_dir=None):
    """Two-stage knowledge transfer: fine-tune on the auxiliary style-transfer
    corpus, then continue from those weights on the detox corpus."""
    if not aux_split.train or not detox_split.train:
        raise EmptySplit("both splits must have non-empty train portions")
    stage2_cfg = stage2_cfg or cfg
    if model is None:
        model = make_micro_backbone(aux_split.train + detox_split.train, cfg)

    stage1_cfg = MethodConfig(**{**_cfg_dict(cfg), "method": "seq2seq"})
    model = train_method(aux_split, stage1_cfg, model=model)
    stage1_log = model.loss_log
    if checkpoint_dir is not None:
        bb.save_model(model, f"{checkpoint_dir}/kt_stage1.bin")

    stage2 = model.clone()
    stage2_run_cfg = MethodConfig(**{**_cfg_dict(stage2_cfg), "method": "seq2seq"})
    if stage2_run_cfg.epochs > 0:
        items = encode_pairs(detox_split.train, stage2.vocab, stage2.config.max_len)
        stage2.loss_log = _run_epochs(stage2, items, stage2_run_cfg, make_loss_fn(stage2_run_cfg))
    else:
        stage2.loss_log = []
    stage2.kt_stage1_log = stage1_log
    if checkpoint_dir is not None:
        bb.save_model(stage2, f"{checkpoint_dir}/kt_stage2.bin")
    return stage2


def _cfg_dict(cfg):
    return {
        "method": cfg.method, "aux_weight": cfg.aux_weight, "lam": cfg.lam,
        "threshold": cfg.threshold, "epochs": cfg.epochs, "lr": cfg.lr,
        "batch_size": cfg.batch_size, "l2": cfg.l2, "dropout": cfg.dropout,
        "optimizer": cfg.optimizer, "seed": cfg.seed,
    }


# -- delete and reconstruct ---------------------------------------------------


def compute_attributions(classifier, tokens):
    """Leave-one-out occlusion attribution on the classifier's toxicity probability.

    score_i = clip(p_toxic(full) - p_toxic(without token i), 0, 1).
    """
    tokens = list(tokens)
    if not tokens:
        raise EmptySequence("cannot attribute an empty token sequence")
    p_full = classifier.p_toxic(" ".join(tokens))
    scores = []
    for i in range(len(tokens)):
        reduced = tokens[:i] + tokens[i + 1 :]
        p_wo = classifier.p_toxic(" ".join(reduced))
        scores.append(min(max(p_full - p_wo, 0.0), 1.0))
    return scores


def delete_by_attribution(tokens, attr, tau):
    """Remove exactly the tokens with attribution strictly greater than tau."""
    tokens = list(tokens)
    if len(tokens) != len(attr):
        raise ShapeMismatch(f"{len(tokens)} tokens vs {len(attr)} attributions")
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    return [t for t, a in zip(tokens, attr) if a <= tau]


def build_del_recon_corpus(pairs, classifier, tau):
    """Attribution-filter the toxic side of every pair.

    Returns (filtered_rows, warnings) where each row records the surviving
    input tokens, the deleted tokens, and the original fields.
    """
    rows = []
    warnings = []
    for p in pairs:
        toks = bb.tokenize(p.toxic)
        attr = compute_attributions(classifier, toks)
        kept = delete_by_attribution(toks, attr, tau)
        deleted = [t for t, a in zip(toks, attr) if a > tau]
        if not kept:
            kept = ["<unk>"]
            warnings.append(f"pair {p.id}: all tokens deleted; replaced with <unk>")
        rows.append(
            {
                "id": p.id,
                "lang": p.lang,
                "toxic": " ".join(kept),
                "civil": p.civil,
                "deleted_tokens": deleted,
            }
        )
    return rows, warnings


def train_del_recon(split, classifier, cfg, model=None, cache_path=None):
    """Delete-and-reconstruct: filter toxic inputs by attribution, then train
    seq2seq reconstruction toward the civil side."""
    if not split.train:
        raise EmptySplit("split.train is empty")
    rows, warnings = build_del_recon_corpus(split.train, classifier, cfg.threshold)
    if cache_path is not None:
        with open(cache_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False))
                fh.write("\n")
    if model is None:
        model = make_micro_backbone(split.train, cfg)
    budget = model.config.max_len - 2
    items = []
    for row in rows:
        src = model.vocab.encode_text(row["toxic"])[:budget]
        tgt = model.vocab.encode_text(row["civil"])[:budget]
        items.append((bb.frame_source(src), tgt))
    run_cfg = MethodConfig(**{**_cfg_dict(cfg), "method": "del_recon"})
    model.loss_log = _run_epochs(model, items, run_cfg, make_loss_fn(run_cfg))
    model.del_recon_warnings = warnings
    return model
