"""Acceptance suite: ten pinned criteria, one test (and one printed line) each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
pass lines alongside pytest's own verdicts.
"""

import filecmp
import math
import random
import time
from collections import Counter

import pytest
import torch

from detoxtst import backbone as bb
from detoxtst import baselines, cli, corpus, evaluation, methods, toydata
from detoxtst.backbone import tokenize
from detoxtst.corpus import CorpusSplit


def report(criterion, detail):
    print(f"[PASS] criterion {criterion}: {detail}")


def test_criterion_01_gradient_reversal_contract(small_model, small_batch):
    start = time.monotonic()
    model = small_model
    enc_names = [n for n in model.PARAM_NAMES if n.startswith("enc_") or n == "emb"]

    x = torch.randn(3, 5, dtype=torch.float64)
    assert torch.equal(methods.grad_reverse(x, 1.3), x), "forward must be bit-identical"

    model.zero_grad()
    methods.classification_term(model, small_batch, "mt_cls_ip").backward()
    base = {n: model.params[n].grad.clone() for n in enc_names}

    for lam in (0.0, 0.5, 1.0, 2.0):
        model.zero_grad()
        methods.classification_term(model, small_batch, "mt_cls_gr_ip", lam=lam).backward()
        for n in enc_names:
            got = model.params[n].grad
            want = -lam * base[n]
            denom = torch.clamp(want.abs(), min=1e-30)
            mask = want != 0
            assert torch.all(((got - want).abs() / denom)[mask] <= 1e-6), (lam, n)
            assert torch.all(got[~mask] == 0), (lam, n)
    model.zero_grad()
    elapsed = time.monotonic() - start
    assert elapsed < 10
    report(1, f"reversed encoder grads = -lambda x unreversed for lambda in {{0,0.5,1,2}} ({elapsed:.1f}s)")


def test_criterion_02_loss_oracles():
    start = time.monotonic()
    rng = random.Random(202)
    # Eq. 1 / Eq. 6 form: token-level -sum log p over a 4-token vocabulary
    for _ in range(100):
        T = rng.randint(1, 6)
        rows, target = [], []
        for _ in range(T):
            raw = [rng.random() + 1e-3 for _ in range(4)]
            s = sum(raw)
            rows.append([x / s for x in raw])
            target.append(rng.randint(1, 3))
        expected = -sum(math.log(row[t]) for row, t in zip(rows, target))
        logits = torch.log(torch.tensor(rows, dtype=torch.float64))
        assert abs(float(methods.seq2seq_loss(logits, target)) - expected) <= 1e-9
        assert abs(float(methods.reconstruction_loss(logits, target)) - expected) <= 1e-9
    # Eqs. 2/4/5 form: batch-sum binary cross-entropy
    for _ in range(100):
        n = rng.randint(1, 8)
        probs = [min(max(rng.random(), 1e-6), 1 - 1e-6) for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        expected = -sum(t * math.log(p) + (1 - t) * math.log(1 - p) for p, t in zip(probs, labels))
        assert abs(float(methods.binary_cls_loss(probs, labels)) - expected) <= 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 5
    report(2, f"seq2seq/reconstruction and classification losses match brute-force sums on 100 random instances ({elapsed:.1f}s)")


def test_criterion_03_finite_difference_suite(small_model, small_batch):
    start = time.monotonic()
    specs = {
        "seq2seq": methods.MethodConfig(method="seq2seq", dropout=0.0),
        "kt": methods.MethodConfig(method="kt", dropout=0.0),
        "mt_cls_ip": methods.MethodConfig(method="mt_cls_ip", aux_weight=1.0, dropout=0.0),
        "mt_cls_gr_ip": methods.MethodConfig(method="mt_cls_gr_ip", aux_weight=1.0, lam=1.0, dropout=0.0),
        "mt_cls_op": methods.MethodConfig(method="mt_cls_op", aux_weight=1.0, dropout=0.0),
        "del_recon": methods.MethodConfig(method="del_recon", dropout=0.0),
    }
    errs = {}
    for name, cfg in specs.items():
        errs[name] = bb.finite_diff_check(small_model, small_batch, cfg, eps=1e-4)
        assert errs[name] <= 1e-3, (name, errs[name])
    elapsed = time.monotonic() - start
    assert elapsed < 120
    worst = max(errs.values())
    report(3, f"all six method losses pass gradient checking, worst relative error {worst:.2e} ({elapsed:.1f}s)")


def _toy_outputs(model, test):
    return [bb.detoxify_text(model, p.toxic) for p in test]


def test_criterion_04_toy_end_to_end(toy_split, toy_aux_split, toy_classifier):
    from conftest import TOY_TRAIN_KW

    start = time.monotonic()
    assert toy_classifier.dev_accuracy >= 95.0

    sources = [p.toxic for p in toy_split.test]
    scores = {}
    for method in methods.METHODS:
        cfg = methods.MethodConfig(method=method, seed=0, **TOY_TRAIN_KW)
        if method == "kt":
            model = methods.train_kt(toy_aux_split, toy_split, cfg)
        elif method == "del_recon":
            model = methods.train_del_recon(toy_split, toy_classifier, cfg)
        else:
            model = methods.train_method(toy_split, cfg)
        outputs = _toy_outputs(model, toy_split.test)
        acc = evaluation.detox_accuracy(toy_classifier, outputs)
        bleu = evaluation.bleu(outputs, sources)
        scores[method] = (acc, bleu)
        assert acc >= 90.0, (method, acc)
        assert bleu >= 30.0, (method, bleu)
    elapsed = time.monotonic() - start
    assert elapsed < 600
    summary = ", ".join(f"{m} ACC {a:.0f}/BLEU {b:.0f}" for m, (a, b) in scores.items())
    report(4, f"classifier dev acc {toy_classifier.dev_accuracy:.0f}%; {summary} ({elapsed:.0f}s)")


def test_criterion_05_knowledge_transfer_staging(tmp_path, toy_split, toy_aux_split):
    cfg = methods.MethodConfig(method="kt", epochs=1, lr=5e-3, optimizer="adam", l2=0.0, seed=0)
    zero = methods.MethodConfig(**{**methods._cfg_dict(cfg), "epochs": 0})
    model = methods.train_kt(toy_aux_split, toy_split, cfg, stage2_cfg=zero, checkpoint_dir=str(tmp_path))
    stage1 = bb.load_model(tmp_path / "kt_stage1.bin")
    stage2 = bb.load_model(tmp_path / "kt_stage2.bin")
    assert model.weights_equal(stage1)
    assert model.weights_equal(stage2)
    report(5, "stage-2 init is bit-identical to stage-1 weights; zero stage-2 epochs returns stage-1 exactly")


def test_criterion_06_del_recon_filtering(toy_split, tmp_path):
    import json

    oracle = evaluation.LexiconOracleClassifier(toydata.TOY_TOXIC_LEXICON, p_hit=0.9, p_miss=0.1)
    cfg = methods.MethodConfig(method="del_recon", threshold=0.5, epochs=0, seed=0)
    cache = tmp_path / "cache.jsonl"
    methods.train_del_recon(toy_split, oracle, cfg, cache_path=str(cache))

    audited = 0
    pairs = {p.id: p for p in toy_split.train}
    for line in cache.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        pair = pairs[row["id"]]
        tokens = tokenize(pair.toxic)
        scores = methods.compute_attributions(oracle, tokens)
        expected_kept = [t for t, s in zip(tokens, scores) if s <= 0.5]
        expected_deleted = [t for t, s in zip(tokens, scores) if s > 0.5]
        assert row["toxic"].split() == expected_kept  # survivors in original order
        assert row["deleted_tokens"] == expected_deleted
        for tok in expected_deleted:  # full string-scan audit
            assert tok not in row["toxic"].split()
        audited += 1
    assert audited == len(toy_split.train)
    report(6, f"oracle-scored tokens > 0.5 absent and <= 0.5 preserved in order across all {audited} cached rows")


def test_criterion_07_metric_identities():
    refs = ["the cat sat on the mat", "a calm and quiet day"]
    assert evaluation.bleu(refs, refs) == pytest.approx(100.0, abs=1e-9)

    # exp(log V) is 1 ulp off the integer for V=10 and V=100; pinned at rel=1e-15
    for v in (2, 10, 100):
        ppl = evaluation.perplexity(evaluation.UniformLM(v), ["some words here"])
        assert ppl == pytest.approx(v, rel=1e-15)

    emb = evaluation.HashedBagEmbedder()
    for t in ("one two three", "<num> tokens !"):
        assert abs(evaluation.embedding_similarity(emb, [t], [t]) - 100.0) <= 1e-6

    oracle = evaluation.LexiconOracleClassifier({"bad"})
    cases = [
        (["ok", "ok", "ok", "ok"], 100.0),
        (["bad", "ok", "ok", "ok"], 75.0),
        (["bad", "bad", "ok", "ok"], 50.0),
        (["bad", "bad", "bad", "bad"], 0.0),
    ]
    for outputs, want in cases:
        assert evaluation.detox_accuracy(oracle, outputs) == want

    from test_evaluation import bleu_oracle

    rng = random.Random(77)
    words = ["the", "cat", "sat", "dog", "ran", "far", "blue", "sky"]
    for _ in range(20):
        n = rng.randint(1, 6)
        cands = [" ".join(rng.choices(words, k=rng.randint(1, 9))) for _ in range(n)]
        refs = [" ".join(rng.choices(words, k=rng.randint(1, 9))) for _ in range(n)]
        assert evaluation.bleu(cands, refs) == pytest.approx(bleu_oracle(cands, refs), rel=1e-9, abs=1e-12)
    report(7, "BLEU/PPL/CS/ACC identities hold; 20 random corpora match the brute-force BLEU oracle")


def test_criterion_08_delete_baseline():
    lex = baselines.ToxicLexicon(["fucking", "fuck", "shit", "ass", "idiot", "stupid", "god awful"])

    rng = random.Random(808)
    alphabet = ["fuck", "shit", "ass", "assemble", "great", "point", "god", "awful", "a", ".", "Stupid"]
    for _ in range(1000):
        text = " ".join(rng.choices(alphabet, k=rng.randint(0, 12)))
        once = baselines.delete_lexicon(text, lex)
        assert baselines.delete_lexicon(once, lex) == once

    assert baselines.delete_lexicon("please assemble the class", lex) == "please assemble the class"

    goldens = [
        ("thats a great fucking point .", "thats a great point ."),
        ("god awful weather", "weather"),
        ("and telling nato to fuck off .", "and telling nato to off ."),
        ("you are a veritable idiot !", "you are a veritable !"),
        ("what bullshit stupid take", "what bullshit take"),
    ]
    for text, want in goldens:
        assert baselines.delete_lexicon(text, lex) == want, text
    report(8, "delete baseline idempotent on 1000 fuzzed strings, whole-token safe, golden fixtures match")


def _run_toy_pipeline(root):
    root.mkdir(parents=True, exist_ok=True)
    split_dir = root / "split"
    corpus.write_split(toydata.make_toy_split(seed=0, sizes=(60, 10, 10)), split_dir)
    train_dir = root / "train"
    cli.main(["train", "--split-dir", str(split_dir), "--method", "seq2seq", "--seed", "0",
              "--epochs", "2", "--lr", "5e-3", "--optimizer", "adam", "--l2", "0",
              "--out", str(train_dir)])
    test = corpus.load_split(split_dir).test
    inp = root / "test_sources.txt"
    inp.write_text("\n".join(p.toxic for p in test) + "\n", encoding="utf-8")
    outs = root / "outputs.txt"
    cli.main(["detoxify", "--model", str(train_dir / "model.bin"), "--input", str(inp),
              "--out", str(outs)])
    eval_dir = root / "eval"
    cli.main(["evaluate", "--outputs", f"model={outs}", "--split-dir", str(split_dir),
              "--seed", "0", "--out", str(eval_dir)])
    return train_dir / "model.bin", outs, eval_dir / "report.json", eval_dir / "report.md"


def test_criterion_09_pipeline_determinism(tmp_path, capsys):
    a = _run_toy_pipeline(tmp_path / "run_a")
    b = _run_toy_pipeline(tmp_path / "run_b")
    capsys.readouterr()
    for pa, pb in zip(a, b):
        assert filecmp.cmp(pa, pb, shallow=False), pa.name
    report(9, "two seeded pipeline runs produce byte-identical model, outputs, and reports")


def test_criterion_10_w_zero_equivalence(toy_split):
    small = CorpusSplit(train=toy_split.train[:12], dev=[], test=[], seed=0)
    base_cfg = methods.MethodConfig(method="seq2seq", epochs=2, lr=1e-3, optimizer="sgd",
                                    l2=0.01, dropout=0.1, seed=9)
    base = methods.train_method(small, base_cfg)
    for variant in ("mt_cls_ip", "mt_cls_gr_ip", "mt_cls_op"):
        var_cfg = methods.MethodConfig(**{**methods._cfg_dict(base_cfg), "method": variant,
                                          "aux_weight": 0.0})
        model = methods.train_method(small, var_cfg)
        for n in base.PARAM_NAMES:
            assert torch.equal(base.params[n].data, model.params[n].data), (variant, n)
    report(10, "all multitask variants with aux weight 0 match the seq2seq baseline bit-exactly under plain SGD")
