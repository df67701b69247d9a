import pytest

from detoxtst import evaluation, methods, toydata

TOY_TRAIN_KW = dict(epochs=20, lr=5e-3, optimizer="adam", dropout=0.1, batch_size=3, l2=0.0)


@pytest.fixture(scope="session")
def toy_split():
    return toydata.make_toy_split(seed=0)


@pytest.fixture(scope="session")
def toy_aux_split():
    return toydata.make_toy_aux_split(seed=1)


@pytest.fixture(scope="session")
def toy_classifier(toy_split):
    return evaluation.train_toxicity_classifier(toy_split, evaluation.ClassifierConfig(seed=0))


@pytest.fixture(scope="session")
def small_model(toy_split):
    """Untrained micro backbone over a slice of the toy corpus, dropout off."""
    cfg = methods.MethodConfig(seed=3, dropout=0.0)
    return methods.make_micro_backbone(toy_split.train[:20], cfg)


@pytest.fixture(scope="session")
def small_batch(toy_split, small_model):
    return methods.encode_pairs(toy_split.train[:3], small_model.vocab, small_model.config.max_len)
