import numpy as np
import pytest

from src.config import TrainConfig
from src.model.core.corpus import DEFAULT_STOPWORDS, Corpus, Vocabulary, attribute_labels, generate_synthetic_corpus
from src.model.core.network import MSANNetwork
from src.model.core.storage import FileStorage
from src.model.core.training import train


@pytest.fixture(scope="module")
def overfit_corpus():
    return generate_synthetic_corpus(5, 8, {"frames": 8, "clips": 8, "flow": 8}, seed=0)


@pytest.fixture(scope="module")
def overfit_checkpoint(overfit_corpus):
    config = TrainConfig.preset(
        "synthetic", max_epochs=300, patience=None, dropout=0.0, attribute_count=5, max_caption_len=8,
    )
    return train(overfit_corpus, Corpus(), config)


def test_overfit_attributes_cover_every_content_word(overfit_corpus, overfit_checkpoint):
    content = {token for caption in overfit_corpus.captions() for token in caption} - set(DEFAULT_STOPWORDS)

    assert set(overfit_checkpoint.attributes.words) == content


def test_overfit_reaches_a_small_caption_loss(overfit_corpus, overfit_checkpoint):
    network = MSANNetwork.from_checkpoint(overfit_checkpoint)
    vocab = overfit_checkpoint.vocab

    losses = []
    for record in overfit_corpus:
        labels = attribute_labels(record, overfit_checkpoint.attributes)
        _, loss2 = network.joint_loss(record, labels, vocab.encode(record.captions[0]))
        losses.append(loss2.item())

    assert np.mean(losses) < 0.1


def test_overfit_greedy_reproduces_the_training_captions(overfit_corpus, overfit_checkpoint):
    network = MSANNetwork.from_checkpoint(overfit_checkpoint)

    for record in overfit_corpus:
        decoded = overfit_checkpoint.vocab.decode(network.greedy(record))
        assert tuple(decoded) == record.captions[0]


def test_checkpoint_reload_gives_identical_captions(overfit_corpus, overfit_checkpoint, tmp_path):
    storage = FileStorage()
    path = str(tmp_path / "overfit.ckpt")
    storage.save_checkpoint(overfit_checkpoint, path)

    original = MSANNetwork.from_checkpoint(overfit_checkpoint)
    reloaded = MSANNetwork.from_checkpoint(storage.load_checkpoint(path))

    for record in overfit_corpus:
        assert original.caption(record, beam=3) == reloaded.caption(record, beam=3)


def test_training_vocabulary_comes_from_the_training_split(overfit_corpus, overfit_checkpoint):
    assert overfit_checkpoint.vocab == Vocabulary.build(overfit_corpus.captions())
