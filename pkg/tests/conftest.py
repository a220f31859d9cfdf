import numpy as np
import pytest

from leanpremise.corpus import Corpus, Premise
from leanpremise.encoding import EncoderBundle
from leanpremise.model import EncoderConfig, init_params
from leanpremise.tokenizer import TokenizerConfig, train_tokenizer

TOY_TEXTS = [
    "<VAR> n m : Nat <GOAL> n + m = m + n",
    "<VAR> a : G <VAR> b : G <GOAL> a * b = b * a",
    "<GOAL> True",
    "foo bar baz qux quux corge",
    "alpha beta gamma delta",
    "Nat succ zero one add mul comm assoc",
]


@pytest.fixture(scope="session")
def toy_vocab():
    return train_tokenizer(TOY_TEXTS * 3, TokenizerConfig(vocab_size=160, min_frequency=1))


@pytest.fixture(scope="session")
def tiny_config(toy_vocab):
    return EncoderConfig(
        vocab_size=len(toy_vocab),
        n_layers=2,
        n_heads=2,
        hidden=16,
        intermediate=32,
        max_positions=48,
        dropout=0.0,
        seed=11,
        dtype="float64",
    )


@pytest.fixture(scope="session")
def tiny_bundle(toy_vocab, tiny_config):
    return EncoderBundle(
        params=init_params(tiny_config), config=tiny_config, vocab=toy_vocab
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_toy_corpus(n=12, modules=3):
    premises = [
        Premise(
            id=i,
            name=f"Toy.p{i}",
            module=f"Toy.Mod{i % modules}",
            args=(f"h : P{i}",) if i % 3 else (),
            goal=f"G{i} holds",
        )
        for i in range(n)
    ]
    return Corpus(premises=premises)


@pytest.fixture()
def toy_corpus():
    return make_toy_corpus()
