import numpy as np
import pytest

from mvsumm.corpus import Conversation, Utterance


@pytest.fixture
def mini_corpus() -> list[Conversation]:
    return [
        Conversation(
            "breakfast",
            (
                Utterance("Ann", "are you up yet"),
                Utterance("Ben", "just about, give me ten minutes"),
                Utterance("Ann", "ok, meet me at the diner"),
                Utterance("Ben", "sure, the usual table"),
            ),
            "Ann and Ben will meet at the diner.",
        ),
        Conversation(
            "homework",
            (
                Utterance("Cleo", "did you finish problem three"),
                Utterance("Dmitri", "not yet, the integral is ugly"),
                Utterance("Cleo", "substitute first, then it splits"),
            ),
            "Cleo helps Dmitri with problem three.",
        ),
        Conversation(
            "garage",
            (
                Utterance("Ed", "the car is making that noise again"),
                Utterance("Fay", "same as last time?"),
                Utterance("Ed", "worse. it rattles at idle"),
                Utterance("Fay", "bring it over on saturday"),
                Utterance("Ed", "will do, thanks"),
            ),
            "Ed will bring the rattling car to Fay on Saturday.",
        ),
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
