import pytest

from mindctl import HyperParams, TrainingSchedule, build, train
from mindctl.dataset import split

from helpers import make_toy_samples


@pytest.fixture(scope="session")
def toy_split():
    return split(make_toy_samples(), 3)


@pytest.fixture(scope="session")
def toy_model(toy_split):
    """A small model fitted to the separable toy. Session-scoped: several
    suites reuse it for inference-level checks."""
    hp = HyperParams(l2=0.0, lr=0.01, width=16, layers=7, batches=3)
    schedule = TrainingSchedule(max_epochs=30, patience=30, eval_every=1,
                                bptt_window=100, seed=1)
    trained, _ = train(build(hp, seed=1), toy_split, hp, schedule)
    return trained


@pytest.fixture(scope="session")
def five_class_model():
    """A model fitted to a 5-class toy so inference covers every label."""
    samples = make_toy_samples(n=400, seed=17, n_classes=5)
    splits = split(samples, 3)
    hp = HyperParams(l2=0.0, lr=0.01, width=16, layers=7, batches=3)
    schedule = TrainingSchedule(max_epochs=60, patience=60, eval_every=1,
                                bptt_window=100, seed=2)
    trained, _ = train(build(hp, seed=2), splits, hp, schedule)
    return trained
