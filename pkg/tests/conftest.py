"""Shared fixtures.

The trained toy model is expensive (a few hundred SGD epochs), so it is
trained once per session through the real CLI path and shared by every test
that needs a realistic classifier.
"""

from __future__ import annotations

import numpy as np
import pytest

import dropforge as df
from dropforge.cli import dispatch

TOY_SEED = 3  # fixed training seed used by the whole acceptance protocol


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("toyrun")


@pytest.fixture(scope="session")
def toy_model_path(work_dir):
    path = work_dir / "toy.pnf"
    code = dispatch(["train-toy", "--out", str(path), "--seed", str(TOY_SEED)])
    assert code == 0
    return path


@pytest.fixture(scope="session")
def toy_model(toy_model_path):
    return df.load_model(str(toy_model_path))


@pytest.fixture(scope="session")
def digits_train():
    return df.load_toy_digits("train")


@pytest.fixture(scope="session")
def digits_test():
    return df.load_toy_digits("test")


@pytest.fixture(scope="session")
def benign_train_pool(toy_model, digits_train):
    """Indices of correctly-predicted train-split inputs."""
    pred = toy_model.predict_label_batch(digits_train.images)
    return [i for i in range(len(digits_train)) if pred[i] == digits_train.labels[i]]


@pytest.fixture(scope="session")
def benign_test_pool(toy_model, digits_test):
    pred = toy_model.predict_label_batch(digits_test.images)
    return [i for i in range(len(digits_test)) if pred[i] == digits_test.labels[i]]


@pytest.fixture(scope="session")
def fgsm_results(toy_model, digits_train, benign_train_pool):
    """FGSM at the shared 0.3 budget over the first 600 benign train seeds."""
    cfg = df.AttackConfig(method="fgsm", epsilon=0.3)
    return [df.run_attack(toy_model, digits_train.images[i],
                          int(digits_train.labels[i]), cfg, seed_index=i)
            for i in benign_train_pool[:600]]


@pytest.fixture(scope="session")
def fgsm_successes(fgsm_results):
    wins = [r for r in fgsm_results if r.success]
    assert len(wins) >= 200, "toy model must yield at least 200 successful attacks"
    return wins
