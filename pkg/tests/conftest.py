import time

import numpy as np
import pytest

import helpers
from bandplc.generator import GeneratorConfig, build_generator
from bandplc.training import TrainingConfig, train_loop


@pytest.fixture(scope="session")
def speech_corpus(tmp_path_factory):
    return helpers.write_speech_corpus(tmp_path_factory.mktemp("speech_corpus"))


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory):
    return helpers.write_overfit_corpus(tmp_path_factory.mktemp("overfit_corpus"))


@pytest.fixture(scope="session")
def toy_model():
    model = build_generator(GeneratorConfig.toy(), seed=0)
    model.eval()
    return model


@pytest.fixture(scope="session")
def overfit_run(overfit_corpus, tmp_path_factory):
    """One shared 200-step toy overfit (the expensive convergence fixture).

    The short-run learning rate is raised above the long-run default so 200
    steps move the model appreciably.
    """
    out_dir = tmp_path_factory.mktemp("overfit_run")
    config = TrainingConfig(
        data_dir=str(overfit_corpus), out_dir=str(out_dir), batch_size=4,
        segment_seconds=1.0, total_steps=200, valid_fraction=0.0, seed=7,
        g_lr=3e-3, checkpoint_every=100,
    )
    start = time.time()
    state = train_loop(config)
    elapsed = time.time() - start
    csv_path = out_dir / "loss_log.csv"
    rows = np.genfromtxt(csv_path, delimiter=",", names=True)
    speech = rows["plcpa"] + rows["mae"]
    return {
        "state": state,
        "config": config,
        "out_dir": out_dir,
        "csv_path": csv_path,
        "elapsed_seconds": elapsed,
        "speech_loss": speech,
    }
