import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 32x32 three-modality fixture on disk."""
    from mmsplat import io
    from mmsplat.scene import standard_modalities
    from mmsplat.synth import SyntheticSceneSpec, generate

    path = tmp_path_factory.mktemp("small_ds")
    spec = SyntheticSceneSpec(seed=3, width=32, height=32, n_objects=3, min_size=0.25,
                              max_size=0.5)
    io.save_dataset(generate(spec), path, standard_modalities())
    return path


@pytest.fixture(scope="session")
def standard_dataset(tmp_path_factory):
    """The 128x128 benchmark fixture on disk."""
    from mmsplat import io
    from mmsplat.scene import standard_modalities
    from mmsplat.synth import generate, standard_fixture_spec

    path = tmp_path_factory.mktemp("standard_ds")
    io.save_dataset(generate(standard_fixture_spec(0)), path, standard_modalities())
    return path


@pytest.fixture
def tiny_config():
    """A config that trains in about a second on ``small_dataset``."""
    from mmsplat.config import TrainConfig

    return TrainConfig.from_dict({
        "iterations": 30, "n_init": 60, "densify_start": 5, "densify_stop": 20,
        "log_every": 5, "densify": {"interval": 10, "grad_threshold": 0.002,
                                    "decomp_threshold": 0.002},
    })


ROOT = Path(__file__).resolve().parent.parent


class RunCache:
    """Trains each distinct config once per session; runs are deterministic."""

    def __init__(self, dataset):
        self.dataset = dataset
        self.runs = {}

    def get(self, cfg):
        import json
        key = json.dumps(cfg.to_dict(), sort_keys=True)
        if key not in self.runs:
            from mmsplat.train import train
            self.runs[key] = train(cfg, self.dataset)
        return self.runs[key]


@pytest.fixture(scope="session")
def ablation_rows():
    from mmsplat.config import load_matrix
    return load_matrix(ROOT / "configs" / "ablation.yaml")


@pytest.fixture(scope="session")
def fixture_runs(standard_dataset):
    return RunCache(standard_dataset)
