import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # scalar_oracle importable

from stimfuzz import fixtures
from stimfuzz.images import save_pgm
from stimfuzz.nef import save_model


@pytest.fixture(scope="session")
def retinal_model():
    return fixtures.build_retinal_tiny(seed=1)


@pytest.fixture(scope="session")
def cortical_model():
    return fixtures.build_cortical_tiny(seed=1)


@pytest.fixture(scope="session")
def seed_set():
    return fixtures.seed_images()


@pytest.fixture(scope="session")
def profile_set(seed_set):
    return fixtures.profile_images(seed_set)


@pytest.fixture()
def campaign_workspace(tmp_path, seed_set):
    """Writes a fixture model, seed PGMs and a profiling sweep under tmp_path;
    returns a dict of paths plus a ready-to-edit campaign config dict."""
    model_path = tmp_path / "model.nef"
    model_path.write_bytes(save_model(fixtures.build_retinal_tiny(seed=1)))
    seeds_dir = tmp_path / "seeds"
    seeds_dir.mkdir()
    seed_paths = []
    for i, img in enumerate(seed_set):
        p = seeds_dir / f"seed{i:02d}.pgm"
        save_pgm(p, img)
        seed_paths.append(str(p))
    prof_dir = tmp_path / "profile_data"
    prof_dir.mkdir()
    for i, img in enumerate(fixtures.profile_images(seed_set)):
        save_pgm(prof_dir / f"p{i:03d}.pgm", img)
    config = {
        "model": {"path": str(model_path), "seed_images": seed_paths,
                  "profiling_data": str(prof_dir)},
        "limits": {"preset": "retinal"},
        "strategy": {"name": "kmvp", "rng_seed": 5},
        "budget": {"test_limit": 400},
    }
    return {"root": tmp_path, "model_path": model_path, "seed_paths": seed_paths,
            "prof_dir": prof_dir, "config": config}


def make_test_records(model, count, rng_seed=0, extractor=None, with_trace=True):
    """Random-image TestRecords through a model, for coverage exercises."""
    from stimfuzz.coverage import TestRecord
    from stimfuzz.runtime import decode_stimulation, forward, forward_traced
    from stimfuzz.safety import PRESETS, evaluate

    rng = np.random.default_rng(rng_seed)
    limits = PRESETS["retinal" if model.layout.params_per_electrode == 3 else "cortical"]
    records = []
    for _ in range(count):
        image = rng.random(model.input_shape).astype(np.float32)
        if with_trace:
            raw, trace = forward_traced(model, image)
        else:
            raw, trace = forward(model, image), None
        pattern = decode_stimulation(raw, model.layout)
        report = evaluate(pattern, limits)
        features = None if extractor is None else np.asarray(extractor(image))
        records.append(TestRecord(image=image, raw=raw, pattern=pattern, report=report,
                                  trace=trace, features=features))
    return records
