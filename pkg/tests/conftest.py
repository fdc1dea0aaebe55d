import json

import pytest

from covertlab.schemas.covert_schemas import SpectralMask

MASK = {
    "W": 1.0,
    "constraints": [
        {"U_dB": 20.0, "alpha": 1.0, "eta": 0.9},
        {"U_dB": 40.0, "alpha": 2.0, "eta": 0.99},
    ],
}


@pytest.fixture
def mask_dict():
    return json.loads(json.dumps(MASK))


@pytest.fixture
def mask():
    return SpectralMask.from_dict(MASK)


@pytest.fixture
def mask_file(tmp_path):
    path = tmp_path / "mask.json"
    path.write_text(json.dumps(MASK))
    return path


@pytest.fixture
def smoke_config(tmp_path, mask_file):
    """n forced to 64 with MK = 256: the end-to-end smoke run."""
    return {
        "name": "smoke",
        "mask_file": str(mask_file),
        "metric": "tv",
        "nw": 1.0,
        "nb": 1.0,
        "delta": 0.5,
        "n": 64,
        "beta_grid": 5,
        "tol": 1e-5,
        "seed": 11,
        "trials": 200,
        "sim_m": 16,
        "sim_k": 16,
        "plots": True,
        "output_dir": str(tmp_path / "runs"),
    }
