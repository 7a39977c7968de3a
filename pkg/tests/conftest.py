import json

import pytest

from src.schemas import ModelConfig, ParamDomain, PsoConfig, SrbfConfig
from src.services.models import ModelHarness, build_model


@pytest.fixture(scope="module")
def unit_square():
    return ParamDomain(lower=(0.0, 0.0), upper=(1.0, 1.0))


@pytest.fixture(scope="module")
def reference_square():
    return ParamDomain(lower=(-1.0, -1.0), upper=(1.0, 1.0))


@pytest.fixture(scope="module")
def default_model():
    return build_model(ModelConfig())


@pytest.fixture(scope="module")
def noise_free_model():
    return build_model(ModelConfig(noise_amp=0.0))


@pytest.fixture
def harness_factory():
    def make(model, store=None):
        return ModelHarness(model, store)

    return make


@pytest.fixture(scope="module")
def small_srbf():
    # reduced strata and quadrature so loops finish at desk scale
    return SrbfConfig(theta=100, loocv_theta=10, loocv_max_candidates=4, midpoint_per_dim=20, infill_batch=2)


@pytest.fixture(scope="module")
def small_pso():
    return PsoConfig(lattice_levels=3, max_iters=40, stagnation_window=10)


@pytest.fixture
def run_config(tmp_path):
    config = {
        "schema_version": 1,
        "model": {"builtin": "exp_cos", "n_fidelities": 2, "noise_amp": 0.01, "seed": 3},
        "method": "both",
        "misc": {"budget": 150},
        "srbf": {"budget": 120, "theta": 20, "loocv_theta": 6, "loocv_max_candidates": 3,
                 "midpoint_per_dim": 10, "infill_batch": 2, "max_iterations": 3},
        "pso": {"lattice_levels": 3, "max_iters": 15, "stagnation_window": 5},
        "output": {"samples": 300, "bins": 10, "kde_points": 64, "surface_resolution": 5},
        "out_dir": str(tmp_path / "results"),
    }
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
