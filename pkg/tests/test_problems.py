import json

import numpy as np
import pytest

from corrugation.errors import ConfigError, NotAdmissible
from corrugation.extend import check_admissible
from corrugation.problems import ProblemFile, flat_line_problem, load_problem, problem_from_model, product_problem


def _sampled_circle(n=64, radius=0.25):
    s = 2 * np.pi * np.arange(n) / n
    f = np.zeros((n, 8))
    mu = np.zeros((n, 8))
    f[:, 0], f[:, 1] = radius * np.cos(s), radius * np.sin(s)
    mu[:, 0], mu[:, 1] = -np.cos(s), -np.sin(s)
    return {
        "kind": "sampled",
        "period": 2 * np.pi * radius,
        "resolution": [n, 16],
        "f": f.tolist(),
        "mu": mu.tolist(),
        "L": [0.0] * n,
    }


def test_flat_line_margin_is_kappa():
    sd, _ = flat_line_problem(kappa=2.0)
    np.testing.assert_allclose(check_admissible(sd), 2.0)


def test_product_extension_has_no_margin():
    sd, _, u = product_problem(kappa=1.0)
    with pytest.raises(NotAdmissible):
        check_admissible(sd)
    assert u.values.shape == (128, 16, 8)


def test_circle_problem_file(tmp_path):
    path = tmp_path / "circle.json"
    path.write_text(json.dumps({"kind": "circle", "radius": 0.5, "resolution": [64, 16]}))
    sd, collar = load_problem(path)
    np.testing.assert_allclose(check_admissible(sd), 2.0, rtol=1e-12)
    assert collar.grid.shape == (64, 16)


def test_sampled_problem(tmp_path):
    path = tmp_path / "sampled.json"
    path.write_text(json.dumps(_sampled_circle()))
    sd, _ = load_problem(path)
    np.testing.assert_allclose(check_admissible(sd), 4.0, rtol=2e-2)


@pytest.mark.parametrize("payload", [
    {"kind": "circle", "colour": "red"},
    {"kind": "torus"},
    {"kind": "sampled"},
])
def test_bad_problem_files(tmp_path, payload):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_problem(path)


def test_sampled_shape_mismatch():
    payload = _sampled_circle()
    payload["mu"] = payload["mu"][:-1]
    with pytest.raises(ConfigError):
        problem_from_model(ProblemFile.model_validate(payload))


def test_missing_problem_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_problem(tmp_path / "absent.json")
    assert info.value.exit_code == 2
