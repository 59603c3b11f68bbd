import json

import pytest

from corrugation.errors import ConfigError, NotDecomposable, NumericalError
from engine_orchestrator import load_config, main, safe_task


def _write(path, payload):
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


def test_malformed_config_exits_with_2_and_writes_nothing(tmp_path):
    out = tmp_path / "out"
    code = main(["stage", "--config", _write(tmp_path / "c.json", "{not json"), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_unknown_key_is_a_config_error(tmp_path):
    out = tmp_path / "out"
    code = main(["stage", "--config", _write(tmp_path / "c.json", {"stage": {"speed": 1}}), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_nyquist_violation_aborts_with_a_manifest(tmp_path):
    out = tmp_path / "out"
    code = main(["stage", "--config", _write(tmp_path / "c.json", {"stage": {"lam": 300.0}}), "--out", str(out)])
    assert code == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "aborted"
    assert manifest["error"]["error"] == "NyquistViolation"


def test_stage_run_writes_certificate(tmp_path):
    out = tmp_path / "out"
    assert main(["stage", "--config", _write(tmp_path / "c.json", {}), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert "stage_certificate.json" in manifest["artifacts"]
    assert "stage.E_c0" in manifest["measured"]


def test_holder_runs_are_reproducible(tmp_path):
    config = _write(tmp_path / "c.json", {"verify": {"target": "holder"}})
    assert main(["verify", "--config", config, "--out", str(tmp_path / "a")]) == 0
    assert main(["verify", "--config", config, "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "manifest.json").read_bytes()
    assert first == (tmp_path / "b" / "manifest.json").read_bytes()
    exponent = json.loads(first)["measured"]["holder.exponent"]
    assert exponent == pytest.approx(0.4, abs=0.05)


def test_rigidity_run(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--config", _write(tmp_path / "c.json", {}), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["measured"]["rigidity.slope"] >= 1.0
    assert (out / "rigidity.csv").exists()


def test_load_config(tmp_path):
    path = _write(tmp_path / "c.json", {"command": "ladder"})
    with pytest.raises(ConfigError):
        load_config(path, "stage")
    assert load_config(path, "ladder", seed=7).seed == 7
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "v.json", {"schema_version": "2"}), "stage")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "l.json", "[1, 2]"), "stage")


def test_safe_task_wraps_unexpected_errors():
    assert safe_task(lambda _: 5, "Five") == 5
    with pytest.raises(NumericalError):
        safe_task(lambda _: 1 / 0, "Divide")

    def fail(_):
        raise NotDecomposable("no")

    with pytest.raises(NotDecomposable):
        safe_task(fail, "Decompose")
