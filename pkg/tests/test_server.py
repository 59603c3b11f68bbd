import pytest
from fastapi.testclient import TestClient

from mcp_server_engine import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def _invoke(client, tool, **arguments):
    return client.post("/invoke_tool", json={"tool_name": tool, "arguments": arguments})


def test_root_and_tool_listing(client):
    root = client.get("/").json()
    assert "decompose_matrix" in root["available_tools"]
    names = [tool["name"] for tool in client.get("/tools").json()["tools"]]
    assert names == ["decompose_matrix", "run_stage", "check_admissible", "run_pipeline"]


def test_decompose_identity(client):
    response = _invoke(client, "decompose_matrix", matrix=[[1.0, 0.0], [0.0, 1.0]])
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is True
    assert body["result"]["coefficients"] == pytest.approx([2 / 3, 2 / 3, 2 / 3])


def test_unknown_tool(client):
    assert _invoke(client, "launch").status_code == 400


def test_bad_arguments(client):
    assert _invoke(client, "decompose_matrix", matrix=[[1.0, 2.0], [0.0, 1.0]]).status_code == 400
    assert _invoke(client, "run_stage", speed=3).status_code == 400


def test_numerical_failure_maps_to_500(client):
    response = _invoke(client, "decompose_matrix", matrix=[[1.0, 0.0], [0.0, 10.0]])
    assert response.status_code == 500
    assert response.json()["detail"]["error"] == "NotDecomposable"


def test_precondition_failure_maps_to_422(client):
    response = _invoke(client, "run_stage", lam=300.0)
    assert response.status_code == 422
    assert response.json()["detail"]["exit_code"] == 3


def test_bad_pipeline_config(client):
    assert _invoke(client, "run_pipeline", config={"command": "nope"}).status_code == 400


def test_circle_admissibility(client):
    response = _invoke(client, "check_admissible", problem={"kind": "circle", "resolution": [64, 16]})
    assert response.status_code == 200
    result = response.json()["result"]
    assert result["admissible"] is True
    assert result["margin_min"] == pytest.approx(4.0)
