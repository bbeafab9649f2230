import numpy as np
import pytest
from fastapi.testclient import TestClient

from api.main import app


@pytest.fixture
def client():
    with TestClient(app) as client:
        yield client


def test_health(client):
    response = client.get("/")

    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_plan_from_samples(client):
    samples = np.random.default_rng(0).normal(3.19, 0.15, size=200).tolist()

    response = client.post("/plan", json={"samples": samples, "action_class": "door"})

    assert response.status_code == 200
    body = response.json()
    assert body["Q_w"] == 2.0
    assert body["k"] == len(body["polls"])
    assert body["polls"][-1] == pytest.approx(body["U"])
    assert body["coverage"] >= body["slo"] - 1e-9


def test_plan_rejects_unsupportable_tolerance(client):
    response = client.post("/plan", json={"samples": [3.0, 3.1, 3.2], "Q_w": 0.2, "min_poll_interval": 1.0})

    assert response.status_code == 422
    assert response.json()["detail"].startswith("UnsupportableToleranceError")


@pytest.mark.parametrize("body", [{"samples": []}, {"samples": [1.0], "slo": 1.5}, {"Q_w": 2.0}])
def test_plan_validates_request(client, body):
    assert client.post("/plan", json=body).status_code == 422


def test_parse_routine(client):
    document = {
        "id": "evening",
        "steps": [
            {"id": "lamp", "device": "light_3", "action": "on"},
            {"id": "blind", "device": "shade_1", "action": "down"},
        ],
    }

    response = client.post("/routines/parse", json=document)

    assert response.status_code == 200
    body = response.json()
    assert body["roots"] == ["lamp"]
    assert body["topological_order"] == ["lamp", "blind"]
    assert body["edges"] == [{"parent": "lamp", "child": "blind", "on": "complete"}]
    assert body["devices"] == ["light_3", "shade_1"]


def test_parse_routine_cycle(client):
    document = {
        "id": "loop",
        "actions": [
            {"id": "a", "device": "d", "action": "x", "after": ["b"]},
            {"id": "b", "device": "d", "action": "x", "after": ["a"]},
        ],
    }

    response = client.post("/routines/parse", json=document)

    assert response.status_code == 422
    assert response.json()["detail"].startswith("RoutineParseError")
