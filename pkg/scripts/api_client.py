from __future__ import annotations

import json
import os
import sys

import httpx

API_BASE = os.getenv("API_BASE_URL", "http://127.0.0.1:8000").rstrip("/")
RUN_URL = f"{API_BASE}/api/v1/experiments/run"
PREDICT_URL = f"{API_BASE}/api/v1/predict-times"


def build_experiment_payload(kind: str) -> dict:
    if kind == "predict_times":
        return {"kind": kind, "delta": 1e-3, "gamma": 0.5, "p": 2.0}
    if kind == "lifespan":
        return {"kind": kind, "M": 5, "deltas": [0.05, 0.02, 0.01], "dt": 0.01, "horizon": 20.0}
    return {"kind": "divisor_audit", "M": 6, "max_l1": 4, "m": 1.37, "gamma": 1e-2}


def main() -> None:
    kind = sys.argv[1] if len(sys.argv) > 1 else "divisor_audit"
    with httpx.Client(timeout=600.0) as client:
        health = client.get(f"{API_BASE}/health")
        health.raise_for_status()
        response = client.post(RUN_URL, json=build_experiment_payload(kind))
        if response.status_code >= 400:
            print(f"HTTP {response.status_code}", file=sys.stderr)
        print(json.dumps(response.json(), indent=2, ensure_ascii=False))
        theory = client.post(PREDICT_URL, json={"delta": 1e-3})
        theory.raise_for_status()
        print(json.dumps(theory.json(), indent=2, ensure_ascii=False))


if __name__ == "__main__":
    main()
