import httpx
import os
import sys
import time

from dotenv import dotenv_values

BASE = os.environ.get("FEDSIM_URL", "http://127.0.0.1:3113")

# Config de experimento: argumento CLI (fichero clave=valor) o una mínima embebida
CONFIG = {
    "dataset.synthetic.classes": "3",
    "dataset.synthetic.feature_dim": "4",
    "dataset.synthetic.per_party": "20",
    "dataset.synthetic.parties": "4",
    "dataset.synthetic.public_size": "24",
    "dataset.synthetic.test_size": "60",
    "model.hidden_sizes": "8",
    "protocol.t1": "2",
    "protocol.t2": "3",
    "attack_sweep": "paf",
    "standalone": "false",
}
if len(sys.argv) > 1:
    CONFIG = {k: v for k, v in dotenv_values(sys.argv[1]).items() if v is not None}

print(f"Servidor: {BASE}")
print()

print("status before", httpx.get(f"{BASE}/status", timeout=5.0).text)

agg_payload = {
    "rule": "krum",
    "updates": [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [50.0, 50.0]],
}
r = httpx.post(f"{BASE}/v1/aggregate", json=agg_payload, timeout=30.0)
print("aggregate", r.status_code, r.text[:300])

craft_payload = {"attack": "lie", "benign_updates": [[0.0, 1.0], [2.0, 1.0], [1.0, 3.0]], "m": 1}
r = httpx.post(f"{BASE}/v1/craft", json=craft_payload, timeout=30.0)
print("craft", r.status_code, r.text[:300])

r = httpx.post(f"{BASE}/v1/experiments", json={"config": CONFIG, "run_name": "smoke"}, timeout=30.0)
print("experiment", r.status_code, r.text[:300])
if r.status_code != 202:
    sys.exit(1)

job_id = r.json()["id"]
while True:
    job = httpx.get(f"{BASE}/v1/experiments/{job_id}", timeout=5.0).json()
    if job["status"] in ("done", "error"):
        break
    time.sleep(1.0)
print("experiment", job["status"], str(job.get("report") or job.get("error"))[:300])

print("runs", httpx.get(f"{BASE}/v1/runs", timeout=5.0).text[:300])
print("status after", httpx.get(f"{BASE}/status", timeout=5.0).text)
