import json
from pathlib import Path

import numpy as np

GOLDEN_PATH = Path(__file__).parent / "data" / "golden_blocks.npz"
HASH_PATH = Path(__file__).parent / "data" / "golden_hashes.json"


def check_golden(name: str, arr: np.ndarray):
    """Record a snapshot on first run, assert against it afterwards."""
    GOLDEN_PATH.parent.mkdir(exist_ok=True)
    data = dict(np.load(GOLDEN_PATH)) if GOLDEN_PATH.exists() else {}
    if name not in data:
        data[name] = arr
        np.savez(GOLDEN_PATH, **data)
        return
    assert np.allclose(arr, data[name], atol=1e-6, rtol=0)


def check_golden_hash(name: str, digest: str):
    """Like check_golden but for content digests of large outputs."""
    HASH_PATH.parent.mkdir(exist_ok=True)
    data = json.loads(HASH_PATH.read_text()) if HASH_PATH.exists() else {}
    if name not in data:
        data[name] = digest
        HASH_PATH.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return
    assert data[name] == digest, f"{name}: digest changed from recorded snapshot"
