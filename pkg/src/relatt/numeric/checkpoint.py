"""Parameter checkpoints stored as ``.npz`` archives.

Each named tensor is saved as its own float64 array, so a write/read round
trip is bit-exact. A ``__meta__`` entry holds UTF-8 JSON with the config
hash and any extra metadata the caller wants to keep (config echo,
vocabularies).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from relatt.errors import RelattError

META_KEY = "__meta__"


def save_checkpoint(path, params: dict[str, np.ndarray], config_hash: str, meta: dict | None = None) -> None:
    path = Path(path)
    if any(name == META_KEY for name in params):
        raise RelattError(f"parameter name {META_KEY!r} is reserved")
    payload = dict(meta or {})
    payload["config_hash"] = config_hash
    blob = np.frombuffer(json.dumps(payload, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    arrays = {name: np.array(p, dtype=np.float64) for name, p in params.items()}
    arrays[META_KEY] = blob
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(params, meta)``; ``meta["config_hash"]`` is always present."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data[META_KEY]).decode("utf-8"))
        params = {name: np.array(data[name]) for name in data.files if name != META_KEY}
    return params, meta
