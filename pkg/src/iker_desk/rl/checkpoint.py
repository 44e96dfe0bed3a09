"""
Policy checkpoint files
JSON container with architecture, little-endian float32 parameter arrays (base64) and normalizer statistics
"""

import base64
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .network import ActorCritic
from .optimizer import RunningNormalizer
from .policy import Policy

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "iker-desk-policy"
CHECKPOINT_VERSION = 1


def _encode(array: np.ndarray) -> Dict[str, Any]:
    data = np.ascontiguousarray(array, dtype="<f4")
    return {"shape": list(data.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode(entry: Dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(entry["shape"])


def save_checkpoint(policy: Policy, path: Union[str, Path], config_hash: str = "",
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": policy.network.architecture,
        "action_bounds": {"max_translation": policy.max_translation, "max_rotation": policy.max_rotation},
        "parameters": {name: _encode(value) for name, value in policy.network.params.items()},
        "normalizer": {
            "mean": _encode(policy.normalizer.mean),
            "var": _encode(policy.normalizer.var),
            "count": policy.normalizer.count,
            "clip": policy.normalizer.clip,
        },
        "config_hash": config_hash,
        "metadata": metadata or {},
    }
    path.write_text(json.dumps(document), encoding="utf-8")
    logger.debug(f"Saved checkpoint {path} ({policy.network.parameter_count()} parameters)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Policy:
    """Policy with a frozen normalizer, as stored by save_checkpoint"""
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a policy checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {document.get('version')}")
    arch = document["architecture"]
    network = ActorCritic(arch["obs_dim"], arch["action_dim"], arch["hidden_sizes"], head_scale=0.0)
    for name in network.params:
        value = _decode(document["parameters"][name])
        if value.shape != network.params[name].shape:
            raise ValueError(f"parameter {name} has shape {value.shape}, expected {network.params[name].shape}")
        network.params[name] = value
    stats = document["normalizer"]
    normalizer = RunningNormalizer(arch["obs_dim"], clip=stats["clip"])
    normalizer.mean, normalizer.var, normalizer.count = _decode(stats["mean"]), _decode(stats["var"]), stats["count"]
    normalizer.frozen = True
    bounds = document["action_bounds"]
    return Policy(network, normalizer, bounds["max_translation"], bounds["max_rotation"])


def checkpoint_config_hash(path: Union[str, Path]) -> str:
    return json.loads(Path(path).read_text(encoding="utf-8")).get("config_hash", "")
