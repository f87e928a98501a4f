"""
Model persistence.
Reads and writes trained networks as JSON documents.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from core.engine import BinaryWeightVector, BNParams, LayerKind, LayerSpec, NetworkKind, NetworkSpec
from core.errors import ModelFormatError, QNetError

logger = logging.getLogger(__name__)


def network_to_dict(net: NetworkSpec) -> Dict[str, Any]:
    """Convert to dictionary for JSON storage."""
    return {
        "kind": net.kind.value,
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": [
            {
                "kind": layer.kind.value,
                "weights": [[int(v) for v in n.binarized] for n in layer.neurons],
                "latent": [[float(v) for v in n.latent] for n in layer.neurons],
                "bn": [p.to_dict() for p in layer.bn] if layer.bn is not None else None,
            }
            for layer in net.layers
        ],
    }


def network_from_dict(data: Dict[str, Any]) -> NetworkSpec:
    """Create from dictionary; latent weights fall back to the stored signs."""
    try:
        layers = []
        for entry in data["layers"]:
            latent = entry.get("latent") or entry["weights"]
            neurons = [BinaryWeightVector(row) for row in latent]
            for neuron, signs in zip(neurons, entry["weights"]):
                if list(neuron.binarized) != [int(s) for s in signs]:
                    raise ModelFormatError("latent weights disagree with stored signs")
            bn = entry.get("bn")
            layers.append(LayerSpec(
                LayerKind(entry["kind"]),
                neurons,
                [BNParams.from_dict(p) for p in bn] if bn else None,
            ))
        output = len(layers[-1].neurons) if layers else 0
        return NetworkSpec(
            kind=NetworkKind(data["kind"]),
            layers=layers,
            input_shape=tuple(data["input_shape"]),
            class_count=int(data.get("class_count", 2 if output == 1 else output)),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, QNetError) as e:
        raise ModelFormatError(f"malformed model: {e}") from e


def save_model(path: Union[str, Path], net: NetworkSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(network_to_dict(net), f, indent=2)
    logger.info("model written to %s", path)
    return path


def load_model(path: Union[str, Path]) -> NetworkSpec:
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (IOError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"cannot read model {path}: {e}") from e
    return network_from_dict(data)
