"""JSON model checkpoints (lossless round trip)."""

from __future__ import annotations

import json
import os

import numpy as np

from ..channel import SystemConfig
from .layers import ComplexDenseLayer, PhaseShiftLayer
from .model import DnhbModel, RxChain

__all__ = ["CHECKPOINT_FORMAT_VERSION", "CheckpointError", "save_model", "load_model", "model_to_dict", "model_from_dict"]

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _dense_to_dict(layer: ComplexDenseLayer) -> dict:
    return {
        "activation": layer.activation,
        "w": {"re": layer.w_re.tolist(), "im": layer.w_im.tolist()},
        "b": {"re": layer.b_re.tolist(), "im": layer.b_im.tolist()},
    }


def _dense_from_dict(d: dict) -> ComplexDenseLayer:
    return ComplexDenseLayer(
        w_re=np.array(d["w"]["re"], dtype=np.float64),
        w_im=np.array(d["w"]["im"], dtype=np.float64),
        b_re=np.array(d["b"]["re"], dtype=np.float64),
        b_im=np.array(d["b"]["im"], dtype=np.float64),
        activation=d["activation"],
    )


def _phase_to_dict(layer: PhaseShiftLayer) -> dict:
    return {
        "in_dim": layer.in_dim,
        "out_dim": layer.out_dim,
        "side": layer.side,
        "topology": layer.topology,
        "theta": layer.theta.tolist(),
    }


def _phase_from_dict(d: dict) -> PhaseShiftLayer:
    return PhaseShiftLayer(d["in_dim"], d["out_dim"], d["side"], d["topology"], np.array(d["theta"], dtype=np.float64))


def model_to_dict(model: DnhbModel, training_seed: int | None = None, final_loss: float | None = None) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "architecture": model.architecture(),
        "mode": model.mode,
        "parameters": {
            "tx_digital": [_dense_to_dict(l) for l in model.tx_digital],
            "tx_analog": _phase_to_dict(model.tx_analog),
            "rx": [
                {"analog": _phase_to_dict(c.analog), "digital": [_dense_to_dict(l) for l in c.digital]}
                for c in model.rx
            ],
        },
        "training_seed": training_seed,
        "final_loss": final_loss,
    }


def model_from_dict(doc: dict) -> DnhbModel:
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    try:
        p = doc["parameters"]
        return DnhbModel(
            cfg=SystemConfig.from_dict(doc["config"]),
            tx_digital=[_dense_from_dict(d) for d in p["tx_digital"]],
            tx_analog=_phase_from_dict(p["tx_analog"]),
            rx=[RxChain(_phase_from_dict(c["analog"]), [_dense_from_dict(d) for d in c["digital"]]) for c in p["rx"]],
            mode=doc["mode"],
            topology=doc["architecture"]["topology"],
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: missing or invalid {exc}") from None


def save_model(path, model: DnhbModel, training_seed: int | None = None, final_loss: float | None = None) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        json.dump(model_to_dict(model, training_seed, final_loss), fh)
    os.replace(tmp, path)


def load_model(path) -> tuple[DnhbModel, dict]:
    """Return ``(model, metadata)`` where metadata holds seed and final loss."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from None
    meta = {"training_seed": doc.get("training_seed"), "final_loss": doc.get("final_loss")}
    return model_from_dict(doc), meta
