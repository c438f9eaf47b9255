"""Checkpointing of networks (plus optimizer/RNG state) via the LGDX container."""

from __future__ import annotations

import numpy as np

from .. import fileio
from .network import Network
from .train import Optimizer, TrainConfig


def save_model(
    path,
    net: Network,
    optimizer: Optimizer | None = None,
    epoch: int = 0,
    train_config: TrainConfig | None = None,
    rng_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    header = {
        "kind": "lgdemux-model",
        "net_spec": net.spec,
        "input_shape": list(net.input_shape),
        "net_seed": net.seed,
        "epoch": int(epoch),
        "train_config": train_config.to_dict() if train_config else None,
        "rng_state": rng_state,
        "opt_t": optimizer.t if optimizer else None,
        "extra": extra or {},
    }
    blobs = {f"param.{name}": t.values for name, t in net.params()}
    if optimizer is not None:
        blobs.update(optimizer.state_blobs())
    fileio.write_checkpoint(path, header, blobs)


def load_model(path) -> tuple[Network, dict]:
    """Rebuild the network; forward outputs are bit-identical to the saved model."""
    header, blobs = fileio.read_checkpoint(path)
    if header.get("kind") != "lgdemux-model":
        raise fileio.SchemaVersionError(f"{path}: not a model checkpoint")
    net = Network(header["net_spec"], tuple(header["input_shape"]), seed=header.get("net_seed", 0))
    params = {name[len("param."):]: arr for name, arr in blobs.items() if name.startswith("param.")}
    net.set_param_arrays(params)
    meta = dict(header)
    meta["opt_blobs"] = {k: v for k, v in blobs.items() if k.startswith("opt.")}
    return net, meta
