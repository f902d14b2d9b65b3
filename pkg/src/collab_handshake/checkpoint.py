from __future__ import annotations

import numpy as np

from .container import CHECKPOINT_MAGIC, decode_container, encode_container, read_file, write_file
from .errors import ConfigError, FormatError, ShapeError
from .model import ModelConfig, init_params
from .tensor import ParamStore

CHECKPOINT_VERSION = 1


def checkpoint_bytes(params, config):
    return encode_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, {"model": config.to_dict()},
                            list(params.items()))


def save_checkpoint(params, config, path):
    write_file(path, checkpoint_bytes(params, config))


def load_checkpoint(path, expected=None):
    """Read ``(params, config)``; with ``expected`` any config difference is a ShapeError."""
    header, tensors = decode_container(read_file(path), CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        config = ModelConfig.from_dict(header["model"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"invalid model config block: {exc}") from exc
    if expected is not None:
        diff = {k: (v, expected.to_dict()[k]) for k, v in config.to_dict().items() if expected.to_dict()[k] != v}
        if diff:
            detail = ", ".join(f"{k}: checkpoint has {a!r}, expected {b!r}" for k, (a, b) in sorted(diff.items()))
            raise ShapeError(f"checkpoint incompatible with config ({detail})")
    reference = init_params(config, np.random.default_rng(0))
    if set(reference) != set(tensors):
        raise ShapeError(f"parameter names differ from config: missing {sorted(set(reference) - set(tensors))}, "
                         f"unexpected {sorted(set(tensors) - set(reference))}")
    params = ParamStore()
    for name, ref in reference.items():
        if tensors[name].shape != ref.shape:
            raise ShapeError(f"tensor {name!r} has shape {tensors[name].shape}, config implies {ref.shape}")
        params.add(name, tensors[name])
    return params, config
