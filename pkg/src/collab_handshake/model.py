"""Per-agent learnable modules: encoder, message/key generators, task decoder.

Encoder and key generator (and the attention parameters used to score a
request) are shared by every agent. Message generator and decoder exist only
on the degraded target agent, which is the only one that requests and decodes.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import attention
from .errors import ConfigError, DimensionError
from .tensor import ParamStore, Tape, init_conv3x3, init_linear


class Method(str, Enum):
    SINGLE_NORMAL = "single_normal"
    SINGLE_DEGRADED = "single_degraded"
    CATALL = "catall"
    ATTENTION = "attention"
    COMPRESSION = "compression"
    RANDOM = "random"
    OURS_MSG = "ours_msg"
    OURS_NOMSG = "ours_nomsg"

    @property
    def label(self):
        return _LABELS[self]

    @property
    def scores(self):
        """Whether the method runs the request/match stages."""
        return self in (Method.ATTENTION, Method.OURS_MSG, Method.OURS_NOMSG)

    @property
    def single(self):
        return self in (Method.SINGLE_NORMAL, Method.SINGLE_DEGRADED)


_LABELS = {
    Method.SINGLE_NORMAL: "Single Normal",
    Method.SINGLE_DEGRADED: "Single Degraded",
    Method.CATALL: "CatAll",
    Method.ATTENTION: "Attention",
    Method.COMPRESSION: "Compression",
    Method.RANDOM: "Random Selection",
    Method.OURS_MSG: "Ours w/ msg",
    Method.OURS_NOMSG: "Ours w/o msg",
}


@dataclass(frozen=True)
class ModelConfig:
    message_size: int = 8
    key_size: int = 1024
    feature_channels: int = 16
    num_classes: int = 6
    variant: str = attention.GENERAL
    top_n: int = 1
    num_agents: int = 5
    in_channels: int = 3
    image_size: int = 16
    additive_hidden: int | None = None
    method: Method = Method.OURS_MSG

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        attention.check_sizes(self.variant, self.message_size, self.key_size)
        if self.num_agents < 2:
            raise ConfigError("need at least two agents")
        if not 1 <= self.top_n <= self.num_agents - 1:
            raise ConfigError(f"top_n must be in [1, {self.num_agents - 1}], got {self.top_n}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        s = self.image_size
        if s < 8 or s & (s - 1):
            raise ConfigError(f"image_size must be a power of two >= 8, got {s}")
        if self.method == Method.COMPRESSION and self.feature_channels % 4:
            raise ConfigError("compression needs feature_channels divisible by 4")

    @property
    def num_normals(self):
        return self.num_agents - 1

    @property
    def feature_size(self):
        return self.image_size // 4

    @property
    def feature_shape(self):
        return (self.feature_channels, self.feature_size, self.feature_size)

    @property
    def transmitted_channels(self):
        return self.feature_channels // 4 if self.method == Method.COMPRESSION else self.feature_channels

    @property
    def decoder_in_channels(self):
        d = self.feature_channels
        if self.method == Method.CATALL:
            return d * self.num_agents
        if self.method == Method.COMPRESSION:
            return d + self.num_normals * (d // 4)
        return 2 * d

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["method"] = self.method.value
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Observation:
    pixels: np.ndarray
    degraded: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise DimensionError(f"observation must be channels x H x W, got {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("observation values must lie in [0, 1]")


@dataclass
class Prediction:
    logits: np.ndarray

    @property
    def labels(self):
        return self.logits.argmax(axis=-3)


def init_params(config, rng):
    store = ParamStore()
    d = config.feature_channels
    init_conv3x3(store, rng, "encoder.conv1", config.in_channels, d)
    init_conv3x3(store, rng, "encoder.conv2", d, d)
    if config.method.scores:
        init_linear(store, rng, "key", d, config.key_size)
        attention.init_attention(store, rng, config.variant, config.message_size, config.key_size,
                                 config.additive_hidden)
        # the no-message variant keeps the head so parameter sets match; it is never read
        init_linear(store, rng, "message", d, config.message_size)
    if config.method == Method.COMPRESSION:
        init_conv3x3(store, rng, "compression.conv1", d, d // 4)
        init_conv3x3(store, rng, "compression.conv2", d // 4, d // 4)
    init_conv3x3(store, rng, "decoder.conv1", config.decoder_in_channels, d)
    init_conv3x3(store, rng, "decoder.conv2", d, d)
    init_conv3x3(store, rng, "decoder.conv3", d, config.num_classes)
    return store


SHARED_PREFIXES = ("encoder.", "key.", "attention.", "compression.")
TARGET_PREFIXES = ("message.", "decoder.")


def parameter_audit(store):
    """Scalar counts of parameters evaluated by every agent vs. the target only."""
    shared = sum(v.size for k, v in store.items() if k.startswith(SHARED_PREFIXES))
    target = sum(v.size for k, v in store.items() if k.startswith(TARGET_PREFIXES))
    return {"shared": shared, "target_only": target, "total": shared + target}


# -- tape-level building blocks ---------------------------------------------

def _conv(tape, store, name, x, stride=1):
    return tape.conv3x3(x, tape.param(store, f"{name}.weight"), tape.param(store, f"{name}.bias"), stride)


def encode(tape, store, x):
    """(B, C_in, H, W) -> (B, d_c, H/4, W/4)"""
    h = tape.relu(_conv(tape, store, "encoder.conv1", x, stride=2))
    return tape.relu(_conv(tape, store, "encoder.conv2", h, stride=2))


def _head(tape, store, name, feats):
    pooled = tape.global_avg_pool(feats)
    lead = pooled.shape[:-1]
    flat = tape.reshape(pooled, (-1, pooled.shape[-1]))
    out = tape.linear(flat, tape.param(store, f"{name}.weight"), tape.param(store, f"{name}.bias"))
    return tape.reshape(out, lead + (out.shape[-1],))


def gen_message(tape, store, feats):
    return _head(tape, store, "message", feats)


def gen_key(tape, store, feats):
    return _head(tape, store, "key", feats)


def compress(tape, store, feats):
    h = tape.relu(_conv(tape, store, "compression.conv1", feats))
    return _conv(tape, store, "compression.conv2", h)


def decode(tape, store, f_target, f_received):
    """Channel-concat the two inputs and decode to per-pixel class logits."""
    if f_target.shape[:-3] != f_received.shape[:-3] or f_target.shape[-2:] != f_received.shape[-2:]:
        raise DimensionError(f"decode: target {f_target.shape} vs received {f_received.shape}")
    h = tape.concat_channels([f_target, f_received])
    h = tape.upsample2x(tape.relu(_conv(tape, store, "decoder.conv1", h)))
    h = tape.upsample2x(tape.relu(_conv(tape, store, "decoder.conv2", h)))
    return _conv(tape, store, "decoder.conv3", h)


# -- numpy-level model used by agents during a handshake --------------------

class Model:
    """A config plus parameters, evaluated without recording gradients."""

    def __init__(self, config, params=None, rng=None):
        self.config = config
        if params is None:
            params = init_params(config, np.random.default_rng(0) if rng is None else rng)
        self.params = params

    def _run(self, fn, *arrays):
        tape = Tape(grad=False)
        return fn(tape, self.params, *(tape.constant(a) for a in arrays)).value

    def _check_obs(self, obs):
        pixels = obs.pixels if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
        c = self.config
        expect = (c.in_channels, c.image_size, c.image_size)
        if pixels.shape[-3:] != expect:
            raise DimensionError(f"observation shape {pixels.shape} does not match configured {expect}")
        return pixels

    def encode(self, obs):
        pixels = self._check_obs(obs)
        batched = pixels.ndim == 4
        out = self._run(encode, pixels if batched else pixels[None])
        return out if batched else out[0]

    def feature_map(self, obs):
        """What a normal agent transmits in the connect stage."""
        f = self.encode(obs)
        if self.config.method == Method.COMPRESSION:
            f = self._run(compress, f[None])[0]
        return f

    def message(self, obs):
        if self.config.method == Method.OURS_NOMSG:
            return np.ones(self.config.message_size)
        return self._run(gen_message, self.encode(obs)[None])[0]

    def key(self, obs):
        return self._run(gen_key, self.encode(obs)[None])[0]

    def score(self, mu, kappa):
        return attention.match(self.config.variant, self.params, mu, kappa)

    def decode(self, f_target, f_received):
        return Prediction(self._run(decode, f_target[None], f_received[None])[0])
