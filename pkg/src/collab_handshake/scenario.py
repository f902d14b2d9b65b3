"""Synthetic multi-agent episodes.

A world is a Voronoi partition of an L x L grid into class regions, rendered
with a fixed per-class colour plus per-pixel texture noise (optionally a
smooth low-frequency shading field on top). Agents see H x H crops. The
target's crop is degraded (blur + noise); normal agents see clean crops that
are either the hidden clean target view or distractors (hidden-target), or
overlapping crops already aligned to the target frame with zero padding
outside the overlap (pose settings).
"""
from __future__ import annotations

import colorsys
import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .container import EPISODES_MAGIC, decode_container, encode_container, read_file, write_file
from .errors import ConfigError, FormatError, GenerationError
from .model import Observation

EPISODES_VERSION = 1


class Setting(str, Enum):
    HIDDEN_TARGET = "hidden-target"
    ACCURATE_POSE = "accurate-pose"
    INACCURATE_POSE = "inaccurate-pose"
    RANDOM_EXPLORATION = "random-exploration"

    @property
    def uses_pose(self):
        return self != Setting.HIDDEN_TARGET


@dataclass(frozen=True)
class ScenarioConfig:
    num_agents: int = 5
    image_size: int = 16
    num_classes: int = 6
    world_size: int = 64
    world_sites: int | None = None
    texture_noise: float = 0.05
    shading: float = 0.0
    blur_kernels: tuple = (1, 3, 5, 7)
    noise_range: tuple = (0.1, 0.4)
    # one (lo, hi) overlap-fraction range per normal agent, shuffled across ids
    overlap_ranges: tuple = ((0.5, 0.95), (0.1, 0.45), (0.0, 0.3), (0.0, 0.0))
    pose_noise: int = 3
    shuffle_agents: bool = True

    def __post_init__(self):
        for name in ("blur_kernels", "noise_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "overlap_ranges", tuple(tuple(r) for r in self.overlap_ranges))
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.world_size < 4 * self.image_size:
            raise ConfigError(f"world_size must be >= 4 * image_size ({4 * self.image_size})")
        if any(k < 1 or k % 2 == 0 for k in self.blur_kernels):
            raise ConfigError(f"blur kernel sizes must be odd and >= 1, got {self.blur_kernels}")
        lo, hi = self.noise_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid noise range {self.noise_range}")
        if len(self.overlap_ranges) != self.num_agents - 1:
            raise ConfigError(f"need {self.num_agents - 1} overlap ranges, got {len(self.overlap_ranges)}")
        if any(not 0.0 <= a <= b <= 1.0 for a, b in self.overlap_ranges):
            raise ConfigError(f"overlap ranges must satisfy 0 <= lo <= hi <= 1, got {self.overlap_ranges}")
        if self.pose_noise < 0:
            raise ConfigError("pose_noise must be >= 0")
        if self.texture_noise < 0 or self.shading < 0:
            raise ConfigError("texture_noise and shading must be >= 0")

    @property
    def num_normals(self):
        return self.num_agents - 1


@dataclass
class World:
    labels: np.ndarray
    appearance: np.ndarray
    seed: int


@dataclass(frozen=True)
class DegradeSpec:
    kernel: int = 1
    sigma: float = 0.0

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"blur kernel must be odd and >= 1, got {self.kernel}")
        if self.sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")


@dataclass
class Episode:
    target: Observation
    target_clean: np.ndarray
    labels: np.ndarray
    normals: list
    best_agent: int
    setting: Setting
    overlaps: np.ndarray
    world_seed: int = -1
    offsets: np.ndarray = field(default=None)


def palette(num_classes):
    # muted hues: classes stay separable when clean but blur and noise confuse them
    cols = []
    for i in range(num_classes):
        value = 0.85 if i % 2 == 0 else 0.55
        cols.append(colorsys.hsv_to_rgb(i / num_classes, 0.5, value))
    return np.array(cols).T  # (3, C)


SHADING_KERNEL = 33


def generate_world(seed, num_classes=6, size=64, sites=None, texture_noise=0.05, shading=0.0):
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    sites = sites or max(num_classes, size * size // 32)
    pts = rng.uniform(0, size, size=(sites, 2))
    site_class = rng.integers(0, num_classes, size=sites)
    # guarantee every class owns at least one site
    site_class[rng.permutation(sites)[:num_classes]] = np.arange(num_classes)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[..., None] + 0.5 - pts[:, 0]) ** 2 + (xx[..., None] + 0.5 - pts[:, 1]) ** 2
    labels = site_class[d2.argmin(axis=-1)]
    look = palette(num_classes)[:, labels] + rng.normal(0.0, texture_noise, size=(3, size, size))
    if shading > 0:
        field = blur(rng.normal(size=(3, size, size)), SHADING_KERNEL)
        look += field * (shading / field.std(axis=(1, 2), keepdims=True))
    return World(labels=labels, appearance=np.clip(look, 0.0, 1.0), seed=seed)


def render_view(world, x, y, size=16):
    """Crop at row ``x``, column ``y``. Returns ``(Observation, labels)``."""
    L = world.labels.shape[0]
    if not (0 <= x <= L - size and 0 <= y <= L - size):
        raise ConfigError(f"window at ({x}, {y}) of size {size} does not fit in a {L}x{L} world")
    obs = Observation(world.appearance[:, x:x + size, y:y + size].copy())
    return obs, world.labels[x:x + size, y:y + size].copy()


def overlap_fraction(a, b, size):
    """Area fraction shared by two size x size windows with corners ``a``, ``b``."""
    dx = max(0, size - abs(a[0] - b[0]))
    dy = max(0, size - abs(a[1] - b[1]))
    return dx * dy / (size * size)


def gaussian_kernel(k):
    if k == 1:
        return np.ones(1)
    sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
    x = np.arange(k) - k // 2
    w = np.exp(-(x * x) / (2 * sigma * sigma))
    return w / w.sum()


def blur(pixels, k):
    """Separable Gaussian blur with mirror (edge-inclusive) padding, which conserves mass."""
    if k == 1:
        return pixels.copy()
    w = gaussian_kernel(k)
    r = k // 2
    out = pixels
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, wi in enumerate(w):
            acc += wi * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def sample_degrade_spec(rng, config=ScenarioConfig()):
    kernel = int(rng.choice(config.blur_kernels))
    sigma = float(rng.uniform(*config.noise_range))
    return DegradeSpec(kernel, sigma)


def degrade(obs, spec, rng):
    pixels = obs.pixels if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
    out = blur(pixels, spec.kernel)
    if spec.sigma > 0:
        out = out + rng.normal(0.0, spec.sigma, size=out.shape)
    return Observation(np.clip(out, 0.0, 1.0), degraded=True)


def _shift_into_frame(raw, dx, dy):
    """Content at frame cell (i, j) is ``raw[i - dx, j - dy]``; zeros where that falls outside."""
    c, h, w = raw.shape
    out = np.zeros_like(raw)
    if abs(dx) >= h or abs(dy) >= w:
        return out
    out[:, max(0, dx):h + min(0, dx), max(0, dy):w + min(0, dy)] = \
        raw[:, max(0, -dx):h - max(0, dx), max(0, -dy):w - max(0, dy)]
    return out


def _pick_best(values):
    values = list(values)
    return max(range(len(values)), key=lambda i: (values[i], -i))


def make_episode(world, setting, rng, config=ScenarioConfig()):
    setting = Setting(setting)
    H = config.image_size
    L = world.labels.shape[0]
    n = config.num_normals
    spec = sample_degrade_spec(rng, config)

    if setting == Setting.HIDDEN_TARGET:
        tx, ty = (int(v) for v in rng.integers(0, L - H + 1, size=2))
        clean, labels = render_view(world, tx, ty, H)
        corners = []
        while len(corners) < n - 1:
            c = tuple(int(v) for v in rng.integers(0, L - H + 1, size=2))
            if overlap_fraction(c, (tx, ty), H) == 0.0:
                corners.append(c)
        best = int(rng.integers(0, n))
        views = [render_view(world, *c, H)[0] for c in corners]
        views.insert(best, Observation(clean.pixels.copy()))
        overlaps = np.zeros(n)
        overlaps[best] = 1.0
        target = degrade(clean, spec, rng)
        return Episode(target, clean.pixels, labels, views, best, setting, overlaps, world.seed,
                       np.zeros((n, 2), dtype=int))

    tx, ty = (int(v) for v in rng.integers(H, L - 2 * H + 1, size=2))
    clean, labels = render_view(world, tx, ty, H)
    if setting == Setting.RANDOM_EXPLORATION:
        while True:
            shifts = rng.integers(-H, H + 1, size=(n, 2))
            overlaps = np.array([overlap_fraction((tx + a, ty + b), (tx, ty), H) for a, b in shifts])
            if overlaps.max() > 0:
                break
    else:
        if all(hi == 0.0 for _, hi in config.overlap_ranges):
            raise GenerationError("all overlap ranges are zero; no agent sees any of the target view")
        slots = rng.permutation(n) if config.shuffle_agents else np.arange(n)
        fractions = np.empty(n)
        for agent, slot in enumerate(slots):
            lo, hi = config.overlap_ranges[slot]
            fractions[agent] = rng.uniform(lo, hi)
        deltas = np.clip(np.rint(H * (1.0 - fractions)).astype(int), 0, H)
        axes = rng.integers(0, 2, size=n)
        signs = rng.choice([-1, 1], size=n)
        shifts = np.zeros((n, 2), dtype=int)
        shifts[np.arange(n), axes] = signs * deltas
        overlaps = (H - deltas) / H
        if overlaps.max() == 0.0:
            raise GenerationError("sampled overlaps are all zero")

    offsets = np.zeros((n, 2), dtype=int)
    if setting == Setting.INACCURATE_POSE and config.pose_noise > 0:
        offsets = rng.integers(-config.pose_noise, config.pose_noise + 1, size=(n, 2))

    views = []
    for (a, b), (ea, eb) in zip(shifts, offsets):
        a, b = int(a), int(b)
        raw = world.appearance[:, tx + a:tx + a + H, ty + b:ty + b + H]
        views.append(Observation(_shift_into_frame(raw, a - int(ea), b - int(eb))))
    target = degrade(clean, spec, rng)
    best = _pick_best(overlaps)
    return Episode(target, clean.pixels, labels, views, best, setting, overlaps, world.seed, offsets)


def recompute_best_agent(episode):
    if episode.setting == Setting.HIDDEN_TARGET:
        hits = [i for i, v in enumerate(episode.normals) if np.array_equal(v.pixels, episode.target_clean)]
        if len(hits) != 1:
            raise GenerationError(f"expected exactly one hidden clean view, found {len(hits)}")
        return hits[0]
    return _pick_best(episode.overlaps)


DEFAULT_SEEDS = {"train": (0, 60), "val": (1000, 1020), "test": (2000, 2020)}
DEFAULT_SIZES = {"train": 600, "val": 200, "test": 200}
_SETTING_CODE = {s: i for i, s in enumerate(Setting)}
_SCENARIO_STREAM = zlib.crc32(b"scenario")


def build_split(setting, seeds=None, sizes=None, config=ScenarioConfig(), seed=0):
    """Deterministic train/val/test episode lists from disjoint world-seed ranges.

    Worlds depend only on their world seed; episode sampling (views,
    degradation, distractors) also mixes in the master ``seed``.
    """
    setting = Setting(setting)
    seeds = dict(DEFAULT_SEEDS if seeds is None else seeds)
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    if set(seeds) != set(sizes):
        raise ConfigError(f"seed ranges {sorted(seeds)} and sizes {sorted(sizes)} name different splits")
    ranges = {k: range(*v) for k, v in seeds.items()}
    names = sorted(ranges)
    for i, a in enumerate(names):
        if len(ranges[a]) == 0:
            raise ConfigError(f"empty seed range for split {a!r}")
        for b in names[i + 1:]:
            if set(ranges[a]) & set(ranges[b]):
                raise ConfigError(f"seed ranges of {a!r} and {b!r} overlap")
    out = {}
    for name, rng_seeds in ranges.items():
        worlds = {}
        episodes = []
        for i in range(sizes[name]):
            ws = rng_seeds[i % len(rng_seeds)]
            if ws not in worlds:
                worlds[ws] = generate_world(ws, config.num_classes, config.world_size, config.world_sites,
                                            config.texture_noise, config.shading)
            rng = np.random.default_rng([seed, _SCENARIO_STREAM, ws, i, _SETTING_CODE[setting]])
            episodes.append(make_episode(worlds[ws], setting, rng, config))
        out[name] = episodes
    return out


def stack_episodes(episodes):
    """Batch arrays: degraded targets, clean targets, normals (B, n, ...), labels."""
    return {
        "target": np.stack([e.target.pixels for e in episodes]),
        "clean": np.stack([e.target_clean for e in episodes]),
        "normals": np.stack([np.stack([v.pixels for v in e.normals]) for e in episodes]),
        "labels": np.stack([e.labels for e in episodes]),
    }


# -- export / import --------------------------------------------------------

def episodes_bytes(episodes, meta=None):
    header = {"meta": meta or {}, "episodes": []}
    tensors = []
    for i, e in enumerate(episodes):
        header["episodes"].append({"best_agent": e.best_agent, "setting": e.setting.value,
                                   "world_seed": e.world_seed})
        tensors += [
            (f"{i}.target", e.target.pixels),
            (f"{i}.target_clean", e.target_clean),
            (f"{i}.labels", e.labels.astype(np.float64)),
            (f"{i}.normals", np.stack([v.pixels for v in e.normals])),
            (f"{i}.overlaps", e.overlaps),
            (f"{i}.offsets", np.asarray(e.offsets, dtype=np.float64)),
        ]
    return encode_container(EPISODES_MAGIC, EPISODES_VERSION, header, tensors)


def save_episodes(episodes, path, meta=None):
    write_file(path, episodes_bytes(episodes, meta))


def load_episodes(path):
    """Returns ``(episodes, meta)``."""
    header, tensors = decode_container(read_file(path), EPISODES_MAGIC, EPISODES_VERSION)
    episodes = []
    try:
        for i, info in enumerate(header["episodes"]):
            episodes.append(Episode(
                target=Observation(tensors[f"{i}.target"], degraded=True),
                target_clean=tensors[f"{i}.target_clean"],
                labels=tensors[f"{i}.labels"].astype(np.int64),
                normals=[Observation(v) for v in tensors[f"{i}.normals"]],
                best_agent=int(info["best_agent"]),
                setting=Setting(info["setting"]),
                overlaps=tensors[f"{i}.overlaps"],
                world_seed=int(info["world_seed"]),
                offsets=tensors[f"{i}.offsets"].astype(np.int64),
            ))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed episode container: {exc}") from exc
    return episodes, header.get("meta", {})
