"""Centralized training, decentralized execution, and the baseline pipelines."""
from __future__ import annotations

import dataclasses
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import attention, metrics
from .errors import ConfigError, DivergenceError
from .model import Method, Model, ModelConfig, Prediction, compress, decode, encode, gen_key, gen_message, init_params
from .protocol import BandwidthLedger, HandshakeOutcome, Mode, run_handshake, transmit_direct
from .scenario import ScenarioConfig, degrade, sample_degrade_spec, stack_episodes
from .tensor import AdamState, Tape, adam_step

log = logging.getLogger(__name__)


def substream(seed, name):
    """Independent generator for a named consumer of the master seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 500
    # draw a fresh blur/noise realization for the target each time an episode is batched
    redegrade: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.eval_every < 1 or self.iterations % self.eval_every:
            raise ConfigError(f"eval_every ({self.eval_every}) must divide iterations ({self.iterations})")


@dataclass
class TrainResult:
    params: object
    config: TrainConfig
    losses: np.ndarray
    history: list

    def history_csv(self):
        lines = ["iteration,loss,val_accuracy,val_selection_accuracy"]
        for row in self.history:
            sel = "" if row["val_selection_accuracy"] is None else repr(row["val_selection_accuracy"])
            lines.append(f"{row['iteration']},{row['loss']!r},{row['val_accuracy']!r},{sel}")
        return "\n".join(lines) + "\n"


def loss(pred, labels):
    """Mean per-cell cross-entropy of a Prediction (or raw logits) against a label grid."""
    logits = pred.logits if isinstance(pred, Prediction) else np.asarray(pred, dtype=np.float64)
    tape = Tape(grad=False)
    return float(tape.cross_entropy(tape.constant(logits), np.asarray(labels)).value)


# -- batched forward passes -------------------------------------------------

def _encode_views(tape, store, arrays):
    target, normals = arrays["target"], arrays["normals"]
    b, n = normals.shape[:2]
    views = np.concatenate([target[:, None], normals], axis=1)
    feats = encode(tape, store, tape.constant(views.reshape((b * (n + 1),) + views.shape[2:])))
    feats = tape.reshape(feats, (b, n + 1) + feats.shape[1:])
    return tape.index(feats, (slice(None), 0)), tape.index(feats, (slice(None), slice(1, None)))


def _message(tape, store, config, f_t):
    if config.method == Method.OURS_NOMSG:
        return tape.constant(np.ones((f_t.shape[0], config.message_size)))
    return gen_message(tape, store, f_t)


def batch_scores(tape, store, config, f_t, f_n):
    mu = _message(tape, store, config, f_t)
    keys = gen_key(tape, store, f_n)
    return attention.batch_scores(tape, store, config.variant, mu, keys)


def _select_rows(tape, f_n, sel):
    return tape.index(f_n, (np.arange(f_n.shape[0]), np.asarray(sel)))


def batch_forward(tape, store, config, arrays, *, infer=False, rng=None):
    """Logits for a batch, plus match scores (or None) and inference selections.

    Training fuses every normal agent's map by softmax weights; inference
    (``infer=True``) decodes from the top-n maps only. Ground-truth best-agent
    labels are never part of ``arrays``.
    """
    method = config.method
    if method == Method.SINGLE_NORMAL or method == Method.SINGLE_DEGRADED:
        x = arrays["clean"] if method == Method.SINGLE_NORMAL else arrays["target"]
        f = encode(tape, store, tape.constant(x))
        return decode(tape, store, f, f), None, None
    f_t, f_n = _encode_views(tape, store, arrays)
    b, n = f_n.shape[:2]
    if method == Method.CATALL:
        return decode(tape, store, f_t, tape.reshape(f_n, (b, -1) + f_n.shape[3:])), None, None
    if method == Method.COMPRESSION:
        c = compress(tape, store, tape.reshape(f_n, (b * n,) + f_n.shape[2:]))
        return decode(tape, store, f_t, tape.reshape(c, (b, -1) + c.shape[2:])), None, None
    if method == Method.RANDOM:
        if rng is None:
            raise ConfigError("random selection needs an rng")
        sel = rng.integers(0, n, size=b)
        return decode(tape, store, f_t, _select_rows(tape, f_n, sel)), None, sel[:, None]

    scores = batch_scores(tape, store, config, f_t, f_n)
    if not infer or method == Method.ATTENTION:
        fused = tape.weighted_sum(tape.softmax_rows(scores), f_n)
        return decode(tape, store, f_t, fused), scores, None
    top = np.array([attention.select_argmax(row, config.top_n) for row in scores.value])
    if config.top_n == 1:
        return decode(tape, store, f_t, _select_rows(tape, f_n, top[:, 0])), scores, top
    w = np.stack([attention.selection_weights(row[t]) for row, t in zip(scores.value, top)])
    picked = tape.constant(np.stack([fv[t] for fv, t in zip(f_n.value, top)]))
    return decode(tape, store, f_t, tape.weighted_sum(tape.constant(w), picked)), scores, top


def predict_batch(store, config, arrays, rng=None):
    """Gradient-free batched inference. Returns ``(logits, selections)``."""
    logits, _, sel = batch_forward(Tape(grad=False), store, config, arrays, infer=True, rng=rng)
    return logits.value, sel


# -- per-episode paths ------------------------------------------------------

def forward_train(episode, model):
    """Training-mode prediction (softmax fusion) and match scores for one episode."""
    arrays = stack_episodes([episode])
    tape = Tape(grad=False)
    rng = np.random.default_rng(0) if model.config.method == Method.RANDOM else None
    logits, scores, _ = batch_forward(tape, model.params, model.config, arrays, rng=rng)
    return Prediction(logits.value[0]), (None if scores is None else scores.value[0])


def forward_infer(episode, model, rng=None, drop=None):
    """Decentralized execution: run the protocol, then decode with what arrived."""
    cfg = model.config
    method = cfg.method
    pose = episode.setting.uses_pose
    if method.single:
        obs = episode.target_clean if method == Method.SINGLE_NORMAL else episode.target.pixels
        f = model.encode(obs)
        return model.decode(f, f), HandshakeOutcome(None, [], [], f, BandwidthLedger())
    f_t = model.encode(episode.target)
    if method.scores:
        mode = Mode.CENTRALIZED if method == Method.ATTENTION else Mode.INFER
        out = run_handshake(episode.target, episode.normals, model, mode, pose=pose, drop=drop)
        return model.decode(f_t, out.fused), out
    n = cfg.num_normals
    if method == Method.RANDOM:
        if rng is None:
            raise ConfigError("random selection needs an rng")
        selected = [int(rng.integers(0, n))]
    else:
        selected = list(range(n))
    received, ledger = transmit_direct(episode.normals, model, selected, pose=pose, drop=drop)
    f_r = received[0] if method == Method.RANDOM else np.concatenate(received, axis=0)
    return model.decode(f_t, f_r), HandshakeOutcome(None, selected, received, f_r, ledger)


# -- training ---------------------------------------------------------------

def _check_dataset(config, episodes):
    if not episodes:
        raise ConfigError("empty training set")
    e = episodes[0]
    mc = config.model
    if len(e.normals) != mc.num_normals:
        raise ConfigError(f"episodes have {len(e.normals)} normal agents, model expects {mc.num_normals}")
    expect = (mc.in_channels, mc.image_size, mc.image_size)
    if e.target.pixels.shape != expect:
        raise ConfigError(f"observations are {e.target.pixels.shape}, model expects {expect}")
    if e.labels.max() >= mc.num_classes:
        raise ConfigError(f"labels exceed num_classes={mc.num_classes}")


def evaluate_batched(store, config, arrays, best=None, rng=None, chunk=100):
    """Overall accuracy (and selection accuracy given ``best``) via batched inference."""
    preds, sels = [], []
    total = arrays["labels"].shape[0]
    for s in range(0, total, chunk):
        part = {k: v[s:s + chunk] for k, v in arrays.items()}
        logits, sel = predict_batch(store, config, part, rng)
        preds.append(logits.argmax(axis=1))
        if sel is not None:
            sels.extend(list(r) for r in sel)
    acc = metrics.overall_accuracy(np.concatenate(preds), arrays["labels"])
    sel_acc = None
    if best is not None and sels:
        sel_acc = metrics.selection_accuracy(sels, best)
    return acc, sel_acc


def redegrade_batch(clean, rng, scenario=ScenarioConfig()):
    return np.stack([degrade(x, sample_degrade_spec(rng, scenario), rng).pixels for x in clean])


def train(config, train_episodes, val_episodes=None, params=None, scenario=ScenarioConfig()):
    """Adam on mean cross-entropy against the target's labels only.

    With ``config.redegrade`` the degraded target of every drawn episode is
    re-sampled from the clean view under ``scenario``'s blur/noise ranges;
    validation always uses the stored degraded views.
    """
    _check_dataset(config, train_episodes)
    mc = config.model
    store = init_params(mc, substream(config.seed, "init")) if params is None else params
    state = AdamState.for_params(store, lr=config.lr)
    batch_rng = substream(config.seed, "training")
    sel_rng = substream(config.seed, "selection")
    deg_rng = substream(config.seed, "degradation")
    data = stack_episodes(train_episodes)
    val = stack_episodes(val_episodes) if val_episodes else None
    val_best = [e.best_agent for e in val_episodes] if val_episodes else None

    n = len(train_episodes)
    order = np.empty(0, dtype=int)
    losses = np.empty(config.iterations)
    history = []
    for it in range(1, config.iterations + 1):
        if order.size < config.batch_size:
            order = np.concatenate([order, batch_rng.permutation(n)])
        idx, order = order[:config.batch_size], order[config.batch_size:]
        batch = {k: v[idx] for k, v in data.items()}
        if config.redegrade:
            batch["target"] = redegrade_batch(batch["clean"], deg_rng, scenario)
        store.zero_grad()
        tape = Tape()
        logits, _, _ = batch_forward(tape, store, mc, batch, rng=sel_rng)
        value = tape.cross_entropy(logits, batch["labels"])
        lv = float(value.value)
        if not np.isfinite(lv):
            raise DivergenceError(it, lv)
        tape.backward(value)
        adam_step(store, state)
        losses[it - 1] = lv
        if it % config.eval_every == 0:
            row = {"iteration": it, "loss": float(losses[it - config.eval_every:it].mean()),
                   "val_accuracy": float("nan"), "val_selection_accuracy": None}
            if val is not None:
                acc, sel = evaluate_batched(store, mc, val, val_best, rng=substream(config.seed, "val-selection"))
                row["val_accuracy"], row["val_selection_accuracy"] = acc, sel
            history.append(row)
            log.info("iter %d loss %.4f val_acc %.4f val_sel %s", it, row["loss"], row["val_accuracy"],
                     row["val_selection_accuracy"])
    return TrainResult(store, config, losses, history)


# -- evaluation of a trained model -----------------------------------------

def evaluate(model, episodes, seed=0):
    """Protocol-level evaluation over a test set: one MetricsRecord (BIS unset)."""
    rng = substream(seed, "eval-selection")
    preds, labels, selected, best = [], [], [], []
    kbpf = []
    for e in episodes:
        pred, out = forward_infer(e, model, rng=rng)
        preds.append(pred.labels)
        labels.append(e.labels)
        if model.config.method.single:
            continue
        kbpf.append(out.ledger.kbpf)
        selected.append(out.selected)
        best.append(e.best_agent)
    method = model.config.method
    sel_acc = None
    if method in (Method.RANDOM, Method.OURS_MSG, Method.OURS_NOMSG):
        sel_acc = metrics.selection_accuracy(selected, best)
    return metrics.MetricsRecord(
        method=method.label,
        overall_acc=metrics.overall_accuracy(np.stack(preds), np.stack(labels)),
        kbpf=float(np.mean(kbpf)) if kbpf else None,
        selection_acc=sel_acc,
        episodes=len(episodes),
    )


def run_baseline(kind, dataset, config):
    """Train ``kind`` on ``dataset['train']`` and evaluate on ``dataset['test']``."""
    kind = Method(kind)
    cfg = dataclasses.replace(config, model=dataclasses.replace(config.model, method=kind))
    result = train(cfg, dataset["train"], dataset.get("val"))
    record = evaluate(Model(cfg.model, result.params), dataset["test"], seed=cfg.seed)
    return record, result
