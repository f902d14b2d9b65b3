"""Request / match / connect over an in-memory network with a byte ledger.

Compute is float64; the ledger charges every transmitted scalar at the
32-bit wire size. Payloads themselves are delivered unchanged.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .attention import select_argmax, selection_weights
from .errors import ConfigError, HandshakeTimeout, StateError
from .model import Method

BYTES_PER_SCALAR = 4
POSE_SCALARS = 6
TARGET = "target"


def agent_name(i):
    return f"agent{i}"


class Stage(str, Enum):
    REQUEST = "request"
    MATCH = "match"
    CONNECT = "connect"


class Mode(str, Enum):
    TRAIN = "train"
    INFER = "infer"
    # all maps transmitted and softmax-fused, reported as inference bandwidth
    CENTRALIZED = "centralized"


class HandshakeState(str, Enum):
    IDLE = "idle"
    REQUEST_BROADCAST = "request_broadcast"
    SCORES_COLLECTED = "scores_collected"
    CONNECTED = "connected"
    DONE = "done"


_ORDER = list(HandshakeState)


@dataclass(frozen=True)
class LedgerEntry:
    stage: Stage
    src: str
    dst: str
    kind: str
    elements: int
    bytes: int


@dataclass
class BandwidthLedger:
    entries: list = field(default_factory=list)
    bytes_per_scalar: int = BYTES_PER_SCALAR
    training_only: bool = False

    def record(self, stage, src, dst, kind, elements):
        entry = LedgerEntry(Stage(stage), src, dst, kind, int(elements), int(elements) * self.bytes_per_scalar)
        self.entries.append(entry)
        return entry

    @property
    def total_bytes(self):
        return sum(e.bytes for e in self.entries)

    def stage_bytes(self, stage):
        return sum(e.bytes for e in self.entries if e.stage == Stage(stage))

    @property
    def kbpf(self):
        return ledger_total_kbpf(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "from", "to", "kind", "bytes"])
        for e in self.entries:
            w.writerow([e.stage.value, e.src, e.dst, e.kind, e.bytes])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        ledger = cls()
        for row in csv.DictReader(io.StringIO(text)):
            nbytes = int(row["bytes"])
            if nbytes % ledger.bytes_per_scalar:
                raise ValueError(f"byte count {nbytes} is not a whole number of wire scalars")
            ledger.record(row["stage"], row["from"], row["to"], row["kind"], nbytes // ledger.bytes_per_scalar)
        return ledger


def ledger_total_kbpf(ledger):
    return ledger.total_bytes / 1024


class SimulatedNetwork:
    """Lossless, zero-latency delivery. ``drop(stage, src, dst)`` returning True loses a payload."""

    def __init__(self, ledger, drop=None):
        self.ledger = ledger
        self.drop = drop
        self.delivered = []

    def send(self, stage, src, dst, kind, payload):
        payload = np.asarray(payload, dtype=np.float64)
        if self.drop is not None and self.drop(Stage(stage), src, dst):
            responder = src if src != TARGET else dst
            raise HandshakeTimeout(Stage(stage).value, responder)
        self.ledger.record(stage, src, dst, kind, payload.size)
        self.delivered.append((Stage(stage), src, dst, kind, payload.size))
        return payload


@dataclass
class HandshakeOutcome:
    scores: np.ndarray | None
    selected: list
    received: list
    fused: np.ndarray
    ledger: BandwidthLedger
    state: HandshakeState = HandshakeState.DONE


class NormalAgent:
    def __init__(self, index, obs, model):
        self.index = index
        self.name = agent_name(index)
        self.obs = obs
        self.model = model
        self.inbox = []

    def on_request(self, mu):
        self.inbox.append(mu)
        return np.array([self.model.score(mu, self.model.key(self.obs))])

    def on_connect(self):
        return self.model.feature_map(self.obs)


class Handshake:
    """One protocol run from the target agent's point of view."""

    def __init__(self, target_obs, normal_obs, model, mode=Mode.INFER, pose=False, drop=None):
        if len(normal_obs) < 1:
            raise ConfigError("a handshake needs at least two agents")
        if len(normal_obs) != model.config.num_normals:
            raise ConfigError(f"model configured for {model.config.num_normals} normal agents, got {len(normal_obs)}")
        if not model.config.method.scores:
            raise ConfigError(f"method {model.config.method.value!r} does not run a handshake")
        self.model = model
        self.mode = Mode(mode)
        self.pose = pose
        self.target_obs = target_obs
        self.agents = [NormalAgent(i, o, model) for i, o in enumerate(normal_obs)]
        self.ledger = BandwidthLedger(training_only=self.mode == Mode.TRAIN)
        self.net = SimulatedNetwork(self.ledger, drop)
        self.state = HandshakeState.IDLE
        self.scores = None
        self.selected = []
        self.received = []

    def _advance(self, to):
        if _ORDER.index(to) != _ORDER.index(self.state) + 1:
            raise StateError(f"illegal transition {self.state.value} -> {to.value}")
        self.state = to

    def request(self):
        self._advance(HandshakeState.REQUEST_BROADCAST)
        mu = self.model.message(self.target_obs)
        sent = mu if self.model.config.method != Method.OURS_NOMSG else np.zeros(0)
        for a in self.agents:
            if self.pose:
                self.net.send(Stage.REQUEST, TARGET, a.name, "pose", np.zeros(POSE_SCALARS))
            self.net.send(Stage.REQUEST, TARGET, a.name, "message", sent)
        # the no-message variant's request carries no payload; receivers use the known constant
        self._mu = mu

    def match(self):
        self._advance(HandshakeState.SCORES_COLLECTED)
        scores = []
        for a in self.agents:
            s = a.on_request(self._mu)
            scores.append(float(self.net.send(Stage.MATCH, a.name, TARGET, "score", s)[0]))
        self.scores = np.array(scores)

    def connect(self):
        self._advance(HandshakeState.CONNECTED)
        if self.mode == Mode.INFER:
            self.selected = select_argmax(self.scores, self.model.config.top_n)
        else:
            self.selected = list(range(len(self.agents)))
        for i in self.selected:
            a = self.agents[i]
            self.received.append(self.net.send(Stage.CONNECT, a.name, TARGET, "feature_map", a.on_connect()))

    def finish(self):
        self._advance(HandshakeState.DONE)
        weights = selection_weights(self.scores[self.selected])
        fused = np.tensordot(weights, np.stack(self.received), axes=1)
        return HandshakeOutcome(self.scores, list(self.selected), list(self.received), fused, self.ledger,
                                self.state)

    def run(self):
        self.request()
        self.match()
        self.connect()
        return self.finish()


def run_handshake(target_obs, normal_obs, model, mode=Mode.INFER, *, pose=False, drop=None):
    """Full request/match/connect run. In infer mode only the top-n maps travel."""
    return Handshake(target_obs, normal_obs, model, mode, pose, drop).run()


def transmit_direct(normal_obs, model, selected, *, pose=False, drop=None):
    """Connect-only transfer used by the baselines that skip request/match.

    With ``pose`` the target's pose goes to each sender first so it can warp
    its view into the target frame.
    """
    ledger = BandwidthLedger()
    net = SimulatedNetwork(ledger, drop)
    if pose:
        for i in selected:
            net.send(Stage.REQUEST, TARGET, agent_name(i), "pose", np.zeros(POSE_SCALARS))
    received = [net.send(Stage.CONNECT, agent_name(i), TARGET, "feature_map", model.feature_map(normal_obs[i]))
                for i in selected]
    return received, ledger


def check_stage_order(ledger):
    """True when no match entry precedes a request and no connect precedes a match."""
    rank = {Stage.REQUEST: 0, Stage.MATCH: 1, Stage.CONNECT: 2}
    seq = [rank[e.stage] for e in ledger.entries]
    return all(a <= b for a, b in zip(seq, seq[1:]))
