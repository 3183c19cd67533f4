"""Conversation policy: state features, rewards, MLP policy and its updates.

The state is ``[s_ent, s_user, s_conv, s_dial]``: per-attribute entropy over
the candidates, user/attribute affinity, affinity to the attributes confirmed
so far, and a candidate-size one-hot plus the turn history.
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import artifacts, embed
from .embed import ROLE_1P, ROLE_2P, ROLE_2U
from .config import RewardConfig
from .errors import AllActionsMasked, CheckpointMismatch, EmptyCandidates, HistoryTooLong, MissingLocation
from .graph import Kind


class TurnOutcome(enum.IntEnum):
    POSITIVE_ASK = 1
    IRRELEVANT_ASK = 0
    REJECTED_REC = -1


class UserResponse(enum.Enum):
    ACCEPT = "accept"
    RELEVANT = "relevant"
    IRRELEVANT = "irrelevant"
    REJECT = "reject"
    QUIT = "quit"


# -- state features -------------------------------------------------------------

def _xlogx(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy_from_fraction(p, mode: str = "binary") -> np.ndarray:
    """Entropy of attribute presence given the fraction ``p`` of candidates carrying it."""
    p = np.asarray(p, dtype=float)
    if mode == "single":
        return -_xlogx(p)
    return -_xlogx(p) - _xlogx(1.0 - p)


def entropy_vector(item_attr_matrix: np.ndarray, candidates: Iterable[int], mode: str = "binary") -> np.ndarray:
    cand = np.fromiter(candidates, dtype=np.int64)
    if cand.size == 0:
        raise EmptyCandidates("entropy over an empty candidate set")
    frac = item_attr_matrix[cand].sum(axis=0) / cand.size
    return entropy_from_fraction(frac, mode)


def user_pref_vector(scorer, u: int) -> np.ndarray:
    """``u2 . p2`` for every attribute; removed attributes read 0."""
    g, p = scorer.g, scorer.params
    F = scorer.representations()
    lo = g.offsets[Kind.ATTR]
    P = embed.role_project(p, F[lo:lo + g.n_attrs], ROLE_2P, scorer.identity)
    u2 = embed.role_project(p, F[g.offsets[Kind.USER] + u], ROLE_2U, scorer.identity)
    out = P @ u2
    out[g.alive[lo:lo + g.n_attrs] == 0] = 0.0
    return out


def conv_pref_vector(scorer, confirmed: Iterable[int]) -> np.ndarray:
    """``sum_{q in P_u} q1 . p1`` for every attribute ``p``; removed attributes read 0."""
    g, p = scorer.g, scorer.params
    lo = g.offsets[Kind.ATTR]
    alive = g.alive[lo:lo + g.n_attrs] != 0
    confirmed = [a for a in confirmed if alive[a]]
    if not confirmed:
        return np.zeros(g.n_attrs)
    F = scorer.representations()
    P = embed.role_project(p, F[lo:lo + g.n_attrs], ROLE_1P, scorer.identity)
    out = P @ P[confirmed].sum(axis=0)
    out[~alive] = 0.0
    return out


def bin_index(count: int, bins: Sequence[int]) -> int:
    """Bin of ``count`` given ascending upper boundaries; ``len(bins)`` is the overflow bin."""
    return bisect.bisect_left(list(bins), count)


def dialogue_vector(history: Sequence[int], candidate_count: int, T: int, bins: Sequence[int]) -> np.ndarray:
    if len(history) > T:
        raise HistoryTooLong(f"{len(history)} turns exceed T={T}")
    onehot = np.zeros(len(bins) + 1)
    onehot[bin_index(candidate_count, bins)] = 1.0
    hist = np.zeros(T)
    hist[:len(history)] = [int(h) for h in history]
    return np.concatenate([onehot, hist])


def state_size(n_attrs: int, T: int, bins: Sequence[int]) -> int:
    return 3 * n_attrs + len(bins) + 1 + T


def encode_state(s_ent, s_user, s_conv, s_dial, graph_con: bool = False) -> np.ndarray:
    s_user = np.zeros_like(s_user) if graph_con else s_user
    s_conv = np.zeros_like(s_conv) if graph_con else s_conv
    return np.concatenate([s_ent, s_user, s_conv, s_dial])


# -- rewards --------------------------------------------------------------------

def compute_reward(event: UserResponse, cfg: RewardConfig, loc_before: int | None = None,
                   loc_after: int | None = None) -> float:
    if event is UserResponse.ACCEPT:
        return cfg.r_item
    if event is UserResponse.QUIT:
        return cfg.r_quit
    if event is UserResponse.RELEVANT:
        r = cfg.r_attr + cfg.r_turn
        if cfg.mode.upper() == "FG":
            if loc_before is None or loc_after is None:
                raise MissingLocation("fine-grained reward needs the target position before and after")
            r = r + cfg.beta * (loc_before - loc_after) / loc_before
        return r
    return cfg.r_turn


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = []
    running = 0.0
    for r in reversed(rewards):
        running = r + gamma * running
        out.append(running)
    return out[::-1]


# -- MLP policy -----------------------------------------------------------------

@dataclass
class PolicyParams:
    weights: list                      # (out, in) matrices
    biases: list
    meta: dict = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"], out[f"b{i}"] = w, b
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], dict(self.meta))

    def digest(self) -> str:
        return artifacts.digest(*self.arrays().values())


def init_policy(sizes: Sequence[int], rng: np.random.Generator, scale: float = 1.0,
                zero_output: bool = True) -> PolicyParams:
    """Glorot-uniform hidden weights and zero biases.

    The output layer starts at zero so the first policy is uniform over the
    unmasked actions; state features are unnormalised dot products and a random
    output layer would start out nearly deterministic.
    """
    ws, bs = [], []
    layers = list(zip(sizes[:-1], sizes[1:]))
    for i, (n_in, n_out) in enumerate(layers):
        lim = scale * np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-lim, lim, size=(n_out, n_in))
        if zero_output and i == len(layers) - 1:
            w[:] = 0.0
        ws.append(w)
        bs.append(np.zeros(n_out))
    return PolicyParams(ws, bs)


def _forward(theta: PolicyParams, S: np.ndarray):
    acts = [S]
    h = S
    for i, (w, b) in enumerate(zip(theta.weights, theta.biases)):
        z = h @ w.T + b
        h = z if i == len(theta.weights) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise AllActionsMasked("no action is available")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(theta: PolicyParams, s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    logits = _forward(theta, np.atleast_2d(s))[-1]
    probs = masked_softmax(logits, np.atleast_2d(mask))
    return probs[0] if np.ndim(s) == 1 else probs


def logprob_grad(theta: PolicyParams, S: np.ndarray, masks: np.ndarray, actions: np.ndarray,
                 weights: np.ndarray):
    """Value and gradient of ``sum_t weights_t * log pi(a_t | s_t)``."""
    S = np.atleast_2d(S)
    acts = _forward(theta, S)
    probs = masked_softmax(acts[-1], masks)
    idx = np.arange(len(actions))
    value = float(np.sum(weights * np.log(probs[idx, actions])))
    d = -probs * weights[:, None]
    d[idx, actions] += weights
    gw, gb = [None] * len(theta.weights), [None] * len(theta.weights)
    for i in range(len(theta.weights) - 1, -1, -1):
        gw[i] = d.T @ acts[i]
        gb[i] = d.sum(axis=0)
        if i:
            d = (d @ theta.weights[i]) * (acts[i] > 0)
    return value, gw, gb


class Optimizer:
    """SGD or Adam ascent on policy parameters."""

    def __init__(self, kind: str = "sgd", lr: float = 0.001, betas=(0.9, 0.999), eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr, self.betas, self.eps = kind, lr, betas, eps
        self.t = 0
        self.state = None

    def ascend(self, theta: PolicyParams, gw, gb) -> None:
        params = theta.weights + theta.biases
        grads = list(gw) + list(gb)
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p += self.lr * g
            return
        if self.state is None:
            self.state = [(np.zeros_like(p), np.zeros_like(p)) for p in params]
        self.t += 1
        b1, b2 = self.betas
        for (m, v), p, g in zip(self.state, params, grads):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p += self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, state, action, reward, mask) -> None:
        self.states.append(state)
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.masks.append(np.asarray(mask, dtype=bool))


def reinforce_update(theta: PolicyParams, traj: Trajectory, gamma: float, lr: float | None = None,
                     optimizer: Optimizer | None = None, baseline: bool = False) -> float:
    """``theta += lr * sum_t G_t grad log pi(a_t|s_t)``; returns the objective before the step."""
    if not len(traj):
        return 0.0
    G = np.array(discounted_returns(traj.rewards, gamma))
    if baseline:
        G = G - G.mean()
    if not np.any(G):
        return 0.0
    opt = optimizer or Optimizer("sgd", lr if lr is not None else 0.001)
    value, gw, gb = logprob_grad(theta, np.array(traj.states), np.array(traj.masks),
                                 np.array(traj.actions), G)
    opt.ascend(theta, gw, gb)
    return value


def fit_imitation(theta: PolicyParams, states, masks, actions, epochs: int, optimizer: Optimizer,
                  rng: np.random.Generator, batch_size: int = 64) -> list[float]:
    """Minimise masked cross-entropy ``-log pi(teacher action | s)``; returns per-epoch mean loss."""
    S = np.asarray(states, dtype=float)
    M = np.asarray(masks, dtype=bool)
    A = np.asarray(actions, dtype=np.int64)
    log = []
    if not len(A):
        return log
    for _ in range(epochs):
        order = rng.permutation(len(A))
        total = 0.0
        for lo in range(0, len(A), batch_size):
            idx = order[lo:lo + batch_size]
            value, gw, gb = logprob_grad(theta, S[idx], M[idx], A[idx], np.full(len(idx), 1.0 / len(idx)))
            optimizer.ascend(theta, gw, gb)
            total -= value * len(idx)
        log.append(total / len(A))
    return log


def save_policy(path, theta: PolicyParams, layout: dict, config: dict, config_hash: str,
                extra: dict | None = None) -> None:
    meta = {**(extra or {}), "sizes": theta.sizes, "layout": layout, "config": config, "config_hash": config_hash}
    artifacts.save(path, "kgcrs-policy", theta.arrays(), meta)


def load_policy(path, layout: dict | None = None) -> PolicyParams:
    arrays, meta = artifacts.load(path, "kgcrs-policy")
    if layout is not None and meta["layout"] != layout:
        raise CheckpointMismatch(f"{path}: state layout {meta['layout']} != expected {layout}")
    n = len(meta["sizes"]) - 1
    return PolicyParams([arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)], meta)
