"""Multi-round conversation sessions against a scripted user.

The simulated user holds a target item and answers every question with the
intersection of the asked attributes and the target's attributes.  Each
session works on its own graph overlay and, once fine-tuning starts, its own
copy of the embedding parameters.
"""
from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import policy as pol
from .config import RunConfig
from .errors import (ActionAlreadyAsked, DivergenceDetected, KGCRSError, RecommendationOutsideCandidates,
                     TargetHasNoAttributes)
from .graph import Kind, KnowledgeGraph
from .recommender import Scorer

log = logging.getLogger(__name__)

# seed-stream tags mixed into every per-session SeedSequence
STREAM_TRAIN, STREAM_EVAL, STREAM_PRETRAIN, STREAM_PAIRS, STREAM_INIT, STREAM_VALID = range(6)


def session_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


class Outcome(enum.Enum):
    ONGOING = "ongoing"
    SUCCESS = "success"
    QUIT = "quit"


@dataclass(frozen=True)
class QuestionScheme:
    """Question actions ``0..N_q-1`` and the attribute set each one asks about."""

    mode: str
    action_to_attrs: tuple

    @classmethod
    def binary(cls, n_attrs: int) -> "QuestionScheme":
        return cls("binary", tuple(frozenset([p]) for p in range(n_attrs)))

    @classmethod
    def enumerated(cls, facet_of: Sequence[int]) -> "QuestionScheme":
        """One question per facet; ``facet_of[p]`` is attribute ``p``'s facet."""
        facets = sorted(set(int(f) for f in facet_of))
        index = {f: i for i, f in enumerate(facets)}
        groups = [set() for _ in facets]
        for p, f in enumerate(facet_of):
            groups[index[int(f)]].add(p)
        return cls("enumerated", tuple(frozenset(s) for s in groups))

    @property
    def n_questions(self) -> int:
        return len(self.action_to_attrs)

    @property
    def recommend(self) -> int:
        return len(self.action_to_attrs)

    def action_of(self, p: int) -> int:
        for a, attrs in enumerate(self.action_to_attrs):
            if p in attrs:
                return a
        raise KeyError(f"attribute {p} belongs to no question")


@dataclass
class SessionState:
    u: int
    target: int
    P_ses: frozenset
    P_u: list
    V_cand: set
    A_know: set
    g: KnowledgeGraph
    scheme: QuestionScheme
    k: int = 10
    T: int = 15
    t: int = 0
    P_neg: set = field(default_factory=set)
    V_neg: set = field(default_factory=set)
    history: list = field(default_factory=list)
    r_list: list = field(default_factory=list)
    outcome: Outcome = Outcome.ONGOING
    session_id: int = 0
    opening: int = -1
    scorer: Scorer | None = None

    @property
    def A_cand(self) -> set:
        return set(range(self.scheme.n_questions)) - self.A_know

    def mask(self) -> np.ndarray:
        m = np.ones(self.scheme.n_questions + 1, dtype=bool)
        m[list(self.A_know)] = False
        return m


@dataclass
class QuestionResponse:
    positive: bool
    revealed: frozenset
    rejected: frozenset


@dataclass
class SessionRecord:
    session_id: int
    user: int
    target: int
    opening: int
    turns: list = field(default_factory=list)
    outcome: str = Outcome.ONGOING.value
    n_turns: int = 0
    positive_actions: int = 0

    @property
    def apa(self) -> float:
        return self.positive_actions / self.n_turns if self.n_turns else 0.0

    def lines(self) -> list[str]:
        out = []
        for i, turn in enumerate(self.turns):
            obj = dict(turn)
            if i == len(self.turns) - 1:
                obj.update(outcome=self.outcome, turns=self.n_turns, positive_actions=self.positive_actions)
            out.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        return out

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> list["SessionRecord"]:
        records: dict[int, SessionRecord] = {}
        for line in lines:
            if not line.strip():
                continue
            obj = json.loads(line)
            sid = obj["session_id"]
            rec = records.setdefault(sid, cls(sid, obj.get("user", -1), obj.get("target", -1),
                                              obj.get("opening", -1)))
            rec.turns.append(obj)
            if "outcome" in obj:
                rec.outcome, rec.n_turns, rec.positive_actions = obj["outcome"], obj["turns"], obj["positive_actions"]
        return list(records.values())


# -- simulator --------------------------------------------------------------------

def start_session(g: KnowledgeGraph, u: int, target: int, scheme: QuestionScheme, rng: np.random.Generator,
                  **kw) -> SessionState:
    """Open a session: the user names one random attribute of the target item."""
    P_ses = g.item_attrs[target]
    if not P_ses:
        raise TargetHasNoAttributes(f"item {target} has no attributes")
    p = int(rng.choice(sorted(P_ses)))
    return SessionState(u=int(u), target=int(target), P_ses=P_ses, P_u=[p], V_cand=set(g.attr_items[p]),
                        A_know={scheme.action_of(p)}, g=g, scheme=scheme, opening=p, **kw)


def simulate_response_question(state: SessionState, a: int, reject_filter: bool = False) -> QuestionResponse:
    if a == state.scheme.recommend or not 0 <= a < state.scheme.n_questions:
        raise ValueError(f"{a} is not a question action")
    if a in state.A_know:
        raise ActionAlreadyAsked(f"question {a} was already asked")
    state.A_know.add(a)
    P_a = state.scheme.action_to_attrs[a]
    revealed = P_a & state.P_ses
    rejected = P_a - revealed
    state.P_neg |= rejected
    if revealed:
        state.P_u.extend(sorted(revealed))
        state.V_cand &= state.g.items_with_all(revealed)
    if reject_filter:
        for p in rejected:
            state.V_cand -= state.g.attr_items[p]
    return QuestionResponse(bool(revealed), frozenset(revealed), frozenset(rejected))


def simulate_response_recommendation(state: SessionState, V_rec: Iterable[int]) -> bool:
    V_rec = [int(v) for v in V_rec]
    if not set(V_rec) <= state.V_cand:
        raise RecommendationOutsideCandidates(f"{sorted(set(V_rec) - state.V_cand)} not in candidates")
    if len(V_rec) > state.k:
        raise ValueError(f"{len(V_rec)} items exceed K={state.k}")
    if state.target in V_rec:
        return True
    state.V_cand -= set(V_rec)
    state.V_neg |= set(V_rec)
    return False


# -- agents -------------------------------------------------------------------------

class Agent:
    """Chooses an action index given the session, its state vector and the action mask."""

    needs_state = False

    def act(self, state: SessionState, s, mask: np.ndarray, rng: np.random.Generator) -> int:
        raise NotImplementedError


class AbsGreedy(Agent):
    def act(self, state, s, mask, rng):
        return baseline_abs_greedy(state)


class MaxEntropy(Agent):
    def __init__(self, entropy_mode: str = "binary"):
        self.entropy_mode = entropy_mode

    def act(self, state, s, mask, rng):
        return baseline_max_entropy(state, rng, self.entropy_mode)


class GroundTruth(Agent):
    """Teacher that asks only questions touching the target's attributes, then recommends."""

    def act(self, state, s, mask, rng):
        useful = [a for a in sorted(state.A_cand) if state.scheme.action_to_attrs[a] & state.P_ses]
        return int(rng.choice(useful)) if useful else state.scheme.recommend


class PolicyAgent(Agent):
    needs_state = True

    def __init__(self, theta: pol.PolicyParams, greedy: bool = False):
        self.theta = theta
        self.greedy = greedy

    def act(self, state, s, mask, rng):
        probs = pol.policy_forward(self.theta, s, mask)
        if self.greedy:
            return int(np.argmax(probs))
        return int(rng.choice(len(probs), p=probs))


def baseline_abs_greedy(state: SessionState) -> int:
    return state.scheme.recommend


def question_entropies(state: SessionState, entropy_mode: str = "binary") -> np.ndarray:
    ent = pol.entropy_vector(state.g.item_attr_matrix, state.V_cand, entropy_mode)
    return np.array([max(ent[p] for p in attrs) if attrs else 0.0 for attrs in state.scheme.action_to_attrs])


def baseline_max_entropy(state: SessionState, rng: np.random.Generator, entropy_mode: str = "binary") -> int:
    """Recommend with probability ``min(1, K/|V_cand|)``, else ask the highest-entropy open question."""
    rec = state.scheme.recommend
    open_q = sorted(state.A_cand)
    if not open_q or rng.random() < min(1.0, state.k / max(len(state.V_cand), 1)):
        return rec
    ent = question_entropies(state, entropy_mode)
    return max(open_q, key=lambda a: (ent[a], -a))


# -- environment ----------------------------------------------------------------------

class Environment:
    """Frozen global graph, parameters and config shared by every session."""

    def __init__(self, g: KnowledgeGraph, params, cache, cfg: RunConfig, scheme: QuestionScheme | None = None):
        self.g = g
        self.params = params
        self.cache = cache
        self.cfg = cfg
        self.scheme = scheme or QuestionScheme.binary(g.n_attrs)
        self.reward = cfg.reward
        self.T = cfg.session.max_turns
        self.K = cfg.session.top_k
        self.bins = tuple(cfg.session.bins)
        self.finetune_lr = cfg.session.finetune_lr or cfg.embed.lr
        self.probe: Callable | None = None   # called as probe(state) before every action

    @property
    def state_size(self) -> int:
        return pol.state_size(self.g.n_attrs, self.T, self.bins)

    def layout(self) -> dict:
        return {"n_attrs": self.g.n_attrs, "n_questions": self.scheme.n_questions, "T": self.T,
                "bins": list(self.bins), "state_size": self.state_size}

    def policy_sizes(self) -> list[int]:
        return [self.state_size, *self.cfg.policy.hidden, self.scheme.n_questions + 1]

    def scorer(self, g: KnowledgeGraph) -> Scorer:
        ab = self.cfg.ablation
        return Scorer(g, self.params, self.cache, identity=ab.map, graph_rec=ab.graph_rec,
                      max_degree=self.cfg.embed.max_degree)

    def start(self, u: int, target: int, rng: np.random.Generator, session_id: int = 0) -> SessionState:
        g = self.g.fork()
        return start_session(g, u, target, self.scheme, rng, k=self.K, T=self.T, session_id=session_id,
                             scorer=self.scorer(g))

    def encode(self, state: SessionState) -> np.ndarray:
        s_ent = pol.entropy_vector(state.g.item_attr_matrix, state.V_cand, self.cfg.policy.entropy_mode)
        if self.cfg.ablation.graph_con:
            s_user = s_conv = np.zeros(self.g.n_attrs)
        else:
            s_user = pol.user_pref_vector(state.scorer, state.u)
            s_conv = pol.conv_pref_vector(state.scorer, state.P_u)
        s_dial = pol.dialogue_vector(state.history, len(state.V_cand), self.T, self.bins)
        return pol.encode_state(s_ent, s_user, s_conv, s_dial, self.cfg.ablation.graph_con)

    def target_position(self, state: SessionState) -> int:
        return state.scorer.position(state.u, state.V_cand, state.P_u, state.target)

    def _finetune(self, state: SessionState) -> None:
        steps = self.cfg.session.finetune_steps
        g = state.g
        off = g.offsets[Kind.ITEM]
        negatives = [v for v in sorted(state.V_neg) if g.alive[off + v]]
        positives = [v for v in sorted(g.user_items[state.u]) if v not in state.V_neg and g.alive[off + v]]
        if steps > 0 and negatives and positives and g.alive[state.u]:
            state.scorer.finetune(state.u, positives, negatives, state.P_u, steps, self.finetune_lr,
                                  self.cfg.embed.item_loss)

    def _prune(self, state: SessionState) -> None:
        if self.cfg.ablation.dynamic:
            return
        g = state.g
        gids = [g.offsets[Kind.ATTR] + p for p in sorted(state.P_neg)]
        gids += [g.offsets[Kind.ITEM] + v for v in sorted(state.V_neg)]
        g.remove_gids(np.array(gids, dtype=np.int64))


def _event_reward(env: Environment, event: pol.UserResponse, before=None, after=None) -> float:
    return pol.compute_reward(event, env.reward, before, after)


def run_session(env: Environment, agent: Agent, state: SessionState, rng: np.random.Generator,
                record_states: bool = False) -> tuple[pol.Trajectory, SessionRecord]:
    """Play one session to success, exhaustion of T turns, or an empty candidate set."""
    traj = pol.Trajectory()
    rec = SessionRecord(state.session_id, state.u, state.target, state.opening)
    scheme = env.scheme
    fg = env.reward.mode.upper() == "FG"
    reject_filter = env.cfg.session.reject_filter
    want_state = agent.needs_state or record_states
    while state.outcome is Outcome.ONGOING:
        state.t += 1
        mask = state.mask()
        s = None
        try:
            if env.probe is not None:
                env.probe(state)
            s = env.encode(state) if want_state else None
            a = agent.act(state, s, mask, rng)
            if not mask[a]:
                raise ActionAlreadyAsked(f"agent chose masked action {a}")
            turn = {"session_id": state.session_id, "turn": state.t, "action": a}
            if a == scheme.recommend:
                items, _ = state.scorer.rank(state.u, state.V_cand, state.P_u, state.k)
                items = items.tolist()
                accepted = simulate_response_recommendation(state, items)
                turn.update(action_kind="recommend", items=items, response="accept" if accepted else "reject")
                if accepted:
                    r, positive = env.reward.r_item, True
                    state.outcome = Outcome.SUCCESS
                else:
                    r, positive = _event_reward(env, pol.UserResponse.REJECT), False
                    state.history.append(pol.TurnOutcome.REJECTED_REC)
                    env._finetune(state)
                    env._prune(state)
            else:
                before = env.target_position(state) if fg else None
                resp = simulate_response_question(state, a, reject_filter)
                env._prune(state)
                turn.update(action_kind="ask", attrs=sorted(scheme.action_to_attrs[a]),
                            revealed=sorted(resp.revealed), response="positive" if resp.positive else "negative")
                if resp.positive:
                    after = env.target_position(state) if fg else None
                    r = _event_reward(env, pol.UserResponse.RELEVANT, before, after)
                    state.history.append(pol.TurnOutcome.POSITIVE_ASK)
                else:
                    r = _event_reward(env, pol.UserResponse.IRRELEVANT)
                    state.history.append(pol.TurnOutcome.IRRELEVANT_ASK)
                positive = resp.positive
            if state.outcome is Outcome.ONGOING and (state.t >= state.T or not state.V_cand):
                if not state.V_cand:
                    log.warning("session %d: candidate set emptied at turn %d", state.session_id, state.t)
                state.outcome = Outcome.QUIT
                r = env.reward.r_quit
        except KGCRSError as exc:
            log.warning("session %d aborted at turn %d: %s", state.session_id, state.t, exc)
            turn = {"session_id": state.session_id, "turn": state.t, "action": -1, "action_kind": "error",
                    "response": type(exc).__name__}
            a, positive, r = None, False, env.reward.r_quit
            state.outcome = Outcome.QUIT
        state.r_list.append(r)
        if a is not None and s is not None:
            traj.append(s, a, r, mask)
        rec.positive_actions += int(positive)
        turn.update(n_cand=len(state.V_cand), reward=r, positive=bool(positive), user=state.u,
                    target=state.target, opening=state.opening)
        rec.turns.append(turn)
    rec.outcome = state.outcome.value
    rec.n_turns = state.t
    return traj, rec


# -- drivers ------------------------------------------------------------------------

def sample_pairs(pairs: Sequence[tuple[int, int]], n: int, seed: int, stream: int) -> list[tuple[int, int]]:
    if not len(pairs) or n <= 0:
        return []
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), STREAM_PAIRS, int(stream)]))
    return [tuple(pairs[i]) for i in rng.integers(len(pairs), size=n)]


def usable_pairs(g: KnowledgeGraph, pairs: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop pairs whose target item has no attributes (a session cannot open on it)."""
    return [(int(u), int(v)) for u, v in pairs if g.item_attrs[int(v)]]


def _one(env, agent, pair, seed, stream, index, record_states=False):
    rng = session_rng(seed, stream, index)
    state = env.start(pair[0], pair[1], rng, session_id=index)
    return run_session(env, agent, state, rng, record_states)


def evaluate(env: Environment, agent: Agent, pairs: Sequence[tuple[int, int]], n_sessions: int, seed: int,
             parallel: int = 1, stream: int = STREAM_EVAL) -> list[SessionRecord]:
    """Run ``n_sessions`` independent sessions; results are in session order whatever ``parallel`` is."""
    chosen = sample_pairs(usable_pairs(env.g, pairs), n_sessions, seed, stream)
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(lambda ip: _one(env, agent, ip[1], seed, stream, ip[0]), enumerate(chosen)))
    else:
        results = [_one(env, agent, p, seed, stream, i) for i, p in enumerate(chosen)]
    return [rec for _, rec in results]


def make_agent(kind: str, theta: pol.PolicyParams | None = None, greedy: bool = False,
               entropy_mode: str = "binary") -> Agent:
    kind = kind.lower()
    if kind in ("greedy", "abs-greedy", "absgreedy"):
        return AbsGreedy()
    if kind in ("me", "max-entropy", "maxentropy"):
        return MaxEntropy(entropy_mode)
    if kind in ("gt", "ground-truth"):
        return GroundTruth()
    if kind in ("policy", "kgcrs"):
        if theta is None:
            raise ValueError("the policy agent needs parameters")
        return PolicyAgent(theta, greedy)
    raise ValueError(f"unknown agent {kind!r}")


def init_policy(env: Environment, seed: int) -> pol.PolicyParams:
    theta = pol.init_policy(env.policy_sizes(), np.random.default_rng([int(seed), STREAM_INIT]))
    return theta


def pretrain_policy(env: Environment, theta: pol.PolicyParams, strategy: str, pairs, sessions: int,
                    epochs: int, seed: int, lr: float | None = None) -> dict:
    """Imitate the Max Entropy baseline ("me") or the ground-truth teacher ("gt")."""
    teacher = {"me": MaxEntropy(env.cfg.policy.entropy_mode), "gt": GroundTruth()}[strategy.lower()]
    S, M, A = [], [], []
    for i, pair in enumerate(sample_pairs(usable_pairs(env.g, pairs), sessions, seed, STREAM_PRETRAIN)):
        traj, _ = _one(env, teacher, pair, seed, STREAM_PRETRAIN, i, record_states=True)
        S.extend(traj.states)
        M.extend(traj.masks)
        A.extend(traj.actions)
    opt = pol.Optimizer(env.cfg.policy.optimizer, env.cfg.policy.pretrain_lr if lr is None else lr)
    losses = pol.fit_imitation(theta, S, M, A, epochs, opt, np.random.default_rng([int(seed), STREAM_PRETRAIN]))
    return {"strategy": strategy, "examples": len(A), "loss": losses}


def _check_finite(theta: pol.PolicyParams) -> None:
    if not all(np.isfinite(w).all() for w in theta.weights + theta.biases):
        raise DivergenceDetected("policy parameters became non-finite")


def run_training(env: Environment, theta: pol.PolicyParams, train_pairs, seed: int, valid_pairs=(),
                 epochs: int | None = None, sessions: int | None = None, valid_sessions: int = 100,
                 transcript=None) -> tuple[pol.PolicyParams, list[dict]]:
    """REINFORCE over training sessions with one update per session; validation metrics per epoch."""
    from .metrics import online_metrics

    pc = env.cfg.policy
    epochs = pc.epochs if epochs is None else epochs
    pairs = usable_pairs(env.g, train_pairs)
    n = (pc.sessions or len(pairs)) if sessions is None else sessions
    opt = pol.Optimizer(pc.optimizer, pc.lr)
    agent = PolicyAgent(theta)
    logs = []
    index = 0
    for epoch in range(epochs):
        chosen = sample_pairs(pairs, n, seed, 1000 + epoch)
        returns, recs = [], []
        for pair in chosen:
            traj, rec = _one(env, agent, pair, seed, STREAM_TRAIN, index)
            index += 1
            pol.reinforce_update(theta, traj, env.reward.gamma, optimizer=opt, baseline=pc.baseline)
            _check_finite(theta)
            returns.append(sum(traj.rewards))
            recs.append(rec)
            if transcript is not None:
                for line in rec.lines():
                    transcript.write(line + "\n")
        entry = {"epoch": epoch, "sessions": len(chosen),
                 "mean_return": float(np.mean(returns)) if returns else 0.0}
        if recs:
            entry["train"] = online_metrics(recs, [env.T]).summary()
        if len(valid_pairs) and valid_sessions > 0:
            vrecs = evaluate(env, PolicyAgent(theta, pc.greedy_eval), valid_pairs, valid_sessions, seed,
                             stream=STREAM_VALID)
            if vrecs:
                entry["valid"] = online_metrics(vrecs, [env.T]).summary()
        logs.append(entry)
        log.info("epoch %d: %s", epoch, entry)
    return theta, logs
