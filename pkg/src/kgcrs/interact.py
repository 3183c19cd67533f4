"""Terminal sessions where a person (or a recorded transcript) plays the user."""
from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

from . import policy as pol
from .errors import InvalidInput
from .session import Agent, Environment, Outcome, SessionRecord, SessionState


class Responder:
    def opening(self, n_users: int, attr_names: Sequence[str]) -> tuple[int, int]:
        raise NotImplementedError

    def answer_question(self, attrs: Sequence[int], attr_names: Sequence[str]) -> list[int]:
        raise NotImplementedError

    def answer_recommendation(self, items: Sequence[int], item_names: Sequence[str]) -> bool:
        raise NotImplementedError


def parse_yes_no(text: str) -> bool:
    t = text.strip().lower()
    if t in ("y", "yes"):
        return True
    if t in ("n", "no"):
        return False
    raise InvalidInput(f"expected y or n, got {text!r}")


def parse_choice(text: str, allowed: Sequence[int]) -> list[int]:
    """Comma/space separated indices into ``allowed``; empty input means none apply."""
    picks = []
    for tok in text.replace(",", " ").split():
        if not tok.isdigit() or int(tok) >= len(allowed):
            raise InvalidInput(f"{tok!r} is not one of 0..{len(allowed) - 1}")
        picks.append(allowed[int(tok)])
    return sorted(set(picks))


class HumanResponder(Responder):
    def __init__(self, read: Callable[[str], str] = input, write: Callable[[str], None] = print):
        self.read = read
        self.write = write

    def _ask(self, prompt: str, parse):
        while True:
            try:
                return parse(self.read(prompt))
            except InvalidInput as exc:
                self.write(f"  {exc}; try again")

    def _index(self, text: str, n: int, what: str) -> int:
        if not text.strip().isdigit() or not 0 <= int(text) < n:
            raise InvalidInput(f"expected a {what} index in 0..{n - 1}")
        return int(text)

    def opening(self, n_users, attr_names):
        u = self._ask(f"user index [0-{n_users - 1}]: ", lambda s: self._index(s, n_users, "user"))
        self.write("attributes: " + ", ".join(f"{i}={n}" for i, n in enumerate(attr_names)))
        p = self._ask("starting attribute: ", lambda s: self._index(s, len(attr_names), "attribute"))
        return u, p

    def answer_question(self, attrs, attr_names):
        if len(attrs) == 1:
            ok = self._ask(f"Do you want {attr_names[attrs[0]]}? [y/n] ", parse_yes_no)
            return list(attrs) if ok else []
        self.write("  " + "  ".join(f"[{i}] {attr_names[a]}" for i, a in enumerate(attrs)))
        return self._ask("Which of these apply? (indices, blank for none) ", lambda s: parse_choice(s, attrs))

    def answer_recommendation(self, items, item_names):
        self.write("Recommended: " + ", ".join(item_names[v] for v in items))
        return self._ask("Accept? [y/n] ", parse_yes_no)


class ReplayResponder(Responder):
    """Answers taken from a transcript written by an earlier session."""

    def __init__(self, lines: Iterable[str]):
        self.turns = [json.loads(l) for l in lines if l.strip()]
        if not self.turns:
            raise InvalidInput("empty replay transcript")
        self.pos = 0

    def opening(self, n_users, attr_names):
        first = self.turns[0]
        return int(first["user"]), int(first["opening"])

    def _next(self, kind: str) -> dict:
        if self.pos >= len(self.turns):
            raise InvalidInput("replay transcript ended early")
        turn = self.turns[self.pos]
        self.pos += 1
        if turn.get("action_kind") != kind:
            raise InvalidInput(f"replay diverged at turn {turn.get('turn')}: expected {kind}")
        return turn

    def answer_question(self, attrs, attr_names):
        return [a for a in self._next("ask")["revealed"] if a in attrs]

    def answer_recommendation(self, items, item_names):
        return self._next("recommend")["response"] == "accept"


def interactive_session(env: Environment, agent: Agent, responder: Responder, rng: np.random.Generator,
                        vocab: dict | None = None, session_id: int = 0) -> SessionRecord:
    """Run the session loop with answers from ``responder`` instead of the simulator (coarse rewards)."""
    g = env.g
    vocab = vocab or {}
    attr_names = vocab.get("attrs") or [f"p{i}" for i in range(g.n_attrs)]
    item_names = vocab.get("items") or [f"v{i}" for i in range(g.n_items)]
    u, p = responder.opening(g.n_users, attr_names)
    fork = g.fork()
    state = SessionState(u=u, target=-1, P_ses=frozenset(), P_u=[p], V_cand=set(g.attr_items[p]),
                         A_know={env.scheme.action_of(p)}, g=fork, scheme=env.scheme, k=env.K, T=env.T,
                         session_id=session_id, opening=p, scorer=env.scorer(fork))
    rec = SessionRecord(session_id, u, -1, p)
    cg = env.reward
    while state.outcome is Outcome.ONGOING:
        state.t += 1
        mask = state.mask()
        s = env.encode(state) if agent.needs_state else None
        a = agent.act(state, s, mask, rng)
        turn = {"session_id": session_id, "turn": state.t, "action": a}
        if a == env.scheme.recommend:
            items = state.scorer.rank(u, state.V_cand, state.P_u, state.k)[0].tolist()
            accepted = responder.answer_recommendation(items, item_names)
            turn.update(action_kind="recommend", items=items, response="accept" if accepted else "reject")
            positive = accepted
            if accepted:
                r = cg.r_item
                state.outcome = Outcome.SUCCESS
            else:
                r = cg.r_turn
                state.V_cand -= set(items)
                state.V_neg |= set(items)
                state.history.append(pol.TurnOutcome.REJECTED_REC)
                env._finetune(state)
                env._prune(state)
        else:
            attrs = sorted(env.scheme.action_to_attrs[a])
            revealed = responder.answer_question(attrs, attr_names)
            state.A_know.add(a)
            state.P_neg |= set(attrs) - set(revealed)
            positive = bool(revealed)
            if revealed:
                state.P_u.extend(revealed)
                state.V_cand &= g.items_with_all(revealed)
                state.history.append(pol.TurnOutcome.POSITIVE_ASK)
                r = cg.r_attr + cg.r_turn
            else:
                state.history.append(pol.TurnOutcome.IRRELEVANT_ASK)
                r = cg.r_turn
            env._prune(state)
            turn.update(action_kind="ask", attrs=attrs, revealed=revealed,
                        response="positive" if revealed else "negative")
        if state.outcome is Outcome.ONGOING and (state.t >= state.T or not state.V_cand):
            state.outcome = Outcome.QUIT
            r = cg.r_quit
        state.r_list.append(r)
        rec.positive_actions += int(positive)
        turn.update(n_cand=len(state.V_cand), reward=r, positive=bool(positive), user=u, target=-1, opening=p)
        rec.turns.append(turn)
    rec.outcome = state.outcome.value
    rec.n_turns = state.t
    return rec
