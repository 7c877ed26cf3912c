"""Beta-Bernoulli Thompson sampling over operations and (operation, category) arms.

Every arm starts from the uniform Beta(1, 1) prior.  With probability epsilon a
choice is made uniformly; otherwise one posterior draw per arm decides by
argmax, ties broken by the fixed arm order.  Rewards are binary: 1 when the
evaluated metric strictly improved on the base, 0 otherwise.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .ops import (
    BASIC_OPERATIONS,
    CATEGORY_ORDER,
    OPERATION_ORDER,
    Operation,
    PromptCategory,
    REPEAT_CATEGORY,
)

Arm = tuple[int, int]  # (alpha, beta)


def _fresh_cat_arms() -> dict[tuple[Operation, PromptCategory], Arm]:
    arms = {(op, cat): (1, 1) for op in BASIC_OPERATIONS for cat in CATEGORY_ORDER}
    arms[(Operation.REPEAT_PREVIOUS, REPEAT_CATEGORY)] = (1, 1)
    return arms


@dataclass(frozen=True)
class BanditState:
    """Immutable posterior counts; updates return a new state."""

    op_arms: dict[Operation, Arm]
    cat_arms: dict[tuple[Operation, PromptCategory], Arm]
    epsilon: float = 0.5

    @classmethod
    def fresh(cls, epsilon: float = 0.5) -> "BanditState":
        return cls(op_arms={op: (1, 1) for op in OPERATION_ORDER},
                   cat_arms=_fresh_cat_arms(), epsilon=epsilon)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "op_arms": {op.value: list(arm) for op, arm in self.op_arms.items()},
            "cat_arms": [
                {"op": op.value, "cat": cat.value, "arm": list(arm)}
                for (op, cat), arm in self.cat_arms.items()
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "BanditState":
        op_arms = {Operation(op): tuple(arm) for op, arm in payload["op_arms"].items()}
        cat_arms = {(Operation(e["op"]), PromptCategory(e["cat"])): tuple(e["arm"])
                    for e in payload["cat_arms"]}
        return cls(op_arms=op_arms, cat_arms=cat_arms, epsilon=payload["epsilon"])


def _argmax_thompson(arms: list[tuple[object, Arm]], rng: random.Random):
    best_key, best_draw = None, float("-inf")
    for key, (alpha, beta) in arms:
        draw = rng.betavariate(alpha, beta)
        if draw > best_draw:  # strict: ties keep the earlier (fixed-order) arm
            best_key, best_draw = key, draw
    return best_key


def sample_operation(state: BanditState, rng: random.Random) -> Operation:
    """epsilon-greedy Thompson draw over the operation arms."""
    arms = [op for op in OPERATION_ORDER if op in state.op_arms]
    if rng.random() < state.epsilon:
        return arms[rng.randrange(len(arms))]
    return _argmax_thompson([(op, state.op_arms[op]) for op in arms], rng)


def sample_category(state: BanditState, op: Operation, rng: random.Random) -> PromptCategory:
    """Same scheme over the three per-operation category arms."""
    if op is Operation.REPEAT_PREVIOUS:
        return REPEAT_CATEGORY
    cats = [cat for cat in CATEGORY_ORDER if (op, cat) in state.cat_arms]
    if rng.random() < state.epsilon:
        return cats[rng.randrange(len(cats))]
    return _argmax_thompson([(cat, state.cat_arms[(op, cat)]) for cat in cats], rng)


def update(state: BanditState, op: Operation, cat: PromptCategory, reward: int) -> BanditState:
    """Increment the operation arm and the (operation, category) arm."""
    if reward not in (0, 1):
        raise ValueError("reward must be a bit")
    op_arms = dict(state.op_arms)
    cat_arms = dict(state.cat_arms)
    a, b = op_arms[op]
    op_arms[op] = (a + reward, b + (1 - reward))
    a, b = cat_arms[(op, cat)]
    cat_arms[(op, cat)] = (a + reward, b + (1 - reward))
    return BanditState(op_arms=op_arms, cat_arms=cat_arms, epsilon=state.epsilon)
