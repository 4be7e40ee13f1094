"""Tiny discrete POMDPs with exact beliefs, greedy and horizon-optimal information gathering.

Timing: each of the ``H`` steps picks an action ``a``, moves ``s -> T[s, a]``
and then observes ``o ~ Z[s', y]``. The hypothesis ``y`` never changes. A
belief is the joint table ``b[s, y]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12


@dataclass
class DiscretePOMDP:
    T: np.ndarray  # (S, A) int, next state
    Z: np.ndarray  # (S, Y, O) observation distribution
    prior: np.ndarray  # (S, Y)
    horizon: int

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.int64)
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.prior = np.asarray(self.prior, dtype=np.float64)
        S, A = self.T.shape
        if self.Z.shape[0] != S or self.prior.shape != self.Z.shape[:2]:
            raise ValueError(f"inconsistent shapes T{self.T.shape} Z{self.Z.shape} prior{self.prior.shape}")
        if self.T.min() < 0 or self.T.max() >= S:
            raise ValueError("transition targets out of range")
        if np.abs(self.Z.sum(-1) - 1).max() > NORM_TOL or self.Z.min() < 0:
            raise ValueError("observation rows must be probability vectors")
        if abs(self.prior.sum() - 1) > NORM_TOL or self.prior.min() < 0:
            raise ValueError("prior must be a probability table")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def sizes(self) -> dict:
        S, A = self.T.shape
        return {"S": S, "A": A, "Y": self.Z.shape[1], "O": self.Z.shape[2], "H": self.horizon}

    def to_text(self) -> str:
        """Full tables as structured text, for failure fixtures."""
        return json.dumps({"T": self.T.tolist(), "Z": self.Z.tolist(), "prior": self.prior.tolist(),
                           "horizon": self.horizon}, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "DiscretePOMDP":
        d = json.loads(text)
        return cls(np.array(d["T"]), np.array(d["Z"]), np.array(d["prior"]), int(d["horizon"]))


def propagate(pomdp: DiscretePOMDP, belief: np.ndarray, a: int) -> np.ndarray:
    out = np.zeros_like(belief)
    np.add.at(out, pomdp.T[:, a], belief)
    return out


def observation_probs(pomdp: DiscretePOMDP, belief: np.ndarray, a: int) -> np.ndarray:
    moved = propagate(pomdp, belief, a)
    return np.einsum("sy,syo->o", moved, pomdp.Z)


def bayes_update(pomdp: DiscretePOMDP, belief: np.ndarray, a: int, o: int) -> np.ndarray:
    moved = propagate(pomdp, belief, a)
    post = moved * pomdp.Z[:, :, o]
    z = post.sum()
    if z <= 0:
        raise ValueError(f"observation {o} has zero probability after action {a}")
    return post / z


def posterior_entropy(belief: np.ndarray) -> float:
    """Entropy (nats) of the hypothesis marginal of ``belief``."""
    p = np.asarray(belief, dtype=np.float64)
    py = p.sum(axis=0) if p.ndim == 2 else p
    nz = py[py > 0]
    return float(-(nz * np.log(nz)).sum())


def _expected_posterior_entropy(pomdp, belief, a) -> float:
    po = observation_probs(pomdp, belief, a)
    return sum(po[o] * posterior_entropy(bayes_update(pomdp, belief, a, o)) for o in np.flatnonzero(po > 0))


def greedy_action(pomdp: DiscretePOMDP, belief: np.ndarray, tie_tol: float = 1e-12) -> int:
    """Maximizes the expected one-step entropy reduction; ties go to the lowest index."""
    h = posterior_entropy(belief)
    gains = np.array([h - _expected_posterior_entropy(pomdp, belief, a) for a in range(pomdp.T.shape[1])])
    return int(np.flatnonzero(gains >= gains.max() - tie_tol)[0])


def greedy_rollout(pomdp: DiscretePOMDP, start: np.ndarray | None = None) -> tuple[dict, float]:
    """Observation-adaptive greedy policy tree and its gain ``H(y) - E[H(y | b_H)]``."""
    start = pomdp.prior if start is None else start

    def walk(b, depth):
        if depth == pomdp.horizon:
            return None, posterior_entropy(b)
        a = greedy_action(pomdp, b)
        po = observation_probs(pomdp, b, a)
        children, exp_h = {}, 0.0
        for o in np.flatnonzero(po > 0):
            sub, h = walk(bayes_update(pomdp, b, a, o), depth + 1)
            children[int(o)] = sub
            exp_h += po[o] * h
        return {"action": a, "children": children}, exp_h

    tree, final_h = walk(start, 0)
    return tree, posterior_entropy(start) - final_h


class BudgetExceeded(ValueError):
    pass


def accumulative_optimal(pomdp: DiscretePOMDP, start: np.ndarray | None = None,
                         budget: int = 10**6) -> tuple[dict, float]:
    """Exhaustive search over adaptive policy trees for the maximum expected gain."""
    start = pomdp.prior if start is None else start
    A, O, H = pomdp.T.shape[1], pomdp.Z.shape[2], pomdp.horizon
    nodes = sum((A * O) ** k for k in range(1, H + 1))
    if nodes > budget:
        raise BudgetExceeded(f"search needs {nodes} nodes (|A|={A}, |O|={O}, H={H}), budget is {budget}")

    def best(b, depth):
        if depth == H:
            return None, posterior_entropy(b)
        top_h, top = np.inf, None
        for a in range(A):
            po = observation_probs(pomdp, b, a)
            children, exp_h = {}, 0.0
            for o in np.flatnonzero(po > 0):
                sub, h = best(bayes_update(pomdp, b, a, o), depth + 1)
                children[int(o)] = sub
                exp_h += po[o] * h
            if exp_h < top_h - 1e-15:
                top_h, top = exp_h, {"action": a, "children": children}
        return top, top_h

    tree, final_h = best(start, 0)
    return tree, posterior_entropy(start) - final_h


def enumerate_posterior(pomdp: DiscretePOMDP, actions, observations) -> np.ndarray:
    """Posterior over (s_t, y) by summing over full joint paths; independent of ``bayes_update``."""
    S, Y = pomdp.prior.shape
    post = np.zeros((S, Y))
    for s0 in range(S):
        for y in range(Y):
            w, s = pomdp.prior[s0, y], s0
            for a, o in zip(actions, observations):
                s = pomdp.T[s, a]
                w *= pomdp.Z[s, y, o]
            post[s, y] += w
    if post.sum() <= 0:
        raise ValueError("observation sequence has zero probability")
    return post / post.sum()


def random_pomdp(rng: np.random.Generator, max_s: int = 6, max_a: int = 3, max_o: int = 6, max_y: int = 4,
                 max_h: int = 3, sharpness: float = 0.5) -> DiscretePOMDP:
    S = int(rng.integers(2, max_s + 1))
    A = int(rng.integers(1, max_a + 1))
    O = int(rng.integers(2, max_o + 1))
    Y = int(rng.integers(2, max_y + 1))
    H = int(rng.integers(1, max_h + 1))
    T = rng.integers(0, S, size=(S, A))
    Z = rng.dirichlet(np.full(O, sharpness), size=(S, Y))
    Z = Z / Z.sum(-1, keepdims=True)
    prior = rng.dirichlet(np.ones(S * Y)).reshape(S, Y)
    return DiscretePOMDP(T, Z, prior / prior.sum(), H)


@dataclass
class EfficacyReport:
    n_instances: int
    violations: list[str]  # serialized offending instances
    strict_gaps: int
    max_gap: float
    max_gap_instance: str

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_efficacy_inequality(n_instances: int = 1000, seed: int = 0, tol: float = 1e-9,
                               strict: float = 1e-3, **sizes) -> EfficacyReport:
    """Checks ``gain_optimal >= gain_greedy - tol`` on random instances."""
    rng = np.random.default_rng(seed)
    violations, gaps, best, best_text = [], 0, -np.inf, ""
    for _ in range(n_instances):
        m = random_pomdp(rng, **sizes)
        _, g = greedy_rollout(m)
        _, o = accumulative_optimal(m)
        gap = o - g
        if gap < -tol:
            violations.append(m.to_text())
        if gap > strict:
            gaps += 1
        if gap > best:
            best, best_text = gap, m.to_text()
    return EfficacyReport(n_instances, violations, gaps, float(best), best_text)
