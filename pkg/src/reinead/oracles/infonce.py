"""Monte-Carlo check of the contrastive bound on ``I(o; y | b)`` with the optimal critic."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def conditional_mi(joint: np.ndarray) -> float:
    """Exact ``I(o; y | b)`` in nats for a table ``p[b, o, y]``."""
    p = np.asarray(joint, dtype=np.float64)
    pb = p.sum(axis=(1, 2))
    pbo = p.sum(axis=2)
    pby = p.sum(axis=1)
    nz = p > 0
    num = p * pb[:, None, None]
    den = pbo[:, :, None] * pby[:, None, :]
    return float(np.sum(p[nz] * np.log(num[nz] / den[nz])))


@dataclass
class InfoNCEReport:
    K: int
    n_batches: int
    lhs_mean: float
    lhs_se: float
    mutual_info: float
    stated_bound: float  # I - log(K) / K
    stated_ok: bool  # lhs <= stated_bound + 3 se
    mi_ok: bool  # lhs <= I + 3 se

    @property
    def gap(self) -> float:
        """Distance from the estimate up to ``I``; shrinks as the bound tightens."""
        return self.mutual_info - self.lhs_mean


def infonce_lhs(joint: np.ndarray, K: int, n_batches: int, rng: np.random.Generator,
                sampling: str = "conditional") -> np.ndarray:
    """Per-batch values of ``mean_j log(q(y_j|b_j,o_j) / mean_k q(y_k|b_j,o_j))`` with ``q = p(y|b,o)``.

    ``conditional`` draws a shared ``b`` per batch and the ``K`` pairs from
    ``p(o, y | b)``; ``joint`` draws all triples i.i.d. from ``p(b, o, y)``, which
    mixes beliefs among the negatives and so bounds ``I((b, o); y)`` instead.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    p = np.asarray(joint, dtype=np.float64)
    nb, no, ny = p.shape
    pb = p.sum(axis=(1, 2))
    pbo = p.sum(axis=2, keepdims=True)
    q = np.divide(p, pbo, out=np.full_like(p, 1.0 / ny), where=pbo > 0)
    vals = np.empty(n_batches)
    for i in range(n_batches):
        if sampling == "conditional":
            b = rng.choice(nb, p=pb)
            flat = rng.choice(no * ny, size=K, p=(p[b] / pb[b]).ravel())
            bs = np.full(K, b)
            os_, ys = np.divmod(flat, ny)
        elif sampling == "joint":
            flat = rng.choice(p.size, size=K, p=p.ravel())
            bs, rest = np.divmod(flat, no * ny)
            os_, ys = np.divmod(rest, ny)
        else:
            raise ValueError(f"unknown sampling {sampling!r}")
        scores = q[bs[:, None], os_[:, None], ys[None, :]]  # [j, k] = q(y_k | b_j, o_j)
        vals[i] = np.mean(np.log(np.diag(scores) / scores.mean(axis=1)))
    return vals


def verify_infonce_bound(joint: np.ndarray, K: int, n_batches: int, seed: int,
                         sampling: str = "conditional") -> InfoNCEReport:
    vals = infonce_lhs(joint, K, n_batches, np.random.default_rng(seed), sampling)
    mean, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))
    mi = conditional_mi(joint)
    stated = mi - np.log(K) / K
    return InfoNCEReport(K, n_batches, mean, se, mi, float(stated), bool(mean <= stated + 3 * se),
                         bool(mean <= mi + 3 * se))


def gap_trend(joint: np.ndarray, Ks=(2, 8, 32, 64), n_batches: int = 2000, seed: int = 0) -> list[InfoNCEReport]:
    return [verify_infonce_bound(joint, K, n_batches, seed) for K in Ks]


def random_joint(rng: np.random.Generator, shape=(4, 4, 3), concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(int(np.prod(shape)), concentration)).reshape(shape)
