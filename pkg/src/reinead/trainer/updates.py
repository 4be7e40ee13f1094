"""PPO-Clip policy/value step and the supervised perception step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import SGD, Tensor, ops
from ..perception import PerceptionModel
from ..policy import PolicyValue, log_prob, policy_forward, value


@dataclass
class PolicyBatch:
    beliefs: np.ndarray  # (M, d_b) beliefs at which the actions were chosen
    raw_actions: np.ndarray  # (M, 2)
    old_log_probs: np.ndarray  # (M,)
    advantages: np.ndarray  # (M,) already normalized
    returns: np.ndarray  # (M,) value targets


def clip_objective(pv: PolicyValue, batch: PolicyBatch, eps: float) -> tuple[Tensor, np.ndarray, int]:
    """Batch mean of ``min(R A, clip(R, 1-eps, 1+eps) A)``.

    Elements whose ratio is non-finite are dropped; returns
    ``(objective, ratios, n_dropped)``.
    """
    b = Tensor(batch.beliefs)
    dist = policy_forward(pv, b)
    new_lp = log_prob(dist, batch.raw_actions)
    ratio = ops.exp(ops.sub(new_lp, Tensor(batch.old_log_probs.astype(new_lp.dtype))))
    r = ratio.data.astype(np.float64)
    keep = np.isfinite(r)
    dropped = int((~keep).sum())
    if not keep.any():
        return Tensor(np.zeros((), dtype=new_lp.dtype)), r, dropped
    idx = np.flatnonzero(keep)
    adv = np.asarray(batch.advantages)[idx].astype(new_lp.dtype)
    ratio = ops.getitem(ratio, idx)
    unclipped = ops.mul(ratio, adv)
    clipped = ops.mul(ops.clamp(ratio, 1.0 - eps, 1.0 + eps), adv)
    pick = (unclipped.data <= clipped.data).astype(new_lp.dtype)
    term = ops.add(ops.mul(unclipped, pick), ops.mul(clipped, 1.0 - pick))
    return ops.div(ops.sum(term), float(keep.sum())), r, dropped


def value_loss(pv: PolicyValue, batch: PolicyBatch) -> Tensor:
    v = value(pv, Tensor(batch.beliefs))
    err = ops.sub(v, Tensor(batch.returns.astype(v.dtype)))
    return ops.mean(ops.mul(err, err))


def ppo_update(pv: PolicyValue, opt: SGD, batch: PolicyBatch, eps: float, value_coef: float = 0.5) -> dict:
    """One descent step on ``-J_clip + value_coef * value_loss``."""
    opt.zero_grad()
    obj, ratios, dropped = clip_objective(pv, batch, eps)
    vl = value_loss(pv, batch)
    total = ops.add(ops.neg(obj), ops.mul(vl, value_coef))
    total.backward()
    opt.step()
    return {"objective": obj.item(), "value_loss": vl.item(), "dropped": dropped,
            "clip_fraction": float(np.mean(np.abs(ratios[np.isfinite(ratios)] - 1) > eps)) if ratios.size else 0.0}


def perception_objective(model: PerceptionModel, observations: np.ndarray, labels, entropy_coef: float,
                         final_only: bool = False) -> tuple[Tensor, np.ndarray]:
    """``(1/|B|) sum_i sum_t [L(y_t, y) + lambda H(y_t)]``; returns the objective and per-step mean CE.

    With ``final_only`` both terms use the last step alone.
    """
    labels = np.asarray(labels)
    _, logits = model.unroll(Tensor(observations))
    steps = logits[-1:] if final_only else logits
    terms, ce_curve = [], []
    for lg in steps:
        ce = ops.cross_entropy(lg, labels)
        ce_curve.append(float(ce.data.mean()))
        t = ce if entropy_coef == 0 else ops.add(ce, ops.mul(ops.entropy(lg), entropy_coef))
        terms.append(ops.sum(t))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.div(total, float(len(labels))), np.array(ce_curve)


def percep_update(model: PerceptionModel, opt: SGD, observations: np.ndarray, labels, entropy_coef: float,
                  final_only: bool = False) -> float:
    opt.zero_grad()
    loss, _ = perception_objective(model, observations, labels, entropy_coef, final_only)
    loss.backward()
    opt.step()
    return loss.item()
