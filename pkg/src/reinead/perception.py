"""Recurrent perception model and the single-view baseline classifier.

``PerceptionModel`` realizes ``{y_t, b_t} = f(o_t, b_{t-1})``: a small conv
encoder embeds each observation, a gated recurrent update fuses it into the
belief, and a linear head maps the belief to class logits.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Conv2d, Linear, Module, Tensor, ops


@dataclass(frozen=True)
class PerceptionSpec:
    n_classes: int
    resolution: int = 32
    d_e: int = 64
    d_b: int = 64
    d_z: int = 16
    channels: tuple[int, int, int] = (8, 16, 32)

    def arch_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _conv_out(n: int) -> int:
    return (n + 2 - 3) // 2 + 1


class Encoder(Module):
    """Three stride-2 conv blocks followed by two dense layers."""

    def __init__(self, spec: PerceptionSpec, rng: np.random.Generator):
        c1, c2, c3 = spec.channels
        self.conv1 = Conv2d(3, c1, 3, rng, stride=2, padding=1)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1)
        self.conv3 = Conv2d(c2, c3, 3, rng, stride=2, padding=1)
        side = _conv_out(_conv_out(_conv_out(spec.resolution)))
        self.flat = side * side * c3
        self.fc1 = Linear(self.flat, spec.d_e, rng)
        self.fc2 = Linear(spec.d_e, spec.d_e, rng)

    def __call__(self, images: Tensor) -> Tensor:
        """(N, R, R, 3) images in [0, 1] -> (N, d_e) embeddings."""
        x = ops.sub(images, 0.5)
        x = ops.relu(self.conv1(x))
        x = ops.relu(self.conv2(x))
        x = ops.relu(self.conv3(x))
        x = ops.reshape(x, (x.shape[0], self.flat))
        return self.fc2(ops.relu(self.fc1(x)))


class SingleViewClassifier(Module):
    """Encoder plus linear head; no memory. Serves as the offline backbone and passive baseline."""

    def __init__(self, spec: PerceptionSpec, rng: np.random.Generator):
        self.spec = spec
        self.encoder = Encoder(spec, rng)
        self.head = Linear(spec.d_e, spec.n_classes, rng, scale=0.01)

    def __call__(self, images: Tensor) -> Tensor:
        return self.head(ops.relu(self.encoder(images)))

    def loss(self, images: Tensor, labels) -> Tensor:
        return ops.mean(ops.cross_entropy(self(images), labels))


class PerceptionModel(Module):
    def __init__(self, spec: PerceptionSpec, rng: np.random.Generator):
        self.spec = spec
        self.encoder = Encoder(spec, rng)
        n = spec.d_b + spec.d_e
        self.gate = Linear(n, spec.d_b, rng, scale=np.sqrt(1.0 / n))
        self.cand = Linear(n, spec.d_b, rng, scale=np.sqrt(1.0 / n))
        self.head = Linear(spec.d_b, spec.n_classes, rng, scale=0.01)
        self.embed = Linear(spec.d_b, spec.d_z, rng, scale=np.sqrt(1.0 / spec.d_b))
        self.label_embedding = Tensor(rng.normal(0.0, 1.0 / np.sqrt(spec.d_z), (spec.n_classes, spec.d_z)),
                                      requires_grad=True)

    def initial_belief(self, n: int) -> Tensor:
        return Tensor(np.zeros((n, self.spec.d_b), dtype=self.encoder.fc2.weight.dtype))

    def encode(self, images: Tensor) -> Tensor:
        return self.encoder(images)

    def belief_update(self, b_prev: Tensor, e: Tensor, gate_override: float | None = None) -> Tensor:
        """``b = (1 - g) * b_prev + g * c`` with gate ``g`` and candidate ``c`` from ``[b_prev, e]``."""
        x = ops.concat([b_prev, e], axis=-1)
        c = ops.tanh(self.cand(x))
        if gate_override is not None:
            g = Tensor(np.full(c.shape, gate_override, dtype=c.dtype))
        else:
            g = ops.sigmoid(self.gate(x))
        return ops.add(ops.mul(ops.sub(1.0, g), b_prev), ops.mul(g, c))

    def predict(self, b: Tensor) -> Tensor:
        return self.head(b)

    def step(self, b_prev: Tensor, images: Tensor) -> tuple[Tensor, Tensor]:
        b = self.belief_update(b_prev, self.encode(images))
        return b, self.predict(b)

    def unroll(self, observations: Tensor, b0: Tensor | None = None) -> tuple[list[Tensor], list[Tensor]]:
        """Run the recurrence over (N, T, R, R, 3) observations; returns per-step beliefs and logits."""
        n, steps = observations.shape[:2]
        flat = ops.reshape(observations, (n * steps,) + observations.shape[2:])
        emb = ops.reshape(self.encode(flat), (n, steps, -1))
        b = b0 if b0 is not None else self.initial_belief(n)
        beliefs, logits = [], []
        for t in range(steps):
            b = self.belief_update(b, emb[:, t])
            beliefs.append(b)
            logits.append(self.predict(b))
        return beliefs, logits

    def prediction_embedding(self, b: Tensor) -> Tensor:
        return self.embed(b)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-example ``-log softmax(logits)[y]``."""
    return ops.cross_entropy(logits, labels)


def pred_entropy(logits: Tensor) -> Tensor:
    return ops.entropy(logits)


def infonce_loss(pred_embeddings: Tensor, labels, label_embedding: Tensor) -> Tensor:
    """Batch contrastive objective between predictions and labels.

    With similarity ``S(z, y) = -z . E[y]`` the per-example term is
    ``log(exp(-S_jj) / mean_k exp(-S_jk))`` and the result is its batch mean.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = len(labels)
    if k < 2:
        raise ValueError("InfoNCE needs a batch of at least two")
    lab = ops.getitem(label_embedding, labels)  # (K, d_z)
    neg_sim = ops.matmul(pred_embeddings, ops.transpose(lab))  # -S_jk
    lsm = ops.log_softmax(neg_sim)
    diag = Tensor(np.eye(k, dtype=lsm.dtype))
    return ops.add(ops.mean(ops.sum(ops.mul(lsm, diag), axis=-1)), float(np.log(k)))
