"""Episodic N-way K-shot evaluation with a logistic-regression probe on frozen embeddings."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from .errors import InputDomainError
from .mixkit import make_rng

Z_95 = 1.96
DEFAULT_EPISODES = 600
DEFAULT_QUERY = 15


@dataclass(frozen=True)
class Episode:
    """Indices into a dataset; labels are episode-local ``0..n_way-1``."""

    classes: np.ndarray
    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray

    @property
    def n_way(self) -> int:
        return len(self.classes)


def sample_episode(dataset, n_way: int, k_shot: int, h_query: int,
                   rng: np.random.Generator) -> Episode:
    """Pick ``n_way`` classes, then ``k_shot + h_query`` distinct images from each."""
    if n_way < 1 or k_shot < 1 or h_query < 0:
        raise InputDomainError("n_way and k_shot must be >= 1, h_query >= 0")
    by_class = dataset.indices_by_class()
    if len(by_class) < n_way:
        raise InputDomainError(f"{len(by_class)} classes available, {n_way} requested")
    short = [k for k, idx in enumerate(by_class) if len(idx) < k_shot + h_query]
    eligible = [k for k in range(len(by_class)) if k not in short]
    if len(eligible) < n_way:
        raise InputDomainError(
            f"only {len(eligible)} classes have {k_shot + h_query} images; need {n_way}")
    classes = rng.choice(np.array(eligible), size=n_way, replace=False)
    support, query = [], []
    for c in classes:
        pick = rng.choice(by_class[c], size=k_shot + h_query, replace=False)
        support.append(pick[:k_shot])
        query.append(pick[k_shot:])
    return Episode(
        classes=classes,
        support=np.concatenate(support),
        support_labels=np.repeat(np.arange(n_way), k_shot),
        query=np.concatenate(query),
        query_labels=np.repeat(np.arange(n_way), h_query),
    )


@torch.no_grad()
def extract_embeddings(model, images, *, normalize: bool = True,
                       batch_size: int = 256) -> np.ndarray:
    """Pooled embeddings in inference mode, L2-normalised by default."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    images = torch.as_tensor(np.asarray(images), dtype=dtype)
    embedding = model.embedding if hasattr(model, "embedding") else model
    out = []
    for i in range(0, len(images), batch_size):
        out.append(embedding(images[i:i + batch_size])[1].double().numpy())
    model.train(was_training)
    emb = np.concatenate(out) if out else np.zeros((0, 0))
    if normalize and len(emb):
        emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
    return emb


@dataclass
class LinearProbe:
    weight: np.ndarray  # (n_way, d)
    bias: np.ndarray  # (n_way,)
    l2: float
    iterations: int
    grad_norm: float
    degenerate: bool = False

    @property
    def n_way(self) -> int:
        return len(self.bias)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weight.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax resolves ties to the lowest index
        return np.argmax(self.logits(x), axis=1)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_linear_probe(x: np.ndarray, y: np.ndarray, l2: float = 1.0, *, n_way: Optional[int] = None,
                     tol: float = 1e-6, max_iter: int = 1000) -> LinearProbe:
    """Multinomial logistic regression by damped Newton from a zero start.

    Minimises the summed cross-entropy over the support set plus
    ``l2 * ||weight||^2``; the bias is not penalised.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise InputDomainError("support embeddings must be (n, d) with one label each")
    if l2 < 0:
        raise InputDomainError("l2 must be >= 0")
    k = int(n_way if n_way is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= k or len(np.unique(y)) != k:
        raise InputDomainError("every class needs at least one support example")
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    onehot = np.eye(k)[y]
    penal = np.ones((k, d + 1))
    penal[:, -1] = 0.0

    def objective(theta):
        z = xa @ theta.T
        zmax = z.max(axis=1, keepdims=True)
        lse = (zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1)))
        return float(np.sum(lse - z[np.arange(n), y]) + l2 * np.sum((theta * penal) ** 2))

    theta = np.zeros((k, d + 1))
    ridge = 2.0 * l2 * penal.ravel()
    it = 0
    gnorm = np.inf
    f = objective(theta)
    for it in range(1, max_iter + 1):
        p = _softmax(xa @ theta.T)
        grad = (p - onehot).T @ xa + 2.0 * l2 * theta * penal
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            it -= 1
            break
        a = np.einsum("ik,kl->ikl", p, np.eye(k)) - np.einsum("ik,il->ikl", p, p)
        hess = np.einsum("ikl,ij,im->kjlm", a, xa, xa).reshape(k * (d + 1), k * (d + 1))
        hess[np.diag_indices_from(hess)] += ridge + 1e-10
        step = np.linalg.solve(hess, grad.ravel()).reshape(k, d + 1)
        t = 1.0
        slope = float(np.sum(grad * step))
        while t > 1e-10:
            cand = theta - t * step
            fc = objective(cand)
            if fc <= f - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        theta, f = cand, fc
    degenerate = bool(np.allclose(x, x[0]))
    return LinearProbe(theta[:, :d].copy(), theta[:, d].copy(), l2, it, gnorm, degenerate)


def evaluate_episode(probe: LinearProbe, x_query: np.ndarray, y_query: np.ndarray) -> float:
    y_query = np.asarray(y_query)
    if len(y_query) == 0:
        raise InputDomainError("empty query set")
    if y_query.max() >= probe.n_way:
        raise InputDomainError("query labels exceed the probe's way count")
    return float(np.mean(probe.predict(x_query) == y_query))


def mean_ci95(accuracies) -> tuple:
    """Mean and normal-approximation 95% half-width ``1.96 * s / sqrt(n)``."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise InputDomainError("no accuracies to aggregate")
    if acc.size == 1:
        return float(acc[0]), 0.0
    return float(acc.mean()), float(Z_95 * acc.std(ddof=1) / np.sqrt(acc.size))


def format_mean_ci(mean: float, halfwidth: float, sep: str = "±") -> str:
    """Percent with two decimals, e.g. ``66.98±0.81``."""
    return f"{100 * mean:.2f}{sep}{100 * halfwidth:.2f}"


@dataclass
class EvalReport:
    n_way: int
    k_shot: int
    h_query: int
    episodes: int
    mean_accuracy: float
    ci95_halfwidth: float
    seed: int
    checkpoint_id: Optional[str] = None
    accuracies: List[float] = field(default_factory=list, repr=False)
    degenerate_episodes: int = 0

    def to_dict(self) -> dict:
        return {"n_way": self.n_way, "k_shot": self.k_shot, "h_query": self.h_query,
                "episodes": self.episodes, "mean_accuracy": self.mean_accuracy,
                "ci95_halfwidth": self.ci95_halfwidth, "seed": self.seed,
                "checkpoint_id": self.checkpoint_id}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        return format_mean_ci(self.mean_accuracy, self.ci95_halfwidth)


def episode_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def evaluate_embeddings(embeddings: np.ndarray, dataset, *, n_way: int = 5, k_shot: int = 1,
                        h_query: int = DEFAULT_QUERY, num_episodes: int = DEFAULT_EPISODES,
                        l2: float = 1.0, seed: int = 0, workers: int = 1,
                        checkpoint_id: Optional[str] = None) -> EvalReport:
    """Episodes over precomputed embeddings (row ``i`` belongs to dataset item ``i``)."""
    if num_episodes < 1:
        raise InputDomainError("num_episodes must be >= 1")

    def run(i):
        ep = sample_episode(dataset, n_way, k_shot, h_query, make_rng(episode_seed(seed, i)))
        probe = fit_linear_probe(embeddings[ep.support], ep.support_labels, l2, n_way=n_way)
        return evaluate_episode(probe, embeddings[ep.query], ep.query_labels), probe.degenerate

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(num_episodes)))
    else:
        results = [run(i) for i in range(num_episodes)]
    accs = [r[0] for r in results]
    mean, hw = mean_ci95(accs)
    return EvalReport(n_way, k_shot, h_query, num_episodes, mean, hw, seed, checkpoint_id,
                      accs, sum(r[1] for r in results))


def evaluate(model, dataset, *, n_way: int = 5, k_shot: int = 1, h_query: int = DEFAULT_QUERY,
             num_episodes: int = DEFAULT_EPISODES, l2: float = 1.0, seed: int = 0,
             normalize: bool = True, workers: int = 1,
             checkpoint_id: Optional[str] = None) -> EvalReport:
    """Sample, embed, fit and score ``num_episodes`` episodes from ``dataset``.

    Episode ``i`` uses the stream seeded with ``seed ^ i``, so the report does
    not depend on ``workers``.
    """
    emb = extract_embeddings(model, dataset.images, normalize=normalize)
    return evaluate_embeddings(emb, dataset, n_way=n_way, k_shot=k_shot, h_query=h_query,
                               num_episodes=num_episodes, l2=l2, seed=seed, workers=workers,
                               checkpoint_id=checkpoint_id)
