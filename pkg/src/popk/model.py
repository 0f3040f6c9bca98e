"""Embedding click scorer with an additive-attention user encoder.

Score of candidate c for user u is ``<u, e_c>`` where ``u`` attends over the
user's clicked-history embeddings with weights ``softmax(q . tanh(W e_i))``.
Training minimises the sampled-softmax negative log-likelihood of each
positive against its k negatives.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import MAX_HISTORY, Impression
from .popindex import PopularityIndex
from .sampler import PopkSampler, SamplerConfig, TrainingSample

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "popk-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceDetected(FloatingPointError):
    pass


@dataclass
class ModelParams:
    article_ids: list[str]
    emb: np.ndarray  # (n_articles, d)
    W: np.ndarray    # (d, d)
    q: np.ndarray    # (d,)

    def __post_init__(self):
        self.row = {a: i for i, a in enumerate(self.article_ids)}

    @property
    def dim(self) -> int:
        return self.emb.shape[1]

    @classmethod
    def init(cls, article_ids: Sequence[str], dim: int = 32, scale: float = 0.05, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        rng = np.random.default_rng(seed)
        return cls(
            list(article_ids),
            rng.uniform(-scale, scale, size=(len(article_ids), dim)),
            rng.uniform(-scale, scale, size=(dim, dim)),
            rng.uniform(-scale, scale, size=dim),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(list(self.article_ids), self.emb.copy(), self.W.copy(), self.q.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.emb.ravel(), self.W.ravel(), self.q])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat()).all())

    def save(self, path) -> None:
        record = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "article_ids": self.article_ids,
            "emb": self.emb.ravel().tolist(),
            "W": self.W.ravel().tolist(),
            "q": self.q.tolist(),
        }
        Path(path).write_text(json.dumps(record), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelParams":
        record = json.loads(Path(path).read_text(encoding="utf-8"))
        if record.get("format") != CHECKPOINT_FORMAT or record.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint")
        d, ids = record["dim"], record["article_ids"]
        return cls(
            ids,
            np.asarray(record["emb"], dtype=float).reshape(len(ids), d),
            np.asarray(record["W"], dtype=float).reshape(d, d),
            np.asarray(record["q"], dtype=float),
        )


@dataclass
class Gradients:
    emb: np.ndarray
    W: np.ndarray
    q: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.emb.ravel(), self.W.ravel(), self.q])


@dataclass(frozen=True)
class ScoredCandidates:
    y_plus: float
    y_minus: tuple[float, ...]


# -- single-instance operations -------------------------------------------

def attention_weights(params: ModelParams, history: Sequence[str]) -> np.ndarray:
    if len(history) == 0:
        return np.zeros(0)
    X = params.emb[[params.row[a] for a in history]]
    logits = np.tanh(X @ params.W.T) @ params.q
    e = np.exp(logits - logits.max())
    return e / e.sum()


def encode_user(params: ModelParams, history: Sequence[str]) -> np.ndarray:
    """Attention-pooled history embedding; zero vector for an empty history."""
    if len(history) == 0:
        return np.zeros(params.dim)
    X = params.emb[[params.row[a] for a in history]]
    return attention_weights(params, history) @ X


def score(params: ModelParams, user: np.ndarray, candidate: str) -> float:
    return float(user @ params.emb[params.row[candidate]])


def _log_posterior(y_plus, y_minus) -> float:
    s = np.concatenate([[y_plus], np.asarray(y_minus, dtype=float)])
    m = s.max()
    return float(s[0] - m - np.log(np.exp(s - m).sum()))


def posterior(scores: ScoredCandidates) -> float:
    """Softmax probability of the positive among itself and its negatives."""
    return float(np.exp(_log_posterior(scores.y_plus, scores.y_minus)))


def nll_loss(samples: Sequence[ScoredCandidates], return_mean: bool = False):
    if not samples:
        raise ValueError("nll_loss needs at least one sample")
    total = -sum(_log_posterior(s.y_plus, s.y_minus) for s in samples)
    return (total, total / len(samples)) if return_mean else total


# -- batched forward/backward ---------------------------------------------

def _pack(params: ModelParams, samples: Sequence[TrainingSample], max_history: int):
    """Index arrays: history (B, M) with mask, candidates (B, K+1) positive first."""
    M = max(1, max((min(len(s.history), max_history) for s in samples), default=1))
    hist = np.zeros((len(samples), M), dtype=np.int64)
    mask = np.zeros((len(samples), M), dtype=bool)
    for b, s in enumerate(samples):
        h = s.history[-max_history:] if max_history > 0 else ()
        if h:
            hist[b, :len(h)] = [params.row[a] for a in h]
            mask[b, :len(h)] = True
    row = params.row
    cand = np.array([[row[s.positive]] + [row[a] for a in s.negatives] for s in samples], dtype=np.int64)
    return hist, mask, cand


def _encode_batch(params: ModelParams, hist, mask):
    X = params.emb[hist]                     # (B, M, d)
    T = np.tanh(X @ params.W.T)              # (B, M, d)
    logits = T @ params.q                    # (B, M)
    logits = np.where(mask, logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(logits - top), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    w = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    u = np.einsum("bm,bmd->bd", w, X)
    return X, T, w, u


def loss_and_gradients(params: ModelParams, samples: Sequence[TrainingSample],
                       max_history: int = MAX_HISTORY):
    """Summed NLL over ``samples``, per-sample losses and the exact gradient."""
    hist, mask, cand = _pack(params, samples, max_history)
    X, T, w, u = _encode_batch(params, hist, mask)
    Y = params.emb[cand]                                  # (B, K+1, d)
    s = np.einsum("bkd,bd->bk", Y, u)
    m = s.max(axis=1, keepdims=True)
    logZ = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    per_sample = logZ - s[:, 0]
    p = np.exp(s - logZ[:, None])

    ds = p.copy()
    ds[:, 0] -= 1.0
    dY = ds[:, :, None] * u[:, None, :]
    du = np.einsum("bk,bkd->bd", ds, Y)
    dX = w[:, :, None] * du[:, None, :]
    dw = np.einsum("bmd,bd->bm", X, du)
    dlogit = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    dq = np.einsum("bm,bmd->d", dlogit, T)
    dZ = dlogit[:, :, None] * params.q[None, None, :] * (1.0 - T ** 2)
    dW = np.einsum("bmi,bmj->ij", dZ, X)
    dX += dZ @ params.W
    dX *= mask[:, :, None]

    d_emb = np.zeros_like(params.emb)
    np.add.at(d_emb, hist.ravel(), dX.reshape(-1, params.dim))
    np.add.at(d_emb, cand.ravel(), dY.reshape(-1, params.dim))
    return float(per_sample.sum()), per_sample, Gradients(d_emb, dW, dq)


def gradients(params: ModelParams, samples: Sequence[TrainingSample],
              max_history: int = MAX_HISTORY) -> Gradients:
    if not samples:
        raise ValueError("gradients needs a non-empty batch")
    return loss_and_gradients(params, samples, max_history)[2]


def batch_loss(params: ModelParams, samples: Sequence[TrainingSample],
               max_history: int = MAX_HISTORY) -> float:
    return loss_and_gradients(params, samples, max_history)[0]


def train(params: ModelParams, impressions: Sequence[Impression], index: PopularityIndex | None,
          config: SamplerConfig, epochs: int = 3, learning_rate: float = 0.05,
          rng: np.random.Generator | None = None, batch_size: int = 16,
          max_history: int = MAX_HISTORY):
    """Mini-batch SGD; returns (trained params, per-epoch mean loss).

    Negatives are redrawn every epoch. Each step moves along the gradient of
    the summed batch loss.
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = params.copy()
    sampler = PopkSampler(k=config.k, popk=config.popk, logic=config.logic, metric=config.metric,
                          seed=config.seed, index=index)
    trace = []
    for epoch in range(epochs):
        samples = sampler.transform(impressions, epoch=epoch)
        if not samples:
            raise ValueError("no trainable samples")
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            loss, _, g = loss_and_gradients(params, batch, max_history)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss in epoch {epoch}")
            total += loss
            if learning_rate:
                params.emb -= learning_rate * g.emb
                params.W -= learning_rate * g.W
                params.q -= learning_rate * g.q
        mean = total / len(samples)
        if not np.isfinite(mean) or not params.is_finite():
            raise DivergenceDetected(f"non-finite state after epoch {epoch}")
        logger.info("epoch %d: mean loss %.6f over %d samples", epoch, mean, len(samples))
        trace.append(mean)
    return params, trace


def score_impressions(params: ModelParams, impressions: Sequence[Impression],
                      max_history: int = MAX_HISTORY) -> list[np.ndarray]:
    """Candidate scores per impression; articles unknown to the model score 0."""
    ext = np.vstack([params.emb, np.zeros((1, params.dim))])
    unk = len(params.article_ids)
    out = []
    for imp in impressions:
        hist = [a for a in imp.history[-max_history:] if a in params.row] if max_history > 0 else []
        u = encode_user(params, hist)
        idx = [params.row.get(a, unk) for a in imp.candidate_ids]
        out.append(ext[idx] @ u)
    return out


class ClickScorer(BaseEstimator):
    """Trainable click scorer with POPK negative sampling.

    Parameters mirror the training recipe: ``k`` negatives per positive, of
    which up to ``popk`` are the most popular articles at the impression time
    under ``logic``/``metric``. ``popk=0`` trains the plain baseline.
    """

    def __init__(self, dim=32, learning_rate=0.05, epochs=3, batch_size=16, max_history=MAX_HISTORY,
                 k=4, popk=0, logic="acc", metric="clicks", bucket_length=3600, init_scale=0.05,
                 seed=0):
        self.dim = dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_history = max_history
        self.k = k
        self.popk = popk
        self.logic = logic
        self.metric = metric
        self.bucket_length = bucket_length
        self.init_scale = init_scale
        self.seed = seed

    def fit(self, impressions: Sequence[Impression], y=None, catalog=None, index=None):
        if catalog is not None:
            ids = list(catalog)
        else:
            ids = sorted({a for imp in impressions for a in (*imp.history, *imp.candidate_ids)})
        self.sampler_ = PopkSampler(k=self.k, popk=self.popk, logic=self.logic, metric=self.metric,
                                    seed=self.seed, bucket_length=self.bucket_length,
                                    index=index).fit(impressions)
        init = ModelParams.init(ids, self.dim, self.init_scale, self.seed)
        self.params_, self.loss_trace_ = train(
            init, impressions, self.sampler_.index_, self.sampler_.config,
            epochs=self.epochs, learning_rate=self.learning_rate,
            rng=np.random.default_rng([self.seed, 1]), batch_size=self.batch_size,
            max_history=self.max_history)
        return self

    def decision_function(self, impressions: Sequence[Impression]) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        return score_impressions(self.params_, impressions, self.max_history)

    def predict(self, impressions: Sequence[Impression], top: int | None = None) -> list[list[str]]:
        """Candidate ids of each impression ranked by score (stable on ties)."""
        ranked = []
        for imp, s in zip(impressions, self.decision_function(impressions)):
            order = np.argsort(-s, kind="stable")[:top]
            ranked.append([imp.candidates[i][0] for i in order])
        return ranked

    def score(self, impressions: Sequence[Impression], y=None) -> float:
        """Mean per-impression AUC."""
        from .metrics import evaluate
        return evaluate(impressions, self.decision_function(impressions)).auc
