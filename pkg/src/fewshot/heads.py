"""Few-shot classification heads.

Six interchangeable methods: baseline (linear + softmax), baseline_pp
(cosine classifier), matching (average cosine distance), proto (nearest
class mean), relation (learnable relation module), subspace (nearest
class subspace by projection residual).

Two surfaces per head:
  * fit/score functions on plain arrays (used at meta-test time);
  * `episode_loss`, a differentiable loss over a whole episode built from
    Tensor ops (used by meta-training to push gradients into the
    embedding and the relation module).

Argmax ties always resolve to the lowest class index (np.argmax does).
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DegenerateInputError, ShapeError
from .linalg import orthonormal_basis, project_residual
from .optim import ParamSet
from .tensor import Tensor

HEAD_KINDS = ("baseline", "baseline_pp", "matching", "proto", "relation", "subspace")
METRIC_HEADS = ("matching", "proto", "relation", "subspace")
FINETUNE_HEADS = ("baseline", "baseline_pp")


@dataclass
class HeadKind:
    kind: str = "proto"
    cosine_scale: float = 2.0          # baseline_pp logit scale; argmax-invariant
    relation_hidden: int = 0           # 0 -> 8 * embedding_dim
    relation_loss: str = "mse"         # mse | cross_entropy
    fine_tune_iters: int = 100
    fine_tune_lr: float = 1e-2

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.cosine_scale <= 0:
            raise ValueError("cosine_scale must be positive")


@dataclass
class SupportSet:
    """N*K embedded support items with class labels 0..N-1, K per class."""

    features: np.ndarray
    labels: np.ndarray
    n_way: int
    k_shot: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != self.features.shape[0]:
            raise ShapeError("support features must be (N*K, d) with matching labels")
        counts = np.bincount(self.labels, minlength=self.n_way)
        if len(counts) != self.n_way or not np.all(counts == self.k_shot):
            raise ShapeError("support must contain exactly K items for each of the N classes")

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class HeadState:
    kind: str
    prototypes: np.ndarray = None              # proto: (N, d)
    weights: np.ndarray = None                 # baseline: (N, d)
    bias: np.ndarray = None                    # baseline: (N,)
    weight_vectors: np.ndarray = None          # baseline_pp: (N, d)
    class_means: np.ndarray = None             # subspace: (N, d)
    class_bases: list = None                   # subspace: N bases, each (d, r_c)
    relation_params: ParamSet = None


def class_average_matrix(labels, n_way, k_shot):
    """(N, N*K) matrix whose row c averages the features of class c."""
    m = np.zeros((n_way, len(labels)))
    m[labels, np.arange(len(labels))] = 1.0 / k_shot
    return m


# ---------------------------------------------------------------- proto

def proto_fit(support):
    prototypes = np.stack([
        support.features[support.labels == c].mean(axis=0) for c in range(support.n_way)
    ])
    return HeadState(kind="proto", prototypes=prototypes)


def proto_score(state, query):
    """logit_c = -||query - prototype_c||^2."""
    q = np.asarray(query, dtype=np.float64)
    p = state.prototypes
    if q.shape != (p.shape[1],):
        raise ShapeError(f"query shape {q.shape} != ({p.shape[1]},)")
    d = q[None, :] - p
    return -np.sum(d * d, axis=1)


# ------------------------------------------------------------- matching

def _check_norms(norms, what):
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"zero-norm {what} vector: cosine is undefined")


def matching_score(support, query):
    """logit_c = -(mean cosine distance from query to class-c supports)."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (support.dim,):
        raise ShapeError(f"query shape {q.shape} != ({support.dim},)")
    s = support.features
    s_norms = np.linalg.norm(s, axis=1)
    q_norm = np.linalg.norm(q)
    _check_norms(s_norms, "support")
    _check_norms(np.array([q_norm]), "query")
    sims = (s @ q) / (s_norms * q_norm)
    m = class_average_matrix(support.labels, support.n_way, support.k_shot)
    # distance = 1 - cos; logit = -mean distance = mean cos - 1
    return m @ sims - 1.0


# ------------------------------------------------------------- subspace

def subspace_fit(support):
    """Per class: mean plus orthonormal basis of the centered supports."""
    means = []
    bases = []
    for c in range(support.n_way):
        feats = support.features[support.labels == c]
        mu = feats.mean(axis=0)
        means.append(mu)
        bases.append(orthonormal_basis((feats - mu).T))
    return HeadState(kind="subspace", class_means=np.array(means), class_bases=bases)


def subspace_score(state, query):
    """logit_c = -||(q - mu_c) orthogonal to span(B_c)||^2."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (state.class_means.shape[1],):
        raise ShapeError(f"query shape {q.shape} != ({state.class_means.shape[1]},)")
    return -np.array(
        [project_residual(b, q - mu) for mu, b in zip(state.class_means, state.class_bases)]
    )


# ------------------------------------------------------------- relation

def init_relation_params(dim, hidden=0, seed=0):
    """Two-layer perceptron on [class-sum ; query] (2d inputs), sigmoid out."""
    if hidden <= 0:
        hidden = 8 * dim
    rng = np.random.default_rng(seed)
    params = ParamSet()
    b1 = 1.0 / np.sqrt(2 * dim)
    params.add("rel_w1", rng.uniform(-b1, b1, size=(2 * dim, hidden)))
    params.add("rel_b1", rng.uniform(-b1, b1, size=(hidden,)))
    b2 = 1.0 / np.sqrt(hidden)
    params.add("rel_w2", rng.uniform(-b2, b2, size=(hidden, 1)))
    params.add("rel_b2", rng.uniform(-b2, b2, size=(1,)))
    return params


def _relation_forward(params, class_sums, queries):
    """Tensor path: class_sums (N, d), queries (B, d) -> scores (B, N)."""
    n = class_sums.data.shape[0] if isinstance(class_sums, Tensor) else class_sums.shape[0]
    b = queries.data.shape[0] if isinstance(queries, Tensor) else queries.shape[0]
    a = T.as_tensor(class_sums)
    q = T.as_tensor(queries)
    a_rep = T.take(a, np.tile(np.arange(n), b))
    q_rep = T.take(q, np.repeat(np.arange(b), n))
    x = T.concat([a_rep, q_rep], axis=1)
    h = T.relu(T.add(T.matmul(x, params["rel_w1"]), params["rel_b1"]))
    out = T.sigmoid(T.add(T.matmul(h, params["rel_w2"]), params["rel_b2"]))
    return T.reshape(out, (b, n))


def relation_score(relation_params, support, query):
    """N relation scores in (0, 1) for one query."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (support.dim,):
        raise ShapeError(f"query shape {q.shape} != ({support.dim},)")
    sums = class_average_matrix(support.labels, support.n_way, 1) @ support.features
    scores = _relation_forward(relation_params, sums, q[None, :])
    return scores.data[0]


# ------------------------------------------------- baseline / baseline++

def linear_softmax_score(weights, bias, query):
    """logits = W q + b."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (w.shape[1],) or b.shape != (w.shape[0],):
        raise ShapeError("weights/bias/query shapes are inconsistent")
    return w @ q + b


def cosine_classifier_score(weight_vectors, query, scale=2.0):
    """logit_c = scale * cos(w_c, q)."""
    w = np.asarray(weight_vectors, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (w.shape[1],):
        raise ShapeError(f"query shape {q.shape} != ({w.shape[1]},)")
    w_norms = np.linalg.norm(w, axis=1)
    q_norm = np.linalg.norm(q)
    _check_norms(w_norms, "weight")
    _check_norms(np.array([q_norm]), "query")
    return scale * (w @ q) / (w_norms * q_norm)


def fit_head(head, support, relation_params=None):
    """Fit dispatch for the non-finetuned heads."""
    if head.kind == "proto":
        return proto_fit(support)
    if head.kind == "subspace":
        return subspace_fit(support)
    if head.kind == "matching":
        return HeadState(kind="matching")
    if head.kind == "relation":
        if relation_params is None:
            raise ValueError("relation head requires relation_params")
        return HeadState(kind="relation", relation_params=relation_params)
    raise ValueError(f"head kind {head.kind!r} has no support-set fit")


def score_queries(state, support, queries, head):
    """Score a batch of plain-array queries with a fitted head."""
    kind = head.kind
    out = []
    for q in np.asarray(queries, dtype=np.float64):
        if kind == "proto":
            out.append(proto_score(state, q))
        elif kind == "matching":
            out.append(matching_score(support, q))
        elif kind == "subspace":
            out.append(subspace_score(state, q))
        elif kind == "relation":
            out.append(relation_score(state.relation_params, support, q))
        elif kind == "baseline":
            out.append(linear_softmax_score(state.weights, state.bias, q))
        elif kind == "baseline_pp":
            out.append(cosine_classifier_score(state.weight_vectors, q, head.cosine_scale))
        else:
            raise ValueError(f"unknown head kind {kind!r}")
    return np.array(out)


# ------------------------------------------------------------------ loss

def head_loss(head, logits_or_scores, label):
    """Per-item training loss: cross-entropy, except relation's default MSE
    against the one-hot target (mean over the N scores)."""
    if head.kind == "relation" and head.relation_loss == "mse":
        scores = T.as_tensor(logits_or_scores)
        n = scores.data.size
        if not 0 <= int(label) < n:
            raise IndexError(f"label {label} out of range for {n} classes")
        target = np.zeros(n)
        target[int(label)] = 1.0
        diff = T.sub(scores, target)
        return T.tmean(T.mul(diff, diff))
    return T.softmax_cross_entropy(logits_or_scores, label)


# ----------------------------------------------- differentiable episode loss

def _pairwise_sq_dists(queries, prototypes):
    """(B, d) x (N, d) -> (B, N) squared distances, Tensor-differentiable."""
    q2 = T.reshape(T.tsum(T.mul(queries, queries), axis=1), (-1, 1))
    p2 = T.tsum(T.mul(prototypes, prototypes), axis=1)
    cross = T.matmul(queries, T.transpose(prototypes))
    return T.add(T.sub(T.add(q2, p2), cross), T.mul(cross, -1.0))


def _row_normalize(x):
    norms = T.sqrt(T.tsum(T.mul(x, x), axis=1, keepdims=True))
    _check_norms(norms.data.ravel(), "embedding")
    return T.div(x, norms)


def subspace_class_residuals(class_feats, queries):
    """Squared projection residuals of queries against one class subspace.

    class_feats: (K, d) Tensor; queries: (B, d) Tensor -> (B,) Tensor.
    Forward uses an SVD basis of the centered supports; backward uses the
    envelope form of the least-squares minimum, so no SVD differentiation
    is needed.
    """
    s = T.as_tensor(class_feats)
    q = T.as_tensor(queries)
    k, d = s.data.shape
    mu = s.data.mean(axis=0)
    x = (s.data - mu).T                       # (d, K) centered columns
    basis = orthonormal_basis(x)
    c = q.data - mu                           # (B, d)
    proj = c @ basis @ basis.T if basis.shape[1] else np.zeros_like(c)
    resid = c - proj                          # (B, d), each row orthogonal to span
    out = Tensor(np.sum(resid * resid, axis=1), _parents=(s, q))
    pinv_x = np.linalg.pinv(x)                # (K, d)

    def bwd(g):
        if q.requires_grad:
            q._accumulate(2.0 * g[:, None] * resid)
        if s.requires_grad:
            w = c @ pinv_x.T                  # (B, K) least-squares coefficients
            a = w + (1.0 - w.sum(axis=1, keepdims=True)) / k
            s._accumulate(-2.0 * (a * g[:, None]).T @ resid)

    out._backward_fn = bwd
    return out


def episode_loss(head, support_feats, support_labels, query_feats, query_labels,
                 n_way, k_shot, relation_params=None):
    """Mean per-query loss of an episode, differentiable w.r.t. the
    embedded features (and the relation parameters)."""
    s = T.as_tensor(support_feats)
    q = T.as_tensor(query_feats)
    kind = head.kind

    if kind == "proto":
        m = class_average_matrix(support_labels, n_way, k_shot)
        prototypes = T.matmul(Tensor(m), s)
        logits = T.mul(_pairwise_sq_dists(q, prototypes), -1.0)
    elif kind == "matching":
        sims = T.matmul(_row_normalize(q), T.transpose(_row_normalize(s)))
        m = class_average_matrix(support_labels, n_way, k_shot)
        logits = T.sub(T.matmul(sims, Tensor(m.T)), 1.0)
    elif kind == "subspace":
        cols = []
        for c in range(n_way):
            idx = np.flatnonzero(support_labels == c)
            cols.append(subspace_class_residuals(T.take(s, idx), q))
        logits = T.mul(T.stack(cols, axis=1), -1.0)
    elif kind == "relation":
        if relation_params is None:
            raise ValueError("relation head requires relation_params")
        m = class_average_matrix(support_labels, n_way, 1)   # per-class sums
        sums = T.matmul(Tensor(m), s)
        logits = _relation_forward(relation_params, sums, q)
    else:
        raise ValueError(f"head kind {kind!r} is not episodically trainable")

    losses = [head_loss(head, T.take(logits, i), int(y)) for i, y in enumerate(query_labels)]
    total = losses[0]
    for item in losses[1:]:
        total = T.add(total, item)
    return T.mul(total, 1.0 / len(losses))
