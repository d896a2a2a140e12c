"""Mention networks and second-order LINE embeddings."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .optim import make_rng
from .text import tokenize


@dataclass
class MentionGraph:
    """Directed weighted graph; ``mentioners`` counts distinct dataset users
    mentioning each id, computed before any filtering."""

    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)
    mentioners: dict = field(default_factory=dict)
    removed: set = field(default_factory=set)

    def add_edge(self, src, dst, weight=1):
        if src == dst:
            return
        self.edges[(src, dst)] = self.edges.get((src, dst), 0) + weight

    def out_degree(self):
        deg = Counter()
        for (s, _), w in self.edges.items():
            deg[s] += w
        return deg

    def to_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for (s, d), w in self.edges.items():
                fh.write(f"{s}\t{d}\t{w}\n")

    @classmethod
    def from_tsv(cls, path):
        g = cls()
        seen = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                s, d, w = line.rstrip("\n").split("\t")
                for n in (s, d):
                    if n not in seen:
                        seen[n] = True
                        g.nodes.append(n)
                g.add_edge(s, d, float(w) if "." in w else int(w))
        return g


def extract_mentions(user):
    """Counter of mentioned handles (lowercase, without '@'), self excluded."""
    me = user.user_id.lower()
    out = Counter()
    for tweet in user.tweets:
        for tok in tokenize(tweet):
            if tok.startswith("@") and len(tok) > 1 and tok[1:] != me:
                out[tok[1:]] += 1
    return out


def build_graph(users, mode="wnut", celebrity_threshold=None):
    """Mention graph over ``users``.

    ``wnut``: dataset users plus outside users mentioned by at least two
    distinct dataset users, with an edge per mention (weight = count).
    ``comention``: dataset users only; two users are linked (both
    directions) when they mention each other, plus once per commonly
    mentioned third user. Hubs mentioned by more than
    ``celebrity_threshold`` users do not create co-mention links.
    """
    if mode not in ("wnut", "comention"):
        raise ValueError(f"unknown graph mode {mode!r}")
    users = list(users)
    canon = {u.user_id.lower(): u.user_id for u in users}
    mentions = {u.user_id: extract_mentions(u) for u in users}
    mentioner_sets = defaultdict(list)
    for uid, counts in mentions.items():
        for target in counts:
            mentioner_sets[canon.get(target, target)].append(uid)

    g = MentionGraph(mentioners={k: len(set(v)) for k, v in mentioner_sets.items()})
    g.nodes = [u.user_id for u in users]
    if mode == "wnut":
        node_set = set(g.nodes)
        for uid in [u.user_id for u in users]:
            for target in mentions[uid]:
                t = canon.get(target, target)
                if t not in node_set and g.mentioners[t] >= 2:
                    node_set.add(t)
                    g.nodes.append(t)
        for uid in [u.user_id for u in users]:
            for target, count in mentions[uid].items():
                t = canon.get(target, target)
                if t in node_set:
                    g.add_edge(uid, t, count)
        return g

    for uid in g.nodes:
        for target in mentions[uid]:
            t = canon.get(target)
            if t is not None and uid < t and uid.lower() in mentions[t]:
                g.add_edge(uid, t)
                g.add_edge(t, uid)
    for hub, who in mentioner_sets.items():
        if celebrity_threshold is not None and g.mentioners[hub] > celebrity_threshold:
            continue
        who = list(dict.fromkeys(who))
        for i, a in enumerate(who):
            for b in who[i + 1:]:
                g.add_edge(a, b)
                g.add_edge(b, a)
    return g


def remove_celebrities(graph, threshold=10):
    """Drop nodes mentioned by more than ``threshold`` distinct users.

    Dropped ids are listed in ``removed``; they keep zero embeddings.
    """
    celebs = {n for n in graph.nodes if graph.mentioners.get(n, 0) > threshold}
    out = MentionGraph(
        nodes=[n for n in graph.nodes if n not in celebs],
        mentioners=dict(graph.mentioners),
        removed=set(graph.removed) | celebs,
    )
    out.edges = {(s, d): w for (s, d), w in graph.edges.items()
                 if s not in celebs and d not in celebs}
    return out


class AliasTable:
    """Walker/Vose alias sampler: O(1) draws from a discrete distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(w) == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("alias table needs non-negative weights with positive sum")
        n = len(w)
        scaled = w * n / w.sum()
        self.prob = np.zeros(n)
        self.alias = np.zeros(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] = scaled[l] + scaled[s] - 1.0
            (small if scaled[l] < 1.0 else large).append(l)
        for i in large + small:
            self.prob[i] = 1.0
            self.alias[i] = i

    def sample(self, rng, size):
        i = rng.integers(len(self.prob), size=size)
        u = rng.random(size)
        return np.where(u < self.prob[i], i, self.alias[i])


@dataclass
class NetworkEmbeddings:
    """Per-user vectors; unknown users map to zeros."""

    ids: list
    vectors: np.ndarray
    context: np.ndarray | None = None

    def __post_init__(self):
        self.index = {u: i for i, u in enumerate(self.ids)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def lookup(self, user_id):
        i = self.index.get(user_id)
        if i is None:
            return np.zeros(self.dim)
        return self.vectors[i]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim={self.dim} count={len(self.ids)}\n")
            for uid, vec in zip(self.ids, self.vectors):
                fh.write(uid + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = dict(kv.split("=") for kv in fh.readline().split())
            dim, count = int(header["dim"]), int(header["count"])
            ids, rows = [], []
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(f"embedding row for {parts[0]!r} has {len(parts) - 1} values, expected {dim}")
                ids.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
        if len(ids) != count:
            raise ValueError(f"header promises {count} rows, file has {len(ids)}")
        return cls(ids, np.asarray(rows).reshape(len(ids), dim))


def train_line(graph, dim=600, lr0=0.025, negatives=5, samples=1_000_000, seed=0,
               batch_size=64):
    """Second-order LINE with negative sampling.

    Edges are drawn proportionally to weight, noise nodes proportionally to
    weighted out-degree ** 0.75, and the learning rate decays linearly from
    ``lr0`` to ``lr0 * 1e-4``. Updates are applied in deterministic
    mini-batches of ``batch_size`` sampled edges.
    """
    if not graph.edges:
        raise ValueError("cannot embed a graph without edges")
    index = {n: i for i, n in enumerate(graph.nodes)}
    for s, d in graph.edges:
        for n in (s, d):
            if n not in index:
                index[n] = len(index)
    ids = list(index)
    rng = make_rng(seed)
    vertex = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(ids), dim))
    context = np.zeros_like(vertex)
    if samples <= 0:
        return NetworkEmbeddings(ids, vertex, context)

    src = np.array([index[s] for s, _ in graph.edges], dtype=np.int64)
    dst = np.array([index[d] for _, d in graph.edges], dtype=np.int64)
    edge_sampler = AliasTable(list(graph.edges.values()))
    deg = np.zeros(len(ids))
    for (s, _), w in graph.edges.items():
        deg[index[s]] += w
    noise_sampler = AliasTable(deg ** 0.75)

    labels = np.zeros(negatives + 1)
    labels[0] = 1.0
    done = 0
    while done < samples:
        b = min(batch_size, samples - done)
        lr = lr0 * max(1e-4, 1.0 - done / samples)
        e = edge_sampler.sample(rng, b)
        u = src[e]
        targets = np.concatenate(
            [dst[e][:, None], noise_sampler.sample(rng, b * negatives).reshape(b, negatives)],
            axis=1,
        )
        v_u = vertex[u]
        c_t = context[targets]
        score = np.einsum("bd,bkd->bk", v_u, c_t)
        g = (labels - 0.5 * (1.0 + np.tanh(0.5 * score))) * lr
        np.add.at(context, targets, g[:, :, None] * v_u[:, None, :])
        np.add.at(vertex, u, np.einsum("bk,bkd->bd", g, c_t))
        done += b
    return NetworkEmbeddings(ids, vertex, context)


class LineEmbedding(TransformerMixin, BaseEstimator):
    """Fit LINE on a mention graph; ``transform`` maps user ids to vectors."""

    def __init__(self, dim=600, lr0=0.025, negatives=5, samples=1_000_000, seed=0,
                 batch_size=64):
        self.dim = dim
        self.lr0 = lr0
        self.negatives = negatives
        self.samples = samples
        self.seed = seed
        self.batch_size = batch_size

    def fit(self, graph, y=None):
        self.embeddings_ = train_line(graph, self.dim, self.lr0, self.negatives,
                                      self.samples, self.seed, self.batch_size)
        return self

    def transform(self, user_ids):
        check_is_fitted(self, "embeddings_")
        return np.stack([self.embeddings_.lookup(u) for u in user_ids]) if len(user_ids) \
            else np.zeros((0, self.dim))
