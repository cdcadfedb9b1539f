"""Documents, chunking, instance embeddings, bags, synthetic data and entropy checks."""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DegenerateInputError, NonFiniteError, ShapeError


@dataclass
class Document:
    id: str
    tokens: list[int] | None
    labels: object
    chunk_ids: list[str] | None = None

    def __post_init__(self):
        if self.tokens is None and self.chunk_ids is None:
            raise ValueError(f"document {self.id!r} has neither tokens nor chunk ids")
        if self.tokens is not None:
            if len(self.tokens) == 0:
                raise DegenerateInputError(f"document {self.id!r} is empty")
            if min(self.tokens) < 0:
                raise ValueError(f"document {self.id!r} has negative token ids")


@dataclass
class Bag:
    id: str
    instances: np.ndarray
    label: object
    instance_labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.instances.shape[0]


def chunk(tokens, chunk_size: int = 512) -> list[list[int]]:
    """Split into contiguous, non-overlapping chunks; only the last may be short."""
    if isinstance(tokens, Document):
        tokens = tokens.tokens
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    tokens = list(tokens)
    if not tokens:
        raise DegenerateInputError("cannot chunk an empty document")
    return [tokens[i:i + chunk_size] for i in range(0, len(tokens), chunk_size)]


@functools.lru_cache(maxsize=65536)
def _token_vector(token: int, d: int, seed: int) -> np.ndarray:
    v = np.random.default_rng([seed, token]).standard_normal(d)
    v.setflags(write=False)
    return v


def toy_embed(chunk_tokens, d: int, seed: int = 0) -> np.ndarray:
    """Mean of per-token pseudorandom vectors keyed on ``(seed, token)``, scaled to unit RMS."""
    if d < 1:
        raise ValueError("d must be >= 1")
    vecs = np.stack([_token_vector(int(t), d, seed) for t in chunk_tokens])
    mean = vecs.mean(axis=0)
    rms = math.sqrt(float(np.mean(mean * mean)))
    if rms == 0.0:
        return mean.reshape(1, d)
    return (mean / rms).reshape(1, d)


def mil_label(instance_labels) -> int:
    """Bag is positive iff any instance is positive."""
    labels = list(instance_labels)
    if not labels:
        raise DegenerateInputError("mil_label needs at least one instance label")
    return 0 if sum(int(y) for y in labels) == 0 else 1


# --- files --------------------------------------------------------------------

def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read ``{"dim": d}`` followed by one ``{"chunk_id", "values"}`` record per line."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if dim is None:
                if not isinstance(rec, dict) or "dim" not in rec:
                    raise ValueError(f"{path}:{lineno}: expected header line with 'dim'")
                dim = int(rec["dim"])
                continue
            try:
                cid, values = str(rec["chunk_id"]), rec["values"]
            except (KeyError, TypeError):
                raise ValueError(f"{path}:{lineno}: record needs 'chunk_id' and 'values'") from None
            row = np.asarray(values, dtype=np.float64)
            if row.shape != (dim,):
                raise ShapeError(
                    f"{path}:{lineno}: chunk {cid!r} has {row.size} values, header declares {dim}")
            if not np.all(np.isfinite(row)):
                raise NonFiniteError(f"{path}:{lineno}: chunk {cid!r} has non-finite values")
            out[cid] = row
    return out


def save_embeddings(path, embeddings: dict[str, np.ndarray]):
    rows = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in embeddings.items()}
    dims = {r.size for r in rows.values()}
    if len(dims) > 1:
        raise ShapeError(f"embeddings have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"dim": dim}) + "\n")
        for cid, row in rows.items():
            fh.write(json.dumps({"chunk_id": cid, "values": [float(x) for x in row]}) + "\n")


def read_dataset(path) -> list[Document]:
    """One JSON document per line: ``id``, ``labels`` and ``tokens`` or ``chunks``."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Document(str(rec["id"]), rec.get("tokens"), rec["labels"],
                                     rec.get("chunks")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dataset record ({exc})") from None
    return docs


def write_dataset(path, docs: list[Document]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            rec = {"id": doc.id, "labels": doc.labels}
            if doc.tokens is not None:
                rec["tokens"] = [int(t) for t in doc.tokens]
            if doc.chunk_ids is not None:
                rec["chunks"] = list(doc.chunk_ids)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def document_to_bag(doc: Document, d: int, *, chunk_size: int = 512, seed: int = 0,
                    embeddings: dict[str, np.ndarray] | None = None) -> Bag:
    if doc.chunk_ids is not None:
        if embeddings is None:
            raise ValueError(f"document {doc.id!r} references chunks but no embedding file was given")
        try:
            rows = [embeddings[c] for c in doc.chunk_ids]
        except KeyError as exc:
            raise KeyError(f"document {doc.id!r}: unknown chunk id {exc.args[0]!r}") from None
        instances = np.stack(rows)
        if instances.shape[1] != d:
            raise ShapeError(f"document {doc.id!r}: embeddings have dim {instances.shape[1]}, model uses {d}")
    else:
        instances = np.concatenate([toy_embed(c, d, seed) for c in chunk(doc.tokens, chunk_size)])
    return Bag(doc.id, instances, doc.labels)


# --- synthetic ordered co-occurrence task --------------------------------------

NOISE_SIGMA = 0.1
# share of negatives that are (B before A), (A only), (B only)
NEGATIVE_MIX = (0.7, 0.15, 0.15)
BACKGROUND_POOL = 8


def generate_correlated_task(bag_count: int, instances_per_bag: int, d: int, seed: int = 0) -> list[Bag]:
    """Binary bags labelled 1 iff pattern A occurs before pattern B.

    Negatives hold B before A, or only one of the two patterns.  Every
    instance is a noisy copy of A, B or one of a few background vectors.
    Exactly ``bag_count // 2`` bags are positive; the B that completes the
    ordered pair carries instance label 1.
    """
    if instances_per_bag < 3:
        raise ValueError("instances_per_bag must be >= 3 (two pattern slots plus background)")
    if bag_count < 1 or d < 1:
        raise ValueError("bag_count and d must be >= 1")
    rng = np.random.default_rng(seed)
    pattern_a, pattern_b = rng.standard_normal((2, d))
    background = rng.standard_normal((BACKGROUND_POOL, d))

    n_pos = bag_count // 2
    kinds = ["pos"] * n_pos + list(rng.choice(["rev", "a_only", "b_only"], size=bag_count - n_pos,
                                              p=NEGATIVE_MIX))
    kinds = [kinds[i] for i in rng.permutation(bag_count)]

    bags = []
    for idx, kind in enumerate(kinds):
        n = instances_per_bag
        base = background[rng.integers(0, BACKGROUND_POOL, size=n)]
        inst_labels = np.zeros(n, dtype=int)
        i, j = sorted(rng.choice(n, size=2, replace=False))
        if kind == "pos":
            base[i], base[j] = pattern_a, pattern_b
            inst_labels[j] = 1
        elif kind == "rev":
            base[i], base[j] = pattern_b, pattern_a
        elif kind == "a_only":
            base[i] = pattern_a
        else:
            base[i] = pattern_b
        instances = base + NOISE_SIGMA * rng.standard_normal((n, d))
        bags.append(Bag(f"syn-{seed}-{idx}", instances, mil_label(inst_labels), inst_labels))
    return bags


def split(bags: list, test_fraction: float = 0.25) -> tuple[list, list]:
    cut = int(round(len(bags) * (1.0 - test_fraction)))
    return bags[:cut], bags[cut:]


# --- entropy -----------------------------------------------------------------

@dataclass
class JointDistribution:
    """Probability table over discrete variables; axis ``t`` is variable ``t``."""

    table: np.ndarray
    support_sizes: tuple = field(init=False)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if np.any(self.table < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {self.table.sum()!r}, not 1")
        self.support_sizes = self.table.shape

    @property
    def variable_count(self) -> int:
        return self.table.ndim

    @classmethod
    def random(cls, support_sizes, rng: np.random.Generator) -> "JointDistribution":
        p = rng.dirichlet(np.ones(int(np.prod(support_sizes))))
        return cls(p.reshape(support_sizes) / p.sum())


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def joint_entropy(dist: JointDistribution) -> float:
    return _entropy_bits(dist.table.reshape(-1))


def marginal(dist: JointDistribution, axes) -> np.ndarray:
    """Brute-force marginal over the given variable indices, in the order given."""
    table = dist.table
    out = np.zeros([table.shape[a] for a in axes])
    for idx in product(*(range(s) for s in table.shape)):
        out[tuple(idx[a] for a in axes)] += table[idx]
    return out


def conditional_entropy(dist: JointDistribution, t: int) -> float:
    """H(theta_t | theta_0..theta_{t-1}) by summing -p(x_0..x_t) log2 p(x_t | x_0..x_{t-1})."""
    prefix = marginal(dist, list(range(t + 1)))
    given = prefix.sum(axis=-1)
    h = 0.0
    for idx in product(*(range(s) for s in prefix.shape)):
        p = prefix[idx]
        if p > 0:
            h -= p * math.log2(p / given[idx[:-1]])
    return h


@dataclass
class EntropyCheck:
    joint: float
    sum_marginals: float
    chain_rule_sum: float
    holds: bool


def entropy_inequality_check(dist: JointDistribution, tol: float = 1e-9) -> EntropyCheck:
    """Joint entropy against the sum of marginal entropies and the chain-rule expansion."""
    h_joint = joint_entropy(dist)
    h_marg = sum(_entropy_bits(marginal(dist, [t])) for t in range(dist.variable_count))
    chain = _entropy_bits(marginal(dist, [0])) + sum(
        conditional_entropy(dist, t) for t in range(1, dist.variable_count))
    holds = h_joint <= h_marg + tol and abs(chain - h_joint) <= tol
    return EntropyCheck(h_joint, h_marg, chain, holds)
