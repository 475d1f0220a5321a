"""Context property encoding: hashed or binarized properties compressed by a small autoencoder.

Descriptive properties of a job execution (job name, dataset size, software
versions, task counts, ...) are turned into fixed-length vectors of length
``N = L + 1`` whose first element flags the encoder that produced them
(0 = hasher, 1 = binarizer).  An autoencoder then compresses those sparse
vectors into dense embeddings of length ``M``.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NGRAM = 3
DEFAULT_N = 33
DEFAULT_M = 8

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_TOKENS = itertools.count(1)


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def cleanse(text: str) -> str:
    """Lowercase and collapse every run of non-alphanumerics to one space."""
    return _NON_ALNUM.sub(" ", text.lower()).strip()


def ngrams(text: str, n: int = NGRAM) -> list[str]:
    """Character n-grams of the cleansed text.

    Texts shorter than ``n`` (after cleansing) yield themselves as a single
    term so that short identifiers such as ``"lr"`` are not encoded as zero.
    """
    clean = cleanse(text)
    if not clean:
        return []
    if len(clean) < n:
        return [clean]
    return [clean[i:i + n] for i in range(len(clean) - n + 1)]


def hash_encode(text: str, L: int) -> np.ndarray:
    """Hashed n-gram counts projected onto the unit sphere (zero if no terms)."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    q = np.zeros(L)
    for term in ngrams(text):
        q[fnv1a_64(term.encode("utf-8")) % L] += 1.0
    norm = np.linalg.norm(q)
    if norm > 0:
        q /= norm
    return q


def binarize(n: int, L: int) -> np.ndarray:
    """Little-endian bit vector of ``n``: bit ``i`` lands at index ``i``."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if n < 0 or n > (1 << L) - 1:
        raise ValueError(f"value {n} cannot be binarized with L={L} bits (max {(1 << L) - 1})")
    return np.array([(n >> i) & 1 for i in range(L)], dtype=float)


def unbinarize(bits: Sequence[float]) -> int:
    return sum(int(round(b)) << i for i, b in enumerate(bits))


def _is_natural(p) -> bool:
    # bool is an int subclass but a flag is not a count
    return isinstance(p, (int, np.integer)) and not isinstance(p, (bool, np.bool_)) and p >= 0


@dataclass(frozen=True)
class PropertyVector:
    flag: int
    payload: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.concatenate(([float(self.flag)], self.payload))

    def __len__(self) -> int:
        return 1 + len(self.payload)


def encode_property(p, N: int = DEFAULT_N) -> PropertyVector:
    """Dispatch a property to the binarizer (natural numbers) or the hasher."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    L = N - 1
    if _is_natural(p):
        return PropertyVector(1, binarize(int(p), L))
    return PropertyVector(0, hash_encode(str(p), L))


@dataclass
class AutoencoderParams:
    """Encoder ``e = tanh(p @ enc_w + enc_b)``, decoder ``p' = e @ dec_w + dec_b``.

    Weight matrices are stored as (in, out).  ``activation`` may be set to
    ``"linear"`` to drop the encoder tanh.
    """

    n: int
    m: int
    enc_w: np.ndarray
    enc_b: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray
    activation: str = "tanh"
    final_loss: float = float("nan")

    def __post_init__(self):
        if not 0 < self.m < self.n:
            raise ValueError(f"embedding size must satisfy 0 < M < N, got M={self.m}, N={self.n}")
        if self.enc_w.shape != (self.n, self.m) or self.dec_w.shape != (self.m, self.n):
            raise ValueError("autoencoder weight shapes inconsistent with N, M")
        if self.enc_b.shape != (self.m,) or self.dec_b.shape != (self.n,):
            raise ValueError("autoencoder bias shapes inconsistent with N, M")

    @classmethod
    def init(cls, n: int, m: int, seed: int = 0, activation: str = "tanh") -> "AutoencoderParams":
        rng = np.random.default_rng(seed)
        return cls(
            n=n, m=m,
            enc_w=rng.normal(0.0, 1.0 / np.sqrt(n), (n, m)),
            enc_b=np.zeros(m),
            dec_w=rng.normal(0.0, 1.0 / np.sqrt(m), (m, n)),
            dec_b=np.zeros(n),
            activation=activation,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"enc_w": self.enc_w, "enc_b": self.enc_b, "dec_w": self.dec_w, "dec_b": self.dec_b}

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(self.n, self.m, *(a.copy() for a in self.arrays().values()),
                                 activation=self.activation, final_loss=self.final_loss)

    def encode(self, X: np.ndarray) -> np.ndarray:
        h = X @ self.enc_w + self.enc_b
        return np.tanh(h) if self.activation == "tanh" else h

    def decode(self, E: np.ndarray) -> np.ndarray:
        return E @ self.dec_w + self.dec_b

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m,
            "enc_w": self.enc_w.tolist(), "enc_b": self.enc_b.tolist(),
            "dec_w": self.dec_w.tolist(), "dec_b": self.dec_b.tolist(),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderParams":
        return cls(
            n=d["n"], m=d["m"],
            enc_w=np.asarray(d["enc_w"], dtype=float), enc_b=np.asarray(d["enc_b"], dtype=float),
            dec_w=np.asarray(d["dec_w"], dtype=float), dec_b=np.asarray(d["dec_b"], dtype=float),
            activation=d.get("activation", "tanh"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "AutoencoderParams":
        return cls.from_dict(json.loads(text))


def autoencoder_loss_and_grads(params: AutoencoderParams, X: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over samples of the squared reconstruction error, with gradients."""
    n_samples = X.shape[0]
    pre = X @ params.enc_w + params.enc_b
    E = np.tanh(pre) if params.activation == "tanh" else pre
    R = E @ params.dec_w + params.dec_b
    diff = R - X
    loss = float(np.sum(diff ** 2) / n_samples)

    dR = 2.0 * diff / n_samples
    grads = {"dec_w": E.T @ dR, "dec_b": dR.sum(axis=0)}
    dE = dR @ params.dec_w.T
    dpre = dE * (1.0 - E ** 2) if params.activation == "tanh" else dE
    grads["enc_w"] = X.T @ dpre
    grads["enc_b"] = dpre.sum(axis=0)
    return loss, grads


def _as_matrix(vectors: Iterable) -> np.ndarray:
    rows = [v.values if isinstance(v, PropertyVector) else np.asarray(v, dtype=float) for v in vectors]
    if not rows:
        raise ValueError("cannot train an autoencoder on an empty set of vectors")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"property vectors have mixed lengths {sorted(lengths)}")
    return np.vstack(rows)


def train_autoencoder(
    vectors: Iterable,
    M: int = DEFAULT_M,
    epochs: int = 2000,
    learning_rate: float = 0.05,
    seed: int = 0,
    activation: str = "tanh",
    return_curve: bool = False,
):
    """Fit an autoencoder by full-batch gradient descent on reconstruction MSE.

    Returns the trained parameters (and the per-epoch loss curve when
    ``return_curve`` is set).  ``params.final_loss`` holds the loss after the
    last update.
    """
    X = _as_matrix(vectors)
    params = AutoencoderParams.init(X.shape[1], M, seed=seed, activation=activation)
    curve = []
    for _ in range(epochs):
        loss, grads = autoencoder_loss_and_grads(params, X)
        curve.append(loss)
        for name, arr in params.arrays().items():
            arr -= learning_rate * grads[name]
    params.final_loss, _ = autoencoder_loss_and_grads(params, X)
    if return_curve:
        return params, np.array(curve)
    return params


def embed(params: AutoencoderParams, v) -> np.ndarray:
    x = v.values if isinstance(v, PropertyVector) else np.asarray(v, dtype=float)
    if x.shape[-1] != params.n:
        raise ValueError(f"vector of length {x.shape[-1]} does not match autoencoder input N={params.n}")
    return params.encode(x)


def build_context_vector(always_props: Sequence, optional_props: Sequence, node_props: Sequence,
                         M: int | None = None) -> np.ndarray:
    """Concatenate the mean embeddings of the three property groups.

    An empty group contributes a zero vector; ``M`` is inferred from the
    first non-empty group unless given.
    """
    groups = [[np.asarray(e, dtype=float) for e in g] for g in (always_props, optional_props, node_props)]
    lengths = {e.shape[0] for g in groups for e in g}
    if M is not None:
        lengths.add(M)
    if len(lengths) > 1:
        raise ValueError(f"embeddings have mixed lengths {sorted(lengths)}")
    if not lengths:
        raise ValueError("embedding length unknown: all groups empty and M not given")
    (dim,) = lengths
    parts = [np.mean(g, axis=0) if g else np.zeros(dim) for g in groups]
    return np.concatenate(parts)


@dataclass
class ContextEncoder:
    """Property encoder plus trained autoencoder, with an embedding cache."""

    params: AutoencoderParams
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    # identifies the trained weights; survives deep copies, so copies share featurized graphs
    token: int = field(default_factory=lambda: next(_TOKENS), repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def m(self) -> int:
        return self.params.m

    @classmethod
    def fit(cls, properties: Iterable, N: int = DEFAULT_N, M: int = DEFAULT_M,
            epochs: int = 1500, learning_rate: float = 0.05, seed: int = 0) -> "ContextEncoder":
        uniq = {_prop_key(p): p for p in properties}
        vecs = [encode_property(p, N) for p in uniq.values()]
        return cls(train_autoencoder(vecs, M=M, epochs=epochs, learning_rate=learning_rate, seed=seed))

    def embed(self, p) -> np.ndarray:
        key = _prop_key(p)
        if key not in self._cache:
            self._cache[key] = embed(self.params, encode_property(p, self.n))
        return self._cache[key]

    def context(self, always: Sequence, optional: Sequence, node: Sequence) -> np.ndarray:
        key = tuple(tuple(_prop_key(p) for p in g) for g in (always, optional, node))
        if key not in self._cache:
            self._cache[key] = build_context_vector(
                [self.embed(p) for p in always], [self.embed(p) for p in optional],
                [self.embed(p) for p in node], M=self.m)
        return self._cache[key]


def _prop_key(p):
    return ("i", int(p)) if _is_natural(p) else ("s", str(p))
