"""Face embedders, similarity scoring, and verification thresholds.

Embedders map images to fixed-length feature vectors and expose an explicit
VJP so attack objectives can differentiate through them. Each embedder
declares its native input size and performs its own (differentiable) resize,
so callers never pre-resize.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nnops
from .errors import DegenerateEmbeddingError, EmbedError, ParameterError
from .fixtures import fixture_path
from .imaging import resize_bilinear, resize_bilinear_adjoint, validate_image

__all__ = [
    "EmbedderEnsemble",
    "FaceEmbedder",
    "ToyConvEmbedder",
    "ToyLinearEmbedder",
    "VerificationThreshold",
    "calibrate_threshold",
    "cosine_similarity",
    "embedder_names",
    "ensemble_distance",
    "get_embedder",
    "register_embedder",
    "verify",
]


class FaceEmbedder(ABC):
    """A deterministic image -> feature-vector map with an explicit VJP."""

    name: str = "embedder"
    embed_dim: int = 0
    input_hw: tuple = (0, 0)
    channels: int = 3
    concurrent_safe: bool = True

    @abstractmethod
    def _embed_native(self, x: np.ndarray):
        """Embed an image already at input_hw. Returns (vector, vjp)."""

    def embed_with_vjp(self, img: np.ndarray):
        """Return (embedding, vjp) where vjp maps a cotangent on the
        embedding back to a gradient on the *original* image, including the
        resize to the embedder's native size."""
        img = validate_image(img)
        if img.shape[2] != self.channels:
            raise ParameterError(
                f"{self.name} expects {self.channels}-channel input, got {img.shape[2]}"
            )
        h, w = self.input_hw
        native = img if img.shape[:2] == (h, w) else resize_bilinear(img, (h, w))
        try:
            vec, native_vjp = self._embed_native(native)
        except Exception as exc:  # pragma: no cover - defensive
            raise EmbedError(f"{self.name} failed to embed image") from exc
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.embed_dim,):
            raise EmbedError(
                f"{self.name} produced shape {vec.shape}, expected ({self.embed_dim},)"
            )
        if img.shape[:2] == (h, w):
            return vec, native_vjp

        in_hw = img.shape[:2]

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            return resize_bilinear_adjoint(native_vjp(cotangent), in_hw)

        return vec, vjp

    def embed(self, img: np.ndarray) -> np.ndarray:
        vec, _ = self.embed_with_vjp(img)
        return vec

    def __repr__(self):
        h, w = self.input_hw
        return f"<{type(self).__name__} {self.name!r} {h}x{w}x{self.channels} -> {self.embed_dim}>"


class ToyLinearEmbedder(FaceEmbedder):
    """Seeded random linear projection. Cheap, exactly differentiable."""

    def __init__(self, name="toy-linear", input_hw=(32, 32), channels=3,
                 embed_dim=64, seed=7):
        self.name = name
        self.input_hw = tuple(input_hw)
        self.channels = channels
        self.embed_dim = embed_dim
        n = self.input_hw[0] * self.input_hw[1] * channels
        rng = np.random.default_rng(seed)
        self._a = rng.standard_normal((embed_dim, n)) / np.sqrt(n)

    def _embed_native(self, x: np.ndarray):
        shape = x.shape
        vec = self._a @ x.reshape(-1)

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            return (self._a.T @ cotangent).reshape(shape)

        return vec, vjp


class ToyConvEmbedder(FaceEmbedder):
    """Two conv/pool blocks and a dense head, with a mean-centered output.

    Weights come from a dict (typically a bundled .npz trained on the
    synthetic face corpus): conv1_w/b, conv2_w/b, fc_w/b, feature_mean, and
    scalar input_h/input_w/channels entries.
    """

    def __init__(self, name: str, weights: dict):
        self.name = name
        self._w1 = np.asarray(weights["conv1_w"], dtype=np.float64)
        self._b1 = np.asarray(weights["conv1_b"], dtype=np.float64)
        self._w2 = np.asarray(weights["conv2_w"], dtype=np.float64)
        self._b2 = np.asarray(weights["conv2_b"], dtype=np.float64)
        self._fw = np.asarray(weights["fc_w"], dtype=np.float64)
        self._fb = np.asarray(weights["fc_b"], dtype=np.float64)
        self._mean = np.asarray(weights["feature_mean"], dtype=np.float64)
        self.input_hw = (int(weights["input_h"]), int(weights["input_w"]))
        self.channels = int(weights["channels"])
        self.embed_dim = self._fw.shape[1]

    @classmethod
    def from_npz(cls, path, name=None) -> "ToyConvEmbedder":
        path = Path(path)
        with np.load(path) as data:
            weights = {k: data[k] for k in data.files}
        return cls(name or path.stem, weights)

    def _embed_native(self, x: np.ndarray):
        a1 = nnops.conv3(x, self._w1, self._b1)
        r1 = nnops.relu(a1)
        p1 = nnops.meanpool2(r1)
        a2 = nnops.conv3(p1, self._w2, self._b2)
        r2 = nnops.relu(a2)
        p2 = nnops.meanpool2(r2)
        flat = p2.reshape(-1)
        vec = nnops.dense(flat, self._fw, self._fb) - self._mean

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            g = (self._fw @ cotangent).reshape(p2.shape)
            g = nnops.meanpool2_vjp(g)
            g = nnops.relu_vjp(g, a2)
            g = nnops.conv3_vjp_input(g, self._w2, p1.shape)
            g = nnops.meanpool2_vjp(g)
            g = nnops.relu_vjp(g, a1)
            return nnops.conv3_vjp_input(g, self._w1, x.shape)

        return vec, vjp


class EmbedderEnsemble:
    """Ordered collection of embedders attacked jointly."""

    def __init__(self, members: Sequence[FaceEmbedder]):
        members = list(members)
        if not members:
            raise ParameterError("ensemble needs at least one embedder")
        names = [m.name for m in members]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate embedder names in ensemble: {names}")
        self.members = members

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def names(self):
        return [m.name for m in self.members]

    def embed_all(self, img: np.ndarray):
        return [m.embed(img) for m in self.members]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ParameterError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("zero-norm embedding has no direction")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _cos_with_grad(e: np.ndarray, t: np.ndarray):
    """cos(e, t) and its gradient in e, for a fixed target embedding t."""
    ne = float(np.linalg.norm(e))
    nt = float(np.linalg.norm(t))
    if ne == 0.0 or nt == 0.0:
        raise DegenerateEmbeddingError("zero-norm embedding has no direction")
    cos = float(e @ t / (ne * nt))
    grad = t / (ne * nt) - (cos / (ne * ne)) * e
    return cos, grad


def embed_targets(ensemble: EmbedderEnsemble, target: np.ndarray):
    """Per-member embeddings of the target image, cached for attack loops."""
    return tuple(m.embed(target) for m in ensemble)


def ensemble_distance(ensemble: EmbedderEnsemble, img: np.ndarray,
                      target=None, target_embeddings=None) -> float:
    """Sum over members of 1 - cos(member(img), member(target))."""
    if target_embeddings is None:
        if target is None:
            raise ParameterError("need a target image or precomputed embeddings")
        target_embeddings = embed_targets(ensemble, target)
    total = 0.0
    for member, t in zip(ensemble, target_embeddings):
        total += 1.0 - cosine_similarity(member.embed(img), t)
    return float(total)


def distance_and_input_grad(ensemble: EmbedderEnsemble, img: np.ndarray,
                            target_embeddings):
    """Ensemble distance at img plus its gradient with respect to img."""
    total = 0.0
    grad = np.zeros_like(img, dtype=np.float64)
    for member, t in zip(ensemble, target_embeddings):
        e, vjp = member.embed_with_vjp(img)
        cos, gcos = _cos_with_grad(e, t)
        total += 1.0 - cos
        grad -= vjp(gcos)
    return float(total), grad


def calibrate_threshold(impostor_scores, far: float) -> float:
    """Similarity threshold whose impostor acceptance rate is `far`.

    Uses the Hazen quantile convention (h = q*n + 0.5 on the 1-indexed
    sorted sample, linearly interpolated), so 100 evenly spaced scores with
    far=0.01 pin the threshold exactly halfway between the top two.
    """
    scores = np.asarray(impostor_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ParameterError("impostor scores must be a non-empty 1-D collection")
    if not np.all(np.isfinite(scores)):
        raise ParameterError("impostor scores must be finite")
    if not 0.0 < far <= 1.0:
        raise ParameterError(f"far must be in (0, 1], got {far}")
    q = 1.0 - far
    n = scores.size
    ordered = np.sort(scores)
    h = q * n + 0.5
    h = min(max(h, 1.0), float(n))
    lo = int(np.floor(h))
    hi = min(lo + 1, n)
    frac = h - lo
    return float(ordered[lo - 1] * (1.0 - frac) + ordered[hi - 1] * frac)


@dataclass(frozen=True)
class VerificationThreshold:
    """A calibrated accept threshold and the FAR it was calibrated at."""

    tau: float
    far: float

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ParameterError("tau must be finite")
        if not 0.0 < self.far <= 1.0:
            raise ParameterError(f"far must be in (0, 1], got {self.far}")

    def to_dict(self):
        return {"tau": self.tau, "far": self.far}

    @classmethod
    def from_dict(cls, d) -> "VerificationThreshold":
        try:
            return cls(tau=float(d["tau"]), far=float(d["far"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"bad threshold record: {d!r}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "VerificationThreshold":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(embedder: FaceEmbedder, impostor_pairs, far: float) -> VerificationThreshold:
    """Calibrate from (image, image) impostor pairs for one embedder."""
    scores = [
        cosine_similarity(embedder.embed(a), embedder.embed(b))
        for a, b in impostor_pairs
    ]
    return VerificationThreshold(tau=calibrate_threshold(scores, far), far=far)


def verify(embedding_a: np.ndarray, embedding_b: np.ndarray,
           threshold) -> bool:
    """Accept when cosine similarity reaches the threshold (inclusive)."""
    tau = threshold.tau if isinstance(threshold, VerificationThreshold) else float(threshold)
    return cosine_similarity(embedding_a, embedding_b) >= tau


_BUILDERS: dict = {}


def register_embedder(name: str, builder: Callable[[], FaceEmbedder]):
    """Register a zero-argument factory under a public name."""
    if not callable(builder):
        raise ParameterError("builder must be callable")
    _BUILDERS[name] = builder


def embedder_names():
    return sorted(_BUILDERS)


def get_embedder(name: str) -> FaceEmbedder:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ParameterError(
            f"unknown embedder {name!r}; known: {', '.join(embedder_names())}"
        ) from None
    return builder()


def _conv_builder(fixture_name: str, public_name: str):
    def build():
        return ToyConvEmbedder.from_npz(fixture_path(fixture_name), name=public_name)

    return build


register_embedder("toy-linear", lambda: ToyLinearEmbedder())
for _letter in "abcd":
    register_embedder(
        f"toy-conv-{_letter}",
        _conv_builder(f"toyconv_{_letter}.npz", f"toy-conv-{_letter}"),
    )
