"""Evaluation utilities: attack success rate, FID, grids, and reports.

ASR is measured against a held-out embedder that never appears in the
attacked ensemble, at a threshold calibrated on impostor pairs. FID follows
the standard Frechet form between Gaussians fitted to feature sets; any
feature extractor (a held-out embedder or a seeded random projection) can
supply the features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .embedding import FaceEmbedder, VerificationThreshold, cosine_similarity, verify
from .errors import ParameterError
from .imaging import validate_image

__all__ = [
    "EvaluationReport",
    "ModelResult",
    "RandomProjectionExtractor",
    "attack_success_rate",
    "comparison_grid",
    "extract_features",
    "fid",
]

SCHEMA_VERSION = 1


def attack_success_rate(protected, targets, embedder: FaceEmbedder,
                        threshold) -> float:
    """Fraction of (protected, target) pairs the embedder accepts.

    The denominator counts every evaluated pair; failures to reach the
    threshold are misses, not exclusions.
    """
    protected = list(protected)
    targets = list(targets)
    if len(protected) != len(targets):
        raise ParameterError(
            f"{len(protected)} protected images vs {len(targets)} targets"
        )
    if not protected:
        raise ParameterError("attack success rate needs at least one pair")
    hits = 0
    for p, t in zip(protected, targets):
        if verify(embedder.embed(p), embedder.embed(t), threshold):
            hits += 1
    return hits / len(protected)


def extract_features(images, extractor) -> np.ndarray:
    """Stack per-image feature vectors into an (n, d) array.

    extractor is either a FaceEmbedder or any callable image -> 1-D vector.
    """
    embed = extractor.embed if isinstance(extractor, FaceEmbedder) else extractor
    rows = [np.asarray(embed(img), dtype=np.float64).reshape(-1) for img in images]
    if not rows:
        raise ParameterError("no images to extract features from")
    dims = {r.size for r in rows}
    if len(dims) != 1:
        raise ParameterError(f"inconsistent feature sizes: {sorted(dims)}")
    return np.stack(rows)


class RandomProjectionExtractor:
    """Seeded Gaussian projection of flattened pixels into n_features dims."""

    def __init__(self, image_shape, n_features: int = 64, seed: int = 0):
        h, w, c = image_shape
        n = int(h) * int(w) * int(c)
        self.image_shape = (int(h), int(w), int(c))
        self.n_features = n_features
        rng = np.random.default_rng(seed)
        self._p = rng.standard_normal((n_features, n)) / np.sqrt(n)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        img = validate_image(img)
        if img.shape != self.image_shape:
            raise ParameterError(
                f"extractor expects {self.image_shape} images, got {img.shape}"
            )
        return self._p @ img.reshape(-1)


def _gaussian_fit(features: np.ndarray):
    mu = features.mean(axis=0)
    if features.shape[0] < 2:
        sigma = np.zeros((features.shape[1], features.shape[1]))
    else:
        sigma = np.cov(features, rowvar=False, ddof=1)
        sigma = np.atleast_2d(sigma)
    return mu, sigma


def fid(features_a, features_b, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + tr(S_a) + tr(S_b) - 2 tr((S_a S_b)^{1/2}), with the
    covariances regularized by eps*I and the product symmetrized before the
    matrix square root so the result stays real.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    for name, arr in (("a", a), ("b", b)):
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ParameterError(f"feature set {name} must be a non-empty (n, d) array")
        if not np.all(np.isfinite(arr)):
            raise ParameterError(f"feature set {name} contains non-finite values")
    if a.shape[1] != b.shape[1]:
        raise ParameterError(
            f"feature dims differ: {a.shape[1]} vs {b.shape[1]}"
        )
    mu_a, sig_a = _gaussian_fit(a)
    mu_b, sig_b = _gaussian_fit(b)
    d = a.shape[1]
    sig_a = sig_a + eps * np.eye(d)
    sig_b = sig_b + eps * np.eye(d)
    prod = sig_a @ sig_b
    sym = (prod + prod.T) / 2.0
    eigvals = scipy.linalg.eigvalsh(sym)
    trace_sqrt = float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sig_a) + np.trace(sig_b) - 2.0 * trace_sqrt)
    return value


# 5x7 bitmap glyphs for grid labels; '#' marks lit pixels.
_GLYPHS = {
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01111 10000 10000 10000 10000 10000 01111",
    "D": "11110 10001 10001 10001 10001 10001 11110",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01110",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "I": "01110 00100 00100 00100 00100 00100 01110",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 11001 10101 10011 10001 10001 10001",
    "O": "01110 10001 10001 10001 10001 10001 01110",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 11011 10001",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 01010 00100 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00110 01000 10000 11111",
    "3": "11110 00001 00001 01110 00001 00001 11110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "-": "00000 00000 00000 11111 00000 00000 00000",
    "+": "00000 00100 00100 11111 00100 00100 00000",
    ".": "00000 00000 00000 00000 00000 01100 01100",
    "_": "00000 00000 00000 00000 00000 00000 11111",
    "/": "00001 00010 00100 00100 00100 01000 10000",
    ":": "00000 01100 01100 00000 01100 01100 00000",
    "(": "00010 00100 01000 01000 01000 00100 00010",
    ")": "01000 00100 00010 00010 00010 00100 01000",
    "=": "00000 11111 00000 11111 00000 00000 00000",
    "%": "11001 11010 00010 00100 01000 01011 10011",
    " ": "00000 00000 00000 00000 00000 00000 00000",
}
_FONT = {
    ch: np.array([[bit == "1" for bit in row] for row in rows.split()])
    for ch, rows in _GLYPHS.items()
}


def _draw_text(canvas: np.ndarray, text: str, x: int, y: int,
               value: float = 0.08):
    """Stamp 5x7 glyphs onto an (H, W, 3) canvas; unknown chars are blank."""
    for ch in text.upper():
        glyph = _FONT.get(ch, _FONT[" "])
        h, w = glyph.shape
        if x + w > canvas.shape[1] or y + h > canvas.shape[0]:
            break
        region = canvas[y : y + h, x : x + w, :]
        region[glyph] = value
        x += w + 1


def comparison_grid(rows, *, gutter: int = 2, label_height: int = 12,
                    background: float = 0.92) -> np.ndarray:
    """Compose labeled image rows into one RGB sheet.

    rows is a list of (label, images) pairs. Every image must share one
    height and width; grayscale images are promoted to RGB. Each row gets a
    text strip above its images. Output layout is deterministic:
    width = cols*W + (cols+1)*gutter, and each row contributes
    label_height + H + gutter (plus one leading gutter).
    """
    rows = list(rows)
    if not rows:
        raise ParameterError("comparison grid needs at least one row")
    shapes = set()
    cols = 0
    for label, images in rows:
        if not images:
            raise ParameterError(f"row {label!r} has no images")
        cols = max(cols, len(images))
        for img in images:
            img = validate_image(img)
            shapes.add(img.shape[:2])
    if len(shapes) != 1:
        raise ParameterError(f"images disagree on size: {sorted(shapes)}")
    (h, w) = shapes.pop()

    width = cols * w + (cols + 1) * gutter
    height = gutter + sum(label_height + h + gutter for _ in rows)
    canvas = np.full((height, width, 3), background, dtype=np.float64)

    y = gutter
    for label, images in rows:
        _draw_text(canvas, str(label), gutter + 1, y + max(0, (label_height - 7) // 2))
        y += label_height
        x = gutter
        for img in images:
            img = validate_image(img)
            if img.shape[2] == 1:
                img = np.repeat(img, 3, axis=2)
            canvas[y : y + h, x : x + w, :] = img
            x += w + gutter
        y += h + gutter
    return canvas


@dataclass(frozen=True)
class ModelResult:
    """ASR of one evaluation embedder at its calibrated threshold."""

    model: str
    asr: float
    tau: float

    def __post_init__(self):
        if not 0.0 <= self.asr <= 1.0:
            raise ParameterError(f"asr must be in [0, 1], got {self.asr}")
        if not np.isfinite(self.tau):
            raise ParameterError("tau must be finite")

    def to_dict(self):
        return {"model": self.model, "asr": self.asr, "tau": self.tau}


@dataclass(frozen=True)
class EvaluationReport:
    """Serializable summary of one evaluation run."""

    mode: str
    n_images: int
    per_model: tuple
    fid: Optional[float] = None
    api_mean_confidence: Optional[float] = None
    config_echo: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "per_model", tuple(self.per_model))
        if self.n_images < 0:
            raise ParameterError("n_images must be >= 0")
        if self.fid is not None and (not np.isfinite(self.fid) or self.fid < -1e-9):
            raise ParameterError(f"fid must be finite and >= 0, got {self.fid}")
        if self.api_mean_confidence is not None and not (
            0.0 <= self.api_mean_confidence <= 100.0
        ):
            raise ParameterError(
                f"api_mean_confidence must be in [0, 100], got {self.api_mean_confidence}"
            )
        if self.schema_version != SCHEMA_VERSION:
            raise ParameterError(
                f"unsupported report schema {self.schema_version}, "
                f"this build writes {SCHEMA_VERSION}"
            )

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "n_images": self.n_images,
            "per_model": [m.to_dict() for m in self.per_model],
            "fid": self.fid,
            "api_mean_confidence": self.api_mean_confidence,
            "config_echo": self.config_echo,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        try:
            return cls(
                mode=d["mode"],
                n_images=int(d["n_images"]),
                per_model=tuple(
                    ModelResult(m["model"], float(m["asr"]), float(m["tau"]))
                    for m in d["per_model"]
                ),
                fid=None if d.get("fid") is None else float(d["fid"]),
                api_mean_confidence=(
                    None if d.get("api_mean_confidence") is None
                    else float(d["api_mean_confidence"])
                ),
                config_echo=dict(d.get("config_echo", {})),
                schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
            )
        except ParameterError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"bad evaluation report: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))
