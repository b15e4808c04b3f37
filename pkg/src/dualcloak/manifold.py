"""Generative image models and attribute directions for on-manifold edits.

A GenerativeModel pairs an encoder with a decoder that exposes a VJP, so the
latent attack can differentiate through decode. Attribute conditioning is a
unit direction in latent space scaled by a strength; decode(z, attr, s)
evaluates the base decoder at z + s * strength * direction.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnops
from .errors import ManifoldError, ParameterError
from .imaging import validate_image

__all__ = [
    "AttributeDirection",
    "GenerativeModel",
    "ToyAutoencoder",
    "ToyIdentityGenerator",
    "attribute_schedule",
    "decode",
    "decode_and_vjp",
    "encode",
    "generator_names",
    "get_generator",
    "load_attribute",
    "neutral_attribute",
    "register_generator",
    "save_attribute",
]

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class AttributeDirection:
    """A named unit direction in latent space with an edit strength."""

    name: str
    direction: np.ndarray = field(repr=False)
    strength: float = 1.0

    def __post_init__(self):
        vec = np.asarray(self.direction, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise ParameterError("attribute direction must be a 1-D vector")
        if not np.all(np.isfinite(vec)):
            raise ParameterError("attribute direction must be finite")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > _UNIT_TOL:
            raise ParameterError(
                f"attribute direction must be unit-norm (|v| = {norm:.8f})"
            )
        if not np.isfinite(self.strength):
            raise ParameterError("attribute strength must be finite")
        object.__setattr__(self, "direction", vec)

    @property
    def dim(self) -> int:
        return self.direction.size

    def offset(self, scale: float = 1.0) -> np.ndarray:
        return scale * self.strength * self.direction


def neutral_attribute(dim: int) -> AttributeDirection:
    """Zero-strength direction; decode(z, neutral, s) == decode(z)."""
    vec = np.zeros(dim)
    vec[0] = 1.0
    return AttributeDirection(name="neutral", direction=vec, strength=0.0)


def attribute_schedule(attr: AttributeDirection, k: int, n_total: int) -> np.ndarray:
    """Latent offset at step k of n_total: (k / n_total) of the full edit."""
    if n_total <= 0:
        raise ParameterError(f"n_total must be positive, got {n_total}")
    if not 0 <= k <= n_total:
        raise ParameterError(f"step {k} outside [0, {n_total}]")
    return attr.offset(k / n_total)


def save_attribute(attr: AttributeDirection, path):
    record = {
        "name": attr.name,
        "dim": attr.dim,
        "strength": attr.strength,
        "direction": attr.direction.tolist(),
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def load_attribute(path) -> AttributeDirection:
    try:
        record = json.loads(Path(path).read_text())
        attr = AttributeDirection(
            name=str(record["name"]),
            direction=np.asarray(record["direction"], dtype=np.float64),
            strength=float(record["strength"]),
        )
    except FileNotFoundError:
        raise
    except ParameterError:
        raise
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ParameterError(f"bad attribute file {path}") from exc
    if "dim" in record and int(record["dim"]) != attr.dim:
        raise ParameterError(
            f"attribute file {path} declares dim {record['dim']} "
            f"but carries {attr.dim} components"
        )
    return attr


class GenerativeModel(ABC):
    """Encoder/decoder pair over a fixed output shape."""

    name: str = "generator"
    latent_dim: int = 0
    output_shape: tuple = (0, 0, 0)
    concurrent_safe: bool = True

    @abstractmethod
    def encode(self, img: np.ndarray) -> np.ndarray:
        """Image at output_shape -> latent code (latent_dim,)."""

    @abstractmethod
    def decode_with_vjp(self, z: np.ndarray):
        """Latent -> (raw image, vjp). Raw values may sit outside [0, 1];
        the decode() wrapper clamps and masks gradients accordingly."""

    def decode_raw(self, z: np.ndarray) -> np.ndarray:
        raw, _ = self.decode_with_vjp(z)
        return raw

    def _check_latent(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ParameterError(
                f"latent shape {z.shape} does not match {self.name} "
                f"dim {self.latent_dim}"
            )
        if not np.all(np.isfinite(z)):
            raise ParameterError("latent code must be finite")
        return z

    def __repr__(self):
        h, w, c = self.output_shape
        return f"<{type(self).__name__} {self.name!r} z{self.latent_dim} -> {h}x{w}x{c}>"


def encode(gen: GenerativeModel, img: np.ndarray) -> np.ndarray:
    img = validate_image(img)
    if img.shape != tuple(gen.output_shape):
        raise ParameterError(
            f"{gen.name} encodes {gen.output_shape} images, got {img.shape}"
        )
    try:
        z = np.asarray(gen.encode(img), dtype=np.float64)
    except ParameterError:
        raise
    except Exception as exc:
        raise ManifoldError(f"{gen.name} failed to encode image") from exc
    if z.shape != (gen.latent_dim,):
        raise ManifoldError(
            f"{gen.name} produced latent shape {z.shape}, expected ({gen.latent_dim},)"
        )
    return z


def decode(gen: GenerativeModel, z: np.ndarray, attr=None, attr_scale: float = 1.0) -> np.ndarray:
    img, _ = decode_and_vjp(gen, z, attr, attr_scale)
    return img


def decode_and_vjp(gen: GenerativeModel, z: np.ndarray, attr=None,
                   attr_scale: float = 1.0):
    """Clamped decode and a VJP back to z.

    The clamp to [0, 1] contributes a subgradient: pixels whose raw value
    lies strictly inside (0, 1) pass gradient through, saturated pixels
    block it.
    """
    z = gen._check_latent(z)
    if attr is not None:
        if attr.dim != gen.latent_dim:
            raise ParameterError(
                f"attribute dim {attr.dim} does not match {gen.name} "
                f"latent dim {gen.latent_dim}"
            )
        z = z + attr.offset(attr_scale)
    try:
        raw, raw_vjp = gen.decode_with_vjp(z)
    except ParameterError:
        raise
    except Exception as exc:
        raise ManifoldError(f"{gen.name} failed to decode latent") from exc
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != tuple(gen.output_shape):
        raise ManifoldError(
            f"{gen.name} decoded shape {raw.shape}, expected {gen.output_shape}"
        )
    img = np.clip(raw, 0.0, 1.0)
    interior = (raw > 0.0) & (raw < 1.0)

    def vjp(cotangent: np.ndarray) -> np.ndarray:
        return raw_vjp(cotangent * interior)

    return img, vjp


class ToyIdentityGenerator(GenerativeModel):
    """Latent space is the flattened image itself.

    With this generator the latent attack is exactly pixel-space descent,
    which pins the on/off-manifold equivalence checks.
    """

    def __init__(self, output_shape=(32, 32, 3), name="toy-identity"):
        h, w, c = output_shape
        self.name = name
        self.output_shape = (int(h), int(w), int(c))
        self.latent_dim = int(h) * int(w) * int(c)

    def encode(self, img: np.ndarray) -> np.ndarray:
        return img.reshape(-1).copy()

    def decode_with_vjp(self, z: np.ndarray):
        z = self._check_latent(z)
        shape = self.output_shape
        raw = z.reshape(shape)

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            return cotangent.reshape(-1).copy()

        return raw, vjp


class ToyAutoencoder(GenerativeModel):
    """Dense tanh autoencoder with a sigmoid pixel head.

    Weights (typically from a bundled .npz trained on the synthetic face
    corpus): enc_w1/b1, enc_w2/b2, dec_w1/b1, dec_w2/b2 plus scalar
    output_h/output_w/channels entries.
    """

    def __init__(self, name: str, weights: dict):
        self.name = name
        self._ew1 = np.asarray(weights["enc_w1"], dtype=np.float64)
        self._eb1 = np.asarray(weights["enc_b1"], dtype=np.float64)
        self._ew2 = np.asarray(weights["enc_w2"], dtype=np.float64)
        self._eb2 = np.asarray(weights["enc_b2"], dtype=np.float64)
        self._dw1 = np.asarray(weights["dec_w1"], dtype=np.float64)
        self._db1 = np.asarray(weights["dec_b1"], dtype=np.float64)
        self._dw2 = np.asarray(weights["dec_w2"], dtype=np.float64)
        self._db2 = np.asarray(weights["dec_b2"], dtype=np.float64)
        self.output_shape = (
            int(weights["output_h"]),
            int(weights["output_w"]),
            int(weights["channels"]),
        )
        self.latent_dim = self._ew2.shape[1]

    @classmethod
    def from_npz(cls, path, name=None) -> "ToyAutoencoder":
        path = Path(path)
        with np.load(path) as data:
            weights = {k: data[k] for k in data.files}
        return cls(name or path.stem, weights)

    def encode(self, img: np.ndarray) -> np.ndarray:
        flat = img.reshape(-1)
        h1 = np.tanh(nnops.dense(flat, self._ew1, self._eb1))
        return np.tanh(nnops.dense(h1, self._ew2, self._eb2))

    def decode_with_vjp(self, z: np.ndarray):
        z = self._check_latent(z)
        g1 = np.tanh(nnops.dense(z, self._dw1, self._db1))
        out = nnops.sigmoid(nnops.dense(g1, self._dw2, self._db2))
        raw = out.reshape(self.output_shape)

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            g = nnops.sigmoid_vjp(cotangent.reshape(-1), out)
            g = self._dw2 @ g
            g = nnops.tanh_vjp(g, g1)
            return self._dw1 @ g

        return raw, vjp


_GEN_BUILDERS: dict = {}


def register_generator(name: str, builder):
    """Register a zero-argument factory under a public name."""
    if not callable(builder):
        raise ParameterError("builder must be callable")
    _GEN_BUILDERS[name] = builder


def generator_names():
    return sorted(_GEN_BUILDERS)


def get_generator(name: str) -> GenerativeModel:
    try:
        builder = _GEN_BUILDERS[name]
    except KeyError:
        raise ParameterError(
            f"unknown generator {name!r}; known: {', '.join(generator_names())}"
        ) from None
    return builder()


def _ae_builder():
    from .fixtures import fixture_path

    return ToyAutoencoder.from_npz(fixture_path("autoencoder.npz"), name="toy-ae")


register_generator("toy-identity", lambda: ToyIdentityGenerator((32, 32, 3)))
register_generator("toy-ae", _ae_builder)
