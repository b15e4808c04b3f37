"""Procedural face corpus and toy model training.

Images are small vector drawings: an elliptical head with per-identity skin
tone, geometry, and a striped high-frequency hair texture, over a smooth
background. Identities are stable functions of (seed, identity index), so
train and evaluation splits can render fresh samples of the same people.

The trainers here fit the bundled ToyConvEmbedder and ToyAutoencoder weights
with plain minibatch gradient descent; they only run when regenerating
fixtures, never at import or attack time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import AttributeDirection, GenerativeModel, decode
from .nnops import col2im3, im2col3, meanpool2, meanpool2_vjp

__all__ = [
    "FaceDataset",
    "brightness_attribute",
    "make_dataset",
    "render_identity",
    "train_autoencoder",
    "train_conv_embedder",
]

HAIR = 17
SKIN = 1
L_EYE = 4
R_EYE = 5
MOUTH = 11


def _identity_params(rng: np.random.Generator) -> dict:
    # Geometry and skin vary only a little between identities; hair color and
    # stripe texture vary a lot, so hair is the dominant identity cue and
    # hair-restricted attacks act on the discriminative surface.
    skin_r = rng.uniform(0.68, 0.74)
    skin = np.array([skin_r, skin_r * rng.uniform(0.8, 0.84),
                     skin_r * rng.uniform(0.64, 0.7)])
    level = rng.uniform(0.2, 0.85)
    hair = np.clip(level * np.array([rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0),
                                     rng.uniform(0.3, 1.0)]), 0.0, 1.0)
    return {
        "cx": 0.5 + rng.uniform(-0.01, 0.01),
        "cy": 0.56 + rng.uniform(-0.01, 0.01),
        "rx": rng.uniform(0.29, 0.31),
        "ry": rng.uniform(0.36, 0.38),
        "skin": skin,
        "hair": hair,
        "hairline": rng.uniform(0.38, 0.44),
        "head_rx": rng.uniform(1.30, 1.36),
        "head_ry": rng.uniform(1.18, 1.24),
        "eye_dx": rng.uniform(0.46, 0.50),
        "eye_r": rng.uniform(0.115, 0.135),
        "eye_level": rng.uniform(0.22, 0.26),
        "mouth_w": rng.uniform(0.55, 0.62),
        "mouth_y": rng.uniform(0.48, 0.52),
        "stripe_freq": rng.uniform(4.0, 15.0),
        "stripe_angle": rng.uniform(0.0, np.pi),
        "stripe_amp": rng.uniform(0.18, 0.32),
        "noise_sigma": rng.uniform(0.02, 0.05),
    }


def render_identity(params: dict, rng: np.random.Generator, size: int = 32):
    """Render one sample of an identity. Returns (image, label map)."""
    coords = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(coords, coords)

    jx, jy = rng.uniform(-0.015, 0.015, size=2)
    cx, cy = params["cx"] + jx, params["cy"] + jy
    rx, ry = params["rx"], params["ry"]

    c0 = 0.35 + 0.3 * rng.random(3)
    c1 = 0.35 + 0.3 * rng.random(3)
    phi = rng.uniform(0.0, np.pi)
    t = xx * np.cos(phi) + yy * np.sin(phi)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img = c0 + t[:, :, None] * (c1 - c0)

    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    head = (((xx - cx) / (rx * params["head_rx"])) ** 2
            + ((yy - (cy - 0.05)) / (ry * params["head_ry"])) ** 2) <= 1.0
    hairline_y = cy - ry * params["hairline"]
    hair = head & (~face | (yy < hairline_y))

    labels = np.zeros((size, size), dtype=np.uint8)
    labels[face] = SKIN

    q = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    shade = (1.0 - 0.18 * np.clip(q, 0.0, 1.0))[:, :, None]
    img = np.where(face[:, :, None], params["skin"] * shade, img)

    my = cy + ry * params["mouth_y"]
    mouth = (((xx - cx) / (rx * params["mouth_w"])) ** 2
             + ((yy - my) / (ry * 0.07)) ** 2) <= 1.0
    mouth &= face
    img = np.where(mouth[:, :, None], np.array([0.45, 0.12, 0.14]), img)
    labels[mouth] = MOUTH

    ey = cy - ry * params["eye_level"]
    er = rx * params["eye_r"]
    for side, label in ((-1.0, L_EYE), (1.0, R_EYE)):
        ex = cx + side * rx * params["eye_dx"]
        eye = (((xx - ex) / er) ** 2 + ((yy - ey) / (er * 0.7)) ** 2) <= 1.0
        eye &= face
        img = np.where(eye[:, :, None], np.array([0.08, 0.06, 0.05]), img)
        labels[eye] = label

    theta = params["stripe_angle"]
    phase = rng.uniform(0.0, 2.0 * np.pi)
    stripes = np.sin(2.0 * np.pi * params["stripe_freq"]
                     * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    grain = rng.normal(0.0, params["noise_sigma"], size=(size, size, 1))
    grain = grain + rng.normal(0.0, 0.3 * params["noise_sigma"],
                               size=(size, size, 3))
    hair_px = params["hair"] * (1.0 + params["stripe_amp"] * stripes[:, :, None] + grain)
    img = np.where(hair[:, :, None], hair_px, img)
    labels[hair] = HAIR

    img = img * rng.uniform(0.92, 1.08)
    return np.clip(img, 0.02, 0.98), labels


@dataclass
class FaceDataset:
    images: np.ndarray       # (N, H, W, 3) float64 in [0, 1]
    identities: np.ndarray   # (N,) int64
    annotations: np.ndarray  # (N, H, W) uint8 label maps
    n_identities: int


def make_dataset(n_identities: int, per_identity: int, size: int = 32,
                 seed: int = 0, sample_offset: int = 0) -> FaceDataset:
    """Render a corpus. Identity appearance depends only on (seed, index);
    sample_offset selects disjoint jitter draws for extra splits."""
    images, idents, annos = [], [], []
    for i in range(n_identities):
        params = _identity_params(
            np.random.default_rng(np.random.SeedSequence([seed, i, 0])))
        for j in range(per_identity):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, i, 1, sample_offset + j]))
            img, labels = render_identity(params, rng, size)
            images.append(img)
            idents.append(i)
            annos.append(labels)
    return FaceDataset(
        images=np.stack(images),
        identities=np.asarray(idents, dtype=np.int64),
        annotations=np.stack(annos),
        n_identities=n_identities,
    )


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _conv_forward(x, p):
    cols1 = im2col3(x)
    a1 = (cols1 @ p["conv1_w"].reshape(-1, p["conv1_w"].shape[3])
          + p["conv1_b"]).reshape(x.shape[:3] + (-1,))
    r1 = np.maximum(a1, 0.0)
    p1 = meanpool2(r1)
    cols2 = im2col3(p1)
    a2 = (cols2 @ p["conv2_w"].reshape(-1, p["conv2_w"].shape[3])
          + p["conv2_b"]).reshape(p1.shape[:3] + (-1,))
    r2 = np.maximum(a2, 0.0)
    p2 = meanpool2(r2)
    flat = p2.reshape(x.shape[0], -1)
    z = flat @ p["fc_w"] + p["fc_b"]
    cache = (x, cols1, a1, p1, cols2, a2, p2, flat)
    return z, cache


def train_conv_embedder(images: np.ndarray, identities: np.ndarray,
                        n_classes: int, filters=(8, 16), embed_dim: int = 64,
                        seed: int = 0, epochs: int = 12, batch: int = 64,
                        lr: float = 2e-3, noise: float = 0.02) -> dict:
    """Fit the two-block convnet with a softmax head; returns the weight
    dict consumed by ToyConvEmbedder (head discarded, features mean-centered).

    Adam plus light input-noise augmentation keeps the learned features
    smooth, which is what makes perturbations transfer between members."""
    rng = np.random.default_rng(seed)
    n, h, w, c = images.shape
    f1, f2 = filters
    flat_dim = (h // 4) * (w // 4) * f2
    p = {
        "conv1_w": _he(rng, (3, 3, c, f1), 9 * c),
        "conv1_b": np.zeros(f1),
        "conv2_w": _he(rng, (3, 3, f1, f2), 9 * f1),
        "conv2_b": np.zeros(f2),
        "fc_w": _he(rng, (flat_dim, embed_dim), flat_dim),
        "fc_b": np.zeros(embed_dim),
        "cls_w": _he(rng, (embed_dim, n_classes), embed_dim),
        "cls_b": np.zeros(n_classes),
    }
    adam_m = {k: np.zeros_like(v) for k, v in p.items()}
    adam_v = {k: np.zeros_like(v) for k, v in p.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    onehot = np.eye(n_classes)[identities]

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            x, y = images[idx], onehot[idx]
            if noise:
                x = x + rng.normal(0.0, noise, size=x.shape)
            b = len(idx)
            z, (xb, cols1, a1, p1, cols2, a2, p2, flat) = _conv_forward(x, p)
            logits = z @ p["cls_w"] + p["cls_b"]
            logits -= logits.max(axis=1, keepdims=True)
            expl = np.exp(logits)
            probs = expl / expl.sum(axis=1, keepdims=True)
            dlogits = (probs - y) / b

            g = {}
            g["cls_w"] = z.T @ dlogits
            g["cls_b"] = dlogits.sum(axis=0)
            dz = dlogits @ p["cls_w"].T
            g["fc_w"] = flat.T @ dz
            g["fc_b"] = dz.sum(axis=0)
            dflat = (dz @ p["fc_w"].T).reshape(p2.shape)
            dr2 = meanpool2_vjp(dflat)
            da2 = dr2 * (a2 > 0)
            da2f = da2.reshape(-1, f2)
            g["conv2_w"] = (cols2.T @ da2f).reshape(3, 3, f1, f2)
            g["conv2_b"] = da2f.sum(axis=0)
            dp1 = col2im3(da2f @ p["conv2_w"].reshape(-1, f2).T, p1.shape)
            dr1 = meanpool2_vjp(dp1)
            da1 = dr1 * (a1 > 0)
            da1f = da1.reshape(-1, f1)
            g["conv1_w"] = (cols1.T @ da1f).reshape(3, 3, c, f1)
            g["conv1_b"] = da1f.sum(axis=0)

            step += 1
            for k in p:
                adam_m[k] = beta1 * adam_m[k] + (1 - beta1) * g[k]
                adam_v[k] = beta2 * adam_v[k] + (1 - beta2) * g[k] * g[k]
                mhat = adam_m[k] / (1 - beta1 ** step)
                vhat = adam_v[k] / (1 - beta2 ** step)
                p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)

    z_all, _ = _conv_forward(images, p)
    acc = float((np.argmax(z_all @ p["cls_w"] + p["cls_b"], axis=1)
                 == identities).mean())
    weights = {k: p[k] for k in
               ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")}
    weights["feature_mean"] = z_all.mean(axis=0)
    weights["input_h"] = np.int64(h)
    weights["input_w"] = np.int64(w)
    weights["channels"] = np.int64(c)
    weights["train_accuracy"] = np.float64(acc)
    return weights


def train_autoencoder(images: np.ndarray, hidden: int = 160, latent: int = 32,
                      seed: int = 0, epochs: int = 300, batch: int = 64,
                      lr: float = 1e-3) -> dict:
    """Fit the dense tanh/sigmoid autoencoder with Adam on pixel MSE."""
    rng = np.random.default_rng(seed)
    n, h, w, c = images.shape
    dim = h * w * c
    flat_all = images.reshape(n, dim)

    def glorot(shape):
        return rng.standard_normal(shape) * np.sqrt(1.0 / shape[0])

    p = {
        "enc_w1": glorot((dim, hidden)), "enc_b1": np.zeros(hidden),
        "enc_w2": glorot((hidden, latent)), "enc_b2": np.zeros(latent),
        "dec_w1": glorot((latent, hidden)), "dec_b1": np.zeros(hidden),
        "dec_w2": glorot((hidden, dim)), "dec_b2": np.zeros(dim),
    }
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(vv) for k, vv in p.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            x = flat_all[idx]
            b = len(idx)
            h1 = np.tanh(x @ p["enc_w1"] + p["enc_b1"])
            z = np.tanh(h1 @ p["enc_w2"] + p["enc_b2"])
            g1 = np.tanh(z @ p["dec_w1"] + p["dec_b1"])
            pre = g1 @ p["dec_w2"] + p["dec_b2"]
            out = 1.0 / (1.0 + np.exp(-pre))

            dout = 2.0 * (out - x) / (b * dim)
            d4 = dout * out * (1.0 - out)
            g = {}
            g["dec_w2"] = g1.T @ d4
            g["dec_b2"] = d4.sum(axis=0)
            dg1 = d4 @ p["dec_w2"].T
            d3 = dg1 * (1.0 - g1 * g1)
            g["dec_w1"] = z.T @ d3
            g["dec_b1"] = d3.sum(axis=0)
            dz = d3 @ p["dec_w1"].T
            d2 = dz * (1.0 - z * z)
            g["enc_w2"] = h1.T @ d2
            g["enc_b2"] = d2.sum(axis=0)
            dh1 = d2 @ p["enc_w2"].T
            d1 = dh1 * (1.0 - h1 * h1)
            g["enc_w1"] = x.T @ d1
            g["enc_b1"] = d1.sum(axis=0)

            step += 1
            for k in p:
                m[k] = beta1 * m[k] + (1 - beta1) * g[k]
                v[k] = beta2 * v[k] + (1 - beta2) * g[k] * g[k]
                mhat = m[k] / (1 - beta1 ** step)
                vhat = v[k] / (1 - beta2 ** step)
                p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)

    h1 = np.tanh(flat_all @ p["enc_w1"] + p["enc_b1"])
    z = np.tanh(h1 @ p["enc_w2"] + p["enc_b2"])
    g1 = np.tanh(z @ p["dec_w1"] + p["dec_b1"])
    out = 1.0 / (1.0 + np.exp(-(g1 @ p["dec_w2"] + p["dec_b2"])))
    mse = float(((out - flat_all) ** 2).mean())

    p["output_h"] = np.int64(h)
    p["output_w"] = np.int64(w)
    p["channels"] = np.int64(c)
    p["train_mse"] = np.float64(mse)
    return p


def brightness_attribute(gen: GenerativeModel, images: np.ndarray,
                         target_shift: float = 0.04,
                         name: str = "brighten") -> AttributeDirection:
    """InterfaceGAN-style direction: difference of latent class means under a
    median split on mean pixel brightness, scaled so the full edit shifts
    decoded brightness by about target_shift."""
    brightness = images.mean(axis=(1, 2, 3))
    codes = np.stack([gen.encode(img) for img in images])
    median = np.median(brightness)
    hi = codes[brightness > median].mean(axis=0)
    lo = codes[brightness <= median].mean(axis=0)
    direction = hi - lo
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise ValueError("brightness split produced a zero direction")
    direction = direction / norm

    probe = codes[:: max(1, len(codes) // 16)]
    base = np.mean([decode(gen, z).mean() for z in probe])
    strength = 1.0
    for candidate in (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0):
        attr = AttributeDirection(name=name, direction=direction,
                                  strength=candidate)
        shifted = np.mean([decode(gen, z, attr, 1.0).mean() for z in probe])
        strength = candidate
        if shifted - base >= target_shift:
            break
    return AttributeDirection(name=name, direction=direction, strength=strength)
