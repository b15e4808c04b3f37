"""Dual-manifold protection attacks.

Six modes share one config:

- ``pgd``      off-manifold signed-gradient descent over every pixel
- ``tma``      pgd restricted to the high-frequency texture mask
- ``ftm``      pgd restricted to texture AND parsed hair
- ``age``      on-manifold descent over a latent offset with a ramped
               attribute edit
- ``age-tma``  age followed by tma on the edited image
- ``age-ftm``  age followed by ftm on the edited image

All loops minimize the ensemble distance sum(1 - cos) toward a target
identity (or maximize it away from the source when untargeted). Offsets
accumulate across steps and are projected onto an L-infinity ball each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .embedding import (
    EmbedderEnsemble,
    distance_and_input_grad,
    embed_targets,
    ensemble_distance,
)
from .errors import ParameterError
from .imaging import BlurParams, clamp01, validate_image
from .manifold import (
    AttributeDirection,
    decode,
    decode_and_vjp,
    encode,
    neutral_attribute,
)
from .texture import combine_masks, hair_mask, parse_face, texture_mask

__all__ = [
    "ATTACK_MODES",
    "AttackConfig",
    "AttackResult",
    "age_attack",
    "age_ftm",
    "masked_pgd",
    "run_attack",
]

ATTACK_MODES = ("pgd", "tma", "ftm", "age", "age-tma", "age-ftm")
COMPOSITIONS = ("sequential", "joint")


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters for every attack mode.

    Defaults follow the reference setting: a 16/255 pixel budget walked in
    2/255 signed steps for 50 iterations off-manifold, and a 0.1 latent
    budget walked in 0.02 steps for 10 iterations on-manifold.
    """

    mode: str = "age-ftm"
    epsilon: float = 16.0 / 255.0
    epsilon_iter: float = 2.0 / 255.0
    off_steps: int = 50
    eta: float = 0.1
    eta_iter: float = 0.02
    n_latent_steps: int = 10
    gamma: float = 0.003
    blur: BlurParams = field(default_factory=BlurParams)
    targeted: bool = True
    composition: str = "sequential"

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise ParameterError(
                f"unknown mode {self.mode!r}; choose one of {', '.join(ATTACK_MODES)}"
            )
        if self.composition not in COMPOSITIONS:
            raise ParameterError(
                f"composition must be one of {COMPOSITIONS}, got {self.composition!r}"
            )
        for label in ("epsilon", "epsilon_iter", "eta", "eta_iter"):
            value = getattr(self, label)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"{label} must be finite and >= 0, got {value}")
        for label in ("off_steps", "n_latent_steps"):
            value = getattr(self, label)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ParameterError(f"{label} must be a non-negative int, got {value}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if not isinstance(self.blur, BlurParams):
            raise ParameterError("blur must be a BlurParams instance")

    def with_mode(self, mode: str) -> "AttackConfig":
        return replace(self, mode=mode)


@dataclass(frozen=True)
class AttackResult:
    """Output of one attack run.

    loss_trace holds the objective before the first step and after every
    step, so its length is steps + 1 (stages concatenate, sharing the
    boundary value). intermediate_image is the on-manifold stage output for
    composed modes, None otherwise. mask_used is the off-manifold pixel mask
    actually applied, None for pure on-manifold runs.
    """

    protected_image: np.ndarray
    loss_trace: tuple
    mode: str
    mask_used: Optional[np.ndarray] = None
    intermediate_image: Optional[np.ndarray] = None
    warning: Optional[str] = None


def _direction(cfg: AttackConfig) -> float:
    # Targeted runs descend the distance to the target; untargeted runs
    # ascend the distance from the source.
    return -1.0 if cfg.targeted else 1.0


def masked_pgd(img: np.ndarray, target: np.ndarray, ensemble: EmbedderEnsemble,
               mask: Optional[np.ndarray] = None, cfg: Optional[AttackConfig] = None,
               *, clamp: bool = True, target_embeddings=None) -> AttackResult:
    """Signed-gradient descent on the pixels selected by ``mask``.

    mask is a 2-D {0,1} array (None means all pixels). The accumulated
    offset is projected onto the epsilon ball, re-masked, and the image
    clamped to [0, 1] after every step; ``clamp=False`` skips only the final
    clamp-and-rederive, exposing the raw budgeted step for analysis.
    """
    cfg = cfg or AttackConfig(mode="pgd")
    x = validate_image(img)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != x.shape[:2]:
            raise ParameterError(
                f"mask shape {mask.shape} does not match image {x.shape[:2]}"
            )
        if not np.isin(mask, (0, 1)).all():
            raise ParameterError("mask values must be 0 or 1")
        m = mask.astype(np.float64)[:, :, None]
    else:
        m = np.ones(x.shape[:2], dtype=np.float64)[:, :, None]

    if target_embeddings is None:
        target_embeddings = embed_targets(ensemble, validate_image(target))

    sign = _direction(cfg)
    if not m.any():
        loss = ensemble_distance(ensemble, x, target_embeddings=target_embeddings)
        return AttackResult(
            protected_image=x.copy(),
            loss_trace=(loss,),
            mode=cfg.mode,
            mask_used=mask,
            warning="mask selects no pixels; image returned unchanged",
        )

    delta = np.zeros_like(x)
    cur = x.copy()
    trace = []
    for _ in range(cfg.off_steps):
        loss, grad = distance_and_input_grad(ensemble, cur, target_embeddings)
        trace.append(loss)
        delta = delta + sign * cfg.epsilon_iter * np.sign(grad * m)
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon) * m
        if clamp:
            cur = np.clip(x + delta, 0.0, 1.0)
            delta = cur - x
        else:
            cur = x + delta
    trace.append(ensemble_distance(ensemble, cur, target_embeddings=target_embeddings))
    return AttackResult(
        protected_image=cur,
        loss_trace=tuple(trace),
        mode=cfg.mode,
        mask_used=mask,
    )


def age_attack(img: np.ndarray, target: np.ndarray, ensemble: EmbedderEnsemble,
               gen, attr: Optional[AttributeDirection] = None,
               cfg: Optional[AttackConfig] = None, *,
               target_embeddings=None) -> AttackResult:
    """On-manifold attack: descend a latent offset while the attribute edit
    ramps linearly from nothing at step 0 to the full edit at step N."""
    cfg = cfg or AttackConfig(mode="age")
    x = validate_image(img)
    z = encode(gen, x)
    if attr is None:
        attr = neutral_attribute(gen.latent_dim)

    if target_embeddings is None:
        target_embeddings = embed_targets(ensemble, validate_image(target))

    sign = _direction(cfg)
    n = cfg.n_latent_steps
    lam = np.zeros(gen.latent_dim)
    trace = []
    for k in range(n):
        img_k, vjp = decode_and_vjp(gen, z + lam, attr, k / n)
        loss, g_img = distance_and_input_grad(ensemble, img_k, target_embeddings)
        trace.append(loss)
        g_lam = vjp(g_img)
        lam = np.clip(lam + sign * cfg.eta_iter * np.sign(g_lam), -cfg.eta, cfg.eta)
    out = decode(gen, z + lam, attr, 1.0)
    trace.append(ensemble_distance(ensemble, out, target_embeddings=target_embeddings))
    return AttackResult(
        protected_image=out,
        loss_trace=tuple(trace),
        mode=cfg.mode,
    )


def _stage2_mask(img: np.ndarray, cfg: AttackConfig, parser) -> np.ndarray:
    """Off-manifold pixel mask for the current stage image."""
    tex = texture_mask(img, gamma=cfg.gamma, params=cfg.blur)
    if cfg.mode.endswith("ftm"):
        if parser is None:
            raise ParameterError(f"mode {cfg.mode!r} needs a face parser")
        labels = parse_face(parser, img)
        return combine_masks(tex, hair_mask(labels, parser.hair_label))
    return tex


def age_ftm(img: np.ndarray, target: np.ndarray, ensemble: EmbedderEnsemble,
            gen, attr: Optional[AttributeDirection] = None,
            cfg: Optional[AttackConfig] = None, parser=None, *,
            target_embeddings=None) -> AttackResult:
    """Composed dual-manifold attack (modes age-tma and age-ftm).

    Sequential composition runs the on-manifold stage to completion, then
    recomputes the pixel mask on the edited image and runs the masked stage
    on top of it. Joint composition alternates single steps of each stage.
    """
    cfg = cfg or AttackConfig(mode="age-ftm")
    if cfg.mode not in ("age-tma", "age-ftm"):
        raise ParameterError(f"composed attack needs mode age-tma or age-ftm, got {cfg.mode!r}")
    if target_embeddings is None:
        target_embeddings = embed_targets(ensemble, validate_image(target))
    if cfg.composition == "joint":
        return _joint_dual(img, target, ensemble, gen, attr, cfg, parser,
                           target_embeddings)

    stage1 = age_attack(img, target, ensemble, gen, attr, cfg,
                        target_embeddings=target_embeddings)
    x_edit = stage1.protected_image
    mask = _stage2_mask(x_edit, cfg, parser)
    stage2 = masked_pgd(x_edit, target, ensemble, mask, cfg,
                        target_embeddings=target_embeddings)
    # The two stages share the boundary evaluation, so drop stage2's entry 0.
    trace = stage1.loss_trace + stage2.loss_trace[1:]
    return AttackResult(
        protected_image=stage2.protected_image,
        loss_trace=trace,
        mode=cfg.mode,
        mask_used=stage2.mask_used,
        intermediate_image=x_edit,
        warning=stage2.warning,
    )


def _joint_dual(img, target, ensemble, gen, attr, cfg, parser,
                target_embeddings) -> AttackResult:
    """Alternate one latent step and one masked pixel step per iteration.

    The pixel mask is recomputed whenever the on-manifold image moves, and
    the pixel offset is re-projected onto the new mask.
    """
    x = validate_image(img)
    z = encode(gen, x)
    if attr is None:
        attr = neutral_attribute(gen.latent_dim)
    sign = _direction(cfg)
    n, s = cfg.n_latent_steps, cfg.off_steps

    def compose(base_img, delta, m3):
        pre = base_img + delta * m3
        return np.clip(pre, 0.0, 1.0), (pre > 0.0) & (pre < 1.0)

    lam = np.zeros(gen.latent_dim)
    scale = 0.0 if n else 1.0
    base, base_vjp = decode_and_vjp(gen, z + lam, attr, scale)
    mask = _stage2_mask(base, cfg, parser)
    m3 = mask.astype(np.float64)[:, :, None]
    delta = np.zeros_like(base)
    cur, _ = compose(base, delta, m3)
    trace = [ensemble_distance(ensemble, cur, target_embeddings=target_embeddings)]

    for k in range(max(n, s)):
        if k < n:
            base, base_vjp = decode_and_vjp(gen, z + lam, attr, k / n)
            cur, interior = compose(base, delta, m3)
            _, g_img = distance_and_input_grad(ensemble, cur, target_embeddings)
            g_lam = base_vjp(g_img * interior)
            lam = np.clip(lam + sign * cfg.eta_iter * np.sign(g_lam),
                          -cfg.eta, cfg.eta)
            next_scale = (k + 1) / n
            base, base_vjp = decode_and_vjp(gen, z + lam, attr, next_scale)
            mask = _stage2_mask(base, cfg, parser)
            m3 = mask.astype(np.float64)[:, :, None]
            delta = np.clip(delta, -cfg.epsilon, cfg.epsilon) * m3
        if k < s:
            cur, interior = compose(base, delta, m3)
            _, g_img = distance_and_input_grad(ensemble, cur, target_embeddings)
            g_pix = g_img * interior * m3
            delta = delta + sign * cfg.epsilon_iter * np.sign(g_pix)
            delta = np.clip(delta, -cfg.epsilon, cfg.epsilon) * m3
            cur, _ = compose(base, delta, m3)
            delta = (cur - base) * (m3 > 0)
        cur, _ = compose(base, delta, m3)
        trace.append(ensemble_distance(ensemble, cur, target_embeddings=target_embeddings))

    return AttackResult(
        protected_image=cur,
        loss_trace=tuple(trace),
        mode=cfg.mode,
        mask_used=mask,
        intermediate_image=base,
    )


def run_attack(img: np.ndarray, target: np.ndarray, ensemble: EmbedderEnsemble,
               cfg: Optional[AttackConfig] = None, *, gen=None, attr=None,
               parser=None) -> AttackResult:
    """Dispatch on cfg.mode, checking that the mode's collaborators exist."""
    cfg = cfg or AttackConfig()
    x = validate_image(img)
    t = validate_image(target)
    target_embeddings = embed_targets(ensemble, t)

    if cfg.mode in ("age", "age-tma", "age-ftm") and gen is None:
        raise ParameterError(f"mode {cfg.mode!r} needs a generative model")
    if cfg.mode in ("ftm", "age-ftm") and parser is None:
        raise ParameterError(f"mode {cfg.mode!r} needs a face parser")

    if cfg.mode == "pgd":
        return masked_pgd(x, t, ensemble, None, cfg,
                          target_embeddings=target_embeddings)
    if cfg.mode == "tma":
        mask = texture_mask(x, gamma=cfg.gamma, params=cfg.blur)
        return masked_pgd(x, t, ensemble, mask, cfg,
                          target_embeddings=target_embeddings)
    if cfg.mode == "ftm":
        mask = _stage2_mask(x, cfg, parser)
        return masked_pgd(x, t, ensemble, mask, cfg,
                          target_embeddings=target_embeddings)
    if cfg.mode == "age":
        return age_attack(x, t, ensemble, gen, attr, cfg,
                          target_embeddings=target_embeddings)
    return age_ftm(x, t, ensemble, gen, attr, cfg, parser,
                   target_embeddings=target_embeddings)
