"""Texture extraction and hair-region masking.

The texture mask marks pixels whose high-frequency content (image minus its
Gaussian blur) exceeds a threshold; intersecting it with the hair region of a
face-parsing label map yields the mask used by the hair-texture attack mode.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from PIL import Image

from .errors import ParameterError, ParseError
from .imaging import BlurParams, gaussian_blur, validate_image

__all__ = [
    "AnnotationParser",
    "CELEBAMASK_HQ_LABELS",
    "CallableParser",
    "FaceParser",
    "HAIR_LABEL",
    "LabelMap",
    "combine_masks",
    "hair_mask",
    "high_freq",
    "load_label_map",
    "load_mask",
    "parse_face",
    "save_label_map",
    "save_mask",
    "texture_mask",
]

# CelebAMask-HQ label ids (19 classes, background = 0). Annotation PNGs store
# these ids directly; "hair" is id 17.
CELEBAMASK_HQ_LABELS: Mapping[int, str] = {
    0: "background",
    1: "skin",
    2: "l_brow",
    3: "r_brow",
    4: "l_eye",
    5: "r_eye",
    6: "eye_g",
    7: "l_ear",
    8: "r_ear",
    9: "ear_r",
    10: "nose",
    11: "mouth",
    12: "u_lip",
    13: "l_lip",
    14: "neck",
    15: "neck_l",
    16: "cloth",
    17: "hair",
    18: "hat",
}
HAIR_LABEL = 17

DEFAULT_GAMMA = 0.003  # on [0, 1] pixel values, i.e. roughly 0.77/255


def high_freq(img: np.ndarray, params: BlurParams = BlurParams()) -> np.ndarray:
    """Per-pixel high-frequency magnitude |x - blur(x)|, max over channels.

    Returns an (H, W) non-negative map; a strong edge in any single channel
    is enough to mark the pixel.
    """
    arr = validate_image(img)
    residual = np.abs(arr - gaussian_blur(arr, params))
    return residual.max(axis=2)


def texture_mask(
    img: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
    params: BlurParams = BlurParams(),
) -> np.ndarray:
    """Binary (H, W) mask of pixels whose high-frequency content exceeds gamma.

    The comparison is strict, so ties at exactly gamma are excluded and a zero
    threshold marks every pixel with any high-frequency response.
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    return (high_freq(img, params) > gamma).astype(np.uint8)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel component labels over a declared label table."""

    labels: np.ndarray  # (H, W) integer ids
    label_table: Mapping[int, str] = field(default_factory=lambda: CELEBAMASK_HQ_LABELS)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ParameterError(f"label map must be (H, W), got shape {arr.shape}")
        unknown = set(np.unique(arr).tolist()) - set(self.label_table)
        if unknown:
            raise ParameterError(f"label map contains ids outside the label table: {sorted(unknown)}")
        object.__setattr__(self, "labels", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


class FaceParser(ABC):
    """Maps a face image to a per-pixel component label map.

    Implementations declare a label table with a designated hair label and
    whether concurrent ``parse`` calls are safe.
    """

    name: str = "parser"
    concurrent_safe: bool = True

    @property
    def label_table(self) -> Mapping[int, str]:
        return CELEBAMASK_HQ_LABELS

    @property
    def hair_label(self) -> int:
        for label, label_name in self.label_table.items():
            if label_name == "hair":
                return label
        raise ParameterError(f"parser {self.name}: label table has no 'hair' entry")

    @abstractmethod
    def _parse(self, img: np.ndarray) -> np.ndarray:
        """Return (H, W) integer labels for the given image."""

    def parse(self, img: np.ndarray) -> LabelMap:
        arr = validate_image(img)
        try:
            labels = self._parse(arr)
        except ParseError:
            raise
        except Exception as exc:
            raise ParseError(f"parser {self.name} failed: {exc}") from exc
        labels = np.asarray(labels)
        if labels.shape != arr.shape[:2]:
            raise ParseError(
                f"parser {self.name}: label shape {labels.shape} does not match image {arr.shape[:2]}"
            )
        return LabelMap(labels, self.label_table)


class AnnotationParser(FaceParser):
    """Fixture parser backed by one ground-truth annotation.

    Returns the committed annotation verbatim for any image whose spatial size
    matches; the protect pipeline builds one instance per source image, so a
    latent-edited intermediate reuses its source's annotation.
    """

    def __init__(self, annotation, label_table: Mapping[int, str] = CELEBAMASK_HQ_LABELS, name: str = "annotation"):
        if isinstance(annotation, (str, Path)):
            annotation = load_label_map(annotation, label_table).labels
        self._labels = np.asarray(annotation)
        self._table = dict(label_table)
        self.name = name

    @property
    def label_table(self) -> Mapping[int, str]:
        return self._table

    def _parse(self, img: np.ndarray) -> np.ndarray:
        if self._labels.shape != img.shape[:2]:
            raise ParseError(
                f"annotation shape {self._labels.shape} does not match image {img.shape[:2]}"
            )
        return self._labels


class CallableParser(FaceParser):
    """Adapter slot for an external parser: wraps any image -> labels callable."""

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        label_table: Mapping[int, str] = CELEBAMASK_HQ_LABELS,
        name: str = "external",
        concurrent_safe: bool = True,
    ):
        self._fn = fn
        self._table = dict(label_table)
        self.name = name
        self.concurrent_safe = concurrent_safe

    @property
    def label_table(self) -> Mapping[int, str]:
        return self._table

    def _parse(self, img: np.ndarray) -> np.ndarray:
        return self._fn(img)


def parse_face(parser: FaceParser, img: np.ndarray) -> LabelMap:
    """Run a parser on an image, normalizing failures to ParseError."""
    return parser.parse(img)


def hair_mask(labels: LabelMap, hair_label: int | None = None) -> np.ndarray:
    """Binary (H, W) mask of pixels carrying the hair label."""
    if hair_label is None:
        hair_label = HAIR_LABEL
    if hair_label not in labels.label_table:
        raise ParameterError(f"label id {hair_label} is not in the label table")
    return (labels.labels == hair_label).astype(np.uint8)


def combine_masks(texture: np.ndarray, hair: np.ndarray) -> np.ndarray:
    """Pixelwise AND of two binary masks of equal shape."""
    t = _check_mask(texture, "texture mask")
    h = _check_mask(hair, "hair mask")
    if t.shape != h.shape:
        raise ParameterError(f"mask shapes differ: {t.shape} vs {h.shape}")
    return (t & h).astype(np.uint8)


def _check_mask(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be (H, W), got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ParameterError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    arr = _check_mask(mask, "mask")
    Image.fromarray(arr * np.uint8(255), mode="L").save(Path(path), format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a {0, 255} grayscale PNG back to a {0, 1} mask."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


# Fixed 19-entry palette so annotation PNGs are viewable; ids stay the pixel values.
_PALETTE = [
    (0, 0, 0), (204, 153, 102), (120, 80, 60), (140, 90, 70), (60, 60, 180),
    (60, 120, 180), (150, 150, 160), (180, 120, 90), (190, 130, 100), (220, 180, 60),
    (200, 140, 110), (170, 60, 60), (190, 80, 80), (150, 50, 50), (180, 130, 100),
    (210, 190, 80), (80, 80, 140), (90, 60, 30), (40, 40, 90),
]


def save_label_map(labels, path) -> None:
    """Write an annotation (LabelMap or plain (H, W) id array) as an 8-bit
    indexed PNG whose indices are the label ids."""
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    arr = arr.astype(np.uint8)
    im = Image.fromarray(arr, mode="P")
    palette = []
    for i in range(256):
        palette.extend(_PALETTE[i % len(_PALETTE)] if i < len(_PALETTE) else (0, 0, 0))
    im.putpalette(palette)
    im.save(Path(path), format="PNG")


def load_label_map(path, label_table: Mapping[int, str] = CELEBAMASK_HQ_LABELS) -> LabelMap:
    """Read an annotation PNG (indexed or grayscale) written by save_label_map."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such annotation file: {path}")
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            raise ParseError(f"annotation {path} must be indexed or grayscale, got mode {im.mode}")
        arr = np.asarray(im)
    return LabelMap(arr.astype(np.int64), label_table)
