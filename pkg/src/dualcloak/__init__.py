"""dualcloak: dual-manifold facial privacy protection.

Protects face photos from unauthorized recognition by perturbing them toward
a chosen target identity along two routes: on-manifold edits through a
generative model's latent space and off-manifold pixel perturbations
restricted to high-frequency facial texture (hair). See README.md for the
tour; demos/ holds runnable walkthroughs of each capability.
"""

from .attacks import ATTACK_MODES, AttackConfig, AttackResult, age_attack, age_ftm, masked_pgd, run_attack
from .embedding import (
    EmbedderEnsemble,
    FaceEmbedder,
    ToyConvEmbedder,
    ToyLinearEmbedder,
    VerificationThreshold,
    calibrate_threshold,
    cosine_similarity,
    embedder_names,
    ensemble_distance,
    get_embedder,
    register_embedder,
    verify,
)
from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    DualcloakError,
    EmbedError,
    ImageFormatError,
    ManifoldError,
    ParameterError,
    ParseError,
    ProtocolError,
    TransportError,
)
from .evaluation import (
    EvaluationReport,
    ModelResult,
    RandomProjectionExtractor,
    attack_success_rate,
    comparison_grid,
    extract_features,
    fid,
)
from .imaging import BlurParams, gaussian_blur, load_image, save_image
from .manifold import (
    AttributeDirection,
    GenerativeModel,
    ToyAutoencoder,
    ToyIdentityGenerator,
    attribute_schedule,
    decode,
    encode,
    generator_names,
    get_generator,
    load_attribute,
    neutral_attribute,
    register_generator,
    save_attribute,
)
from .service import MockVerificationServer, VerificationServiceClient, api_confidence
from .texture import (
    CELEBAMASK_HQ_LABELS,
    AnnotationParser,
    CallableParser,
    FaceParser,
    combine_masks,
    hair_mask,
    high_freq,
    load_label_map,
    load_mask,
    parse_face,
    save_label_map,
    save_mask,
    texture_mask,
)

__version__ = "0.1.0"
