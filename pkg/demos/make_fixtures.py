"""Regenerate the bundled toy fixtures from the synthetic face corpus.

Trains the four conv embedders (three ensemble members + one held-out
evaluator), the autoencoder generator, and the brightness attribute
direction, then measures the transfer-attack statistics the test suite pins.
Writes everything into src/dualcloak/fixtures/.

Run from the repository root:  python3 demos/make_fixtures.py
Takes a couple of minutes on a laptop; the package ships the outputs, so
users never need to run this.
"""

import json
import time
from pathlib import Path

import numpy as np

from dualcloak.attacks import AttackConfig, run_attack
from dualcloak.embedding import (
    EmbedderEnsemble,
    ToyConvEmbedder,
    calibrate_threshold,
    cosine_similarity,
)
from dualcloak.manifold import ToyAutoencoder, decode, encode, save_attribute
from dualcloak.synth import (
    brightness_attribute,
    make_dataset,
    train_autoencoder,
    train_conv_embedder,
)
from dualcloak.texture import AnnotationParser

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "src" / "dualcloak" / "fixtures"

DATASET = dict(n_identities=12, per_identity=80, size=32, seed=20260817)
EVAL = dict(per_identity=12, sample_offset=1000, pair_seed=7,
            n_impostor=500, n_pairs=50)
EMBEDDERS = {
    "a": dict(filters=(8, 16), embed_dim=64, seed=101),
    "b": dict(filters=(12, 12), embed_dim=48, seed=202),
    "c": dict(filters=(6, 20), embed_dim=56, seed=303),
    "d": dict(filters=(10, 14), embed_dim=64, seed=404),
}
AUTOENCODER = dict(hidden=160, latent=32, seed=505, epochs=200)


def main():
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(**DATASET)
    print(f"corpus: {ds.images.shape[0]} images, {ds.n_identities} identities")

    embedders = {}
    for letter, spec in EMBEDDERS.items():
        t0 = time.time()
        weights = train_conv_embedder(ds.images, ds.identities,
                                      ds.n_identities, **spec)
        acc = float(weights["train_accuracy"])
        print(f"toy-conv-{letter}: train accuracy {acc:.4f} "
              f"({time.time() - t0:.0f}s)")
        assert acc >= 0.99, f"embedder {letter} failed to train"
        np.savez_compressed(FIXTURE_DIR / f"toyconv_{letter}.npz", **weights)
        embedders[letter] = ToyConvEmbedder(f"toy-conv-{letter}", weights)

    t0 = time.time()
    ae_weights = train_autoencoder(ds.images, **AUTOENCODER)
    rmse = float(np.sqrt(ae_weights["train_mse"]))
    print(f"autoencoder: train rmse {rmse:.4f} ({time.time() - t0:.0f}s)")
    assert rmse <= 0.08, "autoencoder reconstruction too lossy"
    np.savez_compressed(FIXTURE_DIR / "autoencoder.npz", **ae_weights)
    gen = ToyAutoencoder("toy-ae", ae_weights)

    attr = brightness_attribute(gen, ds.images[::5])
    save_attribute(attr, FIXTURE_DIR / "attr_brighten.json")
    print(f"attribute {attr.name!r}: strength {attr.strength}")

    # Held-out reconstruction bound, pinned with headroom by the test suite.
    ev = make_dataset(DATASET["n_identities"], EVAL["per_identity"],
                      DATASET["size"], DATASET["seed"],
                      sample_offset=EVAL["sample_offset"])
    recon_linf = max(
        float(np.abs(decode(gen, encode(gen, im)) - im).max())
        for im in ev.images[:: len(ev.images) // 24]
    )
    print(f"held-out reconstruction Linf: {recon_linf:.3f}")

    # Transfer-attack statistics on the pinned evaluation protocol.
    ens = EmbedderEnsemble([embedders[k] for k in "abc"])
    hold = embedders["d"]
    E = np.stack([hold.embed(im) for im in ev.images])
    rng = np.random.default_rng(EVAL["pair_seed"])
    impostors = []
    while len(impostors) < EVAL["n_impostor"]:
        i, j = rng.integers(0, len(E), 2)
        if ev.identities[i] != ev.identities[j]:
            impostors.append(cosine_similarity(E[i], E[j]))
    tau = calibrate_threshold(impostors, 0.01)
    print(f"holdout tau at FAR 0.01: {tau:.4f}")

    pairs = []
    while len(pairs) < EVAL["n_pairs"]:
        i, j = rng.integers(0, len(E), 2)
        if ev.identities[i] != ev.identities[j]:
            pairs.append((int(i), int(j)))

    hits = {}
    clean = [cosine_similarity(hold.embed(ev.images[i]), E[j]) for i, j in pairs]
    hits["clean"] = sum(c >= tau for c in clean)
    t0 = time.time()
    for mode in ("ftm", "tma", "age", "age-tma", "age-ftm"):
        scored = []
        for i, j in pairs:
            parser = AnnotationParser(ev.annotations[i])
            res = run_attack(ev.images[i], ev.images[j], ens,
                             AttackConfig(mode=mode), gen=gen,
                             attr=attr, parser=parser)
            scored.append(cosine_similarity(hold.embed(res.protected_image), E[j]))
        hits[mode] = sum(c >= tau for c in scored)
        print(f"{mode}: {hits[mode]}/{len(pairs)} transfer hits "
              f"({time.time() - t0:.0f}s cumulative)")

    meta = {
        "fixture_set": "toyfaces-r1",
        "dataset": DATASET,
        "eval": EVAL,
        "embedders": {k: {**v, "filters": list(v["filters"])}
                      for k, v in EMBEDDERS.items()},
        "autoencoder": AUTOENCODER,
        "attribute": {"name": attr.name, "strength": attr.strength},
        "measured": {
            "tau_far01": tau,
            "recon_linf": recon_linf,
            "transfer_hits": hits,
            "n_pairs": len(pairs),
        },
    }
    (FIXTURE_DIR / "fixture_meta.json").write_text(
        json.dumps(meta, indent=2) + "\n")
    print("wrote", FIXTURE_DIR)


if __name__ == "__main__":
    main()
