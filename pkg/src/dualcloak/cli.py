"""Command-line interface: protect / calibrate / evaluate / mask-preview / grid.

Exit codes: 0 success, 1 partial failure (some images failed or were
excluded), 2 usage error (bad flags, bad config, missing inputs). Runs are
deterministic for a fixed config and seed; the master seed fans out to
per-image seeds by hashing the file name.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import ATTACK_MODES, run_attack
from .config import RunConfig, load_config, per_image_seed
from .embedding import (
    EmbedderEnsemble,
    calibrate_threshold,
    cosine_similarity,
    get_embedder,
)
from .errors import ConfigError, DualcloakError, ParameterError
from .evaluation import (
    EvaluationReport,
    ModelResult,
    attack_success_rate,
    comparison_grid,
    extract_features,
    fid,
)
from .imaging import load_image, save_image
from .manifold import get_generator, load_attribute, neutral_attribute
from .service import VerificationServiceClient
from .texture import (
    AnnotationParser,
    combine_masks,
    hair_mask,
    parse_face,
    save_mask,
    texture_mask,
)

MANIFEST_VERSION = 1


def entrypoint():
    sys.exit(main(sys.argv[1:]))


def main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        return args.handler(args, cfg)
    except (ConfigError, ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DualcloakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="dualcloak",
        description="Dual-manifold facial privacy protection.",
    )
    top.add_argument("--version", action="version", version=f"dualcloak {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--mode", choices=ATTACK_MODES, help="override attack.mode")
        p.add_argument("--seed", type=int, help="override master seed")
        p.add_argument("--workers", type=int, help="worker pool size (default: logical cores)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. attack.epsilon=0.05")
        p.add_argument("--allow-partial", action="store_true",
                       help="keep going past per-item failures / exclusions")

    p = sub.add_parser("protect", help="write protected versions of input images")
    common(p)
    p.set_defaults(handler=cmd_protect)

    p = sub.add_parser("calibrate", help="calibrate accept thresholds from impostor pairs")
    common(p)
    p.add_argument("--pairs", required=True, help="JSON list of [image_a, image_b] paths")
    p.add_argument("--out", help="output JSON (default: <output_dir>/thresholds.json)")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score protected images against targets")
    common(p)
    p.add_argument("--protected", required=True, help="directory of protected PNGs")
    p.add_argument("--targets", required=True, help="directory of target PNGs")
    p.add_argument("--thresholds", help="thresholds JSON from calibrate "
                                        "(default: config thresholds_file)")
    p.add_argument("--api", nargs="?", const="__config__", default=None,
                   help="also query the verification service (optional URL)")
    p.add_argument("--out", help="report path (default: <output_dir>/evaluation.json)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("mask-preview", help="write texture/hair/combined mask PNGs")
    common(p)
    p.add_argument("image", help="input image PNG")
    p.add_argument("--annotation", help="annotation PNG (default: parser.annotation_dir/<name>)")
    p.add_argument("--out-dir", help="output directory (default: io.output_dir)")
    p.set_defaults(handler=cmd_mask_preview)

    p = sub.add_parser("grid", help="compose labeled image rows into one PNG")
    common(p)
    p.add_argument("rows", nargs="+", metavar="LABEL=DIR",
                   help="row label and directory of PNGs")
    p.add_argument("--out", required=True, help="output grid PNG")
    p.set_defaults(handler=cmd_grid)
    return top


def _overrides(args) -> list:
    items = list(args.set)
    if args.mode is not None:
        items.append(f"attack.mode={args.mode}")
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    if args.workers is not None:
        items.append(f"workers={args.workers}")
    return items


def _list_pngs(directory: Path) -> list:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def _fixture_set() -> str:
    try:
        from .fixtures import fixture_path

        meta = json.loads(Path(fixture_path("fixture_meta.json")).read_text())
        return meta.get("fixture_set", "unknown")
    except FileNotFoundError:
        return "unknown"


def _build_ensemble(cfg: RunConfig) -> EmbedderEnsemble:
    return EmbedderEnsemble([get_embedder(name) for name in cfg.ensemble])


def _build_attack_deps(cfg: RunConfig):
    """Generator and attribute for the configured mode, or Nones."""
    mode = cfg.attack.mode
    gen = attr = None
    if mode in ("age", "age-tma", "age-ftm"):
        if cfg.generator is None:
            raise ConfigError(f"attack.mode {mode!r} needs a generator name")
        gen = get_generator(cfg.generator)
        if cfg.attribute.file:
            attr = load_attribute(cfg.attribute.file)
            if cfg.attribute.strength is not None:
                attr = type(attr)(name=attr.name, direction=attr.direction,
                                  strength=cfg.attribute.strength)
        else:
            attr = neutral_attribute(gen.latent_dim)
    return gen, attr


def _annotation_for(cfg: RunConfig, name: str) -> Path:
    if not cfg.parser.annotation_dir:
        raise ParameterError(
            f"attack.mode {cfg.attack.mode!r} needs parser.annotation_dir"
        )
    return Path(cfg.parser.annotation_dir) / f"{name}.png"


def cmd_protect(args, cfg: RunConfig) -> int:
    if not cfg.io.input:
        raise ConfigError("io.input is required for protect")
    if not cfg.io.output_dir:
        raise ConfigError("io.output_dir is required for protect")
    if not cfg.target_image:
        raise ConfigError("target_image is required for protect")
    source = Path(cfg.io.input)
    if source.is_dir():
        inputs = _list_pngs(source)
    elif source.exists():
        inputs = [source]
    else:
        raise ConfigError(f"io.input does not exist: {source}")
    if not inputs:
        raise ConfigError(f"no .png inputs under {source}")
    target_path = Path(cfg.target_image)
    if not target_path.exists():
        raise ConfigError(f"target_image does not exist: {target_path}")

    ensemble = _build_ensemble(cfg)
    gen, attr = _build_attack_deps(cfg)
    target = load_image(target_path)
    needs_parser = cfg.attack.mode in ("ftm", "age-tma", "age-ftm")
    # age-tma recomputes a texture-only mask, no parser involved.
    if cfg.attack.mode == "age-tma":
        needs_parser = False

    out_dir = Path(cfg.io.output_dir)
    (out_dir / "protected").mkdir(parents=True, exist_ok=True)
    if cfg.io.save_mask:
        (out_dir / "masks").mkdir(exist_ok=True)
    if cfg.io.save_intermediate:
        (out_dir / "intermediate").mkdir(exist_ok=True)

    def job(path: Path) -> dict:
        name = path.stem
        entry = {"name": path.name, "seed": per_image_seed(cfg.seed, path.name)}
        started = time.monotonic()
        try:
            img = load_image(path)
            parser = None
            if needs_parser:
                parser = AnnotationParser(_annotation_for(cfg, name),
                                          name=f"annotation:{name}")
            result = run_attack(img, target, ensemble, cfg.attack,
                                gen=gen, attr=attr, parser=parser)
            outputs = {"protected": f"protected/{path.name}"}
            save_image(result.protected_image, out_dir / "protected" / path.name)
            if cfg.io.save_mask and result.mask_used is not None:
                save_mask(result.mask_used, out_dir / "masks" / path.name)
                outputs["mask"] = f"masks/{path.name}"
            if cfg.io.save_intermediate and result.intermediate_image is not None:
                save_image(result.intermediate_image,
                           out_dir / "intermediate" / path.name)
                outputs["intermediate"] = f"intermediate/{path.name}"
            entry.update(
                status="ok",
                outputs=outputs,
                loss_initial=result.loss_trace[0],
                loss_final=result.loss_trace[-1],
                loss_trace=list(result.loss_trace),
            )
            if result.warning:
                entry["warning"] = result.warning
        except Exception as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        if cfg.io.record_timings:
            entry["seconds"] = time.monotonic() - started
        return entry

    workers = cfg.workers or os.cpu_count() or 1
    entries = []
    recorded = set()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {pool.submit(job, p): p for p in inputs}
        for future in as_completed(pending):
            entry = future.result()
            entries.append(entry)
            recorded.add(future)
            if entry["status"] == "failed" and not args.allow_partial:
                # Stop scheduling new jobs; running ones finish and are
                # recorded below, never-started ones are marked skipped.
                for other in pending:
                    other.cancel()
                break
        for future, path in pending.items():
            if future in recorded:
                continue
            if future.cancelled():
                entries.append({"name": path.name, "status": "skipped",
                                "error": "earlier failure aborted the run"})
            else:
                entries.append(future.result())
    for entry in entries:
        if entry["status"] == "failed":
            print(f"error: {entry['name']}: {entry['error']}", file=sys.stderr)

    entries.sort(key=lambda e: e["name"])
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": "protect",
        "package_version": __version__,
        "fixture_set": _fixture_set(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "images": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    n_bad = sum(e["status"] != "ok" for e in entries)
    print(f"protected {len(entries) - n_bad}/{len(entries)} images -> {out_dir}")
    return 1 if n_bad else 0


def cmd_calibrate(args, cfg: RunConfig) -> int:
    pairs_path = Path(args.pairs)
    if not pairs_path.exists():
        raise ConfigError(f"pairs file not found: {pairs_path}")
    try:
        raw_pairs = json.loads(pairs_path.read_text())
        pairs = [(Path(a), Path(b)) for a, b in raw_pairs]
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"pairs file must be a JSON list of [a, b] paths: {exc}")
    if not pairs:
        raise ConfigError("pairs file is empty")
    for a, b in pairs:
        if not a.exists() or not b.exists():
            raise ConfigError(f"pair image missing: {a if not a.exists() else b}")

    names = list(dict.fromkeys(list(cfg.ensemble)
                               + ([cfg.holdout] if cfg.holdout else [])))
    models = {n: get_embedder(n) for n in names}
    cache = {}

    def embed(model_name, path):
        key = (model_name, str(path))
        if key not in cache:
            cache[key] = models[model_name].embed(load_image(path))
        return cache[key]

    short = len(pairs) < int(np.ceil(1.0 / cfg.far))
    out = {}
    for name in names:
        scores = [cosine_similarity(embed(name, a), embed(name, b))
                  for a, b in pairs]
        record = {"tau": calibrate_threshold(scores, cfg.far),
                  "far": cfg.far, "n_pairs": len(pairs)}
        if short:
            record["warning"] = (
                f"only {len(pairs)} impostor pairs for far={cfg.far}; "
                f"tau is an interpolated estimate"
            )
        out[name] = record
    if short:
        print(f"warning: fewer than {int(np.ceil(1.0 / cfg.far))} pairs; "
              "thresholds are interpolated estimates", file=sys.stderr)

    out_path = Path(args.out) if args.out else None
    if out_path is None:
        if not cfg.io.output_dir:
            raise ConfigError("give --out or set io.output_dir")
        Path(cfg.io.output_dir).mkdir(parents=True, exist_ok=True)
        out_path = Path(cfg.io.output_dir) / "thresholds.json"
    out_path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"calibrated {len(names)} models -> {out_path}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    protected_dir = Path(args.protected)
    targets_dir = Path(args.targets)
    if not protected_dir.is_dir():
        raise ConfigError(f"protected dir not found: {protected_dir}")
    if not targets_dir.is_dir():
        raise ConfigError(f"targets dir not found: {targets_dir}")
    protected_files = _list_pngs(protected_dir)
    if not protected_files:
        raise ConfigError(f"no .png files under {protected_dir}")
    if cfg.holdout is None:
        raise ConfigError("evaluate needs a holdout embedder name")
    if cfg.holdout in cfg.ensemble:
        raise ConfigError(
            f"holdout {cfg.holdout!r} must not be an ensemble member"
        )

    paired, unpaired = [], []
    for p in protected_files:
        t = targets_dir / p.name
        (paired if t.exists() else unpaired).append((p, t))
    for p, _ in unpaired:
        print(f"warning: no target for {p.name}; excluded", file=sys.stderr)
    if not paired:
        raise ConfigError("no protected/target pairs share a filename")

    thresholds_path = args.thresholds or cfg.thresholds_file
    if not thresholds_path:
        raise ConfigError("give --thresholds or set thresholds_file "
                          "(run `dualcloak calibrate` first)")
    thresholds_path = Path(thresholds_path)
    if not thresholds_path.exists():
        raise ConfigError(f"thresholds file not found: {thresholds_path}")
    taus = json.loads(thresholds_path.read_text())

    protected_imgs = [load_image(p) for p, _ in paired]
    target_imgs = [load_image(t) for _, t in paired]

    model_names = [cfg.holdout] + list(cfg.ensemble)
    per_model = []
    for name in model_names:
        if name not in taus:
            raise ConfigError(f"thresholds file has no entry for {name!r}")
        model = get_embedder(name)
        tau = float(taus[name]["tau"])
        asr = attack_success_rate(protected_imgs, target_imgs, model, tau)
        per_model.append(ModelResult(model=name, asr=asr, tau=tau))

    hold = get_embedder(cfg.holdout)
    fid_value = fid(extract_features(protected_imgs, hold),
                    extract_features(target_imgs, hold))

    api_mean = None
    if args.api is not None:
        url = cfg.api.url if args.api == "__config__" else args.api
        if not url:
            raise ConfigError("--api given but no URL (flag or api.url)")
        client = VerificationServiceClient(url, timeout=cfg.api.timeout,
                                           retries=cfg.api.retries)
        jobs = list(zip(protected_imgs, target_imgs))
        with ThreadPoolExecutor(max_workers=cfg.api.max_parallel) as pool:
            values = list(pool.map(lambda ab: client.confidence(*ab), jobs))
        api_mean = float(np.mean(values))

    report = EvaluationReport(
        mode=cfg.attack.mode,
        n_images=len(paired),
        per_model=tuple(per_model),
        fid=fid_value,
        api_mean_confidence=api_mean,
        config_echo=cfg.to_dict()["attack"],
    )
    out_path = Path(args.out) if args.out else None
    if out_path is None:
        base = Path(cfg.io.output_dir) if cfg.io.output_dir else protected_dir.parent
        base.mkdir(parents=True, exist_ok=True)
        out_path = base / "evaluation.json"
    report.save(out_path)
    print(f"evaluated {len(paired)} pairs -> {out_path}")
    for m in report.per_model:
        print(f"  {m.model}: asr {m.asr:.3f} at tau {m.tau:.4f}")
    if unpaired and not args.allow_partial:
        return 1
    return 0


def cmd_mask_preview(args, cfg: RunConfig) -> int:
    image_path = Path(args.image)
    if not image_path.exists():
        raise ConfigError(f"image not found: {image_path}")
    img = load_image(image_path)
    name = image_path.stem

    if args.annotation:
        annotation = Path(args.annotation)
    else:
        annotation = _annotation_for(cfg, name) if cfg.parser.annotation_dir else None
    if annotation is None or not annotation.exists():
        raise ConfigError(
            f"no annotation for {name!r}; give --annotation or parser.annotation_dir"
        )

    tex = texture_mask(img, gamma=cfg.attack.gamma, params=cfg.attack.blur)
    parser = AnnotationParser(annotation)
    hair = hair_mask(parse_face(parser, img), parser.hair_label)
    combined = combine_masks(tex, hair)

    out_dir = Path(args.out_dir) if args.out_dir else (
        Path(cfg.io.output_dir) if cfg.io.output_dir else image_path.parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_mask(tex, out_dir / f"{name}_texture.png")
    save_mask(hair, out_dir / f"{name}_hair.png")
    save_mask(combined, out_dir / f"{name}_mask.png")

    overlay = img.copy()
    if overlay.shape[2] == 1:
        overlay = np.repeat(overlay, 3, axis=2)
    sel = combined.astype(bool)
    overlay[sel] = 0.55 * overlay[sel] + 0.45 * np.array([1.0, 0.0, 0.0])
    save_image(overlay, out_dir / f"{name}_overlay.png")
    print(f"wrote {name}_texture/_hair/_mask/_overlay.png -> {out_dir}")
    return 0


def cmd_grid(args, cfg: RunConfig) -> int:
    rows = []
    for spec in args.rows:
        if "=" not in spec:
            raise ConfigError(f"row {spec!r} is not LABEL=DIR")
        label, directory = spec.split("=", 1)
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigError(f"row {label!r}: not a directory: {directory}")
        files = _list_pngs(directory)
        if not files:
            raise ConfigError(f"row {label!r}: no .png files under {directory}")
        rows.append((label, [load_image(f) for f in files]))
    grid = comparison_grid(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(grid, out)
    print(f"grid with {len(rows)} rows -> {out}")
    return 0


if __name__ == "__main__":
    entrypoint()
