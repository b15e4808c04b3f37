import json
import shutil

import numpy as np
import pytest

from dualcloak import MockVerificationServer, get_embedder, load_image, load_mask
from dualcloak.cli import main
from dualcloak.config import per_image_seed
from dualcloak.imaging import save_image
from dualcloak.synth import make_dataset
from dualcloak.texture import save_label_map
from test_embedding import hazen_oracle


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with inputs, annotations, targets, a pool, and a base config."""
    root = tmp_path_factory.mktemp("cliws")
    ds = make_dataset(3, 1, 32, seed=77)
    names = [f"face_{i:02d}.png" for i in range(3)]

    (root / "inputs").mkdir()
    (root / "annotations").mkdir()
    for name, img, ann in zip(names, ds.images, ds.annotations):
        save_image(img, root / "inputs" / name)
        save_label_map(ann, root / "annotations" / name)

    tgt = make_dataset(1, 1, 32, seed=88)
    save_image(tgt.images[0], root / "target.png")
    (root / "targets").mkdir()
    for name in names:
        shutil.copy(root / "target.png", root / "targets" / name)

    pool = make_dataset(6, 1, 32, seed=99)
    (root / "pool").mkdir()
    pool_paths = []
    for i, img in enumerate(pool.images):
        p = root / "pool" / f"p{i}.png"
        save_image(img, p)
        pool_paths.append(str(p))
    pairs = [[pool_paths[i], pool_paths[i + 1]] for i in range(4)]
    (root / "pairs.json").write_text(json.dumps(pairs))

    config = {
        "schema_version": 1,
        "seed": 11,
        "attack": {"mode": "ftm", "off_steps": 4},
        "ensemble": ["toy-conv-a", "toy-conv-b"],
        "holdout": "toy-conv-d",
        "generator": "toy-ae",
        "parser": {"annotation_dir": str(root / "annotations")},
        "target_image": str(root / "target.png"),
        "io": {"input": str(root / "inputs")},
        "far": 0.5,
    }
    (root / "config.json").write_text(json.dumps(config))
    return root, config, names


def run(ws_root, *argv, config="config.json"):
    return main([argv[0], "--config", str(ws_root / config), *argv[1:]])


class TestTopLevel:
    def test_version_exits_zero(self, capsys):
        assert main(["--version"]) == 0

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_unknown_subcommand_usage_error(self):
        assert main(["obfuscate", "--config", "x.json"]) == 2

    def test_missing_config_file(self, ws):
        root, _, _ = ws
        assert main(["protect", "--config", str(root / "nope.json")]) == 2


class TestProtect:
    def test_happy_path_manifest_and_outputs(self, ws, tmp_path):
        root, config, names = ws
        out = tmp_path / "out"
        rc = run(root, "protect", "--set", f"io.output_dir={out}", "--workers", "2")
        assert rc == 0

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["manifest_version"] == 1
        assert manifest["command"] == "protect"
        assert manifest["fixture_set"] == "toyfaces-r1"
        assert manifest["seed"] == 11
        assert manifest["config"]["attack"]["mode"] == "ftm"
        assert manifest["config"]["workers"] == 2

        entries = manifest["images"]
        assert [e["name"] for e in entries] == names
        for e in entries:
            assert e["status"] == "ok"
            assert e["seed"] == per_image_seed(11, e["name"])
            assert e["loss_final"] < e["loss_initial"]
            assert len(e["loss_trace"]) == 4 + 1
            assert "seconds" not in e  # timings are opt-in
            assert (out / e["outputs"]["protected"]).exists()
            assert (out / e["outputs"]["mask"]).exists()

    def test_mask_files_match_inputs(self, ws, tmp_path):
        root, _, names = ws
        out = tmp_path / "out"
        assert run(root, "protect", "--set", f"io.output_dir={out}") == 0
        for name in names:
            mask = load_mask(out / "masks" / name)
            ann = np.asarray(load_image(root / "inputs" / name))
            assert mask.shape == ann.shape[:2]
            assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_pgd_mode_writes_no_masks(self, ws, tmp_path):
        root, _, _ = ws
        out = tmp_path / "out"
        rc = run(root, "protect", "--mode", "pgd", "--set", f"io.output_dir={out}")
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["attack"]["mode"] == "pgd"
        for e in manifest["images"]:
            assert "mask" not in e["outputs"]

    def test_zero_steps_ftm_round_trips_bytes(self, ws, tmp_path):
        # off_steps=0 must leave each image byte-identical through the
        # load/attack/save cycle.
        root, _, names = ws
        out = tmp_path / "out"
        rc = run(root, "protect", "--set", f"io.output_dir={out}",
                 "--set", "attack.off_steps=0")
        assert rc == 0
        for name in names:
            src = (root / "inputs" / name).read_bytes()
            dst = (out / "protected" / name).read_bytes()
            assert src == dst

    def test_timings_opt_in(self, ws, tmp_path):
        root, _, _ = ws
        out = tmp_path / "out"
        assert run(root, "protect", "--set", f"io.output_dir={out}",
                   "--set", "io.record_timings=true") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert all(e["seconds"] >= 0 for e in manifest["images"])

    def test_failure_aborts_without_allow_partial(self, ws, tmp_path):
        root, _, names = ws
        broken = tmp_path / "annotations"
        shutil.copytree(root / "annotations", broken)
        (broken / names[0]).unlink()
        out = tmp_path / "out"
        rc = run(root, "protect", "--workers", "1",
                 "--set", f"parser.annotation_dir={broken}",
                 "--set", f"io.output_dir={out}")
        assert rc == 1
        manifest = json.loads((out / "manifest.json").read_text())
        by_name = {e["name"]: e for e in manifest["images"]}
        assert by_name[names[0]]["status"] == "failed"
        assert "error" in by_name[names[0]]
        assert all(by_name[n]["status"] in ("skipped", "ok") for n in names[1:])
        assert any(by_name[n]["status"] == "skipped" for n in names[1:])

    def test_failure_continues_with_allow_partial(self, ws, tmp_path):
        root, _, names = ws
        broken = tmp_path / "annotations"
        shutil.copytree(root / "annotations", broken)
        (broken / names[0]).unlink()
        out = tmp_path / "out"
        rc = run(root, "protect", "--allow-partial", "--workers", "1",
                 "--set", f"parser.annotation_dir={broken}",
                 "--set", f"io.output_dir={out}")
        assert rc == 1  # partial success still reports failure
        manifest = json.loads((out / "manifest.json").read_text())
        by_name = {e["name"]: e for e in manifest["images"]}
        assert by_name[names[0]]["status"] == "failed"
        for n in names[1:]:
            assert by_name[n]["status"] == "ok"
            assert (out / "protected" / n).exists()

    def test_missing_input_dir_usage_error(self, ws, tmp_path):
        root, _, _ = ws
        rc = run(root, "protect", "--set", "io.input=no/such/dir",
                 "--set", f"io.output_dir={tmp_path / 'out'}")
        assert rc == 2


class TestCalibrate:
    def test_writes_thresholds_for_all_models(self, ws, tmp_path):
        root, _, _ = ws
        out = tmp_path / "thr.json"
        rc = run(root, "calibrate", "--pairs", str(root / "pairs.json"),
                 "--out", str(out))
        assert rc == 0
        data = json.loads(out.read_text())
        assert set(data) == {"toy-conv-a", "toy-conv-b", "toy-conv-d"}
        for record in data.values():
            assert record["far"] == 0.5
            assert record["n_pairs"] == 4
            assert "warning" not in record

    def test_tau_matches_direct_oracle(self, ws, tmp_path):
        from dualcloak import cosine_similarity

        root, _, _ = ws
        out = tmp_path / "thr.json"
        assert run(root, "calibrate", "--pairs", str(root / "pairs.json"),
                   "--out", str(out)) == 0
        pairs = json.loads((root / "pairs.json").read_text())
        emb = get_embedder("toy-conv-d")
        scores = [
            cosine_similarity(emb.embed(load_image(a)), emb.embed(load_image(b)))
            for a, b in pairs
        ]
        data = json.loads(out.read_text())
        assert data["toy-conv-d"]["tau"] == pytest.approx(
            hazen_oracle(scores, 0.5), abs=1e-12
        )

    def test_short_pair_list_warns(self, ws, tmp_path, capsys):
        root, _, _ = ws
        out = tmp_path / "thr.json"
        rc = run(root, "calibrate", "--pairs", str(root / "pairs.json"),
                 "--out", str(out), "--set", "far=0.01")
        assert rc == 0
        data = json.loads(out.read_text())
        assert all("warning" in rec for rec in data.values())
        assert "pairs" in capsys.readouterr().err

    def test_far_one_gives_minimum_score(self, ws, tmp_path):
        from dualcloak import cosine_similarity

        root, _, _ = ws
        out = tmp_path / "thr.json"
        assert run(root, "calibrate", "--pairs", str(root / "pairs.json"),
                   "--out", str(out), "--set", "far=1.0") == 0
        pairs = json.loads((root / "pairs.json").read_text())
        emb = get_embedder("toy-conv-a")
        scores = [
            cosine_similarity(emb.embed(load_image(a)), emb.embed(load_image(b)))
            for a, b in pairs
        ]
        data = json.loads(out.read_text())
        assert data["toy-conv-a"]["tau"] == pytest.approx(min(scores), abs=1e-12)

    def test_missing_pairs_file(self, ws, tmp_path):
        root, _, _ = ws
        rc = run(root, "calibrate", "--pairs", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "t.json"))
        assert rc == 2

    def test_bad_pairs_payload(self, ws, tmp_path):
        root, _, _ = ws
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"a": 1}))
        rc = run(root, "calibrate", "--pairs", str(bad),
                 "--out", str(tmp_path / "t.json"))
        assert rc == 2


@pytest.fixture(scope="module")
def thresholds(ws, tmp_path_factory):
    root, _, _ = ws
    out = tmp_path_factory.mktemp("thr") / "thresholds.json"
    assert run(root, "calibrate", "--pairs", str(root / "pairs.json"),
               "--out", str(out)) == 0
    return out


class TestEvaluate:
    def test_identical_dirs_give_full_asr_and_zero_fid(self, ws, thresholds, tmp_path):
        root, _, _ = ws
        report_path = tmp_path / "evaluation.json"
        rc = run(root, "evaluate",
                 "--protected", str(root / "inputs"),
                 "--targets", str(root / "inputs"),
                 "--thresholds", str(thresholds),
                 "--out", str(report_path))
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["schema_version"] == 1
        assert report["n_images"] == 3
        assert [m["model"] for m in report["per_model"]] == [
            "toy-conv-d", "toy-conv-a", "toy-conv-b",
        ]
        assert all(m["asr"] == 1.0 for m in report["per_model"])
        # rank-deficient covariance (3 images) leaves sqrtm noise ~1e-6
        assert report["fid"] == pytest.approx(0.0, abs=1e-4)
        assert report["api_mean_confidence"] is None
        assert report["config_echo"]["mode"] == "ftm"

    def test_deterministic_report(self, ws, thresholds, tmp_path):
        root, _, _ = ws
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run(root, "evaluate",
                       "--protected", str(root / "inputs"),
                       "--targets", str(root / "targets"),
                       "--thresholds", str(thresholds),
                       "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unpaired_files_warn_and_fail(self, ws, thresholds, tmp_path, capsys):
        root, _, names = ws
        partial = tmp_path / "targets"
        partial.mkdir()
        shutil.copy(root / "targets" / names[0], partial / names[0])
        rc = run(root, "evaluate",
                 "--protected", str(root / "inputs"),
                 "--targets", str(partial),
                 "--thresholds", str(thresholds),
                 "--out", str(tmp_path / "r.json"))
        assert rc == 1
        err = capsys.readouterr().err
        assert names[1] in err and "excluded" in err
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["n_images"] == 1

    def test_unpaired_ok_with_allow_partial(self, ws, thresholds, tmp_path):
        root, _, names = ws
        partial = tmp_path / "targets"
        partial.mkdir()
        shutil.copy(root / "targets" / names[0], partial / names[0])
        rc = run(root, "evaluate", "--allow-partial",
                 "--protected", str(root / "inputs"),
                 "--targets", str(partial),
                 "--thresholds", str(thresholds),
                 "--out", str(tmp_path / "r.json"))
        assert rc == 0

    def test_empty_protected_dir_usage_error(self, ws, thresholds, tmp_path):
        root, _, _ = ws
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = run(root, "evaluate",
                 "--protected", str(empty),
                 "--targets", str(root / "targets"),
                 "--thresholds", str(thresholds))
        assert rc == 2

    def test_no_thresholds_anywhere_hints_calibrate(self, ws, tmp_path, capsys):
        root, _, _ = ws
        rc = run(root, "evaluate",
                 "--protected", str(root / "inputs"),
                 "--targets", str(root / "targets"),
                 "--out", str(tmp_path / "r.json"))
        assert rc == 2
        assert "calibrate" in capsys.readouterr().err

    def test_holdout_must_stay_out_of_ensemble(self, ws, thresholds, tmp_path):
        root, _, _ = ws
        rc = run(root, "evaluate",
                 "--set", "holdout=toy-conv-a",
                 "--protected", str(root / "inputs"),
                 "--targets", str(root / "targets"),
                 "--thresholds", str(thresholds))
        assert rc == 2

    def test_api_flag_queries_mock_service(self, ws, thresholds, tmp_path):
        root, _, _ = ws
        report_path = tmp_path / "r.json"
        with MockVerificationServer(get_embedder("toy-conv-d")) as server:
            rc = run(root, "evaluate",
                     "--protected", str(root / "inputs"),
                     "--targets", str(root / "inputs"),
                     "--thresholds", str(thresholds),
                     "--api", server.url,
                     "--out", str(report_path))
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["api_mean_confidence"] == pytest.approx(100.0, abs=1e-6)


class TestMaskPreview:
    def test_writes_four_consistent_files(self, ws, tmp_path):
        root, _, names = ws
        out = tmp_path / "mp"
        rc = run(root, "mask-preview", str(root / "inputs" / names[0]),
                 "--out-dir", str(out))
        assert rc == 0
        stem = names[0].removesuffix(".png")
        tex = load_mask(out / f"{stem}_texture.png")
        hair = load_mask(out / f"{stem}_hair.png")
        combined = load_mask(out / f"{stem}_mask.png")
        np.testing.assert_array_equal(combined, tex * hair)
        assert (out / f"{stem}_overlay.png").exists()

    def test_constant_image_all_black_texture(self, ws, tmp_path):
        root, _, _ = ws
        img_path = tmp_path / "flat.png"
        save_image(np.full((32, 32, 3), 0.5), img_path)
        ann_path = tmp_path / "flat_ann.png"
        save_label_map(np.full((32, 32), 17, dtype=np.uint8), ann_path)
        out = tmp_path / "mp"
        rc = run(root, "mask-preview", str(img_path),
                 "--annotation", str(ann_path), "--out-dir", str(out))
        assert rc == 0
        np.testing.assert_array_equal(load_mask(out / "flat_texture.png"), 0.0)
        np.testing.assert_array_equal(load_mask(out / "flat_mask.png"), 0.0)

    def test_all_hair_annotation_reduces_to_texture_mask(self, ws, tmp_path):
        root, _, names = ws
        ann_path = tmp_path / "allhair.png"
        save_label_map(np.full((32, 32), 17, dtype=np.uint8), ann_path)
        out = tmp_path / "mp"
        stem = names[0].removesuffix(".png")
        rc = run(root, "mask-preview", str(root / "inputs" / names[0]),
                 "--annotation", str(ann_path), "--out-dir", str(out))
        assert rc == 0
        np.testing.assert_array_equal(
            load_mask(out / f"{stem}_mask.png"),
            load_mask(out / f"{stem}_texture.png"),
        )

    def test_missing_annotation_usage_error(self, ws, tmp_path):
        root, _, _ = ws
        img_path = tmp_path / "orphan.png"
        save_image(np.full((32, 32, 3), 0.5), img_path)
        rc = run(root, "mask-preview", str(img_path), "--out-dir", str(tmp_path / "mp"))
        assert rc == 2


class TestGrid:
    def test_composes_rows(self, ws, tmp_path):
        root, _, _ = ws
        out = tmp_path / "grid.png"
        rc = run(root, "grid",
                 f"clean={root / 'inputs'}", f"target={root / 'targets'}",
                 "--out", str(out))
        assert rc == 0
        grid = load_image(out)
        assert grid.shape[0] > 2 * 32
        assert grid.shape[1] > 3 * 32

    def test_bad_row_spec(self, ws, tmp_path):
        root, _, _ = ws
        rc = run(root, "grid", "nodirhere", "--out", str(tmp_path / "g.png"))
        assert rc == 2

    def test_empty_dir_row(self, ws, tmp_path):
        root, _, _ = ws
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = run(root, "grid", f"row={empty}", "--out", str(tmp_path / "g.png"))
        assert rc == 2
