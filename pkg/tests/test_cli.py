import hashlib
import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner
from PIL import Image

from cropkit.backends import ReplayBackend, ReplayStore, ScriptedBackend
from cropkit.cli import main
from cropkit.datasets import write_jsonl
from cropkit.pipeline import run_pipeline
from cropkit.rules import ProposalConfig


@pytest.fixture
def runner():
    return CliRunner()


def write_png(path: Path, size=(120, 100)) -> Path:
    img = Image.new("RGB", size)
    px = img.load()
    for y in range(size[1]):
        for x in range(size[0]):
            px[x, y] = ((x * 3) % 256, (y * 7) % 256, 60)
    img.save(path, format="PNG")
    return path


def out_digests(out: Path) -> dict:
    digests = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            digests[str(p.relative_to(out))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digests


SCRIPTED_RESPONSES = {
    "analysis": '{"elements":[{"category":"center","box":[40,30,80,70]}]}',
    "proposal": "[[10,10,110,90]]",
    "decision": "B",
}


class TestHelp:
    def test_toplevel_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for sub in [
            "run",
            "enhance",
            "propose",
            "build-crp",
            "build-sft",
            "build-dpo",
            "eval",
            "loss-check",
            "build-study",
            "serve-study",
        ]:
            assert sub in result.output

    def test_run_flags_enumerated(self, runner):
        result = runner.invoke(main, ["run", "--help"])
        assert result.exit_code == 0
        for flag in [
            "--image",
            "--endpoint",
            "--model",
            "--temperature",
            "--top-p",
            "--seed",
            "--mode",
            "--replay",
            "--retries",
            "--prompts",
            "--workers",
            "--out",
        ]:
            assert flag in result.output


class TestEvalCommand:
    def make_fixtures(self, tmp_path):
        preds = []
        gt = []
        for i in range(10):
            box = [float(i), 0.0, 50.0 + i, 40.0]
            crops = [{"box": [float(i) + j, float(j), 50.0 + i + j, 40.0 + j], "mos": 4.0 - 0.2 * j} for j in range(10)]
            crops[0] = {"box": box, "mos": 4.9}
            preds.append({"image": f"r{i}", "boxes": [box]})
            gt.append({"image": f"r{i}", "width": 200, "height": 200, "crops": crops})
        for i in range(10):
            box = [float(i), 5.0, 60.0 + i, 55.0]
            preds.append({"image": f"b{i}", "boxes": [box]})
            gt.append({"image": f"b{i}", "width": 200, "height": 200, "boxes": [box]})
        pred_path = tmp_path / "preds.jsonl"
        gt_path = tmp_path / "gt.jsonl"
        write_jsonl(pred_path, preds)
        write_jsonl(gt_path, gt)
        return pred_path, gt_path

    def test_self_consistency(self, runner, tmp_path):
        pred_path, gt_path = self.make_fixtures(tmp_path)
        out = tmp_path / "out"
        result = runner.invoke(
            main,
            ["eval", "--predictions", str(pred_path), "--ground-truth", str(gt_path), "--format", "json", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert report["acc_1_5"] == 100.0
        assert report["acc_1_10"] == 100.0
        assert report["mean_iou"] == 1.0
        assert report["mean_bde"] == 0.0
        assert (out / "manifest.json").exists()

    def test_schema_error_exit_4(self, runner, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        gt = tmp_path / "gt.jsonl"
        gt.write_text("{}\n")
        out = tmp_path / "out"
        result = runner.invoke(
            main,
            ["eval", "--predictions", str(bad), "--ground-truth", str(gt), "--out", str(out)],
        )
        assert result.exit_code == 4
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert err["error"]["type"] == "SchemaError"

    def test_missing_file_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["eval", "--predictions", "nope.jsonl", "--ground-truth", "nope.jsonl", "--out", str(tmp_path)],
        )
        assert result.exit_code == 2


class TestLossCheck:
    def test_policy_equals_reference_gives_ln2(self, runner, tmp_path):
        records = tmp_path / "lp.jsonl"
        write_jsonl(
            records,
            [
                {
                    "pair_id": f"p{i}",
                    "policy_w": [-0.4, -0.8],
                    "ref_w": [-0.4, -0.8],
                    "policy_l": [-1.1],
                    "ref_l": [-1.1],
                }
                for i in range(3)
            ],
        )
        result = runner.invoke(main, ["loss-check", "--records", str(records)])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        for row in payload["pairs"]:
            assert row["dpo_loss"] == pytest.approx(math.log(2), abs=1e-12)
        assert payload["batch_mean_loss"] == pytest.approx(math.log(2), abs=1e-12)
        assert payload["gradient_check_pass"] is True
        assert "manifest" in payload

    def test_out_dir_writes_report_and_manifest(self, runner, tmp_path):
        records = tmp_path / "lp.jsonl"
        write_jsonl(
            records,
            [{"pair_id": "p", "policy_w": [-0.5], "ref_w": [-1.0], "policy_l": [-1.5], "ref_l": [-0.2]}],
        )
        out = tmp_path / "out"
        result = runner.invoke(main, ["loss-check", "--records", str(records), "--out", str(out)])
        assert result.exit_code == 0
        assert (out / "loss_report.json").exists()
        assert (out / "manifest.json").exists()


class TestBuilders:
    def test_build_crp_and_propose(self, runner, tmp_path):
        annotations = tmp_path / "annot.jsonl"
        write_jsonl(
            annotations,
            [
                {
                    "image": "a.jpg",
                    "width": 300,
                    "height": 300,
                    "elements": [
                        {"category": "center", "boxes": [[120, 120, 180, 180]]},
                        {"category": "horizontal", "boxes": [[0, 140, 300, 160]]},
                    ],
                }
            ],
        )
        out = tmp_path / "crp"
        result = runner.invoke(main, ["build-crp", "--annotations", str(annotations), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert len((out / "crp_analysis.jsonl").read_text().splitlines()) == 1
        assert len((out / "crp_proposal.jsonl").read_text().splitlines()) == 1

        out2 = tmp_path / "proposals"
        result = runner.invoke(main, ["propose", "--annotations", str(annotations), "--out", str(out2), "--seed", "1"])
        assert result.exit_code == 0, result.output
        row = json.loads((out2 / "candidates.jsonl").read_text())
        assert len(row["candidates"]) == 8

    def test_build_sft_and_dpo(self, runner, tmp_path):
        scored = tmp_path / "scored.jsonl"
        rows = []
        for i in range(5):
            crops = [
                {"box": [j, j, j + 60, j + 60], "mos": 1.0 + (j * 7 % 40) / 10.0}
                for j in range(20)
            ]
            rows.append({"image": f"img-{i}", "width": 200, "height": 200, "crops": crops})
        write_jsonl(scored, rows)

        out_sft = tmp_path / "sft"
        result = runner.invoke(main, ["build-sft", "--scored", str(scored), "--out", str(out_sft), "--seed", "3"])
        assert result.exit_code == 0, result.output
        assert len((out_sft / "sft.jsonl").read_text().splitlines()) == 5

        out_dpo = tmp_path / "dpo"
        result = runner.invoke(
            main,
            ["build-dpo", "--scored", str(scored), "--pairs-per-image", "16", "--out", str(out_dpo), "--seed", "3"],
        )
        assert result.exit_code == 0, result.output
        lines = (out_dpo / "dpo.jsonl").read_text().splitlines()
        assert len(lines) == 80
        for line in lines:
            record = json.loads(line)
            assert record["mos_chosen"] > record["mos_rejected"]


class TestRunReplay:
    def record_store(self, image_path: Path, store_dir: Path, seed: int):
        image = Image.open(image_path)
        image.load()
        recorder = ReplayBackend(
            ReplayStore(store_dir), ReplayBackend.RECORD, inner=ScriptedBackend(SCRIPTED_RESPONSES)
        )
        run_pipeline(image, recorder, ProposalConfig(rng_seed=seed))

    def test_replay_twice_identical_digests(self, runner, tmp_path):
        image_path = write_png(tmp_path / "photo.png")
        store = tmp_path / "store"
        self.record_store(image_path, store, seed=9)

        digests = []
        for name in ("out1", "out2"):
            out = tmp_path / name
            result = runner.invoke(
                main,
                [
                    "run",
                    "--image", str(image_path),
                    "--replay", f"play:{store}",
                    "--seed", "9",
                    "--out", str(out),
                ],
            )
            assert result.exit_code == 0, result.output
            assert (out / "manifest.json").exists()
            digests.append(out_digests(out))
        assert digests[0] == digests[1]
        assert any(name.startswith("thumbs/") for name in digests[0])

    def test_replay_miss_exit_3(self, runner, tmp_path):
        image_path = write_png(tmp_path / "photo.png")
        store = tmp_path / "empty-store"
        store.mkdir()
        out = tmp_path / "out"
        result = runner.invoke(
            main,
            ["run", "--image", str(image_path), "--replay", f"play:{store}", "--out", str(out)],
        )
        assert result.exit_code == 3
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert err["error"]["type"] == "ReplayMissError"

    def test_bad_replay_flag_usage_error(self, runner, tmp_path):
        image_path = write_png(tmp_path / "photo.png")
        result = runner.invoke(
            main,
            ["run", "--image", str(image_path), "--replay", "stream:/x", "--out", str(tmp_path / "o")],
        )
        assert result.exit_code == 2


class TestEnhanceCommand:
    def test_enhance_writes_png(self, runner, tmp_path):
        image_path = write_png(tmp_path / "photo.png")
        elements_path = tmp_path / "elements.json"
        elements_path.write_text(json.dumps({"elements": [{"category": "center", "box": [30, 30, 90, 70]}]}))
        out = tmp_path / "out"
        result = runner.invoke(
            main,
            ["enhance", "--image", str(image_path), "--elements", str(elements_path), "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert (out / "enhanced.png").exists()
        assert (out / "manifest.json").exists()


class TestConfigPrecedence:
    def test_config_file_supplies_seed_flag_overrides(self, runner, tmp_path):
        annotations = tmp_path / "annot.jsonl"
        write_jsonl(
            annotations,
            [{"image": "a.jpg", "width": 300, "height": 300, "elements": [{"category": "center", "boxes": [[100, 100, 200, 200]]}]}],
        )
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"seed": 5}))

        out_cfg = tmp_path / "via-config"
        runner.invoke(main, ["--config", str(config), "propose", "--annotations", str(annotations), "--out", str(out_cfg)])
        out_flag = tmp_path / "via-flag"
        runner.invoke(main, ["--config", str(config), "propose", "--annotations", str(annotations), "--seed", "5", "--out", str(out_flag)])
        a = (out_cfg / "candidates.jsonl").read_text()
        b = (out_flag / "candidates.jsonl").read_text()
        assert a == b
        manifest = json.loads((out_cfg / "manifest.json").read_text())
        assert manifest["seed"] == 5
