"""Single command-line entry point wiring the toolkit into reproducible runs.

Configuration precedence: flags > config file > defaults. Every run emits a
RunManifest; exit codes are 0 (ok), 2 (usage), 3 (backend), 4 (data/schema).
"""

import datetime
import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import click
from PIL import Image

from . import __version__
from .backends import BackendConfig, BackendError, HttpChatBackend, ReplayBackend, ReplayStore
from .datasets import (
    MosStrata,
    SchemaError,
    build_crp_samples,
    build_dpo_pairs,
    build_sft_decision,
    load_annotated_images,
    load_scored_crops,
    write_jsonl,
)
from .elements import elements_from_obj
from .evaluation import aggregate, emit_report, load_eval_records
from .objectives import DpoConfig, batch_mean, dpo_loss, gradient_check, load_logprob_records, reward_margin
from .pipeline import PipelineSettings, StageError, run_pipeline, write_bundle
from .prompts import PromptRegistry, default_prompts
from .render import png_bytes, render_enhancement
from .rules import ProposalConfig, generate_candidates
from .study import StudyItem, StudyService, VoteLog, create_study

EXIT_BACKEND = 3
EXIT_DATA = 4

DATA_ERRORS = (SchemaError, ValueError, KeyError, OSError)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str
    started_utc: str
    finished_utc: str


class _ManifestClock:
    def __init__(self, command: str, config: dict, seed: int | None, inputs: list[str]):
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = inputs
        self.started = _utcnow()

    def finish(self, outputs: list[str]) -> RunManifest:
        return RunManifest(
            command=self.command,
            config=self.config,
            seed=self.seed,
            inputs=self.inputs,
            outputs=outputs,
            version=__version__,
            started_utc=self.started,
            finished_utc=_utcnow(),
        )


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2)
        fh.write("\n")
    return path


def _fail(code: int, exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except BackendError as exc:
            _fail(EXIT_BACKEND, exc)
        except StageError as exc:
            _fail(EXIT_BACKEND, exc)
        except DATA_ERRORS as exc:
            _fail(EXIT_DATA, exc)

    return wrapper


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        value = json.load(fh)
    if not isinstance(value, dict):
        raise SchemaError("config file must hold a JSON object")
    return value


def _resolve(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _prompts(path: str | None) -> PromptRegistry:
    return PromptRegistry.from_file(path) if path else default_prompts()


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file; flags override it.")
@click.version_option(version=__version__, prog_name="crop")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Aesthetic-cropping toolkit: rule-based proposals, a pluggable VLM
    pipeline, dataset builders, preference-objective math, evaluation, and a
    pairwise preference study service."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)


def _backend_from_flags(cfg: dict, endpoint, model, temperature, top_p, retries, replay):
    backend_config = BackendConfig(
        endpoint=_resolve(endpoint, cfg, "endpoint", BackendConfig.endpoint),
        model=_resolve(model, cfg, "model", BackendConfig.model),
        temperature=float(_resolve(temperature, cfg, "temperature", BackendConfig.temperature)),
        top_p=float(_resolve(top_p, cfg, "top_p", BackendConfig.top_p)),
        max_retries=int(_resolve(retries, cfg, "max_retries", BackendConfig.max_retries)),
        timeout_s=float(_resolve(None, cfg, "timeout_s", BackendConfig.timeout_s)),
    )
    replay = _resolve(replay, cfg, "replay", "off")
    if replay == "off":
        return HttpChatBackend(backend_config)
    if replay.startswith("record:"):
        store = ReplayStore(Path(replay.split(":", 1)[1]))
        return ReplayBackend(store, ReplayBackend.RECORD, inner=HttpChatBackend(backend_config))
    if replay.startswith("play:"):
        store = ReplayStore(Path(replay.split(":", 1)[1]))
        return ReplayBackend(store, ReplayBackend.PLAY)
    raise click.UsageError(f"--replay must be off, record:<dir>, or play:<dir>; got {replay!r}")


@main.command()
@click.option("--image", "images", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False), help="Input image(s); repeatable.")
@click.option("--endpoint", envvar="CROP_ENDPOINT", default=None, help="Chat-completions endpoint URL.")
@click.option("--model", default=None, help="Model identifier sent to the backend.")
@click.option("--temperature", type=float, default=None, help="Sampling temperature (default 0.1).")
@click.option("--top-p", type=float, default=None, help="Nucleus sampling mass (default 0.95).")
@click.option("--seed", type=int, default=None, help="Seed for candidate padding and jitter.")
@click.option("--mode", type=click.Choice(["hybrid", "vlm-only", "baseline"]), default=None, help="Candidate assembly mode (default hybrid).")
@click.option("--replay", default=None, help="off | record:<dir> | play:<dir>.")
@click.option("--retries", type=int, default=None, help="Validation-retry budget per stage (default 2).")
@click.option("--prompts", "prompts_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Prompt registry JSON overriding the built-in prompts.")
@click.option("--workers", type=int, default=1, show_default=True, help="Cross-image parallelism bound.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
@handle_errors
def run(ctx, images, endpoint, model, temperature, top_p, seed, mode, replay, retries, prompts_path, workers, out_dir):
    """Run the full analysis-proposal-decision pipeline on image(s)."""
    cfg = ctx.obj["config"]
    seed = int(_resolve(seed, cfg, "seed", 0))
    mode = _resolve(mode, cfg, "mode", "hybrid")
    backend = _backend_from_flags(cfg, endpoint, model, temperature, top_p, retries, replay)
    prompt_registry = _prompts(_resolve(prompts_path, cfg, "prompts", None))
    proposal_cfg = ProposalConfig(rng_seed=seed)
    settings = PipelineSettings(mode=mode)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock(
        "run",
        {"mode": mode, "seed": seed, "replay": _resolve(replay, cfg, "replay", "off"), "workers": workers},
        seed,
        [str(p) for p in images],
    )

    def one(path: str) -> list[str]:
        image = Image.open(path)
        image.load()
        result = run_pipeline(image, backend, proposal_cfg, prompt_registry, settings)
        bundle_dir = out / Path(path).stem if len(images) > 1 else out
        written = write_bundle(result, bundle_dir, image=image)
        final = {"image": path, "final": {"id": result.final_id, "box": result.final_box.as_list()}}
        click.echo(json.dumps(final))
        return [str(p.relative_to(out)) for p in written]

    outputs: list[str] = []
    if workers > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for written in pool.map(one, images):
                outputs.extend(written)
    else:
        for path in images:
            outputs.extend(one(path))
    manifest_path = _write_manifest(out, clock.finish(outputs))
    click.echo(f"wrote {manifest_path}", err=True)


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--elements", "elements_path", required=True, type=click.Path(exists=True, dir_okay=False), help="JSON file holding {\"elements\": [...]}.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def enhance(ctx, image_path, elements_path, out_dir):
    """Render composition overlays onto an image."""
    with open(elements_path, encoding="utf-8") as fh:
        elements = elements_from_obj(json.load(fh))
    image = Image.open(image_path)
    image.load()
    enhanced = render_enhancement(image, elements)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("enhance", {}, None, [image_path, elements_path])
    target = out / "enhanced.png"
    target.write_bytes(png_bytes(enhanced))
    _write_manifest(out, clock.finish(["enhanced.png"]))
    click.echo(str(target))


@main.command()
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False), help="CADB-style JSONL.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def propose(ctx, annotations, seed, out_dir):
    """Generate rule-engine candidate crops for annotated images."""
    cfg = ctx.obj["config"]
    seed = int(_resolve(seed, cfg, "seed", 0))
    proposal_cfg = ProposalConfig(rng_seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("propose", {"seed": seed}, seed, [annotations])
    records = []
    for annotated in load_annotated_images(annotations):
        candidates = generate_candidates(list(annotated.elements), annotated.dims, proposal_cfg)
        records.append({"image": annotated.image, **json.loads(candidates.to_json())})
    write_jsonl(out / "candidates.jsonl", records)
    _write_manifest(out, clock.finish(["candidates.jsonl"]))
    click.echo(f"{len(records)} candidate sets -> {out / 'candidates.jsonl'}")


@main.command("build-crp")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False), help="CADB-style JSONL.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def build_crp(ctx, annotations, seed, out_dir):
    """Build analysis + proposal dialogue corpora from annotations."""
    cfg = ctx.obj["config"]
    seed = int(_resolve(seed, cfg, "seed", 0))
    proposal_cfg = ProposalConfig(rng_seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("build-crp", {"seed": seed}, seed, [annotations])
    analysis_rows, proposal_rows = [], []
    for annotated in load_annotated_images(annotations):
        analysis, proposal = build_crp_samples(annotated, proposal_cfg)
        analysis_rows.append(analysis.to_dict())
        proposal_rows.append(proposal.to_dict())
    write_jsonl(out / "crp_analysis.jsonl", analysis_rows)
    write_jsonl(out / "crp_proposal.jsonl", proposal_rows)
    _write_manifest(out, clock.finish(["crp_analysis.jsonl", "crp_proposal.jsonl"]))
    click.echo(f"{len(analysis_rows)} images -> {out}")


@main.command("build-sft")
@click.option("--scored", required=True, type=click.Path(exists=True, dir_okay=False), help="GAICD-style JSONL of MOS-scored crops.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def build_sft(ctx, scored, seed, out_dir):
    """Build decision-stage SFT dialogue samples."""
    cfg = ctx.obj["config"]
    seed = int(_resolve(seed, cfg, "seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("build-sft", {"seed": seed}, seed, [scored])
    rows = []
    for i, (image, _dims, crops) in enumerate(load_scored_crops(scored)):
        rows.append(build_sft_decision(image, crops, MosStrata(), seed=seed + i).to_dict())
    write_jsonl(out / "sft.jsonl", rows)
    _write_manifest(out, clock.finish(["sft.jsonl"]))
    click.echo(f"{len(rows)} samples -> {out / 'sft.jsonl'}")


@main.command("build-dpo")
@click.option("--scored", required=True, type=click.Path(exists=True, dir_okay=False), help="GAICD-style JSONL of MOS-scored crops.")
@click.option("--pairs-per-image", "k", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def build_dpo(ctx, scored, k, seed, out_dir):
    """Build DPO preference pairs from MOS-scored crops."""
    cfg = ctx.obj["config"]
    seed = int(_resolve(seed, cfg, "seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("build-dpo", {"seed": seed, "pairs_per_image": k}, seed, [scored])
    rows = []
    for i, (image, _dims, crops) in enumerate(load_scored_crops(scored)):
        rows.extend(p.to_dict() for p in build_dpo_pairs(image, crops, MosStrata(), k=k, seed=seed + i))
    write_jsonl(out / "dpo.jsonl", rows)
    _write_manifest(out, clock.finish(["dpo.jsonl"]))
    click.echo(f"{len(rows)} pairs -> {out / 'dpo.jsonl'}")


@main.command("eval")
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False), help="JSONL {image, boxes}.")
@click.option("--ground-truth", "gt", required=True, type=click.Path(exists=True, dir_okay=False), help="JSONL with crops (ranked) or boxes per image.")
@click.option("--epsilon", type=float, default=0.85, show_default=True, help="IoU equivalence threshold (strict exceedance).")
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "text"]), default="text", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def eval_cmd(ctx, predictions, gt, epsilon, fmt, out_dir):
    """Evaluate predicted crops against ground truth."""
    records = load_eval_records(predictions, gt)
    report = aggregate(records, epsilon=epsilon)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("eval", {"epsilon": epsilon, "format": fmt}, None, [predictions, gt])
    name = f"report.{'txt' if fmt == 'text' else fmt}"
    payload = emit_report(report, fmt)
    (out / name).write_bytes(payload)
    (out / "report.json").write_bytes(emit_report(report, "json"))
    _write_manifest(out, clock.finish(sorted({name, "report.json"})))
    click.echo(payload.decode("utf-8"), nl=False)


@main.command("loss-check")
@click.option("--records", required=True, type=click.Path(exists=True, dir_okay=False), help="JSONL {pair_id, policy_w, ref_w, policy_l, ref_l}.")
@click.option("--beta", type=float, default=0.2, show_default=True)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def loss_check(ctx, records, beta, out_dir):
    """Compute preference losses and a finite-difference gradient report."""
    cfg = DpoConfig(beta=beta)
    pairs = load_logprob_records(records)
    rows = []
    losses = []
    worst = 0.0
    for pair_id, pair in pairs:
        loss = dpo_loss(pair, cfg)
        err = gradient_check(pair, cfg)
        worst = max(worst, err)
        losses.append(loss)
        rows.append(
            {
                "pair_id": pair_id,
                "reward_margin": reward_margin(pair, cfg),
                "dpo_loss": loss,
                "gradient_max_rel_error": err,
            }
        )
    clock = _ManifestClock("loss-check", {"beta": beta}, None, [records])
    payload = {
        "beta": beta,
        "pairs": rows,
        "batch_mean_loss": batch_mean(losses),
        "gradient_check_max_rel_error": worst,
        "gradient_check_pass": worst <= 1e-5,
    }
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss_report.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        _write_manifest(out, clock.finish(["loss_report.json"]))
    else:
        payload["manifest"] = asdict(clock.finish([]))
    click.echo(json.dumps(payload, indent=2))


@main.command("build-study")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False), help="JSON {images, methods: {name: {image: url}}, seed}.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def build_study(ctx, spec_path, out_dir):
    """Create an anonymized study item table from per-method crop outputs."""
    with open(spec_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    seed = int(spec.get("seed", 0))
    items = create_study(spec["images"], spec["methods"], seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _ManifestClock("build-study", {"seed": seed}, seed, [spec_path])
    with open(out / "study.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": seed,
                "items": [
                    {
                        "item_id": i.item_id,
                        "image_id": i.image_id,
                        "pair": list(i.pair),
                        "left_method": i.left_method,
                        "right_method": i.right_method,
                        "left_crop": i.left_crop,
                        "right_crop": i.right_crop,
                    }
                    for i in items
                ],
            },
            fh,
            indent=2,
        )
    _write_manifest(out, clock.finish(["study.json"]))
    click.echo(f"{len(items)} items -> {out / 'study.json'}")


@main.command("serve-study")
@click.option("--study", "study_path", required=True, type=click.Path(exists=True, dir_okay=False), help="study.json from build-study.")
@click.option("--votes", "votes_path", required=True, type=click.Path(dir_okay=False), help="Append-only JSONL vote log (created if missing).")
@click.option("--crops-dir", type=click.Path(file_okay=False, exists=True), default=None, help="Directory of crop PNGs served at /static.")
@click.option("--ui-dir", type=click.Path(file_okay=False, exists=True), default=None, help="Built study UI bundle served at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--operator", is_flag=True, default=False, help="Expose GET /api/results.")
@click.pass_context
@handle_errors
def serve_study(ctx, study_path, votes_path, crops_dir, ui_dir, host, port, operator):
    """Serve the pairwise preference study over HTTP."""
    import uvicorn

    from .study_http import create_app

    service = load_study_service(study_path, votes_path)
    app = create_app(service, operator=operator, crops_dir=crops_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def load_study_service(study_path: str | Path, votes_path: str | Path) -> StudyService:
    with open(study_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    items = [
        StudyItem(
            item_id=r["item_id"],
            image_id=r["image_id"],
            pair=tuple(r["pair"]),
            left_method=r["left_method"],
            right_method=r["right_method"],
            left_crop=r["left_crop"],
            right_crop=r["right_crop"],
        )
        for r in payload["items"]
    ]
    return StudyService(items=items, log=VoteLog(votes_path), seed=int(payload.get("seed", 0)))


if __name__ == "__main__":
    main()
