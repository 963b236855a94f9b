"""Single command-line entry point: ``ocsod``.

Exit codes: 0 success, 1 user/config error, 2 runtime/backend error.
With --json, errors are emitted to stderr as one JSON object.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import __version__
from .agent import AgentConfig, prompt_versions
from .annotate import (
    FilterRules,
    load_blocklist,
    load_candidates,
    load_verified_rows,
    run_categorize_stage,
    run_filter_stage,
    run_generate_stage,
    run_verify_stage,
    split_dataset,
)
from .bench import (
    RunConfig,
    eval_external,
    load_run_config,
    run_benchmark,
    sweep_k,
    write_report_files,
)
from .clients import ClientSettings, ScriptedMllm
from .core import (
    BinaryMask,
    SaliencyMap,
    load_manifest,
    rle_decode,
    rle_encode,
    save_manifest,
)
from .curation import CurationStore, create_app, export_accepted_manifest
from .errors import ManifestError, DuplicateId, MissingPrediction, OcsodError
from .maskops import RenderedImage, extract_contour, render_overlay
from .metrics import e_measure, f_measure_max, format_score, g_iou, c_iou, s_measure, EvalPair
from .core import ObservationMode

USER_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    ValueError,
    ManifestError,
    DuplicateId,
    KeyError,
)


def _emit_error(message: str, kind: str, as_json: bool) -> None:
    if as_json:
        sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    else:
        sys.stderr.write(f"ocsod: error: {message}\n")


def handle_errors(fn):
    @functools.wraps(fn)
    @click.pass_context
    def wrapper(ctx, *args, **kwargs):
        as_json = bool(ctx.obj and ctx.obj.get("json"))
        try:
            return ctx.invoke(fn, *args, **kwargs)
        except USER_ERRORS as exc:
            _emit_error(str(exc), "user", as_json)
            ctx.exit(1)
        except OcsodError as exc:
            _emit_error(str(exc), "runtime", as_json)
            ctx.exit(2)

    return wrapper


def _version_string() -> str:
    assets = ", ".join(f"{name}={v}" for name, v in sorted(prompt_versions().items()))
    return f"ocsod {__version__} (prompt assets: {assets})"


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(_version_string())
    ctx.exit(0)


@click.group()
@click.option("--json", "json_errors", is_flag=True, help="Machine-readable errors on stderr.")
@click.option(
    "--version", is_flag=True, callback=_print_version, expose_value=False, is_eager=True
)
@click.pass_context
def main(ctx, json_errors):
    """Observer-centric salient object detection toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_errors


# --- mask utilities ----------------------------------------------------------


@main.group()
def mask():
    """Mask encode/decode/render utilities."""


def _load_mask_png(path: str) -> BinaryMask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 127)


def _load_mask_any(path: str) -> BinaryMask:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return rle_decode([int(c) for c in obj["counts"]], int(obj["w"]), int(obj["h"]))
    return _load_mask_png(path)


@mask.command("encode")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def mask_encode(in_path):
    """PNG mask -> RLE JSON on stdout."""
    m = _load_mask_png(in_path)
    click.echo(json.dumps({"w": m.width, "h": m.height, "counts": rle_encode(m)}))


@mask.command("decode")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def mask_decode(in_path, out_path):
    """RLE JSON -> PNG mask file."""
    with open(in_path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    m = rle_decode([int(c) for c in obj["counts"]], int(obj["w"]), int(obj["h"]))
    Image.fromarray((m.bits * np.uint8(255))).save(out_path, format="PNG")
    click.echo(out_path)


@mask.command("render")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--box", "boxes", multiple=True, help="x0,y0,x1,y1 (repeatable).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def mask_render(image_path, mask_path, boxes, out_path):
    """Overlay green boxes and the mask's red contour onto an image."""
    from .core import BoundingBox

    image = RenderedImage.from_file(image_path)
    parsed_boxes = []
    for spec_str in boxes:
        parts = [int(p) for p in spec_str.split(",")]
        if len(parts) != 4:
            raise ValueError(f"--box expects x0,y0,x1,y1, got {spec_str!r}")
        parsed_boxes.append(BoundingBox(*parts))
    contour = None
    if mask_path:
        contour = extract_contour(_load_mask_any(mask_path))
    rendered = render_overlay(image, tuple(parsed_boxes), contour)
    rendered.to_png(out_path)
    click.echo(out_path)


# --- metrics ------------------------------------------------------------------


@main.group()
def metrics():
    """Metric evaluation on individual files."""


@metrics.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def metrics_eval(pred_path, gt_path):
    """All five metrics for one prediction/ground-truth pair."""
    with Image.open(pred_path) as im:
        pred = SaliencyMap(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)
    gt = _load_mask_png(gt_path)
    pair = EvalPair("cli", ObservationMode.FREE_VIEWING, pred, gt)
    scores = {
        "g_iou": g_iou([pair]),
        "c_iou": c_iou([pair]),
        "s_m": s_measure(pred, gt),
        "f_m": f_measure_max(pred, gt),
        "e_m": e_measure(pred, gt),
    }
    out = {k: round(v, 6) for k, v in scores.items()}
    out["formatted"] = {k: format_score(v) for k, v in scores.items()}
    click.echo(json.dumps(out, indent=2, sort_keys=True))


# --- annotation pipeline ----------------------------------------------------------


@main.group()
def annotate():
    """The five-step dataset construction pipeline."""


class _LazyImages(dict):
    def __init__(self, root: Path):
        super().__init__()
        self.root = root

    def __missing__(self, key: str) -> RenderedImage:
        path = Path(key)
        if not path.is_absolute():
            path = self.root / path
        img = RenderedImage.from_file(path)
        self[key] = img
        return img


def _annotation_mllm(backend: str, settings_path: str | None):
    if backend.startswith("scripted:"):
        with open(backend.split(":", 1)[1], "r", encoding="utf-8") as fh:
            replies = json.load(fh)
        if not isinstance(replies, list):
            raise ValueError("scripted annotation backend expects a JSON list of replies")
        return ScriptedMllm(replies)
    if backend == "http":
        from .clients import HttpMllmClient

        return HttpMllmClient(ClientSettings.from_sources(settings_path))
    raise ValueError(f"unknown annotation backend {backend!r}")


@annotate.command("filter")
@click.option("--candidates", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--min-area-ratio", default=0.001, show_default=True)
@click.option("--cluster-threshold", default=6, show_default=True)
@click.option("--blocklist", "blocklist_path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def annotate_filter(candidates, out_path, min_area_ratio, cluster_threshold, blocklist_path):
    """Step 1: rule-based filtering -> filtered.jsonl."""
    records = load_candidates(candidates)
    rules = FilterRules(
        min_area_ratio=min_area_ratio,
        blocklist=load_blocklist(blocklist_path),
        cluster_threshold=cluster_threshold,
    )
    kept = run_filter_stage(records, rules, out_path)
    click.echo(json.dumps({"total": len(records), "kept": len(kept), "out": out_path}))


@annotate.command("categorize")
@click.option("--candidates", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--filtered", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--backend", default="http", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--image-root", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--config", "settings_path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def annotate_categorize(candidates, filtered, out_path, backend, seed, image_root, settings_path):
    """Step 2: observation-mode assignment -> categorized.jsonl."""
    records = load_candidates(candidates)
    kept_ids = _kept_ids(filtered)
    kept = [r for r in records if r.record_id in kept_ids]
    mllm = _annotation_mllm(backend, settings_path)
    modes = run_categorize_stage(kept, _LazyImages(Path(image_root)), mllm, seed, out_path)
    counts: dict[str, int] = {}
    for mode in modes.values():
        counts[mode.value] = counts.get(mode.value, 0) + 1
    click.echo(json.dumps({"assigned": len(modes), "modes": counts, "out": out_path}))


def _kept_ids(filtered_path: str) -> set[str]:
    kept = set()
    with open(filtered_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                row = json.loads(raw)
                if row.get("keep"):
                    kept.add(row["record_id"])
    return kept


@annotate.command("generate")
@click.option("--candidates", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--categorized", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--backend", default="http", show_default=True)
@click.option("--image-root", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--config", "settings_path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def annotate_generate(candidates, categorized, out_path, backend, image_root, settings_path):
    """Step 3: instruction generation -> generated.jsonl."""
    records = load_candidates(candidates)
    modes = {}
    with open(categorized, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                row = json.loads(raw)
                modes[row["record_id"]] = ObservationMode(row["mode"])
    target = [r for r in records if r.record_id in modes]
    mllm = _annotation_mllm(backend, settings_path)
    samples = run_generate_stage(target, modes, _LazyImages(Path(image_root)), mllm, out_path)
    click.echo(json.dumps({"generated": len(samples), "out": out_path}))


@annotate.command("verify")
@click.option("--candidates", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--generated", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--backend", default="http", show_default=True)
@click.option("--image-root", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--auto-accept-no", is_flag=True, help="Skip curation for 'No' verdicts.")
@click.option("--config", "settings_path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def annotate_verify(candidates, generated, out_path, backend, image_root, auto_accept_no, settings_path):
    """Step 4: automated verification -> verified.jsonl."""
    from .annotate import Checkpoint
    from .core import Instruction, Sample

    records = {r.record_id: r for r in load_candidates(candidates)}
    samples = []
    gen = Checkpoint(generated)
    for record_id in gen.rows:
        row = gen.rows[record_id]
        rec = records.get(record_id)
        if rec is None:
            continue
        mode = ObservationMode(row["mode"])
        samples.append(
            Sample(
                sample_id=record_id,
                image_ref=rec.image_ref,
                mode=mode,
                instruction=Instruction(mode, row["subject_text"], row["instruction"]),
                gt_mask=rec.mask,
                source_dataset=rec.source_dataset,
                object_name=rec.category,
            )
        )
    mllm = _annotation_mllm(backend, settings_path)
    rows = run_verify_stage(
        samples, _LazyImages(Path(image_root)), mllm, out_path, auto_accept_no
    )
    routed: dict[str, int] = {}
    for row in rows:
        routed[row["routed"]] = routed.get(row["routed"], 0) + 1
    click.echo(json.dumps({"verified": len(rows), "routed": routed, "out": out_path}))


@annotate.command("split")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ratios", default="0.879,0.049,0.072", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def annotate_split(manifest, ratios, seed, out_dir):
    """Deterministic image-grouped train/val/test split."""
    parts = tuple(float(r) for r in ratios.split(","))
    if len(parts) != 3:
        raise ValueError("--ratios expects three comma-separated numbers")
    sample_set = load_manifest(manifest)
    result = split_dataset(sample_set.samples, parts, seed)  # type: ignore[arg-type]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(result.train.samples, out / "train.jsonl")
    save_manifest(result.val.samples, out / "val.jsonl")
    save_manifest(result.test.samples, out / "test.jsonl")
    per_mode = {}
    for mode, samples in result.test_by_mode().items():
        save_manifest(samples, out / f"test_{mode.value}.jsonl")
        per_mode[mode.value] = len(samples)
    click.echo(
        json.dumps(
            {
                "train": len(result.train),
                "val": len(result.val),
                "test": len(result.test),
                "test_by_mode": per_mode,
                "out_dir": str(out),
            }
        )
    )


# --- curation service -----------------------------------------------------------


@main.group()
def curate():
    """Human-in-the-loop curation service."""


@curate.command("serve")
@click.option("--store", "store_dir", required=True, type=click.Path(file_okay=False))
@click.option("--queue", "queue_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--port", default=8787, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--image-root", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--ui-dir", type=click.Path(file_okay=False), help="Built UI bundle to serve at /.")
@click.option("--lease-ttl", default=600.0, show_default=True, help="Lease TTL in seconds.")
@handle_errors
def curate_serve(store_dir, queue_path, port, host, image_root, ui_dir, lease_ttl):
    """Serve the review queue API (and the UI bundle when present)."""
    import uvicorn

    store = CurationStore(store_dir, lease_ttl_s=lease_ttl)
    if queue_path:
        added = store.ingest(load_verified_rows(queue_path), image_root=image_root)
        click.echo(f"ingested {added} new items from {queue_path}")
    if ui_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if default_ui.is_dir():
            ui_dir = str(default_ui)
    app = create_app(store, ui_dir)
    click.echo(f"curation service on http://{host}:{port} (store: {store_dir})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@curate.command("export")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def curate_export(store_dir, out_path):
    """Export accepted + edited items as a core manifest."""
    store = CurationStore(store_dir)
    n = export_accepted_manifest(store, out_path)
    click.echo(json.dumps({"exported": n, "out": out_path}))


# --- benchmark runner --------------------------------------------------------------


@main.group()
def bench():
    """Benchmark runs and report generation."""


def _apply_run_overrides(config: RunConfig, manifest, out_dir, mllm, segmentor, k_max) -> RunConfig:
    from dataclasses import replace

    if manifest:
        config = replace(config, manifest=Path(manifest))
    if out_dir:
        config = replace(config, output_dir=Path(out_dir))
    if mllm:
        config = replace(config, mllm_backend=mllm)
    if segmentor:
        config = replace(config, segmentor_backend=segmentor)
    if k_max:
        config = replace(config, agent=AgentConfig(**{**config.agent.__dict__, "k_max": k_max}))
    return config


@bench.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), help="Override config.")
@click.option("--out-dir", type=click.Path(file_okay=False), help="Override config.")
@click.option("--mllm", help="Override MLLM backend id.")
@click.option("--segmentor", help="Override segmentor backend id.")
@click.option("--k-max", type=int, help="Override agent k_max.")
@handle_errors
def bench_run(config_path, manifest, out_dir, mllm, segmentor, k_max):
    """Run the agent over a manifest and write report.csv / report.md."""
    config = _apply_run_overrides(
        load_run_config(config_path), manifest, out_dir, mllm, segmentor, k_max
    )
    result = run_benchmark(config)
    click.echo(result.report.to_markdown(), nl=False)
    if result.failures:
        click.echo(f"failed samples: {len(result.failures)} (see failures.json)", err=True)


@bench.command("eval-external")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preds", "preds_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--missing", type=click.Choice(["zero", "fatal"]), default="zero", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False))
@handle_errors
def bench_eval_external(manifest, preds_dir, missing, out_dir):
    """Score third-party predictions (PNG or RLE JSON per sample_id)."""
    try:
        report = eval_external(manifest, preds_dir, missing, out_dir)
    except MissingPrediction as exc:
        _emit_error(str(exc), "runtime", False)
        raise SystemExit(2)
    click.echo(report.to_markdown(), nl=False)


@bench.command("sweep-k")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--from", "k_from", default=1, show_default=True, type=int)
@click.option("--to", "k_to", default=5, show_default=True, type=int)
@click.option("--out-dir", type=click.Path(file_okay=False), help="Override config.")
@handle_errors
def bench_sweep_k(config_path, k_from, k_to, out_dir):
    """One run per k_max in [from, to]; writes per-k reports and sweep.csv."""
    config = load_run_config(config_path)
    if out_dir:
        from dataclasses import replace

        config = replace(config, output_dir=Path(out_dir))
    reports = sweep_k(config, k_from, k_to)
    lines = ["| k | gIoU | cIoU |", "|---|---|---|"]
    for k in sorted(reports):
        row = reports[k].row("overall")
        lines.append(f"| {k} | {format_score(row.g_iou)} | {format_score(row.c_iou)} |")
    click.echo("\n".join(lines))


@bench.command("report")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--traces", "traces_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False))
@handle_errors
def bench_report(manifest, traces_dir, out_dir):
    """Recompute the report from a saved trace archive."""
    sample_set = load_manifest(manifest)
    pairs = []
    for sample in sample_set:
        trace_path = Path(traces_dir) / f"{sample.sample_id}.json"
        if trace_path.exists():
            with open(trace_path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
            fm = obj["final_mask"]
            pred = rle_decode([int(c) for c in fm["counts"]], int(fm["w"]), int(fm["h"]))
        else:
            pred = BinaryMask.zeros(sample.gt_mask.width, sample.gt_mask.height)
        pairs.append(
            EvalPair(sample.sample_id, sample.mode, SaliencyMap.from_mask(pred), sample.gt_mask)
        )
    from .metrics import aggregate_report

    report = aggregate_report(pairs)
    if out_dir:
        write_report_files(report, out_dir)
    click.echo(report.to_markdown(), nl=False)


if __name__ == "__main__":
    main()
