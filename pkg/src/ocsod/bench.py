"""End-to-end evaluation driver: run the agent (or load external
predictions) over a manifest, compute the five metrics per mode, and emit
table-style reports plus qualitative overlays.

Failed samples score zero rather than being excluded, and the report is
assembled in manifest order regardless of completion order, so scripted
and oracle runs are byte-reproducible.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .agent import AgentConfig, AgentTrace, load_image, run_agent, save_trace
from .clients import (
    ClientSettings,
    HttpMllmClient,
    HttpSegmentorClient,
    MllmClient,
    OracleMllm,
    OracleSegmentor,
    ScriptedMllm,
    SegmentorClient,
)
from .core import (
    BinaryMask,
    SaliencyMap,
    Sample,
    SampleSet,
    load_manifest,
    rle_decode,
)
from .errors import MissingPrediction, OcsodError
from .maskops import RenderedImage, extract_contour, render_overlay
from .metrics import BenchReport, EvalPair, aggregate_report


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    output_dir: Path
    mllm_backend: str = "oracle:perfect"
    segmentor_backend: str = "oracle:gt_clip"
    agent: AgentConfig = field(default_factory=AgentConfig)
    concurrency: int = 4
    seed: int = 0
    image_root: Path | None = None
    save_traces: bool = True
    clients: ClientSettings = field(default_factory=ClientSettings)


def load_run_config(path: str | Path) -> RunConfig:
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib  # type: ignore[no-redef]
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    run = data.get("run", {})
    backends = data.get("backends", {})
    agent_section = data.get("agent", {})
    base = path.parent
    manifest = run.get("manifest")
    if not manifest:
        raise ValueError(f"{path}: [run] section requires 'manifest'")

    def _resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    agent_fields = {
        k: agent_section[k]
        for k in (
            "k_max",
            "reflection_prompt_id",
            "temperature",
            "top_p",
            "repair_budget",
            "timeout_s",
            "include_instruction_in_reflection",
        )
        if k in agent_section
    }
    settings = ClientSettings.from_sources(path if "clients" in data else None)
    return RunConfig(
        manifest=_resolve(manifest),
        output_dir=_resolve(run.get("output_dir", "bench_out")),
        mllm_backend=backends.get("mllm", "oracle:perfect"),
        segmentor_backend=backends.get("segmentor", "oracle:gt_clip"),
        agent=AgentConfig(**agent_fields),
        concurrency=int(run.get("concurrency", 4)),
        seed=int(run.get("seed", 0)),
        image_root=_resolve(run["image_root"]) if "image_root" in run else base,
        save_traces=bool(run.get("save_traces", True)),
        clients=settings,
    )


# --- backend construction ----------------------------------------------------


def build_segmentor(config: RunConfig, sample_set: SampleSet) -> SegmentorClient:
    backend = config.segmentor_backend
    if backend == "http":
        return HttpSegmentorClient(config.clients)
    if backend.startswith("oracle:"):
        mode = backend.split(":", 1)[1]
        registry = {s.sample_id: s.gt_mask for s in sample_set}
        return OracleSegmentor(mode=mode, gt_registry=registry, seed=config.seed)
    raise ValueError(f"unknown segmentor backend {backend!r}")


def build_mllm_factory(
    config: RunConfig, sample_set: SampleSet
) -> Callable[[Sample], MllmClient]:
    """Per-sample MLLM client factory (safe under sample-parallel runs)."""
    backend = config.mllm_backend
    if backend == "http":
        client = HttpMllmClient(config.clients)
        return lambda sample: client
    if backend.startswith("oracle:"):
        behavior = backend.split(":", 1)[1]
        registry = {s.sample_id: s.gt_mask for s in sample_set}

        def factory(sample: Sample) -> MllmClient:
            return OracleMllm(registry, behavior=behavior).bind(sample.sample_id)

        return factory
    if backend.startswith("scripted:"):
        script_path = backend.split(":", 1)[1]
        with open(script_path, "r", encoding="utf-8") as fh:
            scripts = json.load(fh)

        def factory(sample: Sample) -> MllmClient:
            try:
                replies = scripts[sample.sample_id]
            except KeyError:
                raise OcsodError(f"script file has no replies for {sample.sample_id!r}")
            return ScriptedMllm(replies)

        return factory
    raise ValueError(f"unknown MLLM backend {backend!r}")


# --- benchmark run ----------------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    report: BenchReport
    pairs: tuple[EvalPair, ...]
    traces: tuple[AgentTrace, ...]
    failures: dict  # sample_id -> error string


def run_benchmark(config: RunConfig) -> BenchResult:
    """Run the agent over every manifest sample and aggregate the metrics.

    A sample whose run fails contributes an all-background prediction
    (scoring against it) and an error tag in ``failures``.
    """
    sample_set = load_manifest(config.manifest)
    segmentor = build_segmentor(config, sample_set)
    mllm_factory = build_mllm_factory(config, sample_set)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(sample: Sample):
        try:
            image = load_image(sample, config.image_root)
            mllm = mllm_factory(sample)
            trace = run_agent(sample, config.agent, mllm, segmentor, image=image)
            return trace, trace.final_mask, trace.error or None
        except OcsodError as exc:
            empty = BinaryMask.zeros(sample.gt_mask.width, sample.gt_mask.height)
            return None, empty, str(exc)

    workers = max(1, config.concurrency)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_one, sample_set.samples))

    pairs = []
    traces = []
    failures = {}
    for sample, (trace, pred, error) in zip(sample_set.samples, results):
        pairs.append(
            EvalPair(sample.sample_id, sample.mode, SaliencyMap.from_mask(pred), sample.gt_mask)
        )
        if trace is not None:
            traces.append(trace)
            if config.save_traces:
                save_trace(trace, out_dir / "traces")
        if error:
            failures[sample.sample_id] = error

    report = aggregate_report(pairs)
    write_report_files(report, out_dir)
    if failures:
        with open(out_dir / "failures.json", "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return BenchResult(report, tuple(pairs), tuple(traces), failures)


def write_report_files(report: BenchReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")


def sweep_k(config: RunConfig, k_from: int, k_to: int) -> dict[int, BenchReport]:
    """One benchmark run per k_max value; mirrors the iteration ablation."""
    if not (1 <= k_from <= k_to):
        raise ValueError("need 1 <= k_from <= k_to")
    reports: dict[int, BenchReport] = {}
    for k in range(k_from, k_to + 1):
        sub = replace(
            config,
            agent=replace(config.agent, k_max=k),
            output_dir=Path(config.output_dir) / f"k{k}",
        )
        reports[k] = run_benchmark(sub).report
    lines = ["k,gIoU,cIoU"]
    from .metrics import format_score

    for k, report in sorted(reports.items()):
        row = report.row("overall")
        lines.append(f"{k},{format_score(row.g_iou)},{format_score(row.c_iou)}")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return reports


# --- external-prediction evaluation ---------------------------------------------


def load_prediction(preds_dir: str | Path, sample: Sample) -> SaliencyMap:
    """PNG grayscale (values/255) or RLE JSON, looked up by sample_id."""
    preds_dir = Path(preds_dir)
    png = preds_dir / f"{sample.sample_id}.png"
    if png.exists():
        with Image.open(png) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return SaliencyMap(arr)
    rle = preds_dir / f"{sample.sample_id}.json"
    if rle.exists():
        with open(rle, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        mask = rle_decode([int(c) for c in obj["counts"]], int(obj["w"]), int(obj["h"]))
        return SaliencyMap.from_mask(mask)
    raise MissingPrediction(sample.sample_id)


def eval_external(
    manifest: str | Path,
    preds_dir: str | Path,
    missing: str = "zero",
    output_dir: str | Path | None = None,
) -> BenchReport:
    """Metrics-only pass over someone else's predictions.

    ``missing`` is "zero" (score an all-background prediction, warn) or
    "fatal" (raise on the first absent file).
    """
    if missing not in ("zero", "fatal"):
        raise ValueError("missing must be 'zero' or 'fatal'")
    sample_set = load_manifest(manifest)
    pairs = []
    missing_ids = []
    for sample in sample_set:
        try:
            pred = load_prediction(preds_dir, sample)
        except MissingPrediction:
            if missing == "fatal":
                raise
            missing_ids.append(sample.sample_id)
            pred = SaliencyMap.from_mask(
                BinaryMask.zeros(sample.gt_mask.width, sample.gt_mask.height)
            )
        pairs.append(EvalPair(sample.sample_id, sample.mode, pred, sample.gt_mask))
    report = aggregate_report(pairs)
    if output_dir is not None:
        write_report_files(report, output_dir)
        if missing_ids:
            with open(Path(output_dir) / "missing_predictions.json", "w", encoding="utf-8") as fh:
                json.dump(missing_ids, fh, indent=2)
                fh.write("\n")
    return report


# --- qualitative overlays ----------------------------------------------------------


def export_overlays(
    sample_set: SampleSet,
    traces: dict[str, AgentTrace],
    out_dir: str | Path,
    image_root: Path | None = None,
) -> list[Path]:
    """Side-by-side image / GT-contour / prediction-contour PNG per sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sample in sample_set:
        trace = traces.get(sample.sample_id)
        if trace is None:
            continue
        image = load_image(sample, image_root)
        gt_panel = render_overlay(image, (), extract_contour(sample.gt_mask))
        pred_panel = render_overlay(image, (), extract_contour(trace.final_mask))
        strip = np.concatenate([image.rgb, gt_panel.rgb, pred_panel.rgb], axis=1)
        path = out_dir / f"{sample.sample_id}.png"
        RenderedImage(strip).to_png(path)
        written.append(path)
    return written
