"""Command-line entry point."""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from .annotation import Strategy
from .config import ConfigError, SessionConfig, load_config
from .core import Annotation
from .detection import collect_training_data, frame_rois, load_detector, save_detector, train_from_data
from .eval import ComparisonConfig, EvalReport, ReportCell, annotate_loaded, annotation_quality, evaluate_split, merge_reports, prepare_datasets, run_comparison
from .eval.comparison import SEED_STRIDE
from .io import ArtifactExistsError, DataError, check_writable, load_dataset, load_manifest, sha256_file, write_dataset, write_jsonl, read_jsonl
from .simworld import SIZE_SPLITS, ScenarioKind, SizeClass, load_script, make_script

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ABORT = 4
EXIT_EXISTS = 5


class CliError(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def _config(ctx: click.Context, **overrides) -> SessionConfig:
    try:
        return load_config(ctx.obj.get("config"), overrides=overrides)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _guard(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ArtifactExistsError as exc:
        raise CliError(str(exc), EXIT_EXISTS) from None
    except DataError as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _meta(command: str, cfg: SessionConfig, inputs: dict, outputs: list[Path]) -> dict:
    return {
        "command": command,
        "config": cfg.to_json(),
        "inputs": inputs,
        "outputs": {p.name: sha256_file(p) for p in outputs if p.is_file()},
    }


seed_opt = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master seed (u64).")
scenario_opt = click.option("--scenario", type=click.Choice([k.value for k in ScenarioKind]), default=None)
strategy_opt = click.option("--strategy", type=click.Choice([s.value for s in Strategy]), default=None)
force_opt = click.option("--force", is_flag=True, help="Overwrite existing artifacts.")


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML/JSON session config.")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str]):
    """Social-cue driven object learning: simulate, annotate, train, evaluate."""
    ctx.ensure_object(dict)
    if config_path is not None and not Path(config_path).is_file():
        raise CliError(f"config error: {config_path} does not exist", EXIT_CONFIG)
    ctx.obj["config"] = config_path


@main.command()
@seed_opt
@scenario_opt
@click.option("--n-frames", type=click.IntRange(1), default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@force_opt
@click.pass_context
def simulate(ctx, seed, scenario, n_frames, out, force):
    """Render one sequence per configured object into a dataset directory."""
    cfg = _config(ctx, seed=seed, scenario=scenario, n_frames=n_frames)
    scripts = [
        make_script(cfg.scenario, label, cfg.seed * SEED_STRIDE + i, n_frames=cfg.n_frames, fps=cfg.fps)
        for i, label in enumerate(cfg.labels)
    ]
    m = _guard(write_dataset, out, scripts, force)
    click.echo(f"wrote {len(m.sequences)} sequences ({m.frame_count} frames) to {out}")


@main.command()
@click.argument("dataset", type=click.Path(file_okay=False))
@strategy_opt
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Annotations JSONL (default: <dataset>/annotations_<strategy>.jsonl).")
@force_opt
@click.pass_context
def annotate(ctx, dataset, strategy, out, force):
    """Automatically annotate every sequence of a dataset."""
    cfg = _config(ctx, strategy=strategy)
    out = Path(out) if out else Path(dataset) / f"annotations_{cfg.strategy}.jsonl"
    _guard(check_writable, out, force)
    manifest, seqs = _guard(load_dataset, dataset)
    rows, summary = [], {}
    for seq in seqs:
        anns, aborted = annotate_loaded(seq, cfg.strategy, cfg.annotator_config())
        q = annotation_quality(anns, seq.truth, seq.label)
        summary[seq.name] = {"mean_iou": q.mean_iou, "ap": q.ap, "annotations": len(anns), "aborted": aborted}
        rows += [{"sequence": seq.name, **a.to_json()} for a in anns]
        click.echo(f"{seq.name:<45} n={len(anns):>3}  IoU={q.mean_iou:.3f}  AP={q.ap:.3f}{'  (aborted)' if aborted else ''}")
    write_jsonl(out, rows)
    meta = _meta("annotate", cfg, {"manifest": sha256_file(Path(dataset) / "manifest.json")}, [out])
    meta["summary"] = summary
    _write_json(Path(str(out) + ".meta.json"), meta)


def _split_labels(split: str) -> tuple[str, ...]:
    if split == "all":
        return tuple(l for s in SizeClass for l in SIZE_SPLITS[s])
    return SIZE_SPLITS[SizeClass(split)]


@main.command()
@click.argument("dataset", type=click.Path(file_okay=False))
@click.argument("annotations", type=click.Path(dir_okay=False))
@click.option("--split", type=click.Choice([s.value for s in SizeClass] + ["all"]), default="all")
@seed_opt
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Model file; the class registry goes to <out>.json.")
@force_opt
@click.pass_context
def train(ctx, dataset, annotations, split, seed, out, force):
    """Train a detector for one size split from persisted annotations."""
    cfg = _config(ctx, seed=seed)
    out = Path(out)
    _guard(check_writable, out, force)
    manifest, seqs = _guard(load_dataset, dataset)
    if not Path(annotations).is_file():
        raise CliError(f"data error: {annotations} does not exist", EXIT_DATA)
    by_seq: dict[str, list[Annotation]] = {}
    for row in read_jsonl(annotations):
        by_seq.setdefault(row.pop("sequence"), []).append(Annotation.from_json(row))
    labels = _split_labels(split)
    det_cfg = cfg.detector_config()
    data: dict = {}
    for seq in seqs:
        if seq.label not in labels:
            continue
        chosen = [a for a in by_seq.get(seq.name, []) if a.frame_index % cfg.train_stride == 0]
        frames = {f.index: f for f in seq.frames}
        if any(a.frame_index not in frames for a in chosen):
            raise CliError(f"data error: annotations reference frames missing from {seq.name}", EXIT_DATA)
        collect_training_data([frames[a.frame_index] for a in chosen], chosen, det_cfg, data)
    if not data:
        raise CliError("data error: no annotations for the requested split", EXIT_DATA)
    model = train_from_data(data, det_cfg, seed=cfg.seed)
    save_detector(model, out)
    meta = _meta("train", cfg, {"manifest": sha256_file(Path(dataset) / "manifest.json"), "annotations": sha256_file(annotations)}, [out])
    meta["split"] = split
    _write_json(Path(str(out) + ".meta.json"), meta)
    click.echo(f"trained {len(model.labels)} classes -> {out}")


@main.command()
@click.argument("model", type=click.Path(dir_okay=False))
@click.argument("testset", type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Report stem; writes .json and .csv.")
@force_opt
@click.pass_context
def evaluate(ctx, model, testset, out, force):
    """Detection mAP@0.5 of a trained model on a test dataset."""
    cfg = _config(ctx)
    stem = Path(out)
    for suffix in (".json", ".csv"):
        _guard(check_writable, stem.with_suffix(suffix), force)
    try:
        det = load_detector(model)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"data error: cannot load model: {exc}", EXIT_DATA) from None
    manifest, seqs = _guard(load_dataset, testset)
    missing = [l for l in det.labels if l not in manifest.registry]
    if missing:
        raise CliError(f"data error: model classes {missing} are not in the test set registry", EXIT_DATA)
    test = [s for s in seqs if s.label in det.labels]
    rois = {(s.name, f.index): frame_rois(f, det.max_proposals) for s in test for f in s.frames}
    m, aps = evaluate_split(det, test, rois)
    meta_path = Path(str(model) + ".meta.json")
    split = json.loads(meta_path.read_text()).get("split", "all") if meta_path.exists() else "all"
    cell = ReportCell("test", "model", None, None, {}, {split: m}, aps)
    report = EvalReport(sha256_file(model)[:16], {"model": str(model), "testset": str(testset)}, [cell])
    report.save(stem)
    click.echo(f"mAP@0.5 = {100 * m:.1f}  " + "  ".join(f"{k}={100 * v:.1f}" for k, v in aps.items()))


@main.command("run-pipeline")
@seed_opt
@scenario_opt
@click.option("--out", type=click.Path(file_okay=False), required=True)
@force_opt
@click.pass_context
def run_pipeline(ctx, seed, scenario, out, force):
    """Replay a scripted session through the state machine end to end."""
    from .orchestrator import EventLog, State
    from .session import default_context, run_session

    cfg = _config(ctx, seed=seed, scenario=scenario)
    out = Path(out)
    events_path, model_path, report_path = out / "events.jsonl", out / "model.bin", out / "report.json"
    for p in (events_path, out / "annotations.jsonl", model_path, report_path):
        _guard(check_writable, p, force)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.script:
        try:
            script = load_script(cfg.script)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"config error: bad script {cfg.script}: {exc}", EXIT_CONFIG) from None
    else:
        script = make_script(cfg.scenario, cfg.label, cfg.seed, n_frames=cfg.n_frames + cfg.session_lead_frames, fps=cfg.fps)
    context = default_context(script, cfg.orchestrator_config(), cfg.seed)
    log = EventLog()
    state, _ = run_session(script, context, log)
    log.write(events_path)
    write_jsonl(out / "annotations.jsonl", [a.to_json() for a in state.annotations])
    outputs = [events_path, out / "annotations.jsonl"]
    if state.model is not None:
        save_detector(state.model, model_path)
        outputs.append(model_path)
    report = {"final_state": state.state.value, "acquired": state.acquired, "label": state.pending_label,
              "selected_hand": None if state.selected_hand is None else state.selected_hand.value}
    report["meta"] = _meta("run-pipeline", cfg, {"script": script.to_dict()}, outputs)
    _write_json(report_path, report)
    click.echo(f"final state {state.state.value} with {state.acquired} annotations")
    if state.state is not State.READY:
        raise CliError(f"pipeline ended in {state.state.value}", EXIT_ABORT)


@main.command()
@click.argument("runs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Merged report stem.")
@force_opt
def report(runs, out, force):
    """Merge evaluation reports and print the summary table."""
    stem = Path(out)
    for suffix in (".json", ".csv"):
        _guard(check_writable, stem.with_suffix(suffix), force)
    reports = []
    for r in runs:
        try:
            reports.append(EvalReport.from_json(json.loads(Path(r).read_text())))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"data error: cannot read report {r}: {exc}", EXIT_DATA) from None
    merged = merge_reports(reports)
    merged.save(stem)
    click.echo(merged.summary())


@main.command()
@seed_opt
@click.option("--scenario", "scenarios", multiple=True, type=click.Choice([k.value for k in ScenarioKind]), help="Repeatable; default all.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@force_opt
@click.pass_context
def compare(ctx, seed, scenarios, out, force):
    """Full strategy comparison: render, annotate, train per size split, evaluate."""
    cfg = _config(ctx, seed=seed)
    out = Path(out)
    stem = out / "report"
    for suffix in (".json", ".csv"):
        _guard(check_writable, stem.with_suffix(suffix), force)
    ccfg = ComparisonConfig(
        scenarios=tuple(scenarios) or tuple(k.value for k in ScenarioKind),
        seed=cfg.seed,
        n_train_frames=cfg.n_frames,
        n_test_frames=cfg.test_frames,
        train_stride=cfg.train_stride,
        detector=cfg.detector_config(),
    )
    _guard(prepare_datasets, out / "data", ccfg, force)
    rep = _guard(run_comparison, out / "data", ccfg, cfg.seed)
    rep.save(stem)
    click.echo(rep.summary())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
