"""Command-line entry point.

    formkie classify BANK OCR...
    formkie extract TEMPLATE OCR... [--diagnostics] [--no-align] [--no-scale]
    formkie eval MANIFEST [--ablate [VARIANT ...]] [--json]
    formkie gen OUTDIR [--spec FILE] [--count N] [--seed N] [--noise FILE | --noiseless]
    formkie config --dump

Results go to stdout as one JSON object per line. Exit status is 0 on
success, 2 for bad input or usage, 1 for anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from formkie.assignment import KieTemplate, load_template
from formkie.classification import BankClass, TemplateBank, layout_vector, load_bank
from formkie.errors import FormKieError, SchemaError
from formkie.evaluation import VARIANTS, Sample, evaluate, format_table, pooled, run_ablation
from formkie.ocr import OcrDocument, consolidate, parse_ocr_json
from formkie.pipeline import PipelineConfig, extract, load_config
from formkie.synth import (
    GroundTruth,
    LayoutSpec,
    NoiseModel,
    SpecError,
    default_specs,
    generate_filled_form,
    generate_template,
)

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class UsageError(FormKieError):
    pass


def _read(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except (IsADirectoryError, UnicodeDecodeError, PermissionError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file first, command-line flags on top."""
    cfg = load_config(_read(args.config)) if args.config else PipelineConfig()
    over: dict[str, dict[str, Any]] = {}
    if getattr(args, "no_align", False):
        over.setdefault("stages", {})["align"] = False
    if getattr(args, "no_scale", False):
        over.setdefault("stages", {})["scale"] = False
    if getattr(args, "diagnostics", False):
        over.setdefault("run", {})["diagnostics"] = True
    if getattr(args, "jobs", None) is not None:
        over.setdefault("run", {})["jobs"] = args.jobs
    if getattr(args, "seed", None) is not None and args.command in ("extract", "eval"):
        over.setdefault("ransac", {})["seed"] = args.seed
    if not over:
        return cfg
    base = cfg.to_dict()
    for section, vals in over.items():
        base[section].update(vals)
    return PipelineConfig.from_dict(base)


def _ordered_map(fn: Callable, items: Sequence, jobs: int) -> list:
    # output order must follow input order whatever the completion order
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _classify_one(job):
    bank, doc, cfg = job
    entities = consolidate(doc, cfg.consolidation)
    v = bank.doc_vector(doc.text, entities, doc.page_width, doc.page_height, doc.vector)
    label, scores = bank.classify(v)
    return {"source_id": doc.source_id, "label": label, "scores": scores}


def cmd_classify(args, cfg: PipelineConfig) -> int:
    bank = load_bank(_read(args.bank), cfg.classify.alpha, cfg.classify.grid)
    docs = [parse_ocr_json(_read(p)) for p in args.ocr]
    for rec in _ordered_map(_classify_one, [(bank, d, cfg) for d in docs], cfg.run.jobs):
        _emit(rec)
    return EXIT_OK


def _extract_one(job):
    template, doc, cfg = job
    return extract(template, doc, cfg).to_json(cfg.run.diagnostics)


def cmd_extract(args, cfg: PipelineConfig) -> int:
    template = load_template(_read(args.template))
    docs = [parse_ocr_json(_read(p)) for p in args.ocr]
    for rec in _ordered_map(_extract_one, [(template, d, cfg) for d in docs], cfg.run.jobs):
        _emit(rec)
    return EXIT_OK


def read_manifest(path: str | Path) -> list[Sample]:
    """Load every record of a JSON-lines manifest; paths are relative to it."""
    root = Path(path).parent
    templates: dict[str, KieTemplate] = {}
    samples = []
    for n, line in enumerate(_read(path).splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            ocr, tpath, tru = rec["ocr"], rec["template"], rec["truth"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"manifest line {n}: {exc}") from exc
        if tpath not in templates:
            templates[tpath] = load_template(_read(root / tpath))
        doc = parse_ocr_json(_read(root / ocr))
        try:
            truth = GroundTruth.from_json(json.loads(_read(root / tru)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"manifest line {n}: bad ground truth: {exc}") from exc
        samples.append(Sample(templates[tpath], doc, truth))
    return samples


def cmd_eval(args, cfg: PipelineConfig) -> int:
    if args.ablate is not None:
        variants = args.ablate or list(VARIANTS)
        unknown = [v for v in variants if v not in VARIANTS]
        if unknown:
            raise UsageError(f"unknown ablation variant(s): {', '.join(unknown)}")
    samples = read_manifest(args.manifest)
    if args.ablate is None:
        # a plain run honours the configured stage toggles
        results = {"full": evaluate(samples, cfg, cfg.run.jobs)}
    else:
        results = run_ablation(samples, variants, cfg, cfg.run.jobs)
    if args.json:
        for name, per_class in results.items():
            _emit({
                "variant": name,
                "classes": {k: m.to_json() for k, m in per_class.items()},
                "mean": pooled(per_class.values()).to_json(),
            })
    else:
        blocks = []
        for name, per_class in results.items():
            title = name if args.ablate is not None else ""
            blocks.append(format_table(per_class, title))
        print("\n\n".join(blocks))
    return EXIT_OK


def _load_specs(path: str | None) -> list[LayoutSpec]:
    if path is None:
        return default_specs()
    try:
        data = yaml.safe_load(_read(path))
    except yaml.YAMLError as exc:
        raise SpecError(f"spec file is not valid YAML/JSON: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("layouts")
    if not isinstance(data, list) or not data:
        raise SpecError("spec file must hold a non-empty list of layouts")
    if not all(isinstance(d, dict) for d in data):
        raise SpecError("each layout must be a mapping")
    return [LayoutSpec.from_json(d) for d in data]


def _load_noise(args) -> NoiseModel:
    if args.noiseless:
        return NoiseModel.noiseless()
    if not args.noise:
        return NoiseModel()
    try:
        data = yaml.safe_load(_read(args.noise)) or {}
    except yaml.YAMLError as exc:
        raise SchemaError(f"noise file is not valid YAML/JSON: {exc}") from exc
    known = {f.name for f in fields(NoiseModel)}
    if not isinstance(data, dict) or set(data) - known:
        raise SchemaError(f"noise file may only set: {', '.join(sorted(known))}")
    for key in ("rotation_deg", "scale"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return NoiseModel(**data)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad noise model: {exc}") from exc


def bank_from_templates(blanks: Sequence[tuple[str, OcrDocument]], cfg: PipelineConfig) -> TemplateBank:
    classes = []
    for label, doc in blanks:
        layout = layout_vector(consolidate(doc, cfg.consolidation), doc.page_width, doc.page_height, cfg.classify.grid)
        classes.append(BankClass(label, doc.text, layout=tuple(float(x) for x in layout)))
    return TemplateBank(classes, cfg.classify.alpha, cfg.classify.grid)


def cmd_gen(args, cfg: PipelineConfig) -> int:
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    seed = args.seed if args.seed is not None else 0
    specs = _load_specs(args.spec)
    noise = _load_noise(args)
    out = Path(args.outdir)

    made = [generate_template(s, seed=seed + k) for k, s in enumerate(specs)]
    labels = [t.label for t in made]
    if len(set(labels)) != len(labels):
        raise SpecError("layout labels must be unique")
    for t in made:
        _write_json(out / "templates" / f"{t.label}.json", t.kie.to_json())
        _write_json(out / "templates" / f"{t.label}.ocr.json", t.blank.to_json())
    bank = bank_from_templates([(t.label, t.blank) for t in made], cfg)
    _write_json(out / "bank.json", bank.to_json())

    lines = []
    for i in range(args.count):
        t = made[i % len(made)]
        sid = f"{t.label}-{i:05d}"
        doc, truth = generate_filled_form(t, noise.with_seed(seed * 1_000_003 + i), sid)
        _write_json(out / "forms" / f"{sid}.json", doc.to_json())
        _write_json(out / "truth" / f"{sid}.json", truth.to_json())
        lines.append(json.dumps({
            "source_id": sid,
            "class_label": t.label,
            "ocr": f"forms/{sid}.json",
            "template": f"templates/{t.label}.json",
            "truth": f"truth/{sid}.json",
        }))
    (out / "manifest.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"wrote {len(lines)} forms for {len(made)} templates to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_config(args, cfg: PipelineConfig) -> int:
    if not args.dump:
        raise UsageError("config: nothing to do (try --dump)")
    sys.stdout.write(cfg.dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config; flags override it")
    common.add_argument("--diagnostics", action="store_true", help="add alignment/scaling reports")
    common.add_argument("--no-align", action="store_true", help="skip homography alignment")
    common.add_argument("--no-scale", action="store_true", help="skip per-segment scaling")
    common.add_argument("--seed", type=int, help="RANSAC seed (gen: dataset seed)")
    common.add_argument("--jobs", type=int, help="worker processes")

    ap = argparse.ArgumentParser(prog="formkie", description="Template-based key information extraction for forms.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="pick the closest template class")
    p.add_argument("bank")
    p.add_argument("ocr", nargs="+")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("extract", parents=[common], help="extract key-value pairs")
    p.add_argument("template")
    p.add_argument("ocr", nargs="+")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", parents=[common], help="score a generated dataset")
    p.add_argument("manifest")
    p.add_argument("--ablate", nargs="*", metavar="VARIANT",
                   help=f"compare variants (default all: {', '.join(VARIANTS)})")
    p.add_argument("--json", action="store_true", help="JSON lines instead of tables")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p.add_argument("outdir")
    p.add_argument("--spec", help="YAML/JSON list of layout specs (default: built-in six)")
    p.add_argument("--count", type=int, default=60, help="total forms, templates used round-robin")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise", metavar="PATH", help="YAML/JSON noise model overrides")
    noise.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("config", parents=[common], help="show the effective configuration")
    p.add_argument("--dump", action="store_true", help="print the config as YAML")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except FormKieError as exc:
        print(f"formkie: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - last-resort exit code contract
        print(f"formkie: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
