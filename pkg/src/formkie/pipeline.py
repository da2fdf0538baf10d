"""End-to-end extraction: consolidate, align, scale, constrain, solve."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any

import yaml

from formkie.alignment import (
    AlignmentReport,
    FuzzyConfig,
    RansacParams,
    align_document,
    match_anchors,
)
from formkie.assignment import (
    KeyValue,
    KieTemplate,
    build_constraints,
    build_cost_matrix,
    extract_key_values,
    solve_assignment,
)
from formkie.errors import SchemaError
from formkie.geometry import BBox
from formkie.ocr import ConsolidationConfig, OcrDocument, consolidate
from formkie.scaling import SegmentCorrection, build_grid, compute_corrections, scale_entities


@dataclass(frozen=True)
class GridConfig:
    rows: int = 5
    cols: int = 4

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")


@dataclass(frozen=True)
class KieConfig:
    reject_cost: float = 150.0
    hard_radius: float = 400.0

    def __post_init__(self):
        if self.reject_cost <= 0 or self.hard_radius <= 0:
            raise ValueError("reject_cost and hard_radius must be positive")


@dataclass(frozen=True)
class ClassifyConfig:
    alpha: float = 0.5
    grid: int = 8

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.grid < 1:
            raise ValueError("layout grid must be at least 1")


@dataclass(frozen=True)
class Stages:
    align: bool = True
    scale: bool = True


@dataclass(frozen=True)
class RunConfig:
    jobs: int = 1
    diagnostics: bool = False

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class PipelineConfig:
    consolidation: ConsolidationConfig = field(default_factory=ConsolidationConfig)
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    kie: KieConfig = field(default_factory=KieConfig)
    ransac: RansacParams = field(default_factory=RansacParams)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    stages: Stages = field(default_factory=Stages)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "PipelineConfig":
        return _merge(cls(), data or {}, "config")

    def with_stages(self, align: bool | None = None, scale: bool | None = None) -> "PipelineConfig":
        stages = Stages(
            self.stages.align if align is None else align,
            self.stages.scale if scale is None else scale,
        )
        return replace(self, stages=stages)


def _merge(obj, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, val in data.items():
        if key not in known:
            raise SchemaError(f"{where}: unknown setting {key!r}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            updates[key] = _merge(cur, val, f"{where}.{key}")
        elif isinstance(cur, bool):
            if not isinstance(val, bool):
                raise SchemaError(f"{where}.{key}: expected true/false")
            updates[key] = val
        elif isinstance(cur, (int, float)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise SchemaError(f"{where}.{key}: expected a number")
            if isinstance(cur, int) and not isinstance(cur, bool) and not float(val).is_integer():
                raise SchemaError(f"{where}.{key}: expected an integer")
            updates[key] = type(cur)(val)
        else:
            updates[key] = val
    try:
        return replace(obj, **updates)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def load_config(text: str | None) -> PipelineConfig:
    if not text:
        return PipelineConfig()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"config is not valid YAML: {exc}") from exc
    return PipelineConfig.from_dict(data)


@dataclass(frozen=True)
class ExtractionResult:
    source_id: str
    class_label: str
    fields: list[KeyValue]
    alignment: AlignmentReport | None
    scaling: SegmentCorrection | None

    def to_json(self, diagnostics: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "source_id": self.source_id,
            "class_label": self.class_label,
            "fields": [f.to_json() for f in self.fields],
        }
        if diagnostics:
            out["diagnostics"] = {
                "align": self.alignment.to_json() if self.alignment else None,
                "scale": self.scaling.to_json() if self.scaling else None,
            }
        return out


def extract(template: KieTemplate, doc: OcrDocument, cfg: PipelineConfig | None = None) -> ExtractionResult:
    cfg = cfg or PipelineConfig()
    entities = consolidate(doc, cfg.consolidation)
    keys = template.keys
    anchors = match_anchors(keys, entities, cfg.fuzzy)

    report = None
    if cfg.stages.align:
        page = BBox(0.0, 0.0, doc.page_width, doc.page_height)
        entities, _, report = align_document(entities, anchors, cfg.ransac, page)
        if not report.skipped:
            anchors = match_anchors(keys, entities, cfg.fuzzy)

    corrections = None
    if cfg.stages.scale:
        grid = build_grid(doc.page_width, doc.page_height, cfg.grid.rows, cfg.grid.cols)
        corrections = compute_corrections(grid, anchors)
        entities = scale_entities(entities, grid, corrections)

    # key text recognised in any frame is printed matter, never a value
    key_text = {a.entity_index for a in anchors}
    key_text.update(a.entity_index for a in match_anchors(keys, entities, cfg.fuzzy))
    constraints = build_constraints(template, entities, sorted(key_text), cfg.kie.hard_radius)
    costs = build_cost_matrix(template, entities, constraints, cfg.kie.reject_cost)
    solution = solve_assignment(costs)
    kv = extract_key_values(template, entities, solution, costs)
    return ExtractionResult(doc.source_id, template.class_label, kv, report, corrections)
