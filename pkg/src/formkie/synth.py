"""Synthetic form templates and noisy filled-in scans with ground truth.

Text is laid out in a monospace metric (``CHAR_W`` px per character,
``TEXT_H`` px tall). Fragmentation of strings into OCR pieces respects the
consolidation thresholds, so a noiseless scan consolidates back to exactly the
strings that were written.
"""
from __future__ import annotations

import math
import string
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from formkie.assignment import KieTemplate, TemplateEntry
from formkie.errors import FormKieError
from formkie.geometry import BBox, Point, apply_homography, estimate_homography
from formkie.ocr import OcrDocument, Token

PAGE_W = 1700
PAGE_H = 2200
CHAR_W = 12
TEXT_H = 20


class SpecError(FormKieError):
    pass


@dataclass(frozen=True)
class LayoutSpec:
    label: str
    keys: tuple[str, ...]
    title: str = ""
    columns: int = 2
    value_side: str = "right"  # or "below"
    top: float = 260.0
    left: float = 140.0
    row_pitch: float = 70.0
    value_offset: float = 290.0
    value_size: tuple[float, float] = (230.0, 32.0)
    page: tuple[float, float] = (PAGE_W, PAGE_H)

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "LayoutSpec":
        try:
            kw = dict(data)
            kw["keys"] = tuple(kw["keys"])
            if "value_size" in kw:
                kw["value_size"] = tuple(kw["value_size"])
            if "page" in kw:
                kw["page"] = tuple(kw["page"])
            return cls(**kw)
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad layout spec: {exc}") from exc


@dataclass(frozen=True)
class SyntheticTemplate:
    kie: KieTemplate
    blank: OcrDocument

    @property
    def label(self) -> str:
        return self.kie.class_label


def text_box(x: float, y: float, text: str) -> BBox:
    return BBox(x, y, x + CHAR_W * len(text), y + TEXT_H)


def _overlaps(a: BBox, b: BBox, pad: float = 0.0) -> bool:
    return not (
        a.x_max + pad <= b.x_min
        or b.x_max + pad <= a.x_min
        or a.y_max + pad <= b.y_min
        or b.y_max + pad <= a.y_min
    )


def generate_template(spec: LayoutSpec, seed: int = 0) -> SyntheticTemplate:
    """Lay keys out column-major with a value box to the right of or below
    each key. ``seed`` adds a small per-row spacing variation."""
    if not spec.keys:
        raise SpecError("layout spec has no keys")
    if spec.columns < 1:
        raise SpecError("columns must be >= 1")
    if spec.value_side not in ("right", "below"):
        raise SpecError(f"unknown value_side {spec.value_side!r}")
    page_w, page_h = spec.page
    rng = np.random.default_rng(seed)
    per_col = math.ceil(len(spec.keys) / spec.columns)
    col_w = (page_w - 2 * spec.left) / spec.columns
    vw, vh = spec.value_size
    extra = np.cumsum(rng.integers(0, 3, size=per_col) * 5.0)

    entries = []
    static = []
    if spec.title:
        static.append(Token(spec.title, text_box(spec.left, 100.0, spec.title)))
    for k, key in enumerate(spec.keys):
        col, row = divmod(k, per_col)
        kx = float(round(spec.left + col * col_w))  # keep template files integral
        ky = spec.top + row * spec.row_pitch + extra[row]
        if spec.value_side == "right":
            vx, vy = kx + spec.value_offset, ky - 6
        else:
            vx, vy = kx, ky + TEXT_H + 14
        entries.append(TemplateEntry(key, Point(kx, ky), BBox(vx, vy, vx + vw, vy + vh)))
        static.append(Token(key, text_box(kx, ky, key)))

    boxes = [e.value_bbox for e in entries] + [t.bbox for t in static]
    for a in range(len(boxes)):
        if boxes[a].x_max > page_w or boxes[a].y_max > page_h:
            raise SpecError("layout does not fit on the page")
        for b in range(a + 1, len(boxes)):
            if _overlaps(boxes[a], boxes[b]):
                raise SpecError("layout spec produces overlapping boxes")
    kie = KieTemplate(spec.label, tuple(entries))
    blank = OcrDocument(page_w, page_h, tuple(static), f"{spec.label}-template")
    return SyntheticTemplate(kie, blank)


@dataclass(frozen=True)
class NoiseModel:
    rotation_deg: tuple[float, float] = (-3.0, 3.0)
    scale: tuple[float, float] = (0.95, 1.05)
    jitter_px: float = 2.0
    token_split_prob: float = 0.15
    fill_prob: float = 0.8
    distractor_count: int = 5
    # smooth non-projective bending; amplitude in px at mid-page
    warp_px: float = 0.0
    # keystone: each page corner moved uniformly within +-perspective_px per axis
    perspective_px: float = 160.0
    seed: int = 0

    def __post_init__(self):
        for name in ("token_split_prob", "fill_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.rotation_deg[0] > self.rotation_deg[1] or self.scale[0] > self.scale[1]:
            raise ValueError("noise ranges must be ordered")
        if min(self.jitter_px, self.distractor_count, self.warp_px, self.perspective_px) < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseModel":
        return cls((0.0, 0.0), (1.0, 1.0), 0.0, 0.0, 1.0, 0, 0.0, 0.0, seed)

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(**{**asdict(self), "seed": seed})


@dataclass(frozen=True)
class EntryTruth:
    key: str
    filled: bool
    value: str | None
    token_indices: tuple[int, ...] = ()


@dataclass(frozen=True)
class GroundTruth:
    source_id: str
    class_label: str
    entries: tuple[EntryTruth, ...]
    rotation_deg: float = 0.0
    scale: float = 1.0

    def to_json(self) -> dict[str, Any]:
        return {
            "source_id": self.source_id,
            "class_label": self.class_label,
            "rotation_deg": self.rotation_deg,
            "scale": self.scale,
            "entries": [
                {"key": e.key, "filled": e.filled, "value": e.value, "tokens": list(e.token_indices)}
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "GroundTruth":
        return cls(
            data["source_id"],
            data["class_label"],
            tuple(
                EntryTruth(e["key"], bool(e["filled"]), e["value"], tuple(e.get("tokens", ())))
                for e in data["entries"]
            ),
            float(data.get("rotation_deg", 0.0)),
            float(data.get("scale", 1.0)),
        )


FIRST = ["John", "Maria", "Ahmed", "Chen", "Olivia", "Kwame", "Sofia", "Ivan", "Priya", "Lucas"]
LAST = ["Smith", "Garcia", "Okafor", "Nguyen", "Kowalski", "Haddad", "Ferreira", "Tanaka", "Brown"]
STREETS = ["Main St", "Oak Ave", "Elm Road", "Pine Lane", "High St", "Park Blvd"]
WORDS = ["approved", "see attached", "pending", "n/a", "urgent", "copy", "void", "received"]


def _value_text(rng: np.random.Generator) -> str:
    # drawn independently of the key: extraction is purely positional, so a
    # date under "Last Name" is as good a test as a surname
    kind = rng.integers(0, 6)
    if kind == 0:
        return str(rng.choice(FIRST))
    if kind == 1:
        return str(rng.choice(LAST))
    if kind == 2:
        m, d, y = rng.integers(1, 13), rng.integers(1, 29), rng.integers(1940, 2024)
        return f"{m:02d}/{d:02d}/{y}"
    if kind == 3:
        return "".join(rng.choice(list(string.digits), size=int(rng.integers(6, 11))))
    if kind == 4:
        return f"{rng.integers(10, 9999)} {rng.choice(STREETS)}"
    return f"{rng.choice(FIRST)} {rng.choice(LAST)}"


def _fragments(text: str, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Cut ``text`` into (start, end) character spans.

    In-word cuts keep the previous piece at most 4 characters long so the
    pieces re-join without a space; cuts on a space need the previous piece
    plus the space to span 6+ characters so they re-join with one.
    """
    spans = []
    start = 0
    s = 1
    while s < len(text):
        if text[s] == " " and s - start >= 5 and rng.random() < 0.7:
            spans.append((start, s))
            start = s + 1
            s = start + 1
            continue
        if text[s] != " " and text[s - 1] != " " and s - start <= 4 and rng.random() < 0.5:
            spans.append((start, s))
            start = s
        s += 1
    spans.append((start, len(text)))
    return spans


class _Distortion:
    def __init__(self, page_w, page_h, angle_deg, scale, warp_x, warp_y, keystone=None):
        self.cx, self.cy = page_w / 2, page_h / 2
        self.w, self.h = page_w, page_h
        t = math.radians(angle_deg)
        self.c, self.s = scale * math.cos(t), scale * math.sin(t)
        self.warp_x, self.warp_y = warp_x, warp_y
        self.keystone = keystone

    def __call__(self, x: float, y: float) -> tuple[float, float]:
        # bend first (in the sheet's own frame), then rotate/scale the sheet
        x = x + self.warp_x * math.sin(math.pi * y / self.h)
        y = y + self.warp_y * math.sin(math.pi * x / self.w)
        dx, dy = x - self.cx, y - self.cy
        x = self.cx + self.c * dx - self.s * dy
        y = self.cy + self.s * dx + self.c * dy
        if self.keystone is not None:
            p = apply_homography(self.keystone, Point(x, y))
            x, y = p.x, p.y
        return x, y

    def box(self, b: BBox) -> BBox:
        pts = [self(p.x, p.y) for p in b.corners()]
        return BBox.hull(Point(x, y) for x, y in pts)


def _place_distractors(rng, count, occupied: list[BBox], anchors: list[Point], page_w, page_h):
    out = []
    tries = 0
    while len(out) < count and tries < 200 * (count + 1):
        tries += 1
        text = str(rng.choice(WORDS))
        x = float(rng.uniform(140, page_w - 140 - CHAR_W * len(text)))
        y = float(rng.uniform(140, page_h - 140))
        b = text_box(x, y, text)
        if any(_overlaps(b, o, pad=75) for o in occupied):
            continue
        if any(math.hypot(p.x - x, p.y - y) < 90 for p in anchors):
            continue
        out.append((text, b))
        occupied.append(b)
    return out


def generate_filled_form(
    t: SyntheticTemplate,
    noise: NoiseModel,
    source_id: str | None = None,
) -> tuple[OcrDocument, GroundTruth]:
    """Fill, distort and fragment one synthetic scan of template ``t``."""
    rng = np.random.default_rng(noise.seed)
    page_w, page_h = t.blank.page_width, t.blank.page_height
    source_id = source_id or f"{t.label}-{noise.seed}"

    angle = float(rng.uniform(*noise.rotation_deg))
    scale = float(rng.uniform(*noise.scale))
    warp_x = float(rng.uniform(-noise.warp_px, noise.warp_px))
    warp_y = float(rng.uniform(-noise.warp_px, noise.warp_px))
    keystone = None
    if noise.perspective_px > 0:
        corners = BBox(0.0, 0.0, page_w, page_h).corners()
        moved = rng.uniform(-noise.perspective_px, noise.perspective_px, (4, 2))
        keystone = estimate_homography(
            [(c, Point(c.x + mx, c.y + my)) for c, (mx, my) in zip(corners, moved)]
        )
    distort = _Distortion(page_w, page_h, angle, scale, warp_x, warp_y, keystone)

    # (text, box, entry index or None)
    items: list[tuple[str, BBox, int | None]] = [(tok.text, tok.bbox, None) for tok in t.blank.tokens]
    values: list[str | None] = []
    for i, entry in enumerate(t.kie.entries):
        if rng.random() < noise.fill_prob:
            text = _value_text(rng)
            jx, jy = rng.normal(0, noise.jitter_px, 2) if noise.jitter_px > 0 else (0.0, 0.0)
            items.append((text, text_box(entry.value_bbox.x_min + jx, entry.value_bbox.y_min + jy, text), i))
            values.append(text)
        else:
            values.append(None)

    occupied = [b for _, b, _ in items] + [e.value_bbox for e in t.kie.entries]
    value_points = [Point(e.value_bbox.x_min, e.value_bbox.y_min) for e in t.kie.entries]
    for text, b in _place_distractors(rng, noise.distractor_count, occupied, value_points, page_w, page_h):
        items.append((text, b, None))

    tokens: list[Token] = []
    owned: dict[int, list[int]] = {}
    for text, b, entry in items:
        split = noise.token_split_prob > 0 and rng.random() < noise.token_split_prob
        spans = _fragments(text, rng) if split else [(0, len(text))]
        for s, e in spans:
            piece = BBox(b.x_min + s * CHAR_W, b.y_min, b.x_min + e * CHAR_W, b.y_max)
            moved = distort.box(piece)
            x0, y0 = max(moved.x_min, 0.0), max(moved.y_min, 0.0)
            x1, y1 = min(moved.x_max, page_w), min(moved.y_max, page_h)
            if x1 <= x0 or y1 <= y0:
                continue  # pushed off the page entirely
            clipped = BBox(x0, y0, x1, y1)
            if entry is not None:
                owned.setdefault(entry, []).append(len(tokens))
            tokens.append(Token(text[s:e], clipped))

    truth = GroundTruth(
        source_id,
        t.label,
        tuple(
            EntryTruth(entry.key, values[i] is not None, values[i], tuple(owned.get(i, ())))
            for i, entry in enumerate(t.kie.entries)
        ),
        angle,
        scale,
    )
    return OcrDocument(page_w, page_h, tuple(tokens), source_id), truth


COMMON_KEYS = [
    "Last Name", "First Name", "Date of Birth", "Policy Number", "Phone Number",
    "Street Address", "City", "Signature Date",
]
CLASS_KEYS = {
    "accident_pg1": ["Accident Date", "Accident Location", "Employer Name", "Occupation",
                     "Injury Type", "Body Part Injured", "Police Report No", "Witness Name",
                     "Hours Worked", "Return to Work", "Physician Name", "Hospital Name",
                     "Admission Date", "Discharge Date", "Claim Amount", "Zip Code"],
    "accident_pg2": ["Treatment Date", "Procedure Code", "Diagnosis Code", "Provider Name",
                     "Provider Tax ID", "Facility Name", "Billed Amount", "Paid Amount",
                     "Follow Up Visit", "Therapy Sessions", "Prescriptions", "Referral Doctor"],
    "hospital_pg1": ["Admission Date", "Discharge Date", "Hospital Name", "Attending Doctor",
                     "Room Number", "Ward", "Admission Reason", "Emergency Contact",
                     "Contact Phone", "Insurance Group", "Employer Name", "Zip Code",
                     "Member ID", "Relationship"],
    "hospital_pg2": ["Daily Benefit", "Days Confined", "ICU Days", "Surgery Date",
                     "Surgeon Name", "Anesthesia", "Total Charges", "Deductible",
                     "Coinsurance", "Payee Name", "Bank Routing", "Account Number",
                     "Account Type", "Tax Year", "Payee Address", "Claim Reference",
                     "Prior Claims", "Notes"],
    "accident_v1": ["Incident Date", "Incident Time", "Description", "Vehicle Plate",
                    "Other Party", "Insurer Name", "Claim Amount", "Witness Phone"],
    "vision_benefit": ["Exam Date", "Optometrist", "Lens Type", "Frame Cost",
                       "Lens Cost", "Contact Lenses", "Store Name", "Store Phone",
                       "Prescription Date", "Member ID"],
}


def default_specs() -> list[LayoutSpec]:
    """Six look-alike claim-form layouts sharing a block of common keys."""
    layouts = {
        "accident_pg1": dict(columns=2, value_side="right", row_pitch=66.0),
        "accident_pg2": dict(columns=2, value_side="below", row_pitch=96.0, top=300.0),
        "hospital_pg1": dict(columns=2, value_side="right", row_pitch=74.0, top=320.0),
        "hospital_pg2": dict(columns=3, value_side="below", row_pitch=92.0, left=120.0),
        "accident_v1": dict(columns=1, value_side="right", row_pitch=90.0, top=300.0),
        "vision_benefit": dict(columns=2, value_side="right", row_pitch=100.0, top=380.0),
    }
    specs = []
    for label, extra in layouts.items():
        keys = tuple(COMMON_KEYS + CLASS_KEYS[label])
        title = label.replace("_", " ").title() + " Claim Form"
        specs.append(LayoutSpec(label=label, keys=keys, title=title, **extra))
    return specs
