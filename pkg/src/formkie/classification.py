"""Document vectors and template-bank classification by cosine similarity."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from formkie.errors import DimensionMismatch, FormKieError, SchemaError
from formkie.ocr import Entity

TOKEN_PATTERN = r"(?u)\b\w+\b"
_word = re.compile(TOKEN_PATTERN)


class EmptyCorpus(FormKieError):
    pass


def tokenize(text: str) -> list[str]:
    return _word.findall(text.lower())


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v.copy()


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: dict[str, int]
    idf: np.ndarray
    token_pattern: str = TOKEN_PATTERN

    @property
    def size(self) -> int:
        return len(self.vocabulary)


def fit_tfidf(corpus: Sequence[str]) -> TfidfModel:
    """Learn a vocabulary and smoothed idf, ``ln((1 + N) / (1 + df)) + 1``."""
    docs = [tokenize(text) for text in corpus]
    if not docs or not any(docs):
        raise EmptyCorpus("corpus has no words")
    df: Counter[str] = Counter()
    for words in docs:
        df.update(set(words))
    terms = sorted(df)
    n = len(docs)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
    idf.setflags(write=False)
    return TfidfModel({t: k for k, t in enumerate(terms)}, idf)


def transform_tfidf(model: TfidfModel, text: str) -> np.ndarray:
    vec = np.zeros(model.size)
    for word, count in Counter(tokenize(text)).items():
        col = model.vocabulary.get(word)
        if col is not None:
            vec[col] = count * model.idf[col]
    return l2_normalize(vec)


def layout_vector(entities: Sequence[Entity], page_w: float, page_h: float, grid: int = 8) -> np.ndarray:
    """Normalized G x G histogram of entity top-left corners, row-major."""
    if page_w <= 0 or page_h <= 0:
        raise ValueError("page dimensions must be positive")
    hist = np.zeros((grid, grid))
    for e in entities:
        col = min(max(int(e.anchor.x / page_w * grid), 0), grid - 1)
        row = min(max(int(e.anchor.y / page_h * grid), 0), grid - 1)
        hist[row, col] += 1
    return l2_normalize(hist.ravel())


@dataclass(frozen=True)
class DocVector:
    text_part: np.ndarray
    layout_part: np.ndarray
    combined: np.ndarray


def build_doc_vector(text_vec, layout_vec, alpha: float = 0.5) -> DocVector:
    """Concatenate independently normalized text and layout parts.

    ``alpha`` weights text against layout. The multipliers are
    sqrt(2 alpha) and sqrt(2 (1 - alpha)), so the default of 0.5 is a plain
    concatenation of unit vectors.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    t = l2_normalize(text_vec)
    lay = l2_normalize(layout_vec)
    combined = np.concatenate([math.sqrt(2 * alpha) * t, math.sqrt(2 * (1 - alpha)) * lay])
    return DocVector(t, lay, combined)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class TemplateMatrix:
    class_labels: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.shape[0] != len(self.class_labels):
            raise ValueError("one row per class label required")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("class labels must be unique")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def width(self) -> int:
        return self.rows.shape[1]


def classify(bank: TemplateMatrix, v: DocVector | np.ndarray) -> tuple[str, np.ndarray]:
    """Score ``v`` against every bank row; the best row wins, lowest index on ties."""
    vec = v.combined if isinstance(v, DocVector) else np.asarray(v, dtype=float)
    if vec.shape != (bank.width,):
        raise DimensionMismatch(f"vector length {vec.shape} vs bank width {bank.width}")
    scores = np.array([cosine_similarity(row, vec) for row in bank.rows])
    return bank.class_labels[int(np.argmax(scores))], scores


@dataclass(frozen=True)
class BankClass:
    label: str
    text: str
    vector: tuple[float, ...] | None = None
    layout: tuple[float, ...] | None = None


class TemplateBank:
    """A loaded bank file: class texts, optional external text vectors and
    optional layout vectors, plus the TF-IDF model fitted on the class texts."""

    def __init__(self, classes: Sequence[BankClass], alpha: float = 0.5, grid: int = 8):
        if not classes:
            raise SchemaError("bank has no classes")
        self.classes = list(classes)
        self.alpha = alpha
        self.grid = grid
        # a bank made only of external vectors needs no vocabulary
        needs_tfidf = any(c.vector is None for c in classes)
        self.model = fit_tfidf([c.text for c in classes]) if needs_tfidf else None
        rows = []
        for c in classes:
            text = np.array(c.vector) if c.vector is not None else transform_tfidf(self.model, c.text)
            layout = np.array(c.layout) if c.layout is not None else np.zeros(grid * grid)
            if layout.shape != (grid * grid,):
                raise DimensionMismatch(f"class {c.label!r}: layout length {len(layout)} != {grid * grid}")
            rows.append(build_doc_vector(text, layout, alpha).combined)
        if len({len(r) for r in rows}) != 1:
            raise DimensionMismatch("bank rows have different lengths")
        self.matrix = TemplateMatrix(tuple(c.label for c in classes), np.vstack(rows))

    def doc_vector(self, text: str, entities: Sequence[Entity], page_w: float, page_h: float,
                   vector: Sequence[float] | None = None) -> DocVector:
        if vector is not None:
            text_vec = np.array(vector)
        elif self.model is None:
            raise SchemaError("bank holds external vectors only; document needs a 'vector'")
        else:
            text_vec = transform_tfidf(self.model, text)
        layout = layout_vector(entities, page_w, page_h, self.grid)
        return build_doc_vector(text_vec, layout, self.alpha)

    def classify(self, v: DocVector) -> tuple[str, dict[str, float]]:
        label, scores = classify(self.matrix, v)
        return label, {lab: float(s) for lab, s in zip(self.matrix.class_labels, scores)}

    def to_json(self) -> dict[str, Any]:
        out = []
        for c in self.classes:
            rec: dict[str, Any] = {"label": c.label, "text": c.text}
            if c.vector is not None:
                rec["vector"] = list(c.vector)
            if c.layout is not None:
                rec["layout"] = list(c.layout)
            out.append(rec)
        return {"classes": out}


def _floats(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
    ):
        raise SchemaError(f"{where} must be a list of numbers")
    return tuple(float(x) for x in value)


def load_bank(raw: bytes | str, alpha: float = 0.5, grid: int = 8) -> TemplateBank:
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("classes"), list):
        raise SchemaError("bank must be an object with a 'classes' list")
    classes = []
    for k, rec in enumerate(data["classes"]):
        where = f"classes[{k}]"
        if not isinstance(rec, dict):
            raise SchemaError(f"{where} must be an object")
        label, text = rec.get("label"), rec.get("text")
        if not isinstance(label, str) or not isinstance(text, str):
            raise SchemaError(f"{where} needs string 'label' and 'text'")
        vector = _floats(rec["vector"], f"{where}.vector") if "vector" in rec else None
        layout = _floats(rec["layout"], f"{where}.layout") if "layout" in rec else None
        classes.append(BankClass(label, text, vector, layout))
    labels = [c.label for c in classes]
    if len(set(labels)) != len(labels):
        raise SchemaError("duplicate class labels in bank")
    try:
        return TemplateBank(classes, alpha, grid)
    except EmptyCorpus as exc:
        raise SchemaError(str(exc)) from exc
