"""Embedding-space instruments: root estimation, radial statistics,
geodesic traversals with cone-filtered retrieval, ranked retrieval and
prompt-ensembled classification.

Works on an :class:`EmbeddingIndex` in either representation space:

* "lorentz" - rows are hyperboloid space components at one curvature; the
  most generic concept [ROOT] is the hyperboloid origin.
* "sphere"  - rows are unit vectors; [ROOT] is the L2-normalized mean of
  all rows.

Indexes are immutable after load; every query here is read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import entailment, geometry
from .geometry import Curvature, HyperbolicPoint
from .losses import LossParams

LABEL_CLASSES = ("text", "image", "root")
ROOT_LABEL = "[ROOT]"
SPHERE_NORM_TOL = 1e-6


@dataclass(frozen=True)
class EmbeddingIndex:
    space: str                        # "lorentz" | "sphere"
    curvature: float | None           # lorentz only
    vectors: np.ndarray               # N x n float64 space components
    labels: tuple[tuple[str, str], ...]   # (class, text) per row
    root_id: int | None = None

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError(f"index vectors must be N x n, got shape {vectors.shape}")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple((str(c), str(t)) for c, t in self.labels))
        if vectors.shape[0] != len(self.labels):
            raise ValueError(
                f"row count {vectors.shape[0]} != label count {len(self.labels)}"
            )
        for i, (cls, _) in enumerate(self.labels):
            if cls not in LABEL_CLASSES:
                raise ValueError(f"unknown label class {cls!r} at row {i}")
        if self.space == "lorentz":
            if self.curvature is None or not (self.curvature > 0):
                raise ValueError("lorentz index requires a positive curvature")
        elif self.space == "sphere":
            if vectors.shape[0]:
                norms = np.linalg.norm(vectors, axis=1)
                off = np.abs(norms - 1.0)
                if float(off.max()) > SPHERE_NORM_TOL:
                    bad = int(np.argmax(off))
                    raise ValueError(
                        f"sphere row {bad} has norm {norms[bad]:.8f}, expected 1 within {SPHERE_NORM_TOL}"
                    )
        else:
            raise ValueError(f"unknown space {self.space!r}")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def curv(self) -> Curvature:
        if self.space != "lorentz":
            raise ValueError("curvature is only defined for lorentz indexes")
        return Curvature(float(self.curvature))

    def rows_of_class(self, cls: str) -> np.ndarray:
        return np.array([i for i, (c, _) in enumerate(self.labels) if c == cls], dtype=int)


def estimate_root(index: EmbeddingIndex) -> np.ndarray:
    """[ROOT] vector for an index: the hyperboloid origin (all-zero space
    components) for lorentz, the normalized mean of all rows for sphere."""
    if index.count == 0:
        raise ValueError("cannot estimate a root for an empty index")
    if index.space == "lorentz":
        return np.zeros(index.dim)
    mean = index.vectors.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-9:
        raise ValueError("degenerate sphere root: mean embedding has near-zero norm")
    return mean / norm


def with_root(index: EmbeddingIndex) -> EmbeddingIndex:
    """Index with a [ROOT] entry appended (no-op if already present)."""
    if index.root_id is not None:
        return index
    root = estimate_root(index)
    return replace(
        index,
        vectors=np.vstack([index.vectors, root[None, :]]),
        labels=index.labels + (("root", ROOT_LABEL),),
        root_id=index.count,
    )


# ---------------------------------------------------------------------------
# Radial statistics
# ---------------------------------------------------------------------------

def root_distance_proxy(index: EmbeddingIndex, rows: np.ndarray | None = None) -> np.ndarray:
    """Monotone distance-from-[ROOT] proxy per row.

    lorentz: ||z_space||; sphere: 0.5 * (1 - <z, root>).
    """
    vectors = index.vectors if rows is None else np.asarray(rows, dtype=np.float64)
    if index.space == "lorentz":
        return np.linalg.norm(vectors, axis=-1)
    root = (
        index.vectors[index.root_id]
        if index.root_id is not None
        else estimate_root(index)
    )
    return 0.5 * (1.0 - vectors @ root)


@dataclass(frozen=True)
class ClassStats:
    count: int
    mean: float
    std: float
    quantiles: tuple[float, float, float, float, float]   # min, q25, median, q75, max
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def root_distance_stats(index: EmbeddingIndex, bins: int = 32) -> dict[str, ClassStats]:
    """Per-label-class histogram and summary of the root-distance proxy."""
    if index.count == 0:
        raise ValueError("cannot compute statistics of an empty index")
    proxies = root_distance_proxy(index)
    out: dict[str, ClassStats] = {}
    for cls in LABEL_CLASSES:
        rows = index.rows_of_class(cls)
        if rows.size == 0:
            continue
        vals = proxies[rows]
        lo, hi = float(vals.min()), float(vals.max())
        if lo == hi:
            edges = np.array([lo, hi])
            counts = np.array([vals.size])
        else:
            counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
        out[cls] = ClassStats(
            count=int(vals.size),
            mean=float(vals.mean()),
            std=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            quantiles=tuple(float(q) for q in np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])),
            hist_edges=edges,
            hist_counts=counts,
        )
    return out


def stats_summary_csv(stats: dict[str, ClassStats]) -> str:
    lines = ["class,count,mean,std,q0,q25,q50,q75,q100"]
    for cls, s in stats.items():
        q = ",".join(f"{v:.10g}" for v in s.quantiles)
        lines.append(f"{cls},{s.count},{s.mean:.10g},{s.std:.10g},{q}")
    return "\n".join(lines) + "\n"


def stats_hist_csv(stats: dict[str, ClassStats]) -> str:
    lines = ["class,bin_lo,bin_hi,count"]
    for cls, s in stats.items():
        for i, n in enumerate(s.hist_counts):
            lines.append(
                f"{cls},{s.hist_edges[i]:.10g},{s.hist_edges[i + 1]:.10g},{int(n)}"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Geodesic interpolation and traversal
# ---------------------------------------------------------------------------

def interpolate_steps(y, index: EmbeddingIndex, steps: int = 50) -> list[np.ndarray]:
    """Equally spaced walk from an embedding to [ROOT]; step 0 is y, the
    last step is [ROOT] exactly.

    lorentz: linear interpolation of the origin log map, lifted back via
    the exponential map (the radial distance shrinks linearly).  sphere:
    linear interpolation toward the root vector, re-normalized per step.
    """
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    y = np.asarray(y, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, steps)
    if index.space == "lorentz":
        c = index.curv().c
        v = np.asarray(geometry.log_space(y, c))
        out = [np.asarray(geometry.exp_space(v * (1.0 - t), c)) for t in ts]
        out[0] = y.copy()
        out[-1] = np.zeros_like(y)
        return out
    root = (
        index.vectors[index.root_id]
        if index.root_id is not None
        else estimate_root(index)
    )
    out = []
    for t in ts:
        mix = (1.0 - t) * y + t * root
        norm = float(np.linalg.norm(mix))
        if norm < 1e-9:
            raise ValueError(f"sphere interpolation passes through zero at t={t:.4f}")
        out.append(mix / norm)
    out[0] = y.copy()
    out[-1] = root.copy()
    return out


@dataclass(frozen=True)
class TraversalResult:
    """Per-step retrievals plus the deduplicated first-hit view."""

    steps: tuple[tuple[int, str], ...]
    unique: tuple[str, ...]


def _entails(txt_sp: np.ndarray, step_sp: np.ndarray, c: float, boundary: float,
             slack: float) -> np.ndarray:
    """Hinge losses of every text apex against one step embedding."""
    n = txt_sp.shape[0]
    txt_t = np.asarray(geometry.time_part(txt_sp, c))
    step_rows = np.broadcast_to(step_sp, txt_sp.shape)
    step_t = np.broadcast_to(np.asarray(geometry.time_part(step_sp, c)), (n, 1))
    losses = np.asarray(
        entailment.hinge_rows(txt_sp, txt_t, step_rows, step_t, c, boundary)
    )[:, 0]
    return losses <= slack


def traverse(y, text_index: EmbeddingIndex, steps: int = 50, cone_slack: float = 0.0,
             cone_boundary: float = 0.1) -> TraversalResult:
    """Walk an embedding to [ROOT], retrieving the best text at each step.

    lorentz: candidates are restricted to texts whose cone contains the
    step (hinge loss <= cone_slack); [ROOT] always qualifies, and a step
    at the exact origin retrieves [ROOT] directly (the cone formula is
    undefined there).  Scoring is by Lorentzian inner product.  sphere:
    plain cosine retrieval, no cone filter.  Ties prefer [ROOT], then the
    lowest row index.
    """
    if text_index.root_id is None:
        raise ValueError("traversal needs an index with a [ROOT] entry")
    text_rows = text_index.rows_of_class("text")
    path = interpolate_steps(y, text_index, steps=steps)
    root_label = text_index.labels[text_index.root_id][1]

    retrieved: list[tuple[int, str]] = []
    if text_index.space == "sphere":
        cand_ids = np.concatenate([[text_index.root_id], text_rows])
        cand = text_index.vectors[cand_ids]
        for k, step in enumerate(path):
            scores = cand @ step
            best = int(np.argmax(scores))  # argmax keeps the first (root-first) on ties
            retrieved.append((k, text_index.labels[cand_ids[best]][1]))
    else:
        c = text_index.curv().c
        txt_sp = text_index.vectors[text_rows]
        txt_t = np.asarray(geometry.time_part(txt_sp, c))
        for k, step in enumerate(path):
            if float(np.dot(step, step)) == 0.0:
                retrieved.append((k, root_label))
                continue
            step_t = float(np.asarray(geometry.time_part(step, c)).item())
            mask = _entails(txt_sp, step, c, cone_boundary, cone_slack)
            root_score = -step_t / math.sqrt(c)      # <step, O>_L
            best_label = root_label
            best_score = root_score
            if np.any(mask):
                scores = txt_sp[mask] @ step - txt_t[mask][:, 0] * step_t
                j = int(np.argmax(scores))
                if scores[j] > best_score:
                    best_score = float(scores[j])
                    best_label = text_index.labels[text_rows[mask][j]][1]
            retrieved.append((k, best_label))

    unique: list[str] = []
    for _, label in retrieved:
        if label not in unique:
            unique.append(label)
    return TraversalResult(steps=tuple(retrieved), unique=tuple(unique))


# ---------------------------------------------------------------------------
# Retrieval and classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Retrieved:
    row: int
    label_class: str
    label: str
    score: float


def retrieve(query, index: EmbeddingIndex, k: int, calibrated: bool = False,
             tau: float = 1.0) -> list[Retrieved]:
    """Top-k index rows for a query embedding.

    lorentz ranks by Lorentzian inner product (descending; equivalently
    ascending distance); sphere ranks by cosine.  calibrated=True returns
    softmax(-distance / tau) scores instead of raw similarities (lorentz
    only).  Ties break toward the lower row index; k=0 yields [].
    """
    if k < 0 or k > index.count:
        raise ValueError(f"k must be in [0, {index.count}]")
    if k == 0:
        return []
    query = np.asarray(query, dtype=np.float64)
    if index.space == "sphere":
        if calibrated:
            raise ValueError("calibrated scores are defined for lorentz indexes only")
        scores = index.vectors @ query
    else:
        c = index.curv().c
        q_t = float(np.asarray(geometry.time_part(query, c)).item())
        times = np.asarray(geometry.time_part(index.vectors, c))[:, 0]
        inner = index.vectors @ query - times * q_t
        if calibrated:
            d = np.asarray(geometry.dist_from_inner(inner[:, None], c))[:, 0]
            z = -d / tau
            z -= z.max()
            e = np.exp(z)
            scores = e / e.sum()
        else:
            scores = inner
    order = np.argsort(-scores, kind="stable")[:k]
    return [
        Retrieved(
            row=int(i),
            label_class=index.labels[i][0],
            label=index.labels[i][1],
            score=float(scores[i]),
        )
        for i in order
    ]


@dataclass(frozen=True)
class Classification:
    scores: dict[str, float]
    predicted: str


def classify(image_embedding, prompt_sets: dict[str, list], params: LossParams) -> Classification:
    """Zero-shot classification with prompt ensembling.

    Each class embeds as the arithmetic mean of its pre-lift prompt
    vectors; for a hyperbolic image embedding the mean is scaled by the
    text scale and lifted at the clamped curvature, then scored by
    Lorentzian inner product.  For a unit-vector (sphere) image the mean
    is re-normalized and scored by cosine.  Ties predict the first class
    in sorted name order.
    """
    if not prompt_sets:
        raise ValueError("need at least one class")
    means: dict[str, np.ndarray] = {}
    for name, prompts in prompt_sets.items():
        if len(prompts) == 0:
            raise ValueError(f"class {name!r} has no prompt vectors")
        mat = np.asarray(prompts, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"class {name!r} prompts must be a list of vectors")
        means[name] = mat.mean(axis=0)

    scores: dict[str, float] = {}
    if isinstance(image_embedding, HyperbolicPoint):
        c = params.curv().c
        if image_embedding.curv.c != c:
            raise ValueError("image embedding curvature differs from params")
        q_sp, q_t = image_embedding.space, image_embedding.time
        for name in sorted(means):
            v = means[name] * params.scale_txt()
            sp = np.asarray(geometry.exp_space(v, c))
            t = float(np.asarray(geometry.time_part(sp, c)).item())
            scores[name] = float(np.dot(q_sp, sp) - q_t * t)
    else:
        q = np.asarray(image_embedding, dtype=np.float64)
        for name in sorted(means):
            m = means[name]
            norm = float(np.linalg.norm(m))
            if norm < 1e-9:
                raise ValueError(f"class {name!r} mean prompt has near-zero norm")
            scores[name] = float(q @ (m / norm))

    predicted = max(sorted(scores), key=lambda nm: scores[nm])
    return Classification(scores=scores, predicted=predicted)
