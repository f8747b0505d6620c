"""Multi-view evidence gathering and label fusion.

For a target frame f, every reference frame f' in a window of m neighbors
votes on each measured pixel of f.  The pixel's 3D point is projected into
f' and compared against what f' actually measured along that ray (both sides
rendered with the same z-buffer splatter so renderer bias cancels):

* depths agree within epsilon        -> valid evidence (v)
* f' measured well behind the point  -> see-through-behind evidence (b)
* f' measured nothing along the ray  -> see-through-empty evidence (e)

Flags accumulate by OR across references.  Candidates occluded by their own
frame's cloud in f' are skipped (f' cannot reason about them), and b fires
only when every measurement within half a pixel of the projection lies
behind the candidate, which keeps splat rounding at silhouettes from
manufacturing see-through evidence.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    LABEL_SMEARED,
    LABEL_UNKNOWN,
    LABEL_VALID,
    AnnotatorConfig,
    DatasetError,
    EvidenceMap,
    LabelMap,
    SceneSequence,
)
from .geometry import backproject, backproject_points, project_points, render_depth

# Chebyshev radius of the see-through-behind corroboration veto.
_CORROBORATION_RADIUS_PX = 2


@dataclass(frozen=True)
class WeightSet:
    """Per-evidence-class loss weights, 1 - count_k / total (Eq. of balance)."""

    w_b: float
    w_e: float
    w_v: float

    def __post_init__(self):
        for name in ("w_b", "w_e", "w_v"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")

    @classmethod
    def from_counts(cls, n_v: int, n_b: int, n_e: int) -> "WeightSet":
        total = n_v + n_b + n_e
        if total <= 0:
            raise ValueError("cannot derive weights from zero evidence counts")
        return cls(w_b=1.0 - n_b / total, w_e=1.0 - n_e / total, w_v=1.0 - n_v / total)

    def to_dict(self) -> dict:
        return {"w_b": self.w_b, "w_e": self.w_e, "w_v": self.w_v}


def reference_window(n_frames: int, f: int, m: int) -> list[int]:
    """Reference indices [f-m//2, f+m//2] clipped to the sequence, minus f.

    Truncation at sequence ends is fine; it is an error only when fewer than
    min(2, m // 2) references remain (m=2 leaves one reference at the ends).
    """
    lo = max(0, f - m // 2)
    hi = min(n_frames - 1, f + m // 2)
    refs = [i for i in range(lo, hi + 1) if i != f]
    need = min(2, m // 2)
    if len(refs) < need:
        raise DatasetError(
            f"frame {f}: only {len(refs)} reference frame(s) in window; need >= {need}"
        )
    return refs


def angle_confidence(cos_theta: np.ndarray | float) -> np.ndarray | float:
    """sin^2 of the viewing-ray angle, clamped so angles past 90 deg pin to 1."""
    c = np.clip(cos_theta, 0.0, 1.0)
    return 1.0 - c * c


class _FrameCache:
    """Per-frame derived data shared across reference pairs."""

    def __init__(self, seq: SceneSequence, cfg: AnnotatorConfig):
        if not seq.is_posed:
            unposed = [f.frame_id for f in seq.frames if f.pose is None]
            raise DatasetError(f"sequence is not posed (frames {unposed}); run alignment first")
        self.seq = seq
        self.cfg = cfg
        self._cam_points: dict[int, np.ndarray] = {}
        self._self_render: dict[int, np.ndarray] = {}
        self._ref_min3: dict[int, np.ndarray] = {}
        self._empty_dist: dict[int, np.ndarray] = {}

    def cam_points(self, i: int) -> np.ndarray:
        if i not in self._cam_points:
            frame = self.seq[i]
            self._cam_points[i] = backproject_points(frame.depth, frame.camera)[frame.valid_mask]
        return self._cam_points[i]

    def world_points(self, i: int) -> np.ndarray:
        return self.seq[i].pose.apply(self.cam_points(i))

    def self_render(self, i: int) -> np.ndarray:
        """d_{f'}^{(f')}: the frame's own cloud through the shared renderer."""
        if i not in self._self_render:
            frame = self.seq[i]
            cloud = backproject(frame, world=False)
            self._self_render[i] = render_depth(cloud, frame.camera, pose=None).depth
        return self._self_render[i]

    def ref_measured_or_inf(self, i: int) -> np.ndarray:
        if i not in self._ref_min3:
            ref = self.self_render(i)
            self._ref_min3[i] = np.where(ref > 0, ref, np.inf)
        return self._ref_min3[i]

    def empty_distance(self, i: int) -> np.ndarray:
        """Chebyshev distance from each empty pixel to the nearest return."""
        if i not in self._empty_dist:
            ref = self.self_render(i)
            if (ref > 0).any():
                dist = ndimage.distance_transform_cdt(ref == 0, metric="chessboard")
                dist = dist.astype(np.int64)
            else:
                dist = np.full(ref.shape, np.iinfo(np.int64).max // 2, dtype=np.int64)
            self._empty_dist[i] = dist
        return self._empty_dist[i]


def _pair_vote(cache: _FrameCache, f: int, f_ref: int):
    """Evidence of reference f_ref about frame f's measured pixels.

    Returns (pix_v, pix_u) raster indices of the candidates plus boolean
    votes v/b/e, the empty margin per candidate (-1 where e is false), and
    the per-candidate confidence where v holds.

    The b vote carries a half-pixel guard: it fires only when every
    measured depth on the four pixels bracketing the continuous projection
    lies behind the candidate by more than delta.  A true surface point is
    re-measured by the reference within that bracket, so splat rounding at
    silhouettes cannot fake see-through evidence.
    """
    seq = cache.seq
    frame = seq[f]
    ref_frame = seq[f_ref]
    cam = ref_frame.camera
    world = cache.world_points(f)

    u, v, z = project_points(world, cam, ref_frame.pose)
    ur = np.round(u).astype(np.int64)
    vr = np.round(v).astype(np.int64)
    ok = (z > 0) & (ur >= 0) & (ur < cam.width) & (vr >= 0) & (vr < cam.height)

    n = len(world)
    vote_v = np.zeros(n, dtype=bool)
    vote_b = np.zeros(n, dtype=bool)
    vote_e = np.zeros(n, dtype=bool)
    margin = np.full(n, -1, dtype=np.int64)
    conf = np.zeros(n)

    ref = cache.self_render(f_ref)
    idx = np.nonzero(ok)[0]
    ru, rv, rz = ur[idx], vr[idx], z[idx]
    ref_at = ref[rv, ru]
    measured = ref_at > 0

    eps = cache.cfg.epsilon_mm
    delta = cache.cfg.delta_mm
    k = rz - ref_at
    vote_v[idx[measured & (np.abs(k) < eps)]] = True

    fu = np.floor(u[idx]).astype(np.int64)
    fv = np.floor(v[idx]).astype(np.int64)
    support_in = (fu >= 0) & (fu + 1 < cam.width) & (fv >= 0) & (fv + 1 < cam.height)
    fu_c = np.clip(fu, 0, cam.width - 2)
    fv_c = np.clip(fv, 0, cam.height - 2)
    ref_inf = cache.ref_measured_or_inf(f_ref)
    support_min = np.minimum.reduce(
        [
            ref_inf[fv_c, fu_c],
            ref_inf[fv_c, fu_c + 1],
            ref_inf[fv_c + 1, fu_c],
            ref_inf[fv_c + 1, fu_c + 1],
        ]
    )
    behind = support_in & np.isfinite(support_min) & (support_min > rz + delta)
    # Corroboration veto: a return within +-delta anywhere near the
    # projection means the reference plausibly re-measured this surface, so
    # seeing "behind" it is not trustworthy see-through evidence.
    if behind.any():
        r = _CORROBORATION_RADIUS_PX
        bidx = np.nonzero(behind)[0]
        bu, bv, bz = ru[bidx], rv[bidx], rz[bidx]
        corroborated = np.zeros(len(bidx), dtype=bool)
        for du in range(-r, r + 1):
            for dv in range(-r, r + 1):
                nu = np.clip(bu + du, 0, cam.width - 1)
                nv = np.clip(bv + dv, 0, cam.height - 1)
                corroborated |= np.abs(ref_inf[nv, nu] - bz) <= delta
        behind[bidx[corroborated]] = False
    vote_b[idx[behind]] = True

    empty = ~measured
    if empty.any():
        dist = cache.empty_distance(f_ref)[rv[empty], ru[empty]]
        border = np.minimum.reduce(
            [ru[empty], rv[empty], cam.width - 1 - ru[empty], cam.height - 1 - rv[empty]]
        )
        m = np.minimum(dist - 1, border)
        eidx = idx[empty]
        vote_e[eidx] = True
        margin[eidx] = m

    if vote_v.any():
        vi = np.nonzero(vote_v)[0]
        p = world[vi]
        r1 = p - frame.pose.translation
        r2 = p - ref_frame.pose.translation
        cos = np.einsum("ij,ij->i", r1, r2) / (
            np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1)
        )
        conf[vi] = angle_confidence(cos)

    pix = seq_pixels(cache, f)
    return pix, vote_v, vote_b, vote_e, margin, conf


def seq_pixels(cache: _FrameCache, f: int) -> tuple[np.ndarray, np.ndarray]:
    mask = cache.seq[f].valid_mask
    pv, pu = np.nonzero(mask)
    return pv, pu


def gather_evidence(seq: SceneSequence, f: int, cfg: AnnotatorConfig,
                    _cache: _FrameCache | None = None) -> EvidenceMap:
    """Accumulate v/b/e evidence for frame f across its reference window.

    The window truncates at sequence ends; fewer than two remaining
    references is an error.  Confidence c is filled for validated pixels.
    """
    cache = _cache if _cache is not None else _make_cache(seq, cfg)
    refs = reference_window(len(seq), f, cfg.m)
    frame = seq[f]
    ev = EvidenceMap(frame.depth.shape)
    for f_ref in refs:
        pix, vv, vb, vee, margin, conf = _pair_vote(cache, f, f_ref)
        pv, pu = pix
        ev.v[pv[vv], pu[vv]] = True
        ev.b[pv[vb], pu[vb]] = True
        ev.e[pv[vee], pu[vee]] = True
        np.maximum.at(ev.e_margin, (pv[vee], pu[vee]), margin[vee])
        np.maximum.at(ev.c, (pv[vv], pu[vv]), conf[vv])
    ev.c[~ev.v] = 0.0
    return ev


def _make_cache(seq: SceneSequence, cfg: AnnotatorConfig) -> _FrameCache:
    return _FrameCache(seq, cfg)


def confidence(seq: SceneSequence, f: int, evidence: EvidenceMap,
               cfg: AnnotatorConfig | None = None) -> EvidenceMap:
    """Recompute c = sin^2(theta) over validating references (max-aggregated)."""
    cfg = cfg if cfg is not None else AnnotatorConfig()
    fresh = gather_evidence(seq, f, cfg)
    out = evidence.copy()
    out.c = np.where(evidence.v, fresh.c, 0.0)
    return out


def filter_empty_evidence(evidence: EvidenceMap, window: int) -> EvidenceMap:
    """Keep e only where the reference neighborhood of the stated window was
    entirely empty; window=1 is the identity on e."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 1")
    out = evidence.copy()
    out.e = evidence.e & (evidence.e_margin >= (window - 1) // 2)
    return out


def fuse_labels(evidence: EvidenceMap) -> LabelMap:
    """Ternary fusion: smear evidence alone -> smeared, valid evidence alone
    -> valid, nothing or conflicting evidence -> unknown."""
    smear = evidence.b | evidence.e
    label = np.full(evidence.shape, LABEL_UNKNOWN, dtype=np.uint8)
    label[smear & ~evidence.v] = LABEL_SMEARED
    label[evidence.v & ~smear] = LABEL_VALID
    conf = np.zeros(evidence.shape)
    conf[label == LABEL_SMEARED] = 1.0
    valid = label == LABEL_VALID
    conf[valid] = evidence.c[valid]
    return LabelMap(label, conf)


def class_weights(evidence_maps) -> WeightSet:
    """Corpus-level balance weights from raw evidence flag counts."""
    n_v = n_b = n_e = 0
    for ev in evidence_maps:
        n_v += int(ev.v.sum())
        n_b += int(ev.b.sum())
        n_e += int(ev.e.sum())
    return WeightSet.from_counts(n_v, n_b, n_e)


@dataclass
class AnnotationResult:
    labels: list[LabelMap]
    evidence: list[EvidenceMap]
    stats: dict


def annotate_frame(seq: SceneSequence, f: int, cfg: AnnotatorConfig,
                   _cache: _FrameCache | None = None) -> tuple[LabelMap, EvidenceMap]:
    ev = gather_evidence(seq, f, cfg, _cache=_cache)
    ev = filter_empty_evidence(ev, cfg.window)
    return fuse_labels(ev), ev


def annotate_sequence(seq: SceneSequence, cfg: AnnotatorConfig,
                      jobs: int = 1) -> AnnotationResult:
    """Annotate every frame; stats report label counts and unknown coverage.

    Frames are independent given the shared read-only cache, so jobs > 1
    fans them out across a thread pool.
    """
    cache = _make_cache(seq, cfg)
    n = len(seq)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda f: annotate_frame(seq, f, cfg, _cache=cache), range(n)))
    else:
        results = [annotate_frame(seq, f, cfg, _cache=cache) for f in range(n)]
    labels = [r[0] for r in results]
    evidence = [r[1] for r in results]

    per_frame = []
    tot = {"measured": 0, "valid": 0, "smeared": 0, "unknown": 0}
    for frame, lab in zip(seq.frames, labels):
        measured = int(frame.valid_mask.sum())
        n_valid = int(np.sum(lab.label == LABEL_VALID))
        n_smear = int(np.sum(lab.label == LABEL_SMEARED))
        n_unknown = measured - n_valid - n_smear
        per_frame.append(
            {
                "frame_id": frame.frame_id,
                "measured": measured,
                "valid": n_valid,
                "smeared": n_smear,
                "unknown": n_unknown,
            }
        )
        tot["measured"] += measured
        tot["valid"] += n_valid
        tot["smeared"] += n_smear
        tot["unknown"] += n_unknown

    n_v = sum(int(ev.v.sum()) for ev in evidence)
    n_b = sum(int(ev.b.sum()) for ev in evidence)
    n_e = sum(int(ev.e.sum()) for ev in evidence)
    stats = {
        "frames": per_frame,
        "totals": tot,
        "unknown_fraction": tot["unknown"] / tot["measured"] if tot["measured"] else None,
        "evidence_counts": {"v": n_v, "b": n_b, "e": n_e},
        "config": {
            "epsilon_mm": cfg.epsilon_mm,
            "delta_mm": cfg.delta_mm,
            "window": cfg.window,
            "m": cfg.m,
            "alpha": cfg.alpha,
            "beta": cfg.beta,
        },
    }
    if n_v + n_b + n_e > 0:
        stats["weights"] = WeightSet.from_counts(n_v, n_b, n_e).to_dict()
    return AnnotationResult(labels=labels, evidence=evidence, stats=stats)
