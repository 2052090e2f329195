"""Cosine scoring, equal error rate and trial-list files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import UsageError

_LABELS = {"target": 1, "tgt": 1, "1": 1, "true": 1, "nontarget": 0, "non": 0, "imp": 0, "0": 0, "false": 0}


class TrialFormatError(ValueError):
    pass


def cosine_score(e1, e2) -> float:
    e1 = np.asarray(e1, dtype=np.float64).reshape(-1)
    e2 = np.asarray(e2, dtype=np.float64).reshape(-1)
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise UsageError("cosine_score is undefined for a zero vector")
    return float(np.clip(np.dot(e1, e2) / (n1 * n2), -1.0, 1.0))


@dataclass(frozen=True)
class TrialSet:
    scores: np.ndarray
    labels: np.ndarray  # 1 = target, 0 = nontarget

    @classmethod
    def from_lists(cls, target_scores, nontarget_scores) -> "TrialSet":
        t = np.asarray(target_scores, dtype=np.float64)
        n = np.asarray(nontarget_scores, dtype=np.float64)
        return cls(np.concatenate([t, n]), np.concatenate([np.ones(t.size, np.int8), np.zeros(n.size, np.int8)]))


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float


def compute_eer(trials: TrialSet) -> EerResult:
    """Equal error rate with acceptance at ``score >= threshold``.

    Operating points are taken at every distinct score plus "accept nothing";
    when no point has FAR == FRR exactly, both rates are interpolated linearly
    between the two points that straddle the crossing.
    """
    scores = np.asarray(trials.scores, dtype=np.float64)
    labels = np.asarray(trials.labels).astype(bool)
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    if tar.size == 0 or non.size == 0:
        raise UsageError(f"EER needs both classes, got {tar.size} targets and {non.size} nontargets")
    thresholds = np.append(np.unique(scores), np.inf)
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    diff = far - frr
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return EerResult(float(far[i]), float(thresholds[i]))
    alpha = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + alpha * (far[i] - far[i - 1])
    hi = thresholds[i] if np.isfinite(thresholds[i]) else thresholds[i - 1]
    thr = thresholds[i - 1] + alpha * (hi - thresholds[i - 1])
    return EerResult(float(eer), float(thr))


def _parse_label(text: str, where: str) -> int:
    try:
        return _LABELS[text.strip().lower()]
    except KeyError:
        raise TrialFormatError(f"{where}: label must be target/nontarget or 1/0, got {text!r}") from None


def read_trials(path) -> list[tuple]:
    """Parse ``label<TAB>score`` or ``label<TAB>enroll_id<TAB>test_id`` lines."""
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        where = f"{path}:{lineno}"
        if len(parts) == 2:
            try:
                rows.append((_parse_label(parts[0], where), float(parts[1])))
            except ValueError as exc:
                if isinstance(exc, TrialFormatError):
                    raise
                raise TrialFormatError(f"{where}: score is not a number: {parts[1]!r}") from None
        elif len(parts) == 3:
            rows.append((_parse_label(parts[0], where), parts[1], parts[2]))
        else:
            raise TrialFormatError(f"{where}: expected 2 or 3 tab-separated fields, got {len(parts)}")
    return rows


def scored_trials(rows) -> TrialSet:
    if any(len(r) != 2 for r in rows):
        raise TrialFormatError("trial list has enroll/test ids; score it first")
    labels = np.array([r[0] for r in rows], dtype=np.int8)
    scores = np.array([r[1] for r in rows], dtype=np.float64)
    return TrialSet(scores, labels)


def all_pair_trials(embeddings: np.ndarray, speakers) -> TrialSet:
    """Every unordered pair of embeddings, target when the speakers match."""
    e = np.asarray(embeddings, dtype=np.float64)
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    spk = np.asarray(speakers)
    iu, ju = np.triu_indices(len(e), k=1)
    scores = np.clip(np.einsum("ij,ij->i", e[iu], e[ju]), -1.0, 1.0)
    return TrialSet(scores, (spk[iu] == spk[ju]).astype(np.int8))
