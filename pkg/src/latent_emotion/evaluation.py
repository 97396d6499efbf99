"""Leave-one-subject-out evaluation, pooled metrics and the ablation grid."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .config import dump_config
from .data import MESample, prepare_dataset
from .estimators import MultimodalEmotionClassifier
from .model import FullModelConfig

logger = logging.getLogger(__name__)

NOT_REPRODUCIBLE = "not reproducible without CAS(ME)3"


class EvaluationError(RuntimeError):
    """A fold failed; ``subject`` names the held-out subject."""

    def __init__(self, subject: str, cause: BaseException):
        super().__init__(f"fold holding out {subject!r} failed: {type(cause).__name__}: {cause}")
        self.subject = subject


class Metrics(NamedTuple):
    acc: float
    uf1: float
    uar: float


def loso_folds(samples: Sequence) -> list[tuple[tuple[str, ...], str]]:
    """``(train_subjects, test_subject)`` per distinct subject, sorted by subject id."""
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 2:
        raise ValueError(f"leave-one-subject-out needs at least 2 subjects, got {subjects}")
    return [(tuple(x for x in subjects if x != held), held) for held in subjects]


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    y_true, y_pred = np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"{y_true.shape} true labels vs {y_pred.shape} predictions")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics(cm) -> Metrics:
    """Accuracy, unweighted F1 and unweighted average recall.

    A class with no true samples has recall 0; a class whose precision
    and recall are both 0 has F1 0.  Both still count in the averages.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    recall = np.divide(tp, rows, out=np.zeros_like(tp), where=rows > 0)
    precision = np.divide(tp, cols, out=np.zeros_like(tp), where=cols > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(float(tp.sum() / total), float(f1.mean()), float(recall.mean()))


@dataclass
class FoldResult:
    subject: str
    sample_ids: list[str]
    y_true: np.ndarray
    y_pred: np.ndarray
    proba: np.ndarray
    loss_log: list[float] = field(default_factory=list)

    def confusion(self, num_classes: int) -> np.ndarray:
        return confusion_matrix(self.y_true, self.y_pred, num_classes)


@dataclass
class EvalReport:
    name: str
    config: FullModelConfig
    folds: list[FoldResult]

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def confusion(self) -> np.ndarray:
        return sum((f.confusion(self.num_classes) for f in self.folds),
                   np.zeros((self.num_classes, self.num_classes), dtype=np.int64))

    @property
    def metrics(self) -> Metrics:
        return metrics(self.confusion)

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "subject", "true", "pred"] + [f"p_{c}" for c in range(self.num_classes)])
        for f in self.folds:
            for sid, t, p, pr in zip(f.sample_ids, f.y_true, f.y_pred, f.proba):
                w.writerow([sid, f.subject, int(t), int(p)] + [f"{float(v):.6f}" for v in pr])
        return buf.getvalue()

    def text(self) -> str:
        m = self.metrics
        lines = [
            f"name = {self.name}",
            f"arm = {self.config.arm}",
            f"seed = {self.seed}",
            f"folds = {len(self.folds)}",
            f"samples = {sum(len(f.sample_ids) for f in self.folds)}",
            f"acc = {m.acc:.6f}",
            f"uf1 = {m.uf1:.6f}",
            f"uar = {m.uar:.6f}",
            "",
            "[confusion]  # rows: true class, columns: predicted class",
        ]
        lines += [" ".join(f"{int(v):4d}" for v in row) for row in self.confusion]
        lines += ["", "[folds]  # subject acc n"]
        for f in self.folds:
            lines.append(f"{f.subject} {np.mean(f.y_true == f.y_pred):.6f} {len(f.sample_ids)}")
        lines += ["", "[config]", dump_config(self.config).rstrip("\n")]
        return "\n".join(lines) + "\n"

    def write(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.txt", out / "predictions.csv"]
        paths[0].write_text(self.text(), encoding="utf-8")
        paths[1].write_text(self.predictions_csv(), encoding="utf-8")
        return paths


class OracleModel:
    """Test double that predicts every sample's stored label with certainty."""

    def __init__(self, config: FullModelConfig):
        self.config = config

    def fit(self, X, y=None):
        return self

    def predict_proba(self, X) -> np.ndarray:
        return np.eye(self.config.num_classes)[[s.label for s in X]]


ModelFactory = Callable[[FullModelConfig], object]

_worker_samples: list | None = None


def _init_worker(samples) -> None:
    global _worker_samples
    _worker_samples = samples


def _run_fold(subject: str, cfg: FullModelConfig, factory: ModelFactory | None) -> FoldResult:
    samples = _worker_samples
    train_set = [s for s in samples if s.subject_id != subject]
    test_set = [s for s in samples if s.subject_id == subject]
    model = (factory or MultimodalEmotionClassifier)(cfg)
    try:
        model.fit(train_set)
        proba = np.asarray(model.predict_proba(test_set), dtype=np.float64)
    except Exception as exc:
        raise EvaluationError(subject, exc) from exc
    logger.info("fold %s done", subject)
    # ties go to the lowest class index
    return FoldResult(subject, [s.sample_id for s in test_set], np.array([s.label for s in test_set]),
                      proba.argmax(axis=1), proba, list(getattr(model, "loss_log_", [])))


def run_loso(samples: Sequence, cfg: FullModelConfig, jobs: int = 1, name: str | None = None,
             model_factory: ModelFactory | None = None) -> EvalReport:
    """Train a fresh model per held-out subject and pool the predictions.

    Raw samples are prepared once up front.  With ``jobs > 1`` folds run
    in worker processes; results are joined in subject order so the
    report does not depend on scheduling.
    """
    cfg.validate()
    samples = list(samples)
    folds = loso_folds(samples)
    if samples and isinstance(samples[0], MESample):
        samples = prepare_dataset(samples, cfg)
    subjects = [held for _, held in folds]
    if jobs <= 1:
        _init_worker(samples)
        try:
            results = [_run_fold(s, cfg, model_factory) for s in subjects]
        finally:
            _init_worker(None)
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(samples,)) as pool:
            futures = [pool.submit(_run_fold, s, cfg, model_factory) for s in subjects]
            results = [f.result() for f in futures]
    return EvalReport(name or cfg.arm, cfg, results)


# label -> (acc, uf1, uar) published for the licensed dataset
REFERENCE = {
    "colour": (0.640, 0.353, 0.345),
    "colour+depth": (0.640, 0.315, 0.318),
    "colour+depth+ps": (0.738, 0.586, 0.563),
    "colour+ps": (0.750, 0.642, 0.578),
    "weighting=uniform": (0.610, 0.258, 0.283),
    "weighting=gaussian": (0.640, 0.353, 0.345),
    "fusion=concat": (0.701, 0.492, 0.468),
    "fusion=guided": (0.738, 0.586, 0.563),
}


def ablation_grid(cfg: FullModelConfig) -> list[tuple[str, FullModelConfig]]:
    """The eight ablation rows: four modality arms, two frame weightings on
    colour only, two fusion mechanisms on the full model."""
    rows = [(arm, cfg.with_arm(arm)) for arm in ("colour", "colour+depth", "colour+depth+ps", "colour+ps")]
    colour = cfg.with_arm("colour")
    rows += [(f"weighting={w}", replace(colour, frame_weighting=w)) for w in ("uniform", "gaussian")]
    full = cfg.with_arm("colour+depth+ps")
    rows += [(f"fusion={m}", replace(full, fusion=m)) for m in ("concat", "guided")]
    return rows


@dataclass
class AblationReport:
    rows: list[tuple[str, EvalReport]]

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "arm", "frames", "fusion", "seed", "acc", "uf1", "uar",
                    "ref_acc", "ref_uf1", "ref_uar", "ref_note"])
        for label, rep in self.rows:
            m, ref = rep.metrics, REFERENCE.get(label)
            refs = [f"{v:.3f}" for v in ref] if ref else ["", "", ""]
            w.writerow([label, rep.config.arm, rep.config.frame_weighting, rep.config.fusion, rep.seed,
                        f"{m.acc:.6f}", f"{m.uf1:.6f}", f"{m.uar:.6f}", *refs, NOT_REPRODUCIBLE if ref else ""])
        return buf.getvalue()

    def write(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        summary = out / "summary.csv"
        summary.write_text(self.summary_csv(), encoding="utf-8")
        paths = [summary]
        for label, rep in self.rows:
            paths += rep.write(out / label.replace("=", "_").replace("+", "_"))
        return paths

    def __getitem__(self, label: str) -> EvalReport:
        return dict(self.rows)[label]


def run_ablations(samples: Sequence, cfg: FullModelConfig, jobs: int = 1,
                  model_factory: ModelFactory | None = None) -> AblationReport:
    """All eight rows; rows with identical configurations share one LOSO run."""
    samples = list(samples)
    done: dict[FullModelConfig, EvalReport] = {}
    rows = []
    for label, row_cfg in ablation_grid(cfg):
        if row_cfg not in done:
            done[row_cfg] = run_loso(samples, row_cfg, jobs, label, model_factory)
        rows.append((label, replace(done[row_cfg], name=label)))
    return AblationReport(rows)
