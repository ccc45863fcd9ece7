"""Per-recording diarization pipeline and batch runner.

Stages: VAD fusion -> binding embeddings to speech -> PCA + PLDA scoring ->
AHC (underclustered) -> VBx -> reclustering -> second-speaker assignment.
VAD, OVD and second-speaker assignment can each be replaced by oracles
derived from the reference.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ahc, overlap, plda as plda_mod, recluster as recluster_mod, rttm_io, segmentation, vbx
from .config import PipelineConfig
from .metrics import ScoringReport, score_recording
from .plda import PldaModel
from .segmentation import EmbeddingSequence, frames_to_subsegments
from .timeline import Annotation, Timeline, Turn, from_mask
from .vad_fusion import fuse

log = logging.getLogger(__name__)

STAGES = ("vad", "ahc", "vbx", "recluster", "overlap")
ORACLE = "oracle"


@dataclass
class RecordingInput:
    recording_id: str
    embeddings: EmbeddingSequence
    vad_systems: dict[str, Timeline] | None = None  # None -> oracle VAD
    ovd: Timeline | str | None = None  # Timeline, "oracle" or None
    reference: Annotation | None = None


@dataclass
class RecordingOutput:
    recording_id: str
    vad: Timeline
    stages: dict[str, Annotation] = field(default_factory=dict)
    final: Annotation | None = None
    gamma: np.ndarray | None = None
    gamma_labels: list[str] | None = None
    elbo_trace: list[float] | None = None
    no_second_available: int = 0


def labels_to_annotation(
    recording_id: str,
    labels: np.ndarray,
    names: Sequence[str],
    owner: np.ndarray,
    frame_step: float,
) -> Annotation:
    """Spread per-sub-segment labels onto the frames each sub-segment owns."""
    frame_labels = np.full(len(owner), -1, dtype=np.int64)
    mapped = owner >= 0
    frame_labels[mapped] = np.asarray(labels)[owner[mapped]]
    turns = []
    for k, name in enumerate(names):
        turns.extend(Turn(seg, name) for seg in from_mask(frame_labels == k, frame_step))
    turns.sort(key=lambda t: (t.segment.onset, t.speaker))
    return Annotation(recording_id, tuple(turns))


def names_by_first_occurrence(labels: np.ndarray, n_columns: int) -> list[str]:
    order = list(dict.fromkeys(np.asarray(labels).tolist()))
    order += [c for c in range(n_columns) if c not in order]
    names = [""] * n_columns
    for rank, col in enumerate(order):
        names[col] = f"spk{rank:02d}"
    return names


def preprocess_embeddings(emb: EmbeddingSequence, model: PldaModel, cfg: PipelineConfig):
    if cfg.preprocess == "lnorm":
        vectors = plda_mod.preprocess(emb.vectors, model.mean, np.eye(emb.dim))
        model = PldaModel(np.zeros(emb.dim), model.across_class, model.within_class)
        emb = EmbeddingSequence(emb.recording_id, emb.dim, emb.subsegments, vectors)
    return emb, model


def scoring_space(emb: EmbeddingSequence, model: PldaModel, cfg: PipelineConfig):
    """Per-recording PCA projection, the projected PLDA model and the LLR matrix."""
    proj, _ = plda_mod.per_recording_pca(emb.vectors - model.mean, cfg.pca_var)
    y = emb.vectors @ proj.T
    model_p = plda_mod.project_plda(model, proj)
    scores = plda_mod.llr_matrix(y, model_p) if len(emb) > 1 else np.zeros((1, 1))
    return y, model_p, scores


def vbx_space(y: np.ndarray, model_p: PldaModel) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates where within-class covariance is I and across-class is diag(phi)."""
    diag = plda_mod.diagonalize(model_p)
    return diag.apply(y, model_p.mean), diag.phi


def diarize_recording(rec: RecordingInput, model: PldaModel, cfg: PipelineConfig, stop_after: str | None = None) -> RecordingOutput:
    step = cfg.frame_step
    if rec.vad_systems is None:
        if rec.reference is None:
            raise ValueError("oracle VAD requested without a reference")
        vad = rec.reference.speech()
    else:
        fcfg = cfg.fusion()
        if fcfg.asr_system not in rec.vad_systems:
            fcfg.asr_max_distance = None
        vad = fuse(rec.vad_systems, fcfg).result
    out = RecordingOutput(rec.recording_id, vad)
    empty = Annotation(rec.recording_id)
    if stop_after == "vad":
        out.final = empty
        return out

    emb = rec.embeddings.within(vad)
    if len(emb) == 0:
        log.warning("%s: no embeddings inside speech", rec.recording_id)
        out.final = empty
        return out
    emb, model = preprocess_embeddings(emb, model, cfg)
    horizon = max(vad.extent_end, emb.subsegments[-1].segment.offset)
    owner = frames_to_subsegments(emb.subsegments, step, vad, horizon)

    y, model_p, scores = scoring_space(emb, model, cfg)
    ahc_labels = ahc.cluster(scores, cfg.ahc())
    u_labels = ahc.cluster(scores, cfg.ahc(underclustered=True))
    for key, labels in (("ahc", ahc_labels), ("ahc_ucluster", u_labels)):
        names = [f"spk{k:02d}" for k in range(int(labels.max()) + 1)]
        out.stages[key] = labels_to_annotation(rec.recording_id, labels, names, owner, step)
    if stop_after == "ahc":
        out.final = out.stages["ahc"]
        return out

    column_names = None
    if cfg.clustering == "vbx":
        z, phi = vbx_space(y, model_p)
        res = vbx.run_vbx(z, phi, u_labels, cfg.vbx())
        column_names = names_by_first_occurrence(res.labels, res.gamma.shape[1])
        out.gamma, out.elbo_trace = res.gamma, res.elbo_trace
        current = labels_to_annotation(rec.recording_id, res.labels, column_names, owner, step)
        out.stages["vbx"] = current
    else:
        current = out.stages["ahc" if cfg.clustering == "ahc" else "ahc_ucluster"]
    if stop_after == "vbx":
        out.final = current
        return out

    mapping = {s: s for s in current.labels}
    if cfg.recluster:
        rc = recluster_mod.recluster(
            current, emb, model, cfg.recluster_threshold,
            length_norm=cfg.preprocess == "lnorm", frame_step=step,
        )
        current, mapping = rc.annotation, rc.mapping
        out.stages["recluster"] = current
    if column_names is not None:
        out.gamma_labels = [mapping.get(n, n) for n in column_names]
    if stop_after == "recluster":
        out.final = current
        return out

    ovd = rec.ovd
    if isinstance(ovd, str) and ovd == ORACLE:
        if rec.reference is None:
            raise ValueError("oracle OVD requested without a reference")
        ovd = rec.reference.overlap()
    if cfg.overlap_mode != "none" and ovd is not None:
        if cfg.overlap_mode == "heuristic":
            res_ov = overlap.assign_second_heuristic(current, ovd)
        elif cfg.overlap_mode == "vbx":
            res_ov = overlap.assign_second_vbx(current, ovd, out.gamma, owner, out.gamma_labels, step)
        else:
            if rec.reference is None:
                raise ValueError("oracle second-speaker assignment needs a reference")
            res_ov = overlap.assign_second_oracle(current, ovd, rec.reference, step)
        current = res_ov.annotation
        out.no_second_available = res_ov.no_second_available
        out.stages["overlap"] = current
    out.final = current
    return out


# ---- batch level -------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    recording_id: str
    embeddings: Path
    vad: dict[str, Path] | None  # None -> oracle
    ovd: Path | str | None  # path, "oracle" or None
    reference: Path | None


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def read_manifest(path: Path) -> list[ManifestEntry]:
    """Tab-separated: recording, embeddings, VAD systems, OVD, reference.

    VAD is ``oracle`` or comma-separated ``name=path`` items; OVD is ``-``,
    ``oracle`` or a label-file path; reference is ``-`` or an RTTM path.
    Relative paths resolve against the manifest's directory.
    """
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 5:
                raise rttm_io.FormatError(f"expected 5 tab-separated columns, got {len(cols)}", lineno)
            rec, emb, vad_col, ovd_col, ref_col = (c.strip() for c in cols)
            if vad_col == ORACLE:
                vad = None
            else:
                vad = {}
                for item in vad_col.split(","):
                    name, _, p = item.partition("=")
                    if not p:
                        raise rttm_io.FormatError(f"VAD item {item!r} is not name=path", lineno)
                    vad[name] = _resolve(base, p)
            ovd = None if ovd_col in ("-", "") else ORACLE if ovd_col == ORACLE else _resolve(base, ovd_col)
            ref = None if ref_col in ("-", "") else _resolve(base, ref_col)
            entries.append(ManifestEntry(rec, _resolve(base, emb), vad, ovd, ref))
    return entries


def load_recording(entry: ManifestEntry, oracle_vad: bool = False, oracle_ovd: bool = False) -> RecordingInput:
    with open(entry.embeddings, encoding="utf-8") as fh:
        emb = segmentation.read_embeddings(fh)
    reference = None
    if entry.reference is not None:
        with open(entry.reference, encoding="utf-8") as fh:
            refs = rttm_io.read_rttm(fh)
        reference = refs.get(entry.recording_id, Annotation(entry.recording_id))
    vad_systems = None
    if entry.vad is not None and not oracle_vad:
        vad_systems = {}
        for name, p in entry.vad.items():
            with open(p, encoding="utf-8") as fh:
                vad_systems[name] = rttm_io.read_labels(fh)
    ovd: Timeline | str | None
    if oracle_ovd or entry.ovd == ORACLE:
        ovd = ORACLE
    elif entry.ovd is not None:
        with open(entry.ovd, encoding="utf-8") as fh:
            ovd = rttm_io.read_labels(fh)
    else:
        ovd = None
    return RecordingInput(entry.recording_id, emb, vad_systems, ovd, reference)


def write_gamma(path: Path, recording_id: str, gamma: np.ndarray, labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"DIARKIT-GAMMA v1 {recording_id} {gamma.shape[1]}\n")
        fh.write(" ".join(labels) + "\n")
        for row in gamma:
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")


def read_gamma(path: Path) -> tuple[np.ndarray, list[str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "DIARKIT-GAMMA":
            raise rttm_io.FormatError("bad gamma header", 1)
        labels = fh.readline().split()
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    return np.array(rows).reshape(len(rows), int(header[3])), labels


def _write_rttm(path: Path, ann: Annotation) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        rttm_io.write_rttm([ann], fh)


def write_outputs(work_dir: Path, out: RecordingOutput) -> None:
    rec = out.recording_id
    with open(work_dir / f"{rec}.vad.lab", "w", encoding="utf-8") as fh:
        rttm_io.write_labels(out.vad, fh)
    for stage, ann in out.stages.items():
        _write_rttm(work_dir / f"{rec}.{stage}.rttm", ann)
    if out.gamma is not None and out.gamma_labels is not None:
        write_gamma(work_dir / f"{rec}.gamma", rec, out.gamma, out.gamma_labels)
    _write_rttm(work_dir / f"{rec}.rttm", out.final)


@dataclass
class BatchResult:
    outputs: dict[str, RecordingOutput]
    failures: dict[str, str]
    report: ScoringReport | None


def _process(args):
    entry, model, cfg, stop_after, oracle_vad, oracle_ovd = args
    try:
        rec = load_recording(entry, oracle_vad, oracle_ovd)
        out = diarize_recording(rec, model, cfg, stop_after)
        return entry.recording_id, out, rec.reference, None
    except Exception as exc:  # noqa: BLE001 - reported per recording, batch continues
        return entry.recording_id, None, None, f"{type(exc).__name__}: {exc}"


def run(
    entries: Sequence[ManifestEntry],
    model: PldaModel,
    cfg: PipelineConfig,
    work_dir: Path,
    stop_after: str | None = None,
    oracle_vad: bool = False,
    oracle_ovd: bool = False,
    jobs: int = 1,
) -> BatchResult:
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(e, model, cfg, stop_after, oracle_vad, oracle_ovd) for e in sorted(entries, key=lambda e: e.recording_id)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_process, tasks))
    else:
        results = [_process(t) for t in tasks]

    outputs, failures, scores = {}, {}, []
    for rec_id, out, reference, err in results:
        if err is not None:
            log.error("%s: %s", rec_id, err)
            failures[rec_id] = err
            continue
        write_outputs(work_dir, out)
        outputs[rec_id] = out
        if reference is not None and reference.turns:
            scores.append(score_recording(reference, out.final, cfg.collar, cfg.frame_step))
    with open(work_dir / "all.rttm", "w", encoding="utf-8") as fh:
        rttm_io.write_rttm([outputs[r].final for r in sorted(outputs)], fh)
    report = ScoringReport(scores) if scores else None
    if report is not None:
        (work_dir / "score.txt").write_text(report.format_table(), encoding="utf-8")
        (work_dir / "score.kv").write_text(format_key_values(report.key_values()), encoding="utf-8")
    if failures:
        (work_dir / "failures.txt").write_text(
            "".join(f"{k}\t{v}\n" for k, v in sorted(failures.items())), encoding="utf-8"
        )
    return BatchResult(outputs, failures, report)


def format_key_values(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = "nan" if math.isnan(value) else f"{value:.6f}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
