"""Command-line entry point: ``diarkit <subcommand>``.

Exit codes: 0 success, 1 a recording (or single-shot command) failed,
2 bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, ahc, overlap, pipeline, recluster as recluster_mod, rttm_io, simulate, vbx
from .config import ConfigError, PipelineConfig, load_config, write_default_config
from .metrics import frame_metrics, score
from .plda import PldaModel, read_plda, write_plda
from .segmentation import EmbeddingSequence, frames_to_subsegments, read_embeddings, uniform_subsegment, write_embeddings
from .timeline import Annotation, Timeline, normalize
from .vad_fusion import fuse

log = logging.getLogger("diarkit")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _read_text(path, reader, *args):
    with open(path, encoding="utf-8") as fh:
        return reader(fh, *args)


def _write_text(path, writer, *args):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        writer(*args, fh)


def _single_recording(refs: dict[str, Annotation], path, rec_id: str | None = None) -> Annotation:
    if rec_id is not None:
        return refs.get(rec_id, Annotation(rec_id))
    if len(refs) != 1:
        raise ValueError(f"{path}: expected one recording, found {len(refs)}")
    return next(iter(refs.values()))


def _config(args) -> PipelineConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            return load_config(fh, overrides)
    return load_config(None, overrides)


def _speech_of(emb: EmbeddingSequence, vad_path) -> Timeline:
    if vad_path:
        return _read_text(vad_path, rttm_io.read_labels)
    return normalize([s.segment for s in emb.subsegments])


def _frame_map(emb: EmbeddingSequence, speech: Timeline, step: float) -> np.ndarray:
    horizon = max(speech.extent_end, emb.subsegments[-1].segment.offset)
    return frames_to_subsegments(emb.subsegments, step, speech, horizon)


def _load_scoring_inputs(args, cfg: PipelineConfig):
    emb = _read_text(args.emb, read_embeddings)
    model = _read_text(args.plda, read_plda)
    speech = _speech_of(emb, args.vad)
    emb = emb.within(speech)
    if len(emb) == 0:
        raise ValueError(f"{args.emb}: no embeddings inside speech")
    emb, model = pipeline.preprocess_embeddings(emb, model, cfg)
    return emb, model, speech


# ---- subcommands ----------------------------------------------------------------------------

def cmd_vad_fuse(args) -> int:
    cfg = _config(args).fusion()
    systems = {}
    for item in args.system:
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--system expects name=path, got {item!r}")
        systems[name] = _read_text(path, rttm_io.read_labels)
    if cfg.asr_system not in systems:
        cfg.asr_max_distance = None
    stages = fuse(systems, cfg, args.horizon)
    _write_text(args.out, rttm_io.write_labels, stages.result)
    return EXIT_OK


def cmd_segment(args) -> int:
    speech = _read_text(args.vad, rttm_io.read_labels)
    subs = uniform_subsegment(speech, args.window, args.shift, args.min_length)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for sub in subs:
            fh.write(f"{args.rec} {sub.index} {sub.segment.onset:.3f} {sub.segment.offset:.3f}\n")
    return EXIT_OK


def cmd_ahc(args) -> int:
    cfg = _config(args)
    emb, model, speech = _load_scoring_inputs(args, cfg)
    _, _, scores = pipeline.scoring_space(emb, model, cfg)
    threshold = args.threshold
    if threshold is None:
        threshold = cfg.ahc_threshold_vbx_init if args.underclustered else cfg.ahc_threshold
    labels = ahc.cluster(scores, ahc.AhcConfig(threshold=threshold, max_clusters=args.max_clusters))
    names = [f"spk{k:02d}" for k in range(int(labels.max()) + 1)]
    ann = pipeline.labels_to_annotation(emb.recording_id, labels, names, _frame_map(emb, speech, cfg.frame_step), cfg.frame_step)
    _write_text(args.out, rttm_io.write_rttm, [ann])
    return EXIT_OK


def _init_labels(emb: EmbeddingSequence, init: Annotation, step: float) -> np.ndarray:
    owners = recluster_mod.subsegment_speakers(init, emb, step)
    names = sorted({o for o in owners if o is not None})
    if not names:
        raise ValueError("initial RTTM covers no sub-segment")
    labels, last = [], names.index(next(o for o in owners if o is not None))
    for o in owners:
        last = names.index(o) if o is not None else last  # uncovered: keep previous speaker
        labels.append(last)
    return np.array(labels)


def cmd_vbx(args) -> int:
    cfg = _config(args)
    changes = {k: v for k, v in (("fa", args.fa), ("fb", args.fb), ("loop_p", args.loop_p)) if v is not None}
    cfg = cfg.replace(**changes)
    emb, model, speech = _load_scoring_inputs(args, cfg)
    y, model_p, scores = pipeline.scoring_space(emb, model, cfg)
    if args.init_rttm:
        init = _single_recording(_read_text(args.init_rttm, rttm_io.read_rttm), args.init_rttm, emb.recording_id)
        init_labels = _init_labels(emb, init, cfg.frame_step)
    else:
        init_labels = ahc.cluster(scores, cfg.ahc(underclustered=True))
    z, phi = pipeline.vbx_space(y, model_p)
    res = vbx.run_vbx(z, phi, init_labels, cfg.vbx())
    names = pipeline.names_by_first_occurrence(res.labels, res.gamma.shape[1])
    ann = pipeline.labels_to_annotation(emb.recording_id, res.labels, names, _frame_map(emb, speech, cfg.frame_step), cfg.frame_step)
    _write_text(args.out, rttm_io.write_rttm, [ann])
    if args.gamma:
        pipeline.write_gamma(Path(args.gamma), emb.recording_id, res.gamma, names)
    log.info("%s: %d speakers after %d iterations", emb.recording_id, len(ann.labels), len(res.elbo_trace))
    return EXIT_OK


def cmd_recluster(args) -> int:
    cfg = _config(args)
    emb = _read_text(args.emb, read_embeddings)
    model = _read_text(args.plda, read_plda)
    diar = _single_recording(_read_text(args.in_rttm, rttm_io.read_rttm), args.in_rttm, emb.recording_id)
    emb = emb.within(diar.speech())
    emb, model = pipeline.preprocess_embeddings(emb, model, cfg)
    threshold = cfg.recluster_threshold if args.threshold is None else args.threshold
    res = recluster_mod.recluster(
        diar, emb, model, threshold, length_norm=cfg.preprocess == "lnorm", frame_step=cfg.frame_step
    )
    _write_text(args.out, rttm_io.write_rttm, [res.annotation])
    return EXIT_OK


def cmd_overlap_assign(args) -> int:
    step = args.frame_step
    refs = _read_text(args.in_rttm, rttm_io.read_rttm)
    diar = _single_recording(refs, args.in_rttm)
    ovd = _read_text(args.ovd, rttm_io.read_labels)
    if args.mode == "heuristic":
        res = overlap.assign_second_heuristic(diar, ovd)
    elif args.mode == "vbx":
        if not (args.gamma and args.emb):
            raise ConfigError("--mode vbx needs --gamma and --emb")
        gamma, labels = pipeline.read_gamma(Path(args.gamma))
        emb = _read_text(args.emb, read_embeddings).within(diar.speech())
        if len(emb) != gamma.shape[0]:
            raise ValueError(f"{len(emb)} sub-segments in speech but {gamma.shape[0]} gamma rows")
        frame_map = _frame_map(emb, diar.speech(), step)
        res = overlap.assign_second_vbx(diar, ovd, gamma, frame_map, labels, step)
    else:
        if not args.oracle_rttm:
            raise ConfigError("--mode oracle needs --oracle-rttm")
        ref = _single_recording(_read_text(args.oracle_rttm, rttm_io.read_rttm), args.oracle_rttm, diar.recording_id)
        res = overlap.assign_second_oracle(diar, ovd, ref, step)
    if res.no_second_available:
        log.warning("%s: %d overlap frames without a second speaker", diar.recording_id, res.no_second_available)
    _write_text(args.out, rttm_io.write_rttm, [res.annotation])
    return EXIT_OK


def cmd_score(args) -> int:
    refs = _read_text(args.ref, rttm_io.read_rttm)
    values: dict = {}
    text = ""
    if args.hyp:
        hyps = _read_text(args.hyp, rttm_io.read_rttm)
        report = score(refs, hyps, args.collar, args.frame_step)
        text += report.format_table()
        values.update(report.key_values())
    for kind, path in (("vad", args.vad), ("ovd", args.ovd)):
        if not path:
            continue
        ref_tl = normalize([s for ann in refs.values() for s in (ann.speech() if kind == "vad" else ann.overlap())])
        fr = frame_metrics(ref_tl, _read_text(path, rttm_io.read_labels), args.frame_step)
        line = (
            f"{kind.upper()}: accuracy={100 * fr.accuracy:.2f} precision={100 * fr.precision:.2f} "
            f"recall={100 * fr.recall:.2f} miss={100 * fr.miss:.2f} fa={100 * fr.fa:.2f}\n"
        )
        text += line
        for key in ("accuracy", "precision", "recall", "miss", "fa"):
            values[f"{kind}_{key}"] = 100 * getattr(fr, key)
    if not text:
        raise ConfigError("nothing to score: give --hyp, --vad or --ovd")
    sys.stdout.write(text)
    if args.out_kv:
        Path(args.out_kv).write_text(pipeline.format_key_values(values), encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_speakers = tuple(args.n_speakers) if len(args.n_speakers) == 2 else args.n_speakers[0]
    n_sub = tuple(args.n_subsegments) if len(args.n_subsegments) == 2 else args.n_subsegments[0]
    phi = simulate.default_phi(args.dim, args.phi_top, args.phi_bottom)
    model: PldaModel | None = None
    rows = []
    for i in range(args.n_recordings):
        rec = f"{args.prefix}{i:03d}"
        conv = simulate.generate(
            simulate.SimConfig(
                n_speakers=n_speakers, n_subsegments=n_sub, dim=args.dim, phi=phi,
                gen_loop_p=args.loop_p, overlap_fraction=args.overlap_fraction,
                silence_fraction=args.silence_fraction, seed=simulate.derived_seed(args.seed, i),
                recording_id=rec,
            )
        )
        model = conv.plda
        _write_text(out / f"{rec}.rttm", rttm_io.write_rttm, [conv.reference])
        _write_text(out / f"{rec}.vad.lab", rttm_io.write_labels, conv.vad)
        _write_text(out / f"{rec}.ovd.lab", lambda tl, fh: rttm_io.write_labels(tl, fh, "overlap"), conv.ovd)
        _write_text(out / f"{rec}.emb", write_embeddings, conv.embeddings)
        rows.append(f"{rec}\t{rec}.emb\toracle\t{rec}.ovd.lab\t{rec}.rttm\n")
    if model is not None:
        _write_text(out / "plda.txt", write_plda, model)
    (out / "manifest.tsv").write_text("".join(rows), encoding="utf-8")
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.overlap_mode:
        overrides.append(f"overlap_mode={args.overlap_mode}")
    if args.clustering:
        overrides.append(f"clustering={args.clustering}")
    if args.no_recluster:
        overrides.append("recluster=false")
    args.set = overrides
    cfg = _config(args)
    entries = pipeline.read_manifest(Path(args.manifest))
    model = _read_text(args.plda, read_plda)
    result = pipeline.run(
        entries, model, cfg, Path(args.work_dir), args.stop_after, args.oracle_vad, args.oracle_ovd, args.jobs
    )
    if result.report is not None:
        sys.stdout.write(result.report.format_table())
    for rec, err in sorted(result.failures.items()):
        sys.stderr.write(f"FAILED {rec}: {err}\n")
    return EXIT_FAILED if result.failures else EXIT_OK


def cmd_config(args) -> int:
    write_default_config(sys.stdout)
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarkit", description="x-vector/PLDA/VBx speaker diarization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vad-fuse", help="majority-vote several VAD label files")
    p.add_argument("--system", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=float)
    _add_config_args(p)
    p.set_defaults(func=cmd_vad_fuse)

    p = sub.add_parser("segment", help="uniform sub-segments of a speech label file")
    p.add_argument("--vad", required=True)
    p.add_argument("--rec", required=True, help="recording id written on every line")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=1.5)
    p.add_argument("--shift", type=float, default=0.25)
    p.add_argument("--min-length", type=float, default=0.1)
    p.set_defaults(func=cmd_segment)

    for name, func in (("ahc", cmd_ahc), ("vbx", cmd_vbx)):
        p = sub.add_parser(name, help=f"{name.upper()} clustering of one embedding file")
        p.add_argument("--emb", required=True)
        p.add_argument("--plda", required=True)
        p.add_argument("--vad", help="speech label file; default: union of sub-segments")
        p.add_argument("--out", required=True)
        _add_config_args(p)
        p.set_defaults(func=func)
        if name == "ahc":
            p.add_argument("--threshold", type=float)
            p.add_argument("--underclustered", action="store_true", help="use ahc_threshold_vbx_init")
            p.add_argument("--max-clusters", type=int)
        else:
            p.add_argument("--fa", type=float)
            p.add_argument("--fb", type=float)
            p.add_argument("--loop-p", type=float)
            p.add_argument("--init-rttm", help="initial labels; default: underclustered AHC")
            p.add_argument("--gamma", help="write per-sub-segment speaker posteriors here")

    p = sub.add_parser("recluster", help="merge speakers using global embeddings")
    p.add_argument("--in-rttm", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--plda", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_recluster)

    p = sub.add_parser("overlap-assign", help="add second speakers inside overlap regions")
    p.add_argument("--in-rttm", required=True)
    p.add_argument("--mode", choices=("heuristic", "vbx", "oracle"), default="heuristic")
    p.add_argument("--ovd", required=True)
    p.add_argument("--gamma")
    p.add_argument("--emb", help="embedding file matching --gamma rows (mode vbx)")
    p.add_argument("--oracle-rttm")
    p.add_argument("--frame-step", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlap_assign)

    p = sub.add_parser("score", help="DER/JER and VAD/OVD frame metrics")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp")
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--vad", help="speech label file scored against reference speech")
    p.add_argument("--ovd", help="overlap label file scored against reference overlap")
    p.add_argument("--frame-step", type=float, default=0.01)
    p.add_argument("--out-kv", help="write key=value results here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="write a synthetic corpus with manifest and PLDA model")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-recordings", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-speakers", type=int, nargs="+", default=[2, 8], metavar="N")
    p.add_argument("--n-subsegments", type=int, nargs="+", default=[300, 1500], metavar="N")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--phi-top", type=float, default=60.0)
    p.add_argument("--phi-bottom", type=float, default=0.5)
    p.add_argument("--loop-p", type=float, default=0.97)
    p.add_argument("--overlap-fraction", type=float, default=0.029)
    p.add_argument("--silence-fraction", type=float, default=0.1)
    p.add_argument("--prefix", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="full pipeline over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plda", required=True)
    p.add_argument("--work-dir", required=True)
    p.add_argument("--oracle-vad", action="store_true")
    p.add_argument("--oracle-ovd", action="store_true")
    p.add_argument("--overlap-mode", choices=("none", "heuristic", "vbx", "oracle"))
    p.add_argument("--clustering", choices=("vbx", "ahc", "ahc-ucluster"))
    p.add_argument("--stop-after", choices=pipeline.STAGES)
    p.add_argument("--no-recluster", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("config", help="print the default configuration")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except (OSError, ValueError, vbx.VbxError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
