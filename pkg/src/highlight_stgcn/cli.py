"""Command-line entry point: ``train``, ``score``, ``eval``, ``sweep``, ``synth``.

Settings come from built-in defaults, then the ``--config`` JSON document,
then command-line flags; later sources win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import TrainConfig
from .evaluation import Annotation, evaluate_video, write_report
from .inference import (
    excerpts_document,
    score_video,
    stitch_excerpts,
    threshold_sweep,
    write_excerpts_json,
    write_sweep_csv,
)
from .keypoint_data import DEFAULT_TOPOLOGIES, dump_tracks, load_topology, parse_tracks, video_segments
from .synthetic import generate_video
from .training import TrainingDiverged, train, write_loss_csv

logger = logging.getLogger("highlight_stgcn")

MODALITY_FLAGS = {"pose": ("pose3d",), "face": ("face2d",), "both": ("pose3d", "face2d")}
DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(10))


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str | None = None
    checkpoint_dir: str | None = None
    out_dir: str | None = None
    topologies: dict = field(default_factory=dict)  # modality -> topology file
    h_thres: float = 0.5
    thresholds: tuple = DEFAULT_THRESHOLDS
    synth: dict = field(default_factory=dict)       # count, first_seed and generator keywords

    def topology_set(self) -> dict:
        topo = dict(DEFAULT_TOPOLOGIES)
        for mod, path in self.topologies.items():
            if not Path(path).is_file():
                raise ConfigError(f"topology file {path} does not exist")
            t = load_topology(path)
            if t.modality_id != mod:
                raise ConfigError(f"{path} describes {t.modality_id}, configured for {mod}")
            topo[mod] = t
        return topo

    def digest(self) -> str:
        return self.train.digest()


def load_run_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    known = {"train", "data_dir", "checkpoint_dir", "out_dir", "topologies", "h_thres", "thresholds", "synth", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    tdict = dict(doc.get("train", {}))
    if "seed" in doc:
        tdict["seed"] = doc["seed"]
    if args.seed is not None:
        tdict["seed"] = args.seed
    if args.modalities is not None:
        tdict["modalities"] = MODALITY_FLAGS[args.modalities]
    try:
        tcfg = TrainConfig.from_dict(tdict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rc = RunConfig(
        train=tcfg,
        data_dir=doc.get("data_dir"),
        checkpoint_dir=doc.get("checkpoint_dir"),
        out_dir=doc.get("out_dir"),
        topologies=doc.get("topologies", {}),
        h_thres=doc.get("h_thres", 0.5),
        thresholds=tuple(doc.get("thresholds", DEFAULT_THRESHOLDS)),
        synth=doc.get("synth", {}),
    )
    if args.h_thres is not None:
        rc.h_thres = args.h_thres
    if not 0.0 <= rc.h_thres <= 1.0:
        raise ConfigError("h_thres must lie in [0, 1]")
    return rc


def _track_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(path.glob("*.tracks.json"))
    return files or sorted(p for p in path.glob("*.json") if not p.name.endswith(".annotation.json"))


def _json_files(path: Path, suffix: str) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(path.glob(f"*{suffix}")) or sorted(path.glob("*.json"))


def cmd_train(args, rc: RunConfig) -> int:
    data = Path(args.data or rc.data_dir or "")
    if not (rc.data_dir or args.data) or not data.exists():
        raise ConfigError(f"data directory {data} does not exist")
    ckdir = Path(args.out or rc.checkpoint_dir or "checkpoints")
    topo = rc.topology_set()
    cfg = rc.train
    segments = []
    for f in _track_files(data):
        tracks, meta = parse_tracks(f.read_bytes(), topo)
        segments.extend(video_segments(tracks, meta, cfg.segment_seconds, cfg.f, cfg.P, topo))
    if not segments:
        raise ConfigError(f"no track files under {data}")
    try:
        res = train(segments, cfg, topo, checkpoint_dir=ckdir)
    except TrainingDiverged as exc:
        logger.error("training diverged: %s", exc)
        return 1
    write_loss_csv(res.history, ckdir / "loss.csv", {"config_digest": cfg.digest()})
    logger.info("trained %d steps; best epoch %d; checkpoints in %s", len(res.history), res.best_epoch, ckdir)
    return 0


def cmd_score(args, rc: RunConfig) -> int:
    if not args.checkpoint:
        raise ConfigError("score needs --checkpoint")
    topo = rc.topology_set()
    ck = load_checkpoint(args.checkpoint, topo)
    hyper = dict(ck.header.get("hyperparameters") or {})
    cfg = TrainConfig.from_dict(hyper) if hyper else rc.train
    cfg.modalities = tuple(m for m in cfg.modalities if m in ck.params)
    tracks, meta = parse_tracks(Path(args.tracks).read_bytes(), topo)
    curve = score_video(tracks, meta, ck.params, cfg, topo)
    if curve.unobservable:
        logger.warning("%s: nothing observable; no excerpts", meta.source_id)
    doc = excerpts_document(curve, stitch_excerpts(curve, rc.h_thres), rc.h_thres, cfg.digest())
    text = write_excerpts_json(doc, args.out)
    if args.out is None:
        sys.stdout.write(text + "\n")
    return 0


def _joined(args) -> list[tuple[str, np.ndarray, np.ndarray]]:
    if not args.predictions or not args.annotations:
        raise ConfigError("--predictions and --annotations are required")
    preds = {}
    for f in _json_files(Path(args.predictions), ".excerpts.json"):
        d = json.loads(f.read_text())
        preds[d["source_id"]] = np.asarray(d["curve"], dtype=np.float64)
    anns = {}
    for f in _json_files(Path(args.annotations), ".annotation.json"):
        anns[json.loads(f.read_text())["source_id"]] = f
    orphans = sorted(set(preds) ^ set(anns))
    if orphans:
        raise ConfigError("predictions and annotations do not join; orphans: " + ", ".join(orphans))
    rows = []
    for sid in sorted(preds):
        d = json.loads(anns[sid].read_text())
        ann = Annotation.from_intervals(sid, d["positive_intervals"], len(preds[sid]))
        rows.append((sid, preds[sid], ann.positive_frames))
    return rows


def cmd_eval(args, rc: RunConfig) -> int:
    results = [evaluate_video(sid, s, p, rc.h_thres) for sid, s, p in _joined(args)]
    header = {"config_digest": rc.digest(), "h_thres": rc.h_thres, "granularity": "frame"}
    agg = write_report(results, args.out or sys.stdout, header)
    logger.info("mAP %s, mean F %s over %d videos (%d skipped)", agg["mAP"], agg["mean_F"],
                agg["evaluated"], agg["skipped"])
    return 0


def cmd_sweep(args, rc: RunConfig) -> int:
    per_video = []
    for sid, s, p in _joined(args):
        if not p.any():
            logger.warning("%s has no positive frames; skipped", sid)
            continue
        per_video.append(threshold_sweep(s, p, rc.thresholds))
    if not per_video:
        raise ConfigError("no evaluable video")
    rows = []
    for i, thr in enumerate(rc.thresholds):
        rows.append((thr, float(np.mean([v[i][1] for v in per_video])), sum(v[i][2] for v in per_video)))
    write_sweep_csv(rows, args.out or sys.stdout, {"config_digest": rc.digest(), "videos": len(per_video)})
    return 0


def cmd_synth(args, rc: RunConfig) -> int:
    out = Path(args.out or rc.data_dir or "synthetic")
    out.mkdir(parents=True, exist_ok=True)
    opts = dict(rc.synth)
    count = int(opts.pop("count", 1))
    first = rc.train.seed if args.seed is not None else int(opts.pop("first_seed", rc.train.seed))
    opts.pop("first_seed", None)
    opts.setdefault("modalities", rc.train.modalities)
    topo = rc.topology_set()
    for seed in range(first, first + count):
        v = generate_video(seed, topologies=topo, **opts)
        sid = v.meta.source_id
        (out / f"{sid}.tracks.json").write_text(dump_tracks(v.tracks, v.meta))
        ann = v.annotation_dict()
        ann["config_digest"] = rc.digest()
        (out / f"{sid}.annotation.json").write_text(json.dumps(ann) + "\n")
    logger.info("wrote %d synthetic videos to %s", count, out)
    return 0


COMMANDS = {"train": cmd_train, "score": cmd_score, "eval": cmd_eval, "sweep": cmd_sweep, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--modalities", choices=sorted(MODALITY_FLAGS))
    common.add_argument("--h-thres", type=float, dest="h_thres")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="highlight-stgcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train on a directory of track files")
    p.add_argument("data", nargs="?", help="track file directory (overrides data_dir)")
    p = sub.add_parser("score", parents=[common], help="score one track file and emit excerpts")
    p.add_argument("tracks")
    for name, text in (("eval", "per-video AP and F report"), ("sweep", "AP against h_thres")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--predictions", help="excerpt JSON file or directory")
        p.add_argument("--annotations", help="annotation JSON file or directory")
    sub.add_parser("synth", parents=[common], help="generate synthetic track and annotation files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_run_config(args)
        return COMMANDS[args.command](args, rc)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except CheckpointError as exc:
        logger.error("checkpoint error: %s", exc)
        return 1
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
