"""Command-line entry point.

Each subcommand resolves its configuration as defaults, then the optional
``--config`` file, then explicit flags, and writes ``manifest.json`` with
the fully resolved configuration next to its outputs. Passing that
manifest back as ``--config`` reproduces the run.

Exit codes: 0 success, 1 invalid input or configuration, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import fileio, metrics
from .fileio import FormatError, RunConfig
from .fusion import DEFAULT_ALPHAS, detection_stats, nms_frames, sweep_alpha
from .quality import _fit_arrays
from .simulator import FEATURE_NAMES, generate, quality_features
from .tracker import track_sequence

log = logging.getLogger("qualtrack")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors already; keep that but print full usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag name -> (config section or None, key, type, help)
_FLAGS: Dict[str, tuple] = {
    # tracker
    "mode": ("tracker", "mode", str, "cv, kf or qoa"),
    "tau": ("tracker", "tau", float, "score threshold of the first gate"),
    "mu_v": ("tracker", "mu_v", float, "velocity-quality threshold of the second gate"),
    "mu_l": ("tracker", "mu_l", float, "location-quality threshold of the second gate"),
    "max_age": ("tracker", "max_age", int, "frames a track may go unmatched"),
    "min_hits": ("tracker", "min_hits", int, "hits before a track is confirmed"),
    "gate_radius": ("tracker", "gate_radius_m", float, "association gate in meters"),
    "matcher": ("tracker", "matcher", str, "hungarian or greedy"),
    # fusion
    "alpha": ("fusion", "alpha", float, "weight of the class score in the fused NMS score"),
    "nms_radius": ("fusion", "nms_radius_m", float, "NMS suppression radius in meters"),
    # metrics
    "match_radius": ("metrics", "match_radius_m", float, "evaluation match radius in meters"),
    "n_thresholds": ("metrics", "n_thresholds", int, "recall thresholds for AMOTA"),
    "track_score": ("metrics", "track_score", str, "mean, max or last detection score"),
    # scenario
    "n_objects": ("scenario", "n_objects", int, None),
    "n_frames": ("scenario", "n_frames", int, None),
    "dt": ("scenario", "dt_s", float, "seconds between frames"),
    "degraded_fraction": ("scenario", "degraded_fraction", float, None),
    "degraded_vel_noise": ("scenario", "degraded_vel_noise_sigma_mps", float, None),
    "vel_noise": ("scenario", "vel_noise_sigma_mps", float, None),
    "pos_noise": ("scenario", "pos_noise_sigma_m", float, None),
    "miss_rate": ("scenario", "miss_rate", float, None),
    "fp_rate": ("scenario", "false_positive_rate_per_frame", float, None),
    "duplicate_rate": ("scenario", "duplicate_rate", float, None),
    "noise_coupling": ("scenario", "noise_coupling", float, None),
    "quality": ("scenario", "quality_annotation", str,
                "oracle, noisy_oracle, split_oracle or learned"),
    # quality fitting / analysis
    "epochs": ("fit", "epochs", int, None),
    "learning_rate": ("fit", "learning_rate", float, None),
    "bins": ("analysis", "bins", int, "histogram bins"),
    "sample_size": ("analysis", "sample_size", int, "scatter sample size"),
}

_COMMAND_FLAGS = {
    "simulate": ["n_objects", "n_frames", "dt", "degraded_fraction", "degraded_vel_noise", "vel_noise",
                 "pos_noise", "miss_rate", "fp_rate", "duplicate_rate", "noise_coupling", "quality"],
    "track": ["mode", "tau", "mu_v", "mu_l", "max_age", "min_hits", "gate_radius", "matcher",
              "alpha", "nms_radius", "track_score"],
    "evaluate": ["match_radius", "n_thresholds"],
    "analyze": ["bins", "sample_size"],
    "fit-quality": ["epochs", "learning_rate"],
    "sweep-alpha": ["nms_radius"],
    "evaluate-detection": ["alpha", "nms_radius"],
}


def _add_common(p: argparse.ArgumentParser, seed: bool) -> None:
    p.add_argument("--config", type=Path, help="YAML/JSON config file (or an earlier manifest)")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
    if seed:
        p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qualtrack", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_, seed=False):
        p = sub.add_parser(name, help=help_)
        _add_common(p, seed)
        for flag in _COMMAND_FLAGS[name]:
            section, key, typ, hlp = _FLAGS[flag]
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, help=hlp)
        return p

    p = command("simulate", "generate a scenario (gt, detections, provenance)", seed=True)
    p.add_argument("--estimator", type=Path, help="fit-quality params.json for --quality learned")
    p.add_argument("--features", action="store_true", help="also write loc/vel feature tables")

    p = command("track", "run the tracker on a detection file")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--fuse", action="store_true", default=None,
                   help="apply fused-score BEV NMS before tracking")

    p = command("evaluate", "CLEAR MOT and AMOTA of a track file against ground truth")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--tracks", type=Path, required=True)

    p = command("analyze", "location/velocity error statistics from provenance", seed=True)
    p.add_argument("--provenance", type=Path, required=True)

    p = command("fit-quality", "fit a logistic quality estimator on a feature table")
    p.add_argument("--table", type=Path, required=True, help="CSV with feature columns and 'target'")
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)

    p = command("sweep-alpha", "detection statistics after fused NMS for alpha in 0..1")
    p.add_argument("--scenario", type=Path, required=True, help="directory written by simulate")

    p = command("evaluate-detection", "detection statistics after NMS at one alpha")
    p.add_argument("--scenario", type=Path, required=True, help="directory written by simulate")
    p.add_argument("--fuse", action="store_true", default=None,
                   help="rank by the fused score instead of the class score")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        cfg = fileio.merge_config(cfg, fileio.load_config_file(args.config), str(args.config))
    overrides: Dict[str, Dict] = {}
    for flag in _COMMAND_FLAGS[args.command]:
        value = getattr(args, flag, None)
        if value is not None:
            section, key = _FLAGS[flag][:2]
            overrides.setdefault(section, {})[key] = value
    if getattr(args, "standardize", None) is not None:
        overrides.setdefault("fit", {})["standardize"] = args.standardize
    top = dict(overrides)
    if getattr(args, "seed", None) is not None:
        top["seed"] = args.seed
    if getattr(args, "fuse", None):
        top["fuse"] = True
    return fileio.merge_config(cfg, top, "command line")


# ------------------------------------------------------------------ commands

def _simulate(args, cfg: RunConfig, out: Path) -> List[Path]:
    estimator = None
    if cfg.scenario.quality_annotation == "learned":
        if args.estimator is None:
            raise FormatError("--quality learned needs --estimator")
        estimator = fileio.estimator_from_dict(fileio.load_config_file(args.estimator))
    scenario = generate(cfg.scenario_config(), estimator)
    paths = fileio.write_scenario(out, scenario)
    if args.features:
        for kind in ("loc", "vel"):
            x, t = quality_features(scenario, kind)
            path = out / f"{kind}_features.csv"
            fileio.write_csv(path, list(FEATURE_NAMES) + ["target"],
                             (list(map(float, r)) + [float(y)] for r, y in zip(x, t)))
            paths.append(path)
    return paths


def _track(args, cfg: RunConfig, out: Path) -> List[Path]:
    frames = fileio.parse_detections(args.detections)
    if cfg.fuse:
        frames = nms_frames(frames, cfg.fusion, use_fused=True)
    tracks = track_sequence(frames, cfg.tracker_config())
    path = out / "tracks.jsonl"
    fileio.write_tracks(path, tracks, cfg.metrics.track_score)
    return [path]


def _evaluate(args, cfg: RunConfig, out: Path) -> List[Path]:
    gt = fileio.parse_ground_truth(args.gt)
    tracks = fileio.parse_tracks(args.tracks)
    g, h = fileio.align_for_evaluation(gt, tracks)
    report = metrics.evaluate(g, h, cfg.metrics.match_radius_m, cfg.metrics.n_thresholds)
    summary = {k: v for k, v in dataclasses.asdict(report).items() if k != "per_recall_rows"}
    fileio.write_json(out / "metrics.json", summary)
    rows = report.per_recall_rows
    header = [f.name for f in dataclasses.fields(metrics.RecallRow)]
    fileio.write_csv(out / "recall.csv", header,
                     ([getattr(r, k) for k in header] for r in rows))
    print(f"AMOTA {report.amota:.4f}  MOTA {report.mota:.4f}  IDS {report.ids}")
    return [out / "metrics.json", out / "recall.csv"]


def _analyze(args, cfg: RunConfig, out: Path) -> List[Path]:
    prov = fileio.parse_provenance(args.provenance)
    records = [p for k in sorted(prov) for p in prov[k] if not p.is_false_positive]
    qa = metrics.analyze_quality([p.loc_error.norm() for p in records],
                                 [p.vel_error.norm() for p in records],
                                 bins=cfg.analysis.bins, sample_size=cfg.analysis.sample_size,
                                 seed=cfg.seed)
    fileio.write_json(out / "analysis.json", {
        "pearson_r": qa.pearson_r, "spearman_rho": qa.spearman_rho,
        "degenerate": qa.degenerate, "n_samples": qa.n_samples,
    })

    def hist_rows():
        for name, hist in (("loc", qa.loc_error_histogram), ("vel", qa.vel_error_histogram)):
            for lo, hi, c in zip(hist.edges, hist.edges[1:], hist.counts):
                yield [name, float(lo), float(hi), int(c)]

    fileio.write_csv(out / "histograms.csv", ["kind", "lower", "upper", "count"], hist_rows())
    fileio.write_csv(out / "scatter.csv", ["loc_error_m", "vel_error_mps"],
                     ([float(a), float(b)] for a, b in qa.scatter_sample))
    print(f"pearson r {qa.pearson_r:.4f}  spearman rho {qa.spearman_rho:.4f}  n {qa.n_samples}")
    return [out / "analysis.json", out / "histograms.csv", out / "scatter.csv"]


def _fit_quality(args, cfg: RunConfig, out: Path) -> List[Path]:
    names, x, t = fileio.read_feature_table(args.table)
    if len(t) == 0:
        raise FormatError(f"{args.table}: no rows")
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(x)):
        raise FormatError(f"{args.table}: targets must lie in [0, 1] and features be finite")
    est = _fit_arrays(x, t, cfg.fit.epochs, cfg.fit.learning_rate, cfg.fit.standardize)
    fileio.write_json(out / "params.json", fileio.estimator_to_dict(est))
    fileio.write_csv(out / "params.csv", ["name", "weight"],
                     [[n, float(w)] for n, w in zip(names, est.weights)] + [["bias", float(est.bias)]])
    fileio.write_csv(out / "loss.csv", ["epoch", "loss"],
                     ([i, float(v)] for i, v in enumerate(est.loss_history)))
    print(f"final loss {est.loss_history[-1]:.6f}")
    return [out / "params.json", out / "params.csv", out / "loss.csv"]


_STATS_HEADER = ["alpha", "n_input", "n_survivors", "n_true_survivors", "recall",
                 "mean_loc_error_m", "mean_vel_error_mps"]


def _sweep_alpha(args, cfg: RunConfig, out: Path) -> List[Path]:
    scenario = fileio.load_scenario(args.scenario)
    rows = sweep_alpha(scenario, DEFAULT_ALPHAS, cfg.fusion.nms_radius_m, cfg.fusion.max_per_class)
    fileio.write_csv(out / "sweep.csv", _STATS_HEADER,
                     ([getattr(r, k) for k in _STATS_HEADER] for r in rows))
    return [out / "sweep.csv"]


def _evaluate_detection(args, cfg: RunConfig, out: Path) -> List[Path]:
    scenario = fileio.load_scenario(args.scenario)
    stats = detection_stats(scenario, cfg.fusion, use_fused=cfg.fuse)
    fileio.write_json(out / "detection.json", dataclasses.asdict(stats))
    return [out / "detection.json"]


COMMANDS: Dict[str, Callable] = {
    "simulate": _simulate,
    "track": _track,
    "evaluate": _evaluate,
    "analyze": _analyze,
    "fit-quality": _fit_quality,
    "sweep-alpha": _sweep_alpha,
    "evaluate-detection": _evaluate_detection,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, cfg, out)
        fileio.write_json(out / "manifest.json", fileio.manifest(args.command, argv, cfg, outputs))
    except (FormatError, ValueError, OSError) as exc:
        print(f"qualtrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
