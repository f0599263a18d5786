"""Command-line front end.

Subcommands cover each stage (patterns, simulate, tag, reconstruct,
oracle, evaluate) plus an end-to-end pipeline. Config-driven commands
accept a YAML file with command-line overrides and write the resolved
configuration beside their outputs, so any result can be regenerated from
the files it sits next to.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import metrics as metrics_mod
from . import patterns as patterns_mod
from . import presets, recon, simulator
from . import scene as scene_mod
from . import streams, tagger
from .geometry import CalibrationBundle, build_rectification, load_calibration, save_calibration


class CommandError(RuntimeError):
    """User-facing failure; message printed to stderr, exit code 1."""


def _load_calibration_arg(source: str) -> CalibrationBundle:
    if source == "default":
        return presets.default_calibration()
    path = Path(source)
    if not path.exists():
        raise CommandError(f"calibration file {path} does not exist")
    return load_calibration(path)


def _load_scene_arg(source: str) -> scene_mod.SceneModel:
    if source in presets.SCENE_BUILDERS:
        return presets.build_scene(source)
    path = Path(source)
    if not path.exists():
        raise CommandError(
            f"scene {source!r} is neither a stock scene ({sorted(presets.SCENE_BUILDERS)}) "
            f"nor an existing file"
        )
    return scene_mod.load_scene(path)


DEFAULT_CONFIG = {
    "calibration": "default",
    "scene": "plane",
    "sequence": {
        "mode": 4,
        "n": 23,
        "exposure_us": patterns_mod.DEFAULT_EXPOSURE_US,
        "blank_us": presets.DEFAULT_BLANK_US,
        "span": list(patterns_mod.DEFAULT_SPAN),
        "line_width": patterns_mod.DEFAULT_LINE_WIDTH,
    },
    "noise": {
        "background_rate_hz": 0.0,
        "latency_mean_us": 0.0,
        "latency_jitter_us": 0.0,
        "drop_probability": 0.0,
        "bus_cap_per_ms": 0,
        "seed": 0,
    },
    "window_us": 0,  # 0 means one window covering the whole stream
    "out_dir": "run_out",
    "repeats": 1,
    "k_max": simulator.DEFAULT_K_MAX,
    "policy": recon.DEFAULT_POLICY,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        elif value is not None:
            out[key] = value
    return out


def _resolve_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CommandError(f"config file {path} does not exist")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise CommandError(f"config file {path} must hold a mapping")
        config = _merge(config, loaded)
    overrides: dict = {"sequence": {}, "noise": {}}
    for key in ("calibration", "scene", "window_us", "out_dir", "repeats", "k_max", "policy"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for key in ("mode", "n", "exposure_us", "blank_us", "line_width"):
        value = getattr(args, key, None)
        if value is not None:
            overrides["sequence"][key] = value
    if getattr(args, "span", None) is not None:
        overrides["sequence"]["span"] = list(args.span)
    for key in (
        "background_rate_hz",
        "latency_mean_us",
        "latency_jitter_us",
        "drop_probability",
        "bus_cap_per_ms",
        "seed",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides["noise"][key] = value
    return _merge(config, overrides)


def _sequence_from_config(seq_cfg: dict) -> patterns_mod.PatternSequence:
    mode = int(seq_cfg["mode"])
    exposure = float(seq_cfg["exposure_us"])
    blank = float(seq_cfg["blank_us"])
    span = (int(seq_cfg["span"][0]), int(seq_cfg["span"][1]))
    depth = None
    if mode in (2, 3, 4):
        depth = patterns_mod.generate_line_pattern(
            int(seq_cfg["n"]), line_width=int(seq_cfg["line_width"]), span=span
        )
    color = patterns_mod.solid_pattern(span) if mode in (1, 3) else None
    return patterns_mod.build_sequence(
        mode, depth=depth, color_pattern=color, exposure_us=exposure, blank_us=blank
    )


def _noise_from_config(noise_cfg: dict) -> simulator.NoiseConfig:
    return simulator.NoiseConfig(
        background_rate_hz=float(noise_cfg["background_rate_hz"]),
        latency_mean_us=float(noise_cfg["latency_mean_us"]),
        latency_jitter_us=float(noise_cfg["latency_jitter_us"]),
        drop_probability=float(noise_cfg["drop_probability"]),
        bus_cap_per_ms=int(noise_cfg["bus_cap_per_ms"]),
        seed=int(noise_cfg["seed"]),
    )


def _write_resolved_config(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))


def cmd_patterns(args: argparse.Namespace) -> int:
    span = tuple(args.span) if args.span else patterns_mod.DEFAULT_SPAN
    depth = None
    columns = None
    if args.mode in (2, 3, 4):
        if args.style == "dots":
            depth = patterns_mod.generate_dot_pattern(
                args.n, rows=args.dot_rows, dot_size=args.dot_size, span=span
            )
        else:
            depth = patterns_mod.generate_line_pattern(args.n, line_width=args.line_width, span=span)
        columns = depth[1]
    color = patterns_mod.solid_pattern(span) if args.mode in (1, 3) else None
    seq = patterns_mod.build_sequence(
        args.mode, depth=depth, color_pattern=color, exposure_us=args.exposure_us, blank_us=args.blank_us
    )
    out_dir = Path(args.out)
    manifest = patterns_mod.save_pattern_set(seq, out_dir, write_bitmaps=not args.no_bitmaps)
    lines = [f"manifest: {manifest}", f"entries: {len(seq.entries)}"]
    if depth is not None:
        report = patterns_mod.coverage_percentage(depth[0], span)
        (out_dir / "coverage.yaml").write_text(
            yaml.safe_dump(
                {
                    "coverage_pct": report.coverage_pct,
                    "active_span": list(report.active_span),
                    "on_pixels": report.on_pixels,
                    "span_pixels": report.span_pixels,
                },
                sort_keys=False,
            )
        )
        lines.append(f"coverage: {report.coverage_pct:.2f}% of span {span}")
        lines.append(f"columns: {list(columns.columns)}")
    if args.diamond:
        native_dir = out_dir / "native"
        native_dir.mkdir(exist_ok=True)
        from PIL import Image

        written = 0
        for idx, entry in enumerate(seq.entries):
            if entry.pattern is None:
                continue
            native = patterns_mod.diamond_compensate(entry.pattern)
            Image.fromarray(native.astype(np.uint8) * 255).convert("1").save(
                native_dir / f"entry_{idx:03d}.png"
            )
            written += 1
        lines.append(f"native bitmaps: {written} in {native_dir}")
    print("\n".join(lines))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    calib = _load_calibration_arg(config["calibration"])
    scn = _load_scene_arg(config["scene"])
    if args.manifest:
        seq = patterns_mod.load_manifest(args.manifest, load_bitmaps=True)
    else:
        seq = _sequence_from_config(config["sequence"])
    noise = _noise_from_config(config["noise"])
    stream = simulator.render_events(
        scn,
        calib.camera,
        calib.projector,
        calib.extrinsics,
        seq,
        noise=noise,
        k_max=int(config["k_max"]),
        repeats=int(config["repeats"]),
    )
    out_dir = Path(config["out_dir"])
    _write_resolved_config(config, out_dir)
    stream_path = out_dir / "stream.evs"
    streams.save_stream(stream, stream_path)
    if args.csv:
        streams.save_stream_csv(stream, out_dir / "stream.csv")
    on = int(np.count_nonzero(stream.polarity == streams.POLARITY_ON))
    rising = int(np.count_nonzero(stream.trigger_edge == streams.KIND_TRIGGER_RISING))
    print(f"stream: {stream_path}")
    print(f"events: {len(stream)} (on {on}, off {len(stream) - on})")
    print(f"triggers: {stream.trigger_count} (rising {rising})")
    return 0


def cmd_tag(args: argparse.Namespace) -> int:
    calib = _load_calibration_arg(args.calibration)
    seq = patterns_mod.load_manifest(args.manifest, load_bitmaps=False)
    stream = streams.load_stream(args.stream)
    rig, lut = build_rectification(calib.camera, calib.projector, calib.extrinsics)
    tagged, stats = tagger.process_stream(stream, rig, lut, tuple(seq.entries))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    streams.save_tagged(tagged, out_path)
    if args.csv:
        streams.save_tagged_csv(tagged, out_path.with_suffix(".csv"))
    on_total = int(np.count_nonzero(stream.polarity == streams.POLARITY_ON))
    print(f"tagged: {len(tagged)} of {len(stream)} events -> {out_path}")
    if on_total:
        on_tagged = len(tagged)
        print(f"of taggable (ON) events: {100.0 * on_tagged / on_total:.2f}%")
    for cause, count in stats.as_dict().items():
        print(f"rejected[{cause}]: {count}")
    return 0


def _window_bounds(tagged: streams.TaggedEvents, window_us: int) -> list[tuple[int, int]]:
    if len(tagged) == 0:
        return []
    t0 = int(tagged.start_time)
    t_end = int(tagged.t.max()) + 1
    if window_us <= 0:
        return [(t0, t_end)]
    bounds = []
    start = t0
    while start < t_end:
        bounds.append((start, start + window_us))
        start += window_us
    return bounds


def cmd_reconstruct(args: argparse.Namespace) -> int:
    tagged = streams.load_tagged(args.tagged)
    calib = _load_calibration_arg(args.calibration)
    rig, lut = build_rectification(calib.camera, calib.projector, calib.extrinsics)
    columns: list[int] | None = None
    if args.manifest:
        seq = patterns_mod.load_manifest(args.manifest, load_bitmaps=False)
        if seq.columns is not None:
            columns = list(seq.columns.columns)
    if columns:
        tagged.column_index = tagger.recover_column_indices(tagged, rig, lut, columns)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    windows = _window_bounds(tagged, args.window_us)
    for idx, window in enumerate(windows):
        depth = recon.accumulate_depth(tagged, window, policy=args.policy)
        color = recon.accumulate_color(tagged, window, k_max=args.k_max)
        recon.save_depth_png(depth, out_dir / f"depth_{idx:03d}.png")
        recon.save_color_png(color, out_dir / f"color_{idx:03d}.png")
        if columns:
            tmap = recon.temporal_map(tagged, window)
            recon.save_temporal_png(tmap, out_dir / f"temporal_{idx:03d}.png")
        cloud = recon.build_point_cloud(depth, color, rig, calib.camera)
        recon.save_ply(cloud, out_dir / f"cloud_{idx:03d}.ply")
    print(f"windows: {len(windows)} -> {out_dir}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    calib = _load_calibration_arg(args.calibration)
    scn = _load_scene_arg(args.scene)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    depth = simulator.ground_truth_depth(scn, calib.camera)
    color = simulator.ground_truth_color(scn, calib.camera)
    recon.save_depth_png(depth, out_dir / "depth_000.png")
    recon.save_color_png(color, out_dir / "color_000.png")
    if args.manifest:
        seq = patterns_mod.load_manifest(args.manifest, load_bitmaps=True)
        mask = simulator.coverage_mask(scn, calib.camera, calib.projector, calib.extrinsics, seq)
        covered = recon.DepthFrame(data=depth.data * mask, window=(0, 0))
        recon.save_depth_png(covered, out_dir / "depth_covered_000.png")
    print(f"oracle frames -> {out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    frames_dir = Path(args.frames)
    ref_dir = Path(args.reference)
    report = metrics_mod.MetricsReport()
    paired = 0
    scored = 0
    for frame_path in sorted(frames_dir.glob("depth_*.png")):
        ref_path = ref_dir / frame_path.name
        if not ref_path.exists():
            continue
        paired += 1
        frame = recon.load_depth_png(frame_path)
        reference = recon.load_depth_png(ref_path)
        if frame.data.shape != reference.data.shape:
            raise CommandError(f"{frame_path.name}: frame and reference dimensions differ")
        if not np.any(reference.data > 0):
            print(f"note: {frame_path.name}: empty reference, skipped")
            continue
        stem = frame_path.stem
        report.add(f"{stem}.fill_rate_pct", metrics_mod.fill_rate(frame, reference))
        scored += 1
        if np.any((frame.data > 0) & (reference.data > 0)):
            report.add(f"{stem}.rmse_mm", metrics_mod.depth_rmse(frame, reference))
        else:
            print(f"note: {stem}: no overlapping valid pixels, rmse skipped")
    for frame_path in sorted(frames_dir.glob("color_*.png")):
        ref_path = ref_dir / frame_path.name
        if not ref_path.exists():
            continue
        paired += 1
        frame = recon.load_color_png(frame_path)
        reference = recon.load_color_png(ref_path)
        if frame.rgb.shape != reference.rgb.shape:
            raise CommandError(f"{frame_path.name}: frame and reference dimensions differ")
        # A scan mode without color entries yields an all-masked color frame;
        # that is absence of data, not a zero-quality score.
        if not np.any(frame.mask & reference.mask):
            print(f"note: {frame_path.stem}: no overlapping valid pixels, psnr skipped")
            continue
        report.add(f"{frame_path.stem}.psnr_db", metrics_mod.color_psnr(frame, reference))
        scored += 1
    if paired == 0:
        raise CommandError(f"no frame/reference pairs between {frames_dir} and {ref_dir}")
    if scored == 0:
        raise CommandError("no comparable pixels in any frame/reference pair")
    fill_rates = [v for k, v in report.values.items() if k.endswith("fill_rate_pct")]
    rmses = [v for k, v in report.values.items() if k.endswith("rmse_mm")]
    if fill_rates:
        report.add("aggregate.mean_fill_rate_pct", float(np.mean(fill_rates)))
    if rmses:
        report.add("aggregate.mean_rmse_mm", float(np.mean(rmses)))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.to_json(args.out)
    print(report.to_text())
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out_dir = Path(config["out_dir"])
    _write_resolved_config(config, out_dir)
    calib = _load_calibration_arg(config["calibration"])
    scn = _load_scene_arg(config["scene"])
    seq = _sequence_from_config(config["sequence"])
    noise = _noise_from_config(config["noise"])
    k_max = int(config["k_max"])

    patterns_mod.save_pattern_set(seq, out_dir / "patterns")
    save_calibration(calib, out_dir / "calibration.yaml")

    stream = simulator.render_events(
        scn, calib.camera, calib.projector, calib.extrinsics, seq,
        noise=noise, k_max=k_max, repeats=int(config["repeats"]),
    )
    streams.save_stream(stream, out_dir / "stream.evs")

    rig, lut = build_rectification(calib.camera, calib.projector, calib.extrinsics)
    tagged, stats = tagger.process_stream(stream, rig, lut, tuple(seq.entries))
    streams.save_tagged(tagged, out_dir / "tagged.tev")

    frames_dir = out_dir / "frames"
    frames_dir.mkdir(exist_ok=True)
    window_us = int(config["window_us"])
    windows = _window_bounds(tagged, window_us)
    full_window = (int(tagged.start_time), int(tagged.t.max()) + 1 if len(tagged) else 1)
    for idx, window in enumerate(windows):
        depth = recon.accumulate_depth(tagged, window, policy=config["policy"])
        color = recon.accumulate_color(tagged, window, k_max=k_max)
        tmap = recon.temporal_map(tagged, window)
        recon.save_depth_png(depth, frames_dir / f"depth_{idx:03d}.png")
        recon.save_color_png(color, frames_dir / f"color_{idx:03d}.png")
        recon.save_temporal_png(tmap, frames_dir / f"temporal_{idx:03d}.png")
        recon.save_ply(
            recon.build_point_cloud(depth, color, rig, calib.camera),
            frames_dir / f"cloud_{idx:03d}.ply",
        )

    gt_dir = out_dir / "gt"
    gt_dir.mkdir(exist_ok=True)
    gt_depth = simulator.ground_truth_depth(scn, calib.camera)
    gt_color = simulator.ground_truth_color(scn, calib.camera)
    mask = simulator.coverage_mask(scn, calib.camera, calib.projector, calib.extrinsics, seq)
    reference = recon.DepthFrame(data=gt_depth.data * mask, window=(0, 0))
    recon.save_depth_png(gt_depth, gt_dir / "depth_full.png")
    recon.save_depth_png(reference, gt_dir / "depth_covered.png")
    recon.save_color_png(gt_color, gt_dir / "color_full.png")

    report = metrics_mod.MetricsReport()
    on_total = int(np.count_nonzero(stream.polarity == streams.POLARITY_ON))
    report.add("events_total", float(len(stream)))
    report.add("events_tagged", float(len(tagged)))
    if on_total:
        report.add("tagged_pct_of_on", 100.0 * len(tagged) / on_total)
    full_depth = recon.accumulate_depth(tagged, full_window, policy=config["policy"])
    if np.any(reference.data > 0) and np.any(full_depth.data > 0):
        report.add("fill_rate_pct", metrics_mod.fill_rate(full_depth, reference))
        report.add("depth_rmse_mm", metrics_mod.depth_rmse(full_depth, reference))
    if int(config["sequence"]["mode"]) in (1, 3, 4):
        full_color = recon.accumulate_color(tagged, full_window, k_max=k_max)
        if np.any(full_color.mask & gt_color.mask):
            report.add("color_psnr_db", metrics_mod.color_psnr(full_color, gt_color))
    for cause, count in stats.as_dict().items():
        report.add(f"rejected_{cause}", float(count))
    report.to_json(out_dir / "metrics.json")
    print(f"pipeline -> {out_dir}")
    print(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventsl",
        description="Structured-light depth and color from event streams, end to end.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_pat = sub.add_parser("patterns", help="generate a pattern sequence and manifest")
    p_pat.add_argument("--mode", type=int, required=True, choices=patterns_mod.MODES)
    p_pat.add_argument("--n", type=int, default=23, help="number of depth lines")
    p_pat.add_argument("--style", choices=("lines", "dots"), default="lines")
    p_pat.add_argument("--line-width", type=int, default=patterns_mod.DEFAULT_LINE_WIDTH)
    p_pat.add_argument("--dot-rows", type=int, default=32)
    p_pat.add_argument("--dot-size", type=int, default=3)
    p_pat.add_argument("--span", type=int, nargs=2, metavar=("FIRST", "LAST"))
    p_pat.add_argument("--exposure-us", type=float, default=patterns_mod.DEFAULT_EXPOSURE_US)
    p_pat.add_argument("--blank-us", type=float, default=presets.DEFAULT_BLANK_US)
    p_pat.add_argument("--diamond", action="store_true", help="also write DMD-native bitmaps")
    p_pat.add_argument("--no-bitmaps", action="store_true")
    p_pat.add_argument("--out", default="patterns_out")
    p_pat.set_defaults(func=cmd_patterns)

    def add_config_options(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="YAML run config; flags below override it")
        sp.add_argument("--calibration")
        sp.add_argument("--scene")
        sp.add_argument("--mode", type=int, choices=patterns_mod.MODES)
        sp.add_argument("--n", type=int)
        sp.add_argument("--exposure-us", type=float, dest="exposure_us")
        sp.add_argument("--blank-us", type=float, dest="blank_us")
        sp.add_argument("--line-width", type=int, dest="line_width")
        sp.add_argument("--span", type=int, nargs=2, metavar=("FIRST", "LAST"))
        sp.add_argument("--window-us", type=int, dest="window_us")
        sp.add_argument("--out", dest="out_dir")
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--k-max", type=int, dest="k_max")
        sp.add_argument("--policy", choices=recon.POLICIES)
        sp.add_argument("--background-rate-hz", type=float, dest="background_rate_hz")
        sp.add_argument("--latency-mean-us", type=float, dest="latency_mean_us")
        sp.add_argument("--latency-jitter-us", type=float, dest="latency_jitter_us")
        sp.add_argument("--drop-probability", type=float, dest="drop_probability")
        sp.add_argument("--bus-cap-per-ms", type=int, dest="bus_cap_per_ms")
        sp.add_argument("--seed", type=int)

    p_sim = sub.add_parser("simulate", help="render an event stream from a scene")
    add_config_options(p_sim)
    p_sim.add_argument("--manifest", help="use a saved pattern set instead of sequence params")
    p_sim.add_argument("--csv", action="store_true", help="also write a CSV mirror")
    p_sim.set_defaults(func=cmd_simulate)

    p_tag = sub.add_parser("tag", help="stamp an event stream with depth and channel")
    p_tag.add_argument("--stream", required=True)
    p_tag.add_argument("--calibration", default="default")
    p_tag.add_argument("--manifest", required=True)
    p_tag.add_argument("--out", default="tagged.tev")
    p_tag.add_argument("--csv", action="store_true")
    p_tag.set_defaults(func=cmd_tag)

    p_rec = sub.add_parser("reconstruct", help="cut tagged events into frames")
    p_rec.add_argument("--tagged", required=True)
    p_rec.add_argument("--calibration", default="default")
    p_rec.add_argument("--manifest", help="pattern manifest; enables the temporal map")
    p_rec.add_argument("--window-us", type=int, default=0, help="0 = one window over the whole stream")
    p_rec.add_argument("--policy", choices=recon.POLICIES, default=recon.DEFAULT_POLICY)
    p_rec.add_argument("--k-max", type=int, default=simulator.DEFAULT_K_MAX)
    p_rec.add_argument("--out", default="frames_out")
    p_rec.set_defaults(func=cmd_reconstruct)

    p_orc = sub.add_parser("oracle", help="write ray-cast ground-truth frames")
    p_orc.add_argument("--calibration", default="default")
    p_orc.add_argument("--scene", required=True)
    p_orc.add_argument("--manifest", help="also write depth masked to the sweep's coverage")
    p_orc.add_argument("--out", default="oracle_out")
    p_orc.set_defaults(func=cmd_oracle)

    p_eval = sub.add_parser("evaluate", help="score frames against reference frames")
    p_eval.add_argument("--frames", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--out", help="write the metric records as JSON")
    p_eval.set_defaults(func=cmd_evaluate)

    p_pipe = sub.add_parser("pipeline", help="patterns to metrics in one run")
    add_config_options(p_pipe)
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, streams.StreamFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
