"""Pipeline command line: simulate -> encode -> train -> eval -> render.

Every subcommand is deterministic given its flags (seeds included) and
exits 0 on success, 2 on configuration errors, 3 on data errors, and 4 on
model errors.  All artifacts live under the dataset directory, indexed by
its manifest.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import core, dataset, encoder, evaluation, model, render, simulator
from .dataset import DataError, Manifest
from .model import ModelError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4


def _parse_radii(text: str) -> list[float]:
    try:
        radii = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad radii list {text!r}")
    if not radii or any(r <= 0 for r in radii):
        raise ValueError(f"radii must be positive, got {text!r}")
    return radii


def cmd_simulate(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as e:
        print(f"error: output directory {out} is not writable: {e}", file=sys.stderr)
        return EXIT_CONFIG
    geometry = core.SensorGeometry(args.width, args.height)
    scene = simulator.SceneConfig(
        geometry=geometry, contrast_threshold=args.threshold,
        pupil_radius=args.pupil_radius, noise_rate=args.noise_rate, seed=args.seed)
    traj_cfg = simulator.TrajectoryConfig(
        duration=args.duration_ms * 1000, fixation_mean=args.fixation_ms * 1000,
        margin=args.margin, jitter=args.jitter, seed=args.seed)
    sim = simulator.simulate(scene, traj_cfg, fps=args.fps)

    dataset.write_events_csv(sim.events, out / "events.csv")
    dataset.write_gray_frames(sim.gray_frames, out / "gray")
    dataset.write_truth_csv(sim.truth, out / "truth.csv")
    Manifest(width=geometry.width, height=geometry.height, seed=args.seed,
             events_file="events.csv", gray_dir="gray", truth_file="truth.csv",
             n_events=len(sim.events), n_gray=len(sim.gray_frames),
             n_truth=len(sim.truth),
             extra={"duration_us": traj_cfg.duration, "fps": args.fps,
                    "threshold": args.threshold}).save(out)
    print(f"simulate: {len(sim.events)} events, {len(sim.gray_frames)} gray frames, "
          f"{len(sim.truth)} truth samples -> {out}")
    return 0


def _load_sim_artifacts(data: Path):
    m = Manifest.load(data)
    geometry = m.geometry()
    events = dataset.read_events_csv(data / m.events_file, geometry)
    gray = dataset.read_gray_frames(data / m.gray_dir)
    truth = dataset.read_truth_csv(data / m.truth_file)
    return m, geometry, events, gray, truth


def cmd_encode(args) -> int:
    data = Path(args.data)
    m, geometry, events, gray, truth = _load_sim_artifacts(data)
    cfg = encoder.EncodingConfig(bin_us=args.bin_ms * 1000,
                                 color=encoder.ColorCode(alpha=args.alpha))
    seq = encoder.fuse_sequence(events, gray, truth, cfg)
    pairs = encoder.make_sample_pairs(seq, geometry)

    enc_dir = data / "encoded"
    enc_dir.mkdir(exist_ok=True)
    for i, frame in enumerate(seq.frames):
        dataset.write_encoded(frame, enc_dir / f"enc_{i:05d}.evg6")
    with open(data / "pairs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pair", "frame_a", "frame_b", "ax", "ay", "bx", "by"])
        for i, p in enumerate(pairs):
            w.writerow([i, p.index_a, p.index_b,
                        repr(float(p.target[0, 0])), repr(float(p.target[0, 1])),
                        repr(float(p.target[1, 0])), repr(float(p.target[1, 1]))])
    m.bin_us = cfg.bin_us
    m.alpha = cfg.color.alpha
    m.encoded_dir = "encoded"
    m.pairs_file = "pairs.csv"
    m.n_encoded = len(seq.frames)
    m.n_pairs = len(pairs)
    m.save(data)
    print(f"encode: {len(seq.frames)} encoded frames, {len(pairs)} pairs -> {enc_dir}")
    return 0


def _load_pairs(data: Path, m: Manifest) -> list[core.SamplePair]:
    if not m.encoded_dir or not m.pairs_file:
        raise DataError(f"{data}: dataset has not been encoded yet")
    frames = [dataset.read_encoded(data / m.encoded_dir / f"enc_{i:05d}.evg6")
              for i in range(m.n_encoded)]
    pairs = []
    with open(data / m.pairs_file, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            _, ia, ib, ax, ay, bx, by = row
            ia, ib = int(ia), int(ib)
            target = np.array([[float(ax), float(ay)], [float(bx), float(by)]])
            pairs.append(core.SamplePair(frames[ia], frames[ib], target, ia, ib))
    if len(pairs) != m.n_pairs:
        raise DataError(f"pair count mismatch: manifest {m.n_pairs}, file {len(pairs)}")
    return pairs


def _network_spec(args) -> model.NetworkSpec:
    channels = tuple(int(c) for c in args.channels.split(","))
    return model.NetworkSpec(input_hw=(args.input_size, args.input_size),
                             channels=channels)


def cmd_train(args) -> int:
    data = Path(args.data)
    m = Manifest.load(data)
    pairs = _load_pairs(data, m)
    train_pairs, test_pairs = dataset.split(pairs, args.split, args.seed)
    spec = _network_spec(args)
    cfg = model.TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                            epochs=args.epochs, loss_mode=args.loss_mode,
                            theta_weight=args.theta_weight, seed=args.seed)
    result = model.train(train_pairs, test_pairs, spec, cfg,
                         losses_csv=data / "losses.csv")
    state = model.adam_init(result.params)
    model.save_checkpoint(data / args.checkpoint, spec, result.params, state,
                          result.best_epoch, rng_seed=args.seed)
    if result.diverged:
        print("train: diverged; kept last good parameters", file=sys.stderr)
        return EXIT_MODEL
    final = result.history[-1]
    print(f"train: {cfg.epochs} epochs, best epoch {result.best_epoch}, "
          f"final train/test loss {final[1]:.5f}/{final[2]:.5f} -> {data / args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    data = Path(args.data)
    m = Manifest.load(data)
    pairs = _load_pairs(data, m)
    _, test_pairs = dataset.split(pairs, args.split, args.seed)
    spec, params, _, _ = model.load_checkpoint(data / args.checkpoint)
    predictions = model.predict(spec, params, test_pairs)
    targets = np.stack([p.target for p in test_pairs])
    trials = evaluation.trials_from_predictions(targets, predictions, m.geometry())
    radii = _parse_radii(args.radii)
    table = evaluation.accuracy_table(trials, radii)
    stats = evaluation.angular_error_stats(trials)
    with open(data / "accuracy.csv", "w") as f:
        f.write(table.to_csv())
    print(table.to_text())
    if stats.mean is None:
        print(f"angular error: undefined (all {stats.n_fixation} trials are fixations)")
    else:
        print(f"angular error over {stats.n_used} moving trials "
              f"({stats.n_fixation} fixations excluded): "
              f"mean {stats.mean:.4f} rad, median {stats.median:.4f} rad, "
              f"max {stats.max:.4f} rad")
    return 0


def cmd_render(args) -> int:
    data = Path(args.data)
    m = Manifest.load(data)
    out = Path(args.out) if args.out else data / "render"
    out.mkdir(parents=True, exist_ok=True)
    truth = dataset.read_truth_csv(data / m.truth_file)
    geometry = m.geometry()
    render.write_ppm(render.trajectory_overlay(truth, geometry), out / "trajectory.ppm")
    n_written = 1
    if m.encoded_dir:
        pairs = _load_pairs(data, m)
        limit = args.limit if args.limit > 0 else m.n_encoded
        for i in range(min(m.n_encoded, limit)):
            frame = dataset.read_encoded(data / m.encoded_dir / f"enc_{i:05d}.evg6")
            render.write_ppm(render.preview_frame(frame), out / f"preview_{i:05d}.ppm")
            n_written += 1
        if args.checkpoint:
            spec, params, _, _ = model.load_checkpoint(data / args.checkpoint)
            predictions = model.predict(spec, params, pairs)
            scale = np.array([geometry.width, geometry.height])
            for i, p in enumerate(pairs[:min(len(pairs), limit)]):
                tgt = p.target * scale
                prd = predictions[i] * scale
                img = render.vector_overlay(p.frame_b, (tgt[0], tgt[1]), (prd[0], prd[1]))
                render.write_ppm(img, out / f"vectors_{i:05d}.ppm")
                n_written += 1
    print(f"render: {n_written} images -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evgaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a DVS recording")
    p.add_argument("--duration-ms", type=int, default=4000)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fps", type=float, default=2.0)
    p.add_argument("--threshold", type=float, default=0.3)
    p.add_argument("--pupil-radius", type=float, default=6.0)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--fixation-ms", type=int, default=300)
    p.add_argument("--margin", type=float, default=10.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encode", help="fuse events and gray frames into encoded pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--bin-ms", type=int, default=33)
    p.add_argument("--alpha", type=float, default=5.0)
    p.set_defaults(func=cmd_encode)

    for name, fn in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", default="model.evgm")
        p.add_argument("--split", type=float, default=0.8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--input-size", type=int, default=32)
        p.add_argument("--channels", default="8,16,32")
        if name == "train":
            p.add_argument("--epochs", type=int, default=50)
            p.add_argument("--batch-size", type=int, default=16)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--loss-mode", choices=["centroid", "centroid+theta"],
                           default="centroid+theta")
            p.add_argument("--theta-weight", type=float, default=1.0)
        else:
            p.add_argument("--radii", default="100,90,75,50,25")
        p.set_defaults(func=fn)

    p = sub.add_parser("render", help="write PPM previews and overlays")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--checkpoint", default="")
    p.add_argument("--limit", type=int, default=16)
    p.set_defaults(func=cmd_render)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
