"""``dmot`` command line: generate, track, train, evaluate, inspect.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import tracker as sot
from .config import load_config
from .filter_core import NumericFailure
from .imaging import BoundingBox, InvalidArgument, load_image, write_pnm
from .mot_io import FrameDirectory, FrameRecord, ParseError, group_by_frame, parse_mot_file, write_results
from .synthetic import generate_synthetic, named_scenario, read_scenario

log = logging.getLogger("dmantrack")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
GRAD_TOL = 1e-3


class UsageError(Exception):
    pass


# --- generate ----------------------------------------------------------------

def cmd_generate(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    if args.identities:
        seeds = [i * 37 + 11 for i in range(1, args.identities + 1)]
        with open(os.path.join(args.out, "identities.txt"), "w") as fh:
            fh.write("# one texture seed per identity\n")
            fh.writelines(f"{s}\n" for s in seeds)
        print(f"wrote {len(seeds)} identities to {args.out}")
        return EXIT_OK
    scn = read_scenario(args.scenario_file) if args.scenario_file else named_scenario(args.scenario)
    seq = generate_synthetic(scn, args.seed)
    seq.write(args.out)
    print(f"wrote {scn.n_frames} frames, {len(seq.gt)} gt rows, {len(seq.detections)} detections to {args.out}")
    return EXIT_OK


# --- track -------------------------------------------------------------------

def _load_model(args, mode):
    if mode == "B1":
        return None
    if not (args.san_ckpt and args.tan_ckpt):
        raise UsageError(f"mode {mode} needs --san-ckpt and --tan-ckpt")
    from .dman.model import DmanModel

    return DmanModel.load(args.san_ckpt, args.tan_ckpt)


def _overlay(frame, tracks, path):
    img = np.array(frame, dtype=float)
    H, W = img.shape[:2]
    for tid, box in tracks:
        rng = np.random.default_rng(tid)
        color = rng.uniform(0.2, 1.0, 3)
        x0, y0 = int(np.clip(box.x, 0, W - 1)), int(np.clip(box.y, 0, H - 1))
        x1, y1 = int(np.clip(box.x + box.w, 0, W - 1)), int(np.clip(box.y + box.h, 0, H - 1))
        img[y0:y1 + 1, [x0, x1]] = color
        img[[y0, y1], x0:x1 + 1] = color
    write_pnm(path, img)


def cmd_track(args, cfg):
    from .pipeline import Pipeline

    data = args.data
    frames_dir = args.frames or (os.path.join(data, "img1") if data else None)
    det_path = args.det or (os.path.join(data, "det.txt") if data else None)
    if not frames_dir or not os.path.isdir(frames_dir):
        raise UsageError(f"frames directory {frames_dir} not found")
    if not det_path or not os.path.isfile(det_path):
        raise UsageError(f"detections {det_path} not found")
    frame_rate = args.frame_rate
    scn_path = os.path.join(data, "scenario.txt") if data else None
    if frame_rate is None and scn_path and os.path.isfile(scn_path):
        frame_rate = read_scenario(scn_path).frame_rate
    mode = args.mode or cfg["run.mode"]
    pcfg = cfg.pipeline(frame_rate=frame_rate, mode=mode)
    model = _load_model(args, mode)
    frames = FrameDirectory(frames_dir)
    dets = group_by_frame(parse_mot_file(det_path))
    pipe = Pipeline(pcfg, cfg.tracker(), model)
    if args.overlay:
        os.makedirs(args.overlay, exist_ok=True)
    t0 = time.monotonic()
    try:
        for k in range(1, len(frames) + 1):
            frame = frames.frame(k)
            try:
                out = pipe.step(k, frame, dets.get(k, []))
            except NumericFailure as exc:
                print(f"numeric failure at frame {k}: {exc}", file=sys.stderr)
                return EXIT_NUMERIC
            if args.overlay:
                _overlay(frame, out, os.path.join(args.overlay, f"{k:06d}.ppm"))
    finally:
        pipe.close()
    rows = pipe.results()
    write_results(rows, args.out)
    print(f"tracked {len(frames)} frames in {time.monotonic() - t0:.1f}s: "
          f"{len({r[1] for r in rows})} trajectories -> {args.out}")
    return EXIT_OK


# --- train -------------------------------------------------------------------

def _dataset(args):
    from .dman.data import IdentityDataset

    seeds = None
    if args.data:
        path = os.path.join(args.data, "identities.txt") if os.path.isdir(args.data) else args.data
        if not os.path.isfile(path):
            raise UsageError(f"identity list {path} not found")
        with open(path) as fh:
            seeds = [int(line.split("#", 1)[0]) for line in fh if line.split("#", 1)[0].strip()]
    else:
        seeds = [i * 37 + 11 for i in range(1, args.ids + 1)]
    return IdentityDataset(seeds)


def _grad_report(errors, label):
    worst = max(errors.values())
    print(f"{label} gradient check: max relative error {worst:.3e} over {len(errors)} blocks")
    return worst


def _san_grad_check(params, cfg, ds, seed):
    from .dman import san as S
    from .dman.data import make_pairs
    from .dman.optim import gradient_check

    b = make_pairs(ds, 2, np.random.default_rng(seed + 99))
    probe = {k: v.copy() for k, v in params.items()}

    def loss_fn():
        return S.san_loss(probe, cfg, b.imgs_a, b.imgs_b, b.ids_a, b.ids_b, b.same)[0]

    _, grads, _ = S.san_loss(probe, cfg, b.imgs_a, b.imgs_b, b.ids_a, b.ids_b, b.same)
    return gradient_check(loss_fn, probe, grads, max_entries=6, rng=np.random.default_rng(seed))


def _tan_grad_check(params, cfg, seed):
    from .dman import tan as T
    from .dman.optim import gradient_check

    rng = np.random.default_rng(seed + 7)
    X = rng.normal(size=(2, 4, cfg.d_in))
    y = np.array([1.0, 0.0])
    probe = {k: v.copy() for k, v in params.items()}
    _, grads = T.tan_loss(probe, cfg, X, y)
    return gradient_check(lambda: T.tan_loss(probe, cfg, X, y)[0], probe, grads, max_entries=6,
                          rng=np.random.default_rng(seed))


def cmd_train(args, cfg):
    from .dman import san as S
    from .dman import tan as T
    from .dman.model import load_san, save_san, save_tan
    from .dman.train import train_san, train_tan

    ds = _dataset(args)
    seed = args.seed if args.seed is not None else cfg["run.seed"]
    lr = args.lr if args.lr is not None else cfg["train.lr"]
    batch = cfg["train.batch"]
    curve = []

    def on_step(k, loss):
        curve.append(loss)
        if (k + 1) % 50 == 0:
            log.info("step %d loss %.4f", k + 1, loss)

    if args.net == "san":
        san_cfg = S.SanConfig(n_ids=len(ds), seed=seed)
        steps = args.steps or cfg["train.san_steps"]
        params = S.init_san(san_cfg)
        if args.grad_check and _grad_report(_san_grad_check(params, san_cfg, ds, seed), "SAN") > GRAD_TOL:
            return EXIT_NUMERIC
        params, losses = train_san(ds, san_cfg, steps, batch, lr, seed, params=params, callback=on_step)
        if args.grad_check and _grad_report(_san_grad_check(params, san_cfg, ds, seed), "SAN") > GRAD_TOL:
            return EXIT_NUMERIC
        save_san(args.out, params, san_cfg)
    else:
        if not args.san_ckpt:
            raise UsageError("train tan needs --san-ckpt (the spatial network is trained first and frozen)")
        san_params, san_cfg = load_san(args.san_ckpt)
        tan_cfg = T.TanConfig(d_in=san_cfg.d_c, seed=seed)
        steps = args.steps or cfg["train.tan_steps"]
        params = T.init_tan(tan_cfg)
        if args.grad_check and _grad_report(_tan_grad_check(params, tan_cfg, seed), "TAN") > GRAD_TOL:
            return EXIT_NUMERIC
        params, losses = train_tan(ds, san_params, san_cfg, tan_cfg, steps, batch, lr, seed,
                                   pool=cfg["train.tan_pool"], params=params, callback=on_step)
        if args.grad_check and _grad_report(_tan_grad_check(params, tan_cfg, seed), "TAN") > GRAD_TOL:
            return EXIT_NUMERIC
        save_tan(args.out, params, tan_cfg, san_cfg)
    with open(str(args.out) + ".loss.txt", "w") as fh:
        fh.write("# step loss\n")
        fh.writelines(f"{k + 1} {v:.6f}\n" for k, v in enumerate(losses))
    n = max(1, min(10, len(losses) // 5))
    head, tail = np.mean(losses[:n]), np.mean(losses[-n:])
    print(f"trained {args.net} for {len(losses)} steps: loss {head:.4f} -> {tail:.4f}; saved {args.out}")
    return EXIT_OK


# --- evaluate ----------------------------------------------------------------

def cmd_evaluate(args, cfg):
    from .metrics import aggregate, evaluate, format_kv, format_table

    if len(args.gt) != len(args.res):
        raise UsageError("give one --res file per --gt file")
    named = []
    for g, r in zip(args.gt, args.res):
        for p in (g, r):
            if not os.path.isfile(p):
                raise UsageError(f"{p} not found")
        rep = evaluate(parse_mot_file(g), parse_mot_file(r), args.iou)
        named.append((os.path.basename(os.path.dirname(os.path.abspath(g))) or g, rep))
    if len(named) > 1:
        named.append(("OVERALL", aggregate([r for _, r in named])))
    print(format_table(named), end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(format_kv(named))
    return EXIT_OK


# --- inspect -----------------------------------------------------------------

def _heat(path, grid, size=None):
    """Grayscale heat image scaled by the grid maximum; the scale goes to a sidecar file."""
    grid = np.asarray(grid, dtype=float)
    peak = float(grid.max()) if grid.size and grid.max() > 0 else 1.0
    img = grid / peak
    if size is not None:
        reps = (max(1, size // grid.shape[0]), max(1, size // grid.shape[1]))
        img = np.kron(img, np.ones(reps))
    write_pnm(path, img)
    with open(path + ".txt", "w") as fh:
        fh.write(f"# value = pixel / 255 * {peak!r}; grid {grid.shape[0]}x{grid.shape[1]}")
        if size is not None:
            fh.write(f", upscaled by {img.shape[0] // grid.shape[0]}")
        fh.write("\n")
        np.savetxt(fh, grid, fmt="%.6g")


def _bar_chart(weights, width=40):
    lines = []
    for i, w in enumerate(weights, 1):
        lines.append(f"{i:3d} {w:8.4f} " + "#" * int(round(w * width)))
    return "\n".join(lines)


def cmd_inspect(args, cfg):
    from .dman.model import DmanModel, load_san, load_tan
    from .dman.san import san_forward

    os.makedirs(args.out, exist_ok=True)
    if args.what == "spatial":
        params, scfg = load_san(args.san_ckpt)
        from .imaging import resize

        S = scfg.input_size
        a = resize(load_image(args.img_a), (S, S))
        b = resize(load_image(args.img_b), (S, S))
        out = san_forward(a, b, params, scfg)
        _heat(os.path.join(args.out, "attention_a.pgm"), out["A_a"], S)
        _heat(os.path.join(args.out, "attention_b.pgm"), out["A_b"], S)
        print(f"verification probability {out['p_verify']:.4f}; attention maps in {args.out}")
    elif args.what == "temporal":
        if not args.tan_ckpt:
            raise UsageError("inspect temporal needs --tan-ckpt")
        model = DmanModel(*load_san(args.san_ckpt), *load_tan(args.tan_ckpt))
        from .imaging import resize

        S = model.input_size
        det = resize(load_image(args.det), (S, S))
        trk = [resize(load_image(p), (S, S)) for p in args.tracklet]
        if not trk:
            raise UsageError("inspect temporal needs at least one --tracklet image")
        X = model.embed(np.stack([det] + trk))
        w = model.temporal_weights(X[0], X[1:])
        aff = model.affinity_embedded(X[0], X[1:])
        chart = _bar_chart(np.atleast_1d(w))
        with open(os.path.join(args.out, "temporal.txt"), "w") as fh:
            fh.write(chart + "\n")
        print(chart)
        print(f"affinity {aff:.4f}")
    else:
        frame = load_image(args.frame)
        box = BoundingBox(*[float(v) for v in args.box.split(",")])
        h = sot.init_tracker(frame, box, cfg.tracker())
        nxt = load_image(args.next) if args.next else frame
        resp = sot.response_at(h, nxt, box.center, 1.0)
        _heat(os.path.join(args.out, "confidence.pgm"), np.fft.fftshift(np.clip(resp, 0, None)))
        np.savetxt(os.path.join(args.out, "confidence_raw.txt"), np.fft.fftshift(resp), fmt="%.6g")
        print(f"peak confidence {resp.max():.4f}; maps in {args.out}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (default: $DMOT_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    common.add_argument("--threads", type=int, help="worker threads for per-target tracking")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dmot", description="Online multi-object tracking with dual attention matching.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="render a synthetic sequence or identity set")
    g.add_argument("--scenario", default="crossing2")
    g.add_argument("--scenario-file")
    g.add_argument("--identities", type=int, help="write an identity list for training instead")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("track", parents=[common], help="run the online tracker")
    t.add_argument("--data", help="sequence directory with img1/ and det.txt")
    t.add_argument("--frames")
    t.add_argument("--det")
    t.add_argument("--mode", choices=["full", "B1", "B2", "B3", "B4"])
    t.add_argument("--san-ckpt")
    t.add_argument("--tan-ckpt")
    t.add_argument("--frame-rate", type=float)
    t.add_argument("--overlay", help="directory for frames with id-colored boxes")
    t.add_argument("--out", default="results.txt")

    r = sub.add_parser("train", parents=[common], help="train the spatial or temporal network")
    r.add_argument("net", choices=["san", "tan"])
    r.add_argument("--data", help="identity list file or directory holding identities.txt")
    r.add_argument("--ids", type=int, default=10, help="identity count when --data is not given")
    r.add_argument("--steps", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--san-ckpt")
    r.add_argument("--grad-check", action="store_true", help="finite-difference self-test before and after")
    r.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", parents=[common], help="CLEAR-MOT and identity metrics")
    e.add_argument("--gt", nargs="+", required=True)
    e.add_argument("--res", nargs="+", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--out", help="write key-value metrics here")

    i = sub.add_parser("inspect", parents=[common], help="dump attention and confidence maps")
    i.add_argument("what", choices=["spatial", "temporal", "tracker"])
    i.add_argument("--san-ckpt")
    i.add_argument("--tan-ckpt")
    i.add_argument("--img-a")
    i.add_argument("--img-b")
    i.add_argument("--det")
    i.add_argument("--tracklet", nargs="*", default=[])
    i.add_argument("--frame")
    i.add_argument("--next")
    i.add_argument("--box", help="x,y,w,h")
    i.add_argument("--out", default="inspect")
    return p


COMMANDS = {"generate": cmd_generate, "track": cmd_track, "train": cmd_train,
            "evaluate": cmd_evaluate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = list(args.set)
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        cfg = load_config(args.config, overrides)
        if args.dump_config:
            print(cfg.dump(), end="")
            return EXIT_OK
        if args.command == "inspect" and args.what in ("spatial", "temporal") and not args.san_ckpt:
            raise UsageError(f"inspect {args.what} needs --san-ckpt")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, InvalidArgument, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
