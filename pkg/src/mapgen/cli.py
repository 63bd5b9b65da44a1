"""Command-line entry point: synth, prepare, train, autolabel, eval, ablate, gradcheck, visualize."""
from __future__ import annotations

import argparse
import json
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .autodiff import CheckpointError
from .autodiff.checkpoint import atomic_write
from .dataio import FormatError, SkipLog, build_object_samples, load_kitti_scene, write_synthetic_dataset
from .dataio.synth import ConfigError as SynthConfigError
from .geometry import Box3D, box_corners

EXIT_OK, EXIT_USAGE, EXIT_DEPENDENCY, EXIT_VERIFY = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--config", metavar="FILE", help="TOML file; flags given on the command line win")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=("large", "desk"), default="large",
                   help="network sizes: large (1024 points, 112px crops) or desk (small, CPU friendly)")
    p.add_argument("--n-points", type=int, help="frustum points fed to segmentation")
    p.add_argument("--m-points", type=int, help="enriched cloud size")
    p.add_argument("--crop-size", type=int, help="square crop side in pixels")
    p.add_argument("--pos-emb", choices=("mlp", "sinusoid", "none"), help="2D position embedding")
    p.add_argument("--fusion", choices=("concat", "add", "gating"), help="how the 2D context enters attention")
    p.add_argument("--symmetric", action="store_true", default=None,
                   help="values also see the 2D context (ablation)")
    p.add_argument("--no-generation", action="store_true", default=None,
                   help="regress boxes from measured points only (ablation)")
    p.add_argument("--box-frame", choices=("frustum", "sensor"), help="frame of the box head outputs")
    p.add_argument("--raw-direct", action="store_true", default=None,
                   help="regress center/size/yaw directly instead of offsets and log-sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapgen", description="Pseudo 3D box labels from 2D boxes, images "
                                     "and LiDAR, with a synthetic dataset and verification tools.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset in KITTI layout")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    _common(p)

    p = sub.add_parser("prepare", help="build object samples and report filter counts")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--split", choices=("train", "val", "all"), default="train", help="scene split")
    p.add_argument("--min-points", type=int, default=30, help="training filter: frustum points")
    p.add_argument("--min-fg", type=int, default=5, help="training filter: foreground points")
    p.add_argument("--out", metavar="FILE", help="report path (default DIR/prepare.json)")
    _common(p)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", choices=("seg", "gen", "box"), required=True, help="stage to train")
    p.add_argument("--data", metavar="DIR", help="dataset root")
    p.add_argument("--ckpt-in", metavar="FILE", help="checkpoint holding the earlier stages")
    p.add_argument("--ckpt-out", required=True, metavar="FILE", help="checkpoint to write")
    p.add_argument("--epochs", type=int, default=150, help="epochs (default 150)")
    p.add_argument("--batch-size", type=int, default=32, help="batch size (default 32)")
    p.add_argument("--lr", type=float, default=5e-4, help="peak learning rate (default 5e-4)")
    p.add_argument("--warmup-frac", type=float, default=0.05, help="linear warmup fraction (default 0.05)")
    p.add_argument("--split", choices=("train", "val", "all"), default="train", help="scene split")
    p.add_argument("--min-points", type=int, default=30, help="training filter: frustum points")
    p.add_argument("--min-fg", type=int, default=5, help="training filter: foreground points")
    p.add_argument("--mask-ratio", type=float, nargs=2, metavar=("LO", "HI"), default=(0.1, 0.5),
                   help="mask ratio range for stage gen")
    p.add_argument("--weight-decay", type=float, default=0.0, help="decoupled weight decay")
    p.add_argument("--keep-states", type=int, default=2, help="per-epoch resume states kept")
    p.add_argument("--resume", action="store_true", help="continue from the newest per-epoch state")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("autolabel", help="write pseudo labels for a dataset")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--ckpt", required=True, metavar="FILE", help="checkpoint with all three stages")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--split", choices=("train", "val", "all"), default="all", help="scene split")
    p.add_argument("--batch-size", type=int, default=32, help="inference batch size")
    _common(p)

    p = sub.add_parser("eval", help="compare pseudo labels with ground truth")
    p.add_argument("--pred", required=True, metavar="DIR", help="pseudo-label directory")
    p.add_argument("--gt", required=True, metavar="DIR", help="ground-truth dataset or label directory")
    p.add_argument("--points", type=int, choices=(40, 11), default=40, help="AP interpolation points")
    p.add_argument("--json", metavar="FILE", help="also write the report as JSON")
    _common(p)

    p = sub.add_parser("ablate", help="evaluate variant checkpoints side by side")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--variants", required=True, metavar="LIST",
                   help="comma list of NAME or NAME=CKPT (NAME alone reads CKPT_DIR/NAME.mgck)")
    p.add_argument("--ckpt-dir", default="checkpoints", metavar="DIR", help="directory of variant checkpoints")
    p.add_argument("--split", choices=("train", "val", "all"), default="val", help="scene split")
    p.add_argument("--json", metavar="FILE", help="also write the table as JSON")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=("all", "autodiff", "attention", "diou", "losses"), default="all",
                   help="which suite to run")
    _common(p)

    p = sub.add_parser("visualize", help="BEV figure (.svg) or enriched cloud (.ply) for one object")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--scene", required=True, metavar="ID", help="scene id")
    p.add_argument("--ckpt", required=True, metavar="FILE", help="checkpoint with all three stages")
    p.add_argument("--out", required=True, metavar="FILE", help="output .svg or .ply")
    p.add_argument("--object", type=int, default=0, help="object index among the scene's labelable boxes")
    _common(p)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def _config_defaults(sub: argparse.ArgumentParser, command: str, path: str) -> dict:
    """Top-level keys apply where the command has that flag; a ``[command]`` table
    must only name flags of that command."""
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    dests = {a.dest for a in sub._actions} - {"help", "config"}
    out = {}
    for key, value in data.items():
        if isinstance(value, dict):
            continue
        if key.replace("-", "_") in dests:
            out[key.replace("-", "_")] = value
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config key [{command}] must be a table")
    for key, value in section.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"config [{command}] has unknown key {key!r}")
        out[dest] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command:
        try:
            sub = _subparser(parser, known.command)
        except KeyError:
            sub = None
        if sub is not None:
            sub.set_defaults(**_config_defaults(sub, known.command, known.config))
    return parser.parse_args(argv)


# -- commands -------------------------------------------------------------------

def _model_overrides(a) -> dict:
    out = {}
    for flag, key in (("n_points", "n_points"), ("m_points", "m_points"), ("pos_emb", "pos_emb"),
                      ("fusion", "fusion"), ("box_frame", "box_frame")):
        if getattr(a, flag) is not None:
            out[key] = getattr(a, flag)
    if a.crop_size is not None:
        out["crop"] = (a.crop_size, a.crop_size)
    if a.symmetric:
        out["asymmetric"] = False
    if a.no_generation:
        out["generation"] = False
    if a.raw_direct:
        out["raw_direct"] = True
    return out


def cmd_synth(a, out) -> int:
    if a.scenes < 0:
        raise UsageError("--scenes must be non-negative")
    manifest = write_synthetic_dataset(a.out, a.scenes, a.seed)
    out(f"wrote {manifest['num_scenes']} scenes to {a.out} (seed {a.seed})")
    return EXIT_OK


def cmd_prepare(a, out) -> int:
    from .training import model_config, split_ids

    skip = SkipLog()
    crop = model_config("large").crop
    counts: dict = {"samples": 0, "difficulty": {}}
    for sid in split_ids(a.data, a.split):
        scene = load_kitti_scene(a.data, sid)
        for s in build_object_samples(scene, a.min_points, a.min_fg, crop, True, skip):
            counts["samples"] += 1
            counts["difficulty"][s.difficulty] = counts["difficulty"].get(s.difficulty, 0) + 1
    counts["skipped"] = skip.counts()
    target = Path(a.out) if a.out else Path(a.data) / "prepare.json"
    atomic_write(target, (json.dumps(counts, indent=2, sort_keys=True) + "\n").encode())
    out(f"samples {counts['samples']}, skipped {len(skip)} {counts['skipped']} -> {target}")
    return EXIT_OK


def cmd_train(a, out) -> int:
    from .training import run_stage, train_config

    if a.crop_size is not None and a.crop_size < 1:
        raise UsageError("--crop-size must be positive")
    cfg = train_config(a.profile, model=_model_overrides(a), stage=a.stage, epochs=a.epochs,
                       batch_size=a.batch_size, lr=a.lr, warmup_frac=a.warmup_frac, seed=a.seed,
                       data=a.data or "", split=a.split, min_points=a.min_points, min_fg=a.min_fg,
                       mask_ratio=tuple(a.mask_ratio), weight_decay=a.weight_decay, keep_states=a.keep_states)
    out(f"train stage={cfg.stage} epochs={cfg.epochs} batch_size={cfg.batch_size} lr={cfg.lr:g} "
        f"warmup_frac={cfg.warmup_frac:g} seed={cfg.seed} profile={cfg.profile}")
    if not a.data:
        raise UsageError("--data is required")
    rep = run_stage(cfg, a.ckpt_in, a.ckpt_out, resume=a.resume, log=out)
    out(f"done: {rep.epochs_run} epochs in {rep.seconds:.1f}s, final loss {rep.losses[-1]}, "
        f"checkpoint {rep.checkpoint}, metrics {rep.metrics_path}")
    return EXIT_OK


def cmd_autolabel(a, out) -> int:
    from .training import autolabel, load_model

    model = load_model(a.ckpt, seed=a.seed)
    s = autolabel(model, a.data, a.out, a.seed, a.split, a.batch_size)
    out(f"kept {s['kept']} skipped {s['skipped']} of {s['boxes_in']} boxes in {s['frames']} frames "
        f"({s['frame_errors']} frame errors) -> {a.out}")
    return EXIT_OK


def cmd_eval(a, out) -> int:
    from .evaluation import evaluate_label_dirs, report_table

    rep = evaluate_label_dirs(a.pred, a.gt, a.points)
    out(report_table(rep).rstrip())
    miou = "absent" if rep.miou is None else f"{100 * rep.miou:.1f}"
    recall = "absent" if rep.recall is None else f"{100 * rep.recall:.1f}"
    out(f"mIoU {miou}  recall@0.7 {recall}  objects {rep.counts['objects']}  "
        f"unlabeled gt {rep.counts['unlabeled_gt']}")
    if a.json:
        atomic_write(a.json, rep.to_json().encode())
    return EXIT_OK


def _parse_variants(spec: str, ckpt_dir: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        name, _, path = item.partition("=")
        out[name] = path or str(Path(ckpt_dir) / f"{name}.mgck")
    if not out:
        raise UsageError("--variants is empty")
    return out


def cmd_ablate(a, out) -> int:
    from .evaluation import ablation_run, ablation_table
    from .training import load_samples, read_sidecar

    variants = _parse_variants(a.variants, a.ckpt_dir)
    crops = {tuple(read_sidecar(p)["model"]["crop"]) for p in variants.values()
             if Path(p).exists() and read_sidecar(p)}
    if len(crops) > 1:
        raise UsageError(f"variants use different crop sizes {sorted(crops)}")
    samples = load_samples(a.data, a.split, crops.pop()) if crops else []
    rows = ablation_run(samples, variants, a.seed)
    out(ablation_table(rows))
    if a.json:
        atomic_write(a.json, (json.dumps(rows, indent=2, sort_keys=True) + "\n").encode())
    return EXIT_OK


def cmd_gradcheck(a, out) -> int:
    from .verify import run_gradcheck

    results = run_gradcheck(a.module, a.seed, log=out)
    worst = max(results, key=lambda r: r.error / r.tolerance)
    bad = [r for r in results if not r.ok]
    out(f"{len(results) - len(bad)}/{len(results)} checks passed; worst {worst.name} {worst.error:.3e}")
    return EXIT_OK if not bad else EXIT_VERIFY


def _visual_object(a):
    from .training import load_model
    from .training.pipeline import infer

    model = load_model(a.ckpt, seed=a.seed)
    scene = load_kitti_scene(a.data, a.scene)
    samples = build_object_samples(scene, crop_size=model.cfg.crop, training=False)
    if not 0 <= a.object < len(samples):
        raise UsageError(f"scene {a.scene} has {len(samples)} labelable objects; --object {a.object} is out of range")
    rng = np.random.default_rng(np.random.SeedSequence([a.seed, 6]))
    res = infer(model, [samples[a.object]], rng)
    return samples[a.object], res.clouds[0], Box3D.from_array(res.boxes[0])


def write_ply(path, cloud) -> None:
    """ASCII PLY; measured points blue, generated points red, plus an ``origin`` flag."""
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "property uchar origin", "end_header"]
    for p, measured in zip(cloud.points, cloud.origin_mask):
        r, g, b = (40, 90, 220) if measured else (230, 60, 40)
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {r} {g} {b} {int(measured)}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def bev_svg(cloud, gt: Box3D | None, pred: Box3D, size: int = 480) -> str:
    """Top-down scatter with sensor x pointing up the page."""
    pts = cloud.points[:, :2]
    boxes = [b for b in (gt, pred) if b is not None]
    allxy = np.vstack([pts, *(box_corners(b)[:4, :2] for b in boxes)])
    lo, hi = allxy.min(axis=0) - 1.0, allxy.max(axis=0) + 1.0
    span = float(max(hi - lo))
    scale = (size - 40) / span

    def xy(p):
        return 20 + (hi[1] - p[1]) * scale, 20 + (hi[0] - p[0]) * scale

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(size), height=str(size + 40),
                     viewBox=f"0 0 {size} {size + 40}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(size), height=str(size + 40), fill="white")
    for p, measured in zip(pts, cloud.origin_mask):
        u, v = xy(p)
        ET.SubElement(svg, "circle", cx=f"{u:.2f}", cy=f"{v:.2f}", r="1.6",
                      fill="#2858dc" if measured else "#e63c28")
    for box, color, dash in ((gt, "#1a9641", None), (pred, "#111111", "4 3")):
        if box is None:
            continue
        corners = " ".join("{:.2f},{:.2f}".format(*xy(c)) for c in box_corners(box)[:4, :2])
        attrs = {"points": corners, "fill": "none", "stroke": color, "stroke-width": "1.5"}
        if dash:
            attrs["stroke-dasharray"] = dash
        ET.SubElement(svg, "polygon", **attrs)
    n_orig = int(cloud.origin_mask.sum())
    legend = (f"original {n_orig}  generated {len(cloud) - n_orig}  "
              "gt box: green  pseudo box: dashed")
    text = ET.SubElement(svg, "text", x="10", y=str(size + 25), fill="#000000")
    text.set("font-size", "13")
    text.text = legend
    return ET.tostring(svg, encoding="unicode")


def cmd_visualize(a, out) -> int:
    ext = Path(a.out).suffix.lower()
    if ext not in (".svg", ".ply"):
        raise UsageError(f"unknown output extension {ext or '(none)'}; use .svg or .ply")
    sample, cloud, pred = _visual_object(a)
    if ext == ".ply":
        write_ply(a.out, cloud)
    else:
        atomic_write(a.out, (bev_svg(cloud, sample.gt_box3d, pred) + "\n").encode())
    n_orig = int(cloud.origin_mask.sum())
    out(f"scene {a.scene} object {a.object}: original {n_orig}, generated {len(cloud) - n_orig} -> {a.out}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "autolabel": cmd_autolabel,
            "eval": cmd_eval, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "visualize": cmd_visualize}


def main(argv=None, out=None) -> int:
    from .training import ConfigError, StageDependencyError

    out = out or (lambda s: print(s, flush=True))
    try:
        a = parse_args(argv)
    except UsageError as exc:
        print(f"mapgen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[a.command](a, out)
    except StageDependencyError as exc:
        print(f"mapgen: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (UsageError, ConfigError, SynthConfigError, CheckpointError, FormatError, OSError, ValueError) as exc:
        print(f"mapgen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
