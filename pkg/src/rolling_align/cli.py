"""Command-line front end: schedule, synth, align, refine and eval over NPY/JSON files.

Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 protocol mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coalign import CoalignConfig, merge, resolve_threads, solve
from .core import DepthSnippet, DepthVideo, SpaceTag
from .errors import (EmptyMask, HookFailure, InvalidSchedule, InvalidSpec, ManifestMismatch,
                     NonFinite, RollingAlignError, SingularFit)
from .evalkit import FlowField, evaluate
from .npyio import load_array, load_mask, save_array, save_mask
from .refine import ExternalProcessHook, RefineConfig, get_hook, refine
from .scheduler import SnippetSchedule, build_schedule, load_schedule, save_schedule
from .synth import CorruptionSpec, SceneSpec, corrupt, generate

logger = logging.getLogger("rolling_align")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_PROTOCOL = 4

MANIFEST_NAME = "manifest.json"


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ---- snippet directory protocol -------------------------------------------------

def snippet_filename(snippet_id: int) -> str:
    return f"snippet_{snippet_id:05d}.npy"


def write_snippet_dir(directory, snippets, schedule: SnippetSchedule,
                      config_echo: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = snippets[0].frames.shape[1:]
    entries = []
    for snip in snippets:
        name = snippet_filename(snip.snippet_id)
        save_array(directory / name, snip.frames)
        entries.append({
            "snippet_id": snip.snippet_id,
            "file": name,
            "frame_indices": list(snip.frame_indices),
            "dilation": snip.dilation,
            "shape": list(snip.frames.shape),
        })
    manifest = {
        "video": {"n_frames": schedule.n_frames, "height": int(h), "width": int(w),
                  "space_tag": SpaceTag.INVERSE_DEPTH.value},
        "schedule_hash": schedule.digest(),
        "snippets": entries,
        "config": config_echo or {},
        "tool_version": __version__,
    }
    _write_json(directory / MANIFEST_NAME, manifest)
    return directory


def read_snippet_dir(directory, schedule: SnippetSchedule) -> list[DepthSnippet]:
    """Load snippets listed in the manifest, checking them against ``schedule``."""
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise ManifestMismatch(f"no {MANIFEST_NAME} in {directory}")
    manifest = _read_json(path)
    try:
        video = manifest["video"]
        entries = manifest["snippets"]
        declared_hash = manifest["schedule_hash"]
    except (KeyError, TypeError) as exc:
        raise ManifestMismatch(f"manifest is missing field {exc}") from None
    if declared_hash != schedule.digest():
        raise ManifestMismatch("manifest schedule_hash does not match the schedule file")
    if video.get("n_frames") != schedule.n_frames:
        raise ManifestMismatch(f"manifest declares {video.get('n_frames')} frames, "
                               f"schedule has {schedule.n_frames}")
    if SpaceTag(video.get("space_tag", "inverse_depth")) is not SpaceTag.INVERSE_DEPTH:
        raise ManifestMismatch("snippets must be stored as inverse depth")
    if len(entries) != schedule.n_snippets:
        raise ManifestMismatch(f"manifest lists {len(entries)} snippets, schedule has {schedule.n_snippets}")
    by_id = {int(e["snippet_id"]): e for e in entries}
    snippets = []
    for spec in schedule.snippets:
        entry = by_id.get(spec.snippet_id)
        if entry is None:
            raise ManifestMismatch(f"snippet {spec.snippet_id} missing from manifest")
        if tuple(entry["frame_indices"]) != spec.frame_indices:
            raise ManifestMismatch(f"snippet {spec.snippet_id} frame indices disagree with the schedule")
        file = directory / entry["file"]
        if not file.exists():
            raise ManifestMismatch(f"snippet file {entry['file']} does not exist")
        frames = load_array(file, ndim=3)
        expected = (spec.n, video["height"], video["width"])
        if frames.shape != expected or list(frames.shape) != list(entry.get("shape", expected)):
            raise ManifestMismatch(f"{entry['file']} has shape {frames.shape}, expected {expected}")
        snippets.append(DepthSnippet(frames, spec.frame_indices, spec.dilation, spec.snippet_id))
    return snippets


def _load_video(path, space: str) -> DepthVideo:
    return DepthVideo(load_array(path, ndim=3), SpaceTag(space))


# ---- commands ----------------------------------------------------------------------

def cmd_schedule(args) -> int:
    sched = build_schedule(args.frames, args.snippet_len, args.dilations, args.stride)
    if sched.uncovered_frames:
        logger.warning("frames not covered by any snippet: %s", sched.uncovered_frames)
    save_schedule(sched, _ensure_parent(args.out))
    print(f"{sched.n_snippets} snippets written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    corr = _read_json(args.corrupt)
    seed = args.seed if args.seed is not None else int(corr.get("seed", 0))
    corr["seed"] = seed
    cspec = CorruptionSpec.from_dict(corr)
    scene = SceneSpec(args.scene, args.frames, args.height, args.width, seed=seed)
    gt, flow = generate(scene)
    sched = build_schedule(args.frames, args.snippet_len, args.dilations, args.stride)
    snippets, hidden = corrupt(gt, sched, cspec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_array(out / "gt.npy", gt.frames)
    save_array(out / "flow.npy", flow.flow)
    save_mask(out / "flow_mask.npy", flow.mask)
    save_schedule(sched, out / "schedule.json")
    echo = {"scene": scene.to_dict(), "corruption": cspec.to_dict(), "seed": seed}
    write_snippet_dir(out / "snippets", snippets, sched, echo)
    _write_json(out / "hidden_params.json", {
        "params": [{"snippet_id": s.snippet_id, "scale": p.scale, "shift": p.shift}
                   for s, p in zip(sched.snippets, hidden)],
        **echo,
    })
    print(f"scene {scene.kind.value}: {args.frames} frames, {sched.n_snippets} snippets -> {out}")
    return EXIT_OK


def cmd_align(args) -> int:
    sched = load_schedule(args.schedule)
    snippets = read_snippet_dir(args.snippets, sched)
    cfg = CoalignConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.threads = resolve_threads(args.threads)
    solution = solve(sched, snippets, cfg)
    merged = merge(sched, snippets, solution)
    save_array(_ensure_parent(args.out), merged.frames)
    if args.solution:
        echo = cfg.to_dict()
        echo.pop("threads")  # output must not depend on the thread count
        data = solution.to_dict(include_trace=args.trace)
        data["config"] = echo
        data["schedule_hash"] = sched.digest()
        data["tool_version"] = __version__
        _write_json(args.solution, data)
    print(f"final objective {solution.final_objective:.9g}")
    return EXIT_OK


def _make_hook(args):
    if args.hook == "external":
        if not args.hook_cmd:
            raise ValueError("--hook external needs --hook-cmd")
        return ExternalProcessHook(shlex.split(args.hook_cmd))
    if args.hook == "gaussian_smooth":
        return get_hook(args.hook, sigma=args.sigma)
    return get_hook(args.hook)


def cmd_refine(args) -> int:
    video = _load_video(args.inp, args.space)
    cfg = RefineConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg.noise_seed = args.seed
    cfg.threads = resolve_threads(args.threads)
    out = refine(video, cfg, _make_hook(args))
    save_array(_ensure_parent(args.out), out.frames)
    print(f"refined {video.frame_count} frames with hook {args.hook} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = _load_video(args.pred, args.pred_space)
    gt = _load_video(args.gt, args.gt_space)
    flow = None
    if args.flow:
        fmask = load_mask(args.flow_mask, ndim=3) if args.flow_mask else None
        flow = FlowField(load_array(args.flow, ndim=4), fmask)
    mask = load_mask(args.mask, ndim=3) if args.mask else None
    report = evaluate(pred, gt, flow, mask)
    data = report.to_dict()
    data["tool_version"] = __version__
    if args.out:
        _write_json(args.out, data)
    print(json.dumps(data, sort_keys=True))
    return EXIT_OK


# ---- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $ROLLING_ALIGN_THREADS or all cores)")
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rolling-align", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="build a dilated snippet schedule")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--snippet-len", type=int, default=3)
    p.add_argument("--dilations", type=_int_list, default=[1, 10, 25])
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic oracle scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--corrupt", default=None, help="CorruptionSpec JSON")
    p.add_argument("--snippet-len", type=int, default=3)
    p.add_argument("--dilations", type=_int_list, default=[1, 10, 25])
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", parents=[common], help="co-align snippets and merge them")
    p.add_argument("--snippets", required=True, help="snippet directory with manifest.json")
    p.add_argument("--schedule", required=True)
    p.add_argument("--config", default=None, help="CoalignConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--solution", default=None)
    p.add_argument("--trace", action="store_true", help="include the objective trace in the solution")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("refine", parents=[common], help="coarse-to-fine snippet refinement")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--hook", default="identity",
                   choices=["identity", "gaussian_smooth", "snippet_mean", "external"])
    p.add_argument("--hook-cmd", default=None, help="command for --hook external")
    p.add_argument("--sigma", type=float, default=1.0, help="blur width for gaussian_smooth")
    p.add_argument("--config", default=None, help="RefineConfig JSON")
    p.add_argument("--space", default="inverse_depth", choices=[t.value for t in SpaceTag])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="AbsRel, delta1 and OPW against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--flow", default=None)
    p.add_argument("--flow-mask", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--pred-space", default="inverse_depth", choices=[t.value for t in SpaceTag])
    p.add_argument("--gt-space", default="inverse_depth", choices=[t.value for t in SpaceTag])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ManifestMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (InvalidSchedule, InvalidSpec, SingularFit, EmptyMask, HookFailure,
            RollingAlignError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
