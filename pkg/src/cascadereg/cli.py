"""Command-line front end: preprocess, register, evaluate, track, synth.

Every run writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import VARIANTS, CascadeConfig, config_for_variant, register
from .errors import RegistrationError
from .metrics import dic_summary, evaluate_landmarks, load_landmarks, write_landmark_file
from .preprocess import PreprocessConfig, preprocess
from .volume import Volume, load_field, load_volume, save_field, save_volume

log = logging.getLogger("cascadereg")

EXT = {"nifti": ".nii.gz", "raw": ".raw"}


class UsageError(Exception):
    """Bad arguments detected after parsing; reported with exit code 2."""


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    """Read the JSON config. Top-level CascadeConfig keys are accepted as a bare ``cascade`` section."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    sections = {"cascade", "preprocess", "track"}
    if doc and not set(doc) & sections:
        return {"cascade": doc}
    unknown = set(doc) - sections
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def cascade_config(doc: dict, variant: str | None) -> CascadeConfig:
    cfg = CascadeConfig.from_dict(doc.get("cascade", {}))
    return config_for_variant(variant, cfg) if variant else cfg


def preprocess_config(doc: dict) -> PreprocessConfig:
    return PreprocessConfig(**doc.get("preprocess", {}))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    return x


def write_manifest(out: Path, args, config: dict, inputs: dict, outputs: dict, seconds: float) -> Path:
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": args.seed,
        "threads": args.threads,
        "seconds": round(seconds, 3),
        "version": __version__,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    return path


def set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import numba
    import torch

    cap = numba.config.NUMBA_NUM_THREADS
    if n > cap:
        log.warning("--threads %d exceeds the %d available numba workers; using %d", n, cap, cap)
    numba.set_num_threads(min(n, cap))
    torch.set_num_threads(n)


# ---------------------------------------------------------------- subcommands


def cmd_preprocess(args, doc):
    cfg = preprocess_config(doc)
    vol = load_volume(args.input)
    res = preprocess(vol, cfg)
    ext = EXT[args.format]
    outputs = {}
    for name in ("enhanced", "unenhanced", "mask", "vesselness"):
        path = args.out / f"{name}{ext}"
        save_volume(getattr(res, name), path)
        outputs[name] = path
    return {"preprocess": asdict(cfg)}, {"input": args.input}, outputs


def cmd_register(args, doc):
    cfg = cascade_config(doc, args.variant)
    fixed, moving = load_volume(args.fixed), load_volume(args.moving)
    pre_cfg = None
    if args.preprocess:
        pre_cfg = preprocess_config(doc)
        fixed, moving = preprocess(fixed, pre_cfg).enhanced, preprocess(moving, pre_cfg).enhanced
    weights = None
    if cfg.backend == "aru":
        if args.weights is None:
            raise UsageError("--weights is required with the aru backend")
        from .aru import load_weights

        weights = load_weights(args.weights)
    res = register(fixed, moving, cfg, weights)
    ext = EXT[args.format]
    outputs = {"df": args.out / f"df{ext}", "warped": args.out / f"warped{ext}",
               "loss_trace": args.out / "loss_trace.json"}
    save_field(res.df, outputs["df"], fixed.spacing)
    save_volume(Volume(res.warped, fixed.spacing), outputs["warped"])
    outputs["loss_trace"].write_text(json.dumps(
        {f"level_{len(res.loss_trace) - 1 - k}": trace for k, trace in enumerate(res.loss_trace)}, indent=1))
    config = {"cascade": cfg.to_dict()}
    if pre_cfg is not None:
        config["preprocess"] = asdict(pre_cfg)
    inputs = {"fixed": args.fixed, "moving": args.moving, "weights": args.weights}
    return config, inputs, outputs


def _case_tre(fixed_lm, moving_lm, df_path, spacing, dims, one_based):
    lm = load_landmarks(fixed_lm, moving_lm, spacing, one_based)
    if df_path is not None:
        df = load_field(df_path)
    else:
        if dims is None:
            raise UsageError("evaluation without --df needs --reference (or dims in the case list)")
        df = np.zeros((3, *dims))
    return evaluate_landmarks(lm, df)


def _summary(tre: np.ndarray) -> dict:
    sd = float(tre.std(ddof=1)) if tre.size > 1 else 0.0
    return {"n": int(tre.size), "mean": float(tre.mean()), "sd": sd, "max": float(tre.max())}


def cmd_evaluate(args, doc):
    outputs = {"report": args.out / "report.json"}
    if args.cases:
        cases = json.loads(Path(args.cases).read_text())
        pre, post = [], []
        for c in cases:
            spacing = tuple(c.get("spacing", (1.0, 1.0, 1.0)))
            dims = tuple(c["dims"]) if "dims" in c else None
            if "df" in c and dims is None:
                dims = load_field(c["df"]).shape[1:]
            pre.append(_case_tre(c["fixed_landmarks"], c["moving_landmarks"], None, spacing, dims, args.one_based))
            post.append(_case_tre(c["fixed_landmarks"], c["moving_landmarks"], c.get("df"), spacing, dims,
                                  args.one_based))
        rep = dic_summary(pre, post)
        outputs["report"].write_text(rep.to_json() + "\n")
        print(rep.to_table())
        return {}, {"cases": args.cases}, outputs
    if not (args.fixed_landmarks and args.moving_landmarks):
        raise UsageError("evaluate needs --fixed-landmarks and --moving-landmarks, or --cases")
    spacing, dims = tuple(args.spacing), None
    if args.reference:
        ref = load_volume(args.reference)
        spacing, dims = ref.spacing, ref.dims
    tre = _case_tre(args.fixed_landmarks, args.moving_landmarks, args.df, spacing, dims, args.one_based)
    report = {"spacing": list(spacing), "tre_mm": _summary(tre), "per_landmark": tre.tolist()}
    outputs["report"].write_text(json.dumps(report, indent=2) + "\n")
    print(f"TRE {report['tre_mm']['mean']:.2f} +- {report['tre_mm']['sd']:.2f} mm over {tre.size} landmarks")
    inputs = {"fixed_landmarks": args.fixed_landmarks, "moving_landmarks": args.moving_landmarks,
              "df": args.df, "reference": args.reference}
    return {}, inputs, outputs


def cmd_track(args, doc):
    from .lesion import TrackConfig, dump_slices, track

    tdoc = dict(doc.get("track", {}))
    # cascade overrides apply on top of the tracking defaults, not the plain registration ones
    overrides = tdoc.get("cascade", doc.get("cascade", {}))
    tdoc["cascade"] = cascade_config({"cascade": {**TrackConfig().cascade.to_dict(), **overrides}},
                                     args.variant or "v4")
    tdoc["preprocess"] = preprocess_config(doc) if "preprocess" not in tdoc else PreprocessConfig(**tdoc["preprocess"])
    cfg = TrackConfig(**tdoc)
    earlier, later = load_volume(args.earlier), load_volume(args.later)
    res = track(earlier, later, cfg)
    ext = EXT[args.format]
    outputs = {"lesion_map": args.out / f"lesion_map{ext}", "regions": args.out / "regions.json",
               "df": args.out / f"df{ext}"}
    save_volume(res.lesion_map.values, outputs["lesion_map"])
    save_field(res.df, outputs["df"], later.spacing)
    outputs["regions"].write_text(res.lesion_map.to_json() + "\n")
    if args.dump_slices:
        written = dump_slices(res.fixed_unenhanced, res.lesion_map.values, args.out / "slices", cfg.threshold)
        outputs["slices"] = [str(p) for p in written]
    print(f"{len(res.lesion_map.regions)} change regions")
    return {"track": cfg.to_dict()}, {"earlier": args.earlier, "later": args.later}, outputs


def cmd_synth(args, doc):
    from .synth import make_case, make_lesion_pair

    ext = EXT[args.format]
    dims = tuple(args.dims)
    if args.lesion:
        pair = make_lesion_pair(args.seed, dims)
        outputs = {"earlier": args.out / f"earlier{ext}", "later": args.out / f"later{ext}",
                   "events": args.out / "events.json"}
        save_volume(pair.earlier, outputs["earlier"])
        save_volume(pair.later, outputs["later"])
        events = [{"kind": e.kind, "center": e.center.tolist(), "radius_earlier": e.radius_earlier,
                   "radius_later": e.radius_later, "expected_sign": e.expected_sign} for e in pair.events]
        outputs["events"].write_text(json.dumps(events, indent=2) + "\n")
        return {"dims": dims}, {}, outputs
    case = make_case(args.seed, dims, args.amplitude)
    outputs = {"fixed": args.out / f"fixed{ext}", "moving": args.out / f"moving{ext}",
               "ground_truth": args.out / f"ground_truth{ext}",
               "fixed_landmarks": args.out / "fixed_landmarks.txt",
               "moving_landmarks": args.out / "moving_landmarks.txt"}
    save_volume(case.fixed, outputs["fixed"])
    save_volume(case.moving, outputs["moving"])
    save_field(case.ground_truth, outputs["ground_truth"])
    write_landmark_file(outputs["fixed_landmarks"], case.landmarks.fixed)
    write_landmark_file(outputs["moving_landmarks"], case.landmarks.moving)
    return {"dims": dims, "amplitude": args.amplitude}, {}, outputs


COMMANDS = {
    "preprocess": cmd_preprocess,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
    "track": cmd_track,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--config", type=Path, help="JSON config (sections: cascade, preprocess, track)")
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=sorted(EXT), default="nifti", help="volume output format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cascadereg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", parents=[common], help="segment, enhance and normalize one scan")
    sp.add_argument("--input", type=Path, required=True)

    sp = sub.add_parser("register", parents=[common], help="register moving onto fixed")
    sp.add_argument("--fixed", type=Path, required=True)
    sp.add_argument("--moving", type=Path, required=True)
    sp.add_argument("--variant", choices=sorted(VARIANTS))
    sp.add_argument("--weights", type=Path, help="weight bundle for the aru backend")
    sp.add_argument("--preprocess", action="store_true", help="run the preprocessing chain on both inputs first")

    sp = sub.add_parser("evaluate", parents=[common], help="landmark TRE and multi-case summaries")
    sp.add_argument("--fixed-landmarks", type=Path)
    sp.add_argument("--moving-landmarks", type=Path)
    sp.add_argument("--df", type=Path, help="displacement field (zero field when omitted)")
    sp.add_argument("--reference", type=Path, help="volume supplying spacing and dims")
    sp.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    sp.add_argument("--one-based", action="store_true", help="landmark files use 1-based indices")
    sp.add_argument("--cases", type=Path, help="JSON list of cases for a multi-case summary")

    sp = sub.add_parser("track", parents=[common], help="lesion-change map between two scans")
    sp.add_argument("--earlier", type=Path, required=True)
    sp.add_argument("--later", type=Path, required=True)
    sp.add_argument("--variant", choices=sorted(VARIANTS))
    sp.add_argument("--dump-slices", action="store_true", help="write PGM/PPM slices with overlays")

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic case")
    sp.add_argument("--dims", type=int, nargs=3, default=(96, 96, 96))
    sp.add_argument("--amplitude", type=float, default=8.0)
    sp.add_argument("--lesion", action="store_true", help="lesion pair instead of a registration case")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        set_threads(args.threads)
        doc = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        config, inputs, outputs = COMMANDS[args.command](args, doc)
        write_manifest(args.out, args, config, inputs, outputs, time.perf_counter() - start)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (RegistrationError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
