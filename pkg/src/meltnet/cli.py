"""Command line entry point: ``meltnet {generate,preprocess,train,eval,infer}``.

Errors are printed to stderr as a single JSON object
(``{"error": kind, "exit": code, "message": text}``) and map to distinct
exit codes, listed in :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .container import write_blob, write_text
from .data import CropSpec, NormalizationSpec, build_dataset, read_dataset, split_train_val, write_dataset
from .data.normalization import DEFAULT_T_MAX
from .engine import Checkpoint
from .evaluation import ReportTable, emit_report, emit_slice_image, evaluate_predictions
from .exceptions import ConfigurationError, EmptyPoolError, FormatError, MeltnetError, TrainingDivergedError
from .models import SurrogateConfig, infer_field, predict_composite, train_mcnn, train_mtcnn, train_tcnn
from .physics import SimulationConfig, case_grid, generate_cases, get_material, list_cases, read_case

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "config": 4,
    "format": 5,
    "diverged": 6,
    "failure": 1,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"no such file or directory: {path}")
    return p


def _load_checkpoints(paths: list[str]) -> dict[str, Checkpoint]:
    files: list[Path] = []
    for raw in paths:
        p = _existing(raw)
        files.extend(sorted(f for f in p.iterdir() if f.suffix == ".ckpt") if p.is_dir() else [p])
    found = {}
    for f in files:
        ckpt = Checkpoint.load(f)
        found[ckpt.role] = ckpt
    return found


def _composite_pair(paths: list[str]) -> tuple[Checkpoint, Checkpoint]:
    found = _load_checkpoints(paths)
    missing = [r for r in ("MT", "M") if r not in found]
    if missing:
        raise CliError("config", f"need MT and M checkpoints, missing {', '.join(missing)}")
    return found["MT"], found["M"]


# subcommands


def cmd_generate(args) -> dict:
    material = get_material(args.material)
    nx, ny, nz = (int(v) for v in CropSpec.parse(args.grid).shape)
    base = SimulationConfig(
        material=material.name,
        nx=nx,
        ny=ny,
        nz=nz,
        cell_size=args.cell_um * 1e-6,
        beam_radius=args.beam_radius_um * 1e-6,
        frame_interval=args.interval_us * 1e-6,
        frame_count=args.frames,
        beam_start=args.beam_start,
    )
    configs = case_grid(base, args.powers, [v * 1e-3 for v in args.velocities])
    for c in configs:
        c.validate()
    done = generate_cases(configs, args.out, material=material, workers=args.workers)
    return {"cases": [p.name for p in done]}


def cmd_preprocess(args) -> dict:
    root = _existing(args.input)
    cases = [read_case(p) for p in list_cases(root)]
    if not cases:
        raise CliError("missing-file", f"no cases under {root}")
    crop = CropSpec.parse(args.crop)
    if args.tmax == "auto":
        material = get_material(cases[0].meta["material"]["name"])
        try:
            ds = build_dataset(cases, crop, None, args.frame_stride, args.seed, t_melt=material.t_melt)
        except EmptyPoolError as exc:
            print(f"warning: {exc}", file=sys.stderr)
            ds = build_dataset(cases, crop, NormalizationSpec(t_max=DEFAULT_T_MAX), args.frame_stride, args.seed)
    else:
        ds = build_dataset(cases, crop, NormalizationSpec(t_max=float(args.tmax)), args.frame_stride, args.seed)
    if args.split is not None:
        ds.manifest = split_train_val(ds.manifest, args.split, args.seed or 0)
    write_dataset(ds, args.out)
    return {"records": len(ds), "t_max": ds.manifest.normalization.t_max}


def _surrogate_config(args, crop: CropSpec) -> SurrogateConfig:
    kwargs = dict(seed=args.seed, batch_size=args.batch_size, learning_rate=args.lr, precision=args.precision)
    if args.epochs is not None:
        kwargs["max_epochs"] = args.epochs
    if args.no_warm_start:
        kwargs["warm_start"] = False
    if args.predicted_masks:
        kwargs["predicted_masks"] = True
    return SurrogateConfig.for_crop(crop, stages=args.stages, channels=args.channels, **kwargs)


def cmd_train(args) -> dict:
    ds = read_dataset(_existing(args.dataset))
    role = args.role.upper()
    config = _surrogate_config(args, ds.manifest.crop)
    t_ckpt = Checkpoint.load(_existing(args.t_checkpoint)) if args.t_checkpoint else None
    m_ckpt = Checkpoint.load(_existing(args.m_checkpoint)) if args.m_checkpoint else None
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    out.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as log:
        if role == "T":
            ckpt = train_tcnn(ds, config, log=log)
        elif role == "M":
            if t_ckpt is None and config.warm_start:
                raise CliError("config", "M-CNN warm start needs --t-checkpoint (or pass --no-warm-start)")
            ckpt = train_mcnn(ds, config, t_ckpt, log=log)
        else:
            if m_ckpt is None:
                raise CliError("config", "MT-CNN training needs a trained M-CNN checkpoint (--m-checkpoint)")
            ckpt = train_mtcnn(ds, config, m_ckpt, t_ckpt, log=log)
    ckpt.save(out)
    hist = ckpt.metadata["history"]
    return {"role": role, "epochs": len(hist), "final_loss": hist[-1]["loss"] if hist else None}


def cmd_eval(args) -> dict:
    ds = read_dataset(_existing(args.dataset))
    if args.split:
        ds = ds.subset(args.split)
    mt, m = _composite_pair(args.checkpoints)
    preds = predict_composite(ds.process_points(), mt, m) if len(ds) else np.empty(ds.fields.shape)
    records = evaluate_predictions(ds, preds)
    table = ReportTable.from_records(records)
    if args.report:
        emit_report(records, args.report)
    if args.slices:
        out = Path(args.slices)
        out.mkdir(parents=True, exist_ok=True)
        mid = ds.manifest.crop.depth // 2 if args.slice_index is None else args.slice_index
        for i, r in enumerate(ds.manifest.records):
            stem = f"{r['case_id']}_f{r['frame_index']:03d}"
            emit_slice_image(preds[i], args.slice_axis, mid, out / f"{stem}_pred.pgm")
            emit_slice_image(ds.fields[i], args.slice_axis, mid, out / f"{stem}_true.pgm")
    print(table.summary())
    return {"samples": table.count, "rmse_pct": table.rmse_mean, "iou_pct": table.iou_mean}


def cmd_infer(args) -> dict:
    mt, m = _composite_pair(args.checkpoints)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        snap = infer_field(args.p, args.v, args.t, mt, m)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_blob(out, snap.temperature.astype(np.float32), "<f4")
    meta = snap.metadata() | {"shape": list(snap.temperature.shape), "seconds": elapsed}
    write_text(out.with_suffix(out.suffix + ".json"), meta)
    for note in snap.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"min_K={meta['min_temperature']:.3f} max_K={meta['max_temperature']:.3f}")
    return {"out": str(out)}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meltnet", description="Melt pool thermal-field surrogate toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a power x velocity grid of cases")
    g.add_argument("--material", default="Ti64")
    g.add_argument("--powers", type=_floats, required=True, help="W, comma separated")
    g.add_argument("--velocities", type=_floats, required=True, help="mm/s, comma separated")
    g.add_argument("--out", required=True)
    g.add_argument("--grid", default="128x64x32")
    g.add_argument("--cell-um", type=float, default=10.0)
    g.add_argument("--beam-radius-um", type=float, default=50.0)
    g.add_argument("--interval-us", type=float, default=5.0)
    g.add_argument("--frames", type=int, default=100)
    g.add_argument("--beam-start", type=float, default=20.0, help="initial beam x, cells")
    g.add_argument("--workers", type=int, default=None)
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", help="crop, normalize and mask cases into a dataset")
    pp.add_argument("--in", dest="input", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--crop", default="64x32x32")
    pp.add_argument("--tmax", default="auto", help="'auto' (percentile clip) or kelvin")
    pp.add_argument("--frame-stride", type=int, default=1)
    pp.add_argument("--split", type=float, default=None, help="train fraction; omit to train on all cases")
    pp.add_argument("--seed", type=int, default=0)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train one network")
    t.add_argument("--dataset", required=True)
    t.add_argument("--role", choices=["t", "m", "mt", "T", "M", "MT"], required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--t-checkpoint")
    t.add_argument("--m-checkpoint")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--channels", type=int, default=128)
    t.add_argument("--stages", type=int, default=4)
    t.add_argument("--precision", choices=["float32", "float64"], default="float64")
    t.add_argument("--no-warm-start", action="store_true")
    t.add_argument("--predicted-masks", action="store_true")
    t.add_argument("--log", help="per-epoch metrics log (default: <out>.log)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score the composite prediction against a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoints", nargs="+", required=True, help="MT and M checkpoint files, or a directory")
    e.add_argument("--report")
    e.add_argument("--slices")
    e.add_argument("--slice-axis", default="z", choices=["x", "y", "z"])
    e.add_argument("--slice-index", type=int, default=None)
    e.add_argument("--split", choices=["train", "val"], default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict one field in kelvin")
    i.add_argument("--p", type=float, required=True, help="power, W")
    i.add_argument("--v", type=float, required=True, help="scan speed, mm/s")
    i.add_argument("--t", type=float, required=True, help="time, us")
    i.add_argument("--checkpoints", nargs="+", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)
    return p


def _fail(kind: str, message: str) -> int:
    code = EXIT_CODES[kind]
    print(json.dumps({"error": kind, "exit": code, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc))
    except (ConfigurationError, EmptyPoolError) as exc:
        return _fail("config", str(exc))
    except FormatError as exc:
        return _fail("format", f"{type(exc).__name__}: {exc}")
    except TrainingDivergedError as exc:
        return _fail("diverged", str(exc))
    except (MeltnetError, OSError, ValueError) as exc:
        return _fail("failure", f"{type(exc).__name__}: {exc}")
    if result:
        print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
