"""Command-line pipeline: synth -> ingest -> rasterize -> make-dataset -> train -> predict/evaluate.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure. Failures
print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset as ds
from .config import ConfigError, RunConfig, build_config, load_config_file
from .engine import NumericalError, load_checkpoint, save_checkpoint
from .engine.checkpoint import CheckpointError
from .evaluate import compare
from .ingest import IngestError, RecordSet, filter_bbox, group_by_day, parse_incidents, resolve_bbox
from .models import arch_for, build_model, default_mode, model_from_checkpoint
from .raster import GaussianSpec, GridSpec, HeatMap, build_heatmaps, export_pgm, export_png, import_pgm
from .synthetic import SYNTHETIC_BBOX, synthetic_csv, synthetic_schema
from .training import train_model

logger = logging.getLogger("heatcast")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class DataError(RuntimeError):
    pass


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _config(args, **flags) -> RunConfig:
    return build_config(load_config_file(getattr(args, "config", None)), flags).check()


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing input: {p}")
    return p


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> None:
    out = _outdir(args.out)
    (out / "incidents.csv").write_text(synthetic_csv(args.days, args.seed), encoding="utf-8")
    schema = synthetic_schema(args.days)
    config = {
        "schema": "synthetic",
        "schema_overrides": {"end_date": schema.end_date.isoformat()},
        "bbox": {
            "lat_min": SYNTHETIC_BBOX.lat_min,
            "lat_max": SYNTHETIC_BBOX.lat_max,
            "lon_min": SYNTHETIC_BBOX.lon_min,
            "lon_max": SYNTHETIC_BBOX.lon_max,
        },
        "height": args.size,
        "width": args.size,
        "arch": "test",
    }
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"csv": str(out / "incidents.csv"), "config": str(out / "config.json"), "days": args.days})


def cmd_ingest(args) -> None:
    cfg = _config(args, schema=args.schema)
    schema = cfg.dataset_schema()
    with _require(args.csv).open(encoding="utf-8", newline="") as fh:
        records, skipped = parse_incidents(fh, schema)
    bbox = cfg.resolved_bbox()
    if bbox is not None:
        records = filter_bbox(records, bbox, skipped)
    out = _outdir(args.out)
    (out / "records.json").write_text(RecordSet(schema, records, skipped).to_json(), encoding="utf-8")
    _emit({"records": len(records), "days": schema.num_days, "skipped": skipped.as_dict()})


def cmd_rasterize(args) -> None:
    cfg = _config(args, height=args.height, width=args.width, sigma=args.sigma)
    recset = RecordSet.from_json(_require(args.records).read_text(encoding="utf-8"))
    bbox = resolve_bbox(recset.records, cfg.resolved_bbox())
    grid = GridSpec(cfg.height, cfg.width, bbox)
    records = filter_bbox(recset.records, bbox)
    heatmaps = build_heatmaps(group_by_day(records, recset.schema.num_days), grid, GaussianSpec(cfg.sigma))
    out = _outdir(args.out)
    files = []
    for hm in heatmaps:
        name = f"day_{hm.day:05d}.pgm"
        (out / name).write_bytes(export_pgm(hm))
        files.append(name)
    manifest = {
        "days": len(files),
        "files": files,
        "height": cfg.height,
        "width": cfg.width,
        "sigma": cfg.sigma,
        "bbox": vars(bbox),
        "schema": recset.schema.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"rasters": len(files), "out": str(out)})


def load_rasters(directory: str | Path) -> list[HeatMap]:
    directory = _require(directory)
    manifest = json.loads(_require(Path(directory) / "manifest.json").read_text(encoding="utf-8"))
    return [import_pgm(_require(Path(directory) / name).read_bytes()) for name in manifest["files"]]


def cmd_make_dataset(args) -> None:
    cfg = _config(args, n=args.n, s=args.s, scaling=args.scaling)
    heatmaps = load_rasters(args.rasters)
    split_s = ds.SplitConfig(cfg.n, cfg.s).resolve(len(heatmaps))
    mode = ds.ScalingMode(cfg.scaling)
    samples = [ds.scale(x, mode) for x in ds.make_windows(heatmaps, cfg.n)]
    out = _outdir(args.out)
    ds.save_cache(out / "dataset.bin", ds.SampleSet(samples, mode, split_s))
    _emit(
        {
            "dataset": str(out / "dataset.bin"),
            "samples": len(samples),
            "train": split_s,
            "test": len(samples) - split_s,
            "n": cfg.n,
            "scaling": mode.value,
        }
    )


def _write_model(path: Path, model, cfg: RunConfig, epochs_done: int) -> None:
    header = model.header()
    header["train"] = replace(cfg.train, epochs=epochs_done).to_dict()
    save_checkpoint(path, model.state_dict(), header)


def cmd_train(args) -> None:
    cfg = _config(
        args,
        model=args.model,
        seed=args.seed,
        arch=args.arch,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        lambda_l1=args.lambda_l1,
        n_critic=args.n_critic,
        clip_c=args.clip,
        checkpoint_every=args.checkpoint_every,
    )
    data = ds.read_cache(_require(args.dataset))
    _, h, w = data.samples[0].inputs.shape
    mode = default_mode(cfg.model)
    train, _ = data.as_mode(mode).train_test()
    model = build_model(cfg.model, arch_for(cfg.arch, data.n, h, w), cfg.train.seed, mode)
    out = _outdir(args.out)

    def on_epoch(epoch: int, m) -> None:
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            _write_model(out / f"{cfg.model}_epoch{epoch:05d}.ckpt", m, cfg, epoch)

    history = train_model(model, train, cfg.train, on_epoch)
    ckpt = out / f"{cfg.model}.ckpt"
    _write_model(ckpt, model, cfg, cfg.train.epochs)
    (out / f"{cfg.model}_history.csv").write_text(history.to_csv(), encoding="utf-8")
    last = history.records[-1] if history.records else None
    _emit(
        {
            "checkpoint": str(ckpt),
            "epochs": cfg.train.epochs,
            "final_g_loss": None if last is None else last.g_loss,
            "final_l1": None if last is None else last.l1,
        }
    )


def _load_model(path: str | Path):
    try:
        header, arrays = load_checkpoint(_require(path))
        return model_from_checkpoint(header, arrays)
    except (KeyError, CheckpointError) as exc:
        raise DataError(f"unusable checkpoint {path}: {exc}") from exc


def cmd_predict(args) -> None:
    model = _load_model(args.checkpoint)
    data = ds.read_cache(_require(args.dataset)).as_mode(model.mode)
    by_t = {x.t: x for x in data.samples}
    if args.t not in by_t:
        raise DataError(f"no window starts at t={args.t}; valid range 1..{len(data.samples)}")
    sample = by_t[args.t]
    pred = model.predict(sample.inputs[:, None])[0]
    day = args.t + data.n
    hm = HeatMap(day, ds.unscale(pred, model.mode), smoothed=True)
    out = _outdir(args.out)
    stem = f"pred_day_{day:05d}"
    (out / f"{stem}.pgm").write_bytes(export_pgm(hm))
    export_png(hm, out / f"{stem}.png")
    _emit({"t": args.t, "day": day, "pgm": str(out / f"{stem}.pgm"), "png": str(out / f"{stem}.png")})


def cmd_evaluate(args) -> None:
    models = [_load_model(p) for p in args.checkpoints]
    data = ds.read_cache(_require(args.dataset))
    samples_by_mode = {}
    for model in models:
        if model.mode not in samples_by_mode:
            samples_by_mode[model.mode] = data.as_mode(model.mode).train_test()[1]
    split_desc = f"test t={data.s + 1}..{len(data.samples)}, n={data.n}"
    report = compare(models, samples_by_mode, dataset=args.label, split=split_desc, seed=args.seed)
    out = _outdir(args.out)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatcast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic incident CSV and matching config")
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse an incident CSV into day-indexed records")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rasterize", help="one smoothed PGM heatmap per day")
    p.add_argument("--records", required=True)
    p.add_argument("--config")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("make-dataset", help="window rasters into a cached sample set")
    p.add_argument("--rasters", required=True)
    p.add_argument("--config")
    p.add_argument("--n", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--scaling", choices=["unit", "symmetric"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train one model on the training split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=["convlstm", "att-convlstm", "td-enc-dec", "gan"])
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--arch", choices=["paper", "test"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda-l1", type=float)
    p.add_argument("--n-critic", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the heatmap following window t")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="MSE/MAE of checkpoints on the test split")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--label", default="", help="dataset label; 'cincinnati'/'connecticut' add reference annotations")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.fields)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except (DataError, IngestError, ds.DatasetError, CheckpointError, OSError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    return 0


def _fail(code: int, kind: str, message: str, fields: list[str] | None = None) -> int:
    payload = {"error": kind, "code": code, "message": message}
    if fields:
        payload["fields"] = fields
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
