"""Command-line entry point: ``tack {gen,train,track,eval,viz,sweep,schema}``.

Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
4 numerical failure (non-finite loss, degenerate geometry).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from . import geometry as geo
from .dataset import export_ppm, read_dataset, write_dataset
from .errors import (
    CorruptManifest,
    DegenerateGeometry,
    EmptyInput,
    FovBudgetExceeded,
    InvalidConfig,
    KTooSmall,
    NoValidSubset,
    NonFiniteLoss,
    ShapeMismatch,
)
from .evaluation import (
    annotation_sweep,
    compare_sparse_methods,
    embedding_image,
    eval_rmse,
    interpolate_embeddings,
    offsurface_eval,
    run_sweep,
    saliency,
    soft_argmax_batch,
    sweep_tasks,
)
from .heatmap import make_target
from .imageio import read_ppm, write_pgm, write_ppm
from .model import TackModel
from .scene import SceneConfig, eval_objects, train_objects
from .training import DatasetSource, OnlineSource, load_run, train_loop

log = logging.getLogger("tack")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _load_config(args, overrides: dict | None = None) -> cfgmod.RunConfig:
    return cfgmod.load(getattr(args, "config", None), overrides)


def _cams(run: cfgmod.RunConfig) -> list[geo.Camera]:
    rig = run.paths.get("rig")
    if rig:
        cams = geo.load_rig(rig)
        if not cams:
            raise InvalidConfig(f"{rig}: rig holds no cameras")
        return cams
    return [run.scene.camera()]


def _eval_batches(run: cfgmod.RunConfig, count: int, seed_key: int = 0xE7A1):
    src = OnlineSource(eval_objects(run.scene), run.scene, seed=(run.seed << 8) ^ seed_key, n_cond=run.train.n_cond, cams=_cams(run))
    return [src.meta_batch(i) for i in range(count)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    run = _load_config(args)
    seed = run.seed if args.seed is None else args.seed
    count = args.count
    if count < 0:
        raise InvalidConfig("--count must be >= 0")
    out = Path(args.out)
    src = OnlineSource(train_objects(run.scene), run.scene, seed, run.train.n_cond, run.train.n_valid, _cams(run), args.threads)
    batches = src.batch(0, count) if count else []
    shape = (run.train.n_cond + run.train.n_valid, run.train.n_cond, run.scene.height, run.scene.width)
    write_dataset(out, batches, run.to_dict(), seed, shape=shape)
    if args.ppm:
        export_ppm(out)
    print(json.dumps({"out": str(out), "count": count, "seed": seed}))
    return EXIT_OK


def cmd_train(args) -> int:
    overrides: dict = {"train": {}}
    if args.loss is not None:
        overrides["train"]["loss"] = args.loss
    if args.steps is not None:
        overrides["train"]["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["train"]["seed"] = args.seed
    run = _load_config(args, overrides)
    out = Path(args.out)
    if args.data:
        batches = read_dataset(args.data)
        source = DatasetSource(batches, run.train.seed)
    else:
        source = OnlineSource(train_objects(run.scene), run.scene, run.train.seed, run.train.n_cond, run.train.n_valid, _cams(run), args.threads)
    model = TackModel.init(run.model, run.train.seed)
    evb = _eval_batches(run, run.train.eval_batches) if run.train.eval_batches else None
    extra = {"scene": cfgmod._jsonable(run.scene.to_dict()), "config": run.to_dict()}

    def progress(step, lb):
        if step % max(1, run.train.eval_every // 5) == 0:
            log.info("step %d adapt %.4f auto %.4f seg %.4f", step, lb.adapt, lb.auto, lb.seg)

    res = train_loop(model, source, run.train, out=out, eval_batches=evb, resume=args.resume,
                     progress=progress, stop_at=args.stop_at, manifest_extra=extra)
    summary = {"out": str(out), "step": res.step}
    if res.evals:
        summary.update({"rmse_adapt": res.evals[-1][1], "rmse_auto": res.evals[-1][2]})
    print(json.dumps(summary))
    return EXIT_OK


def _load_model(path) -> tuple[TackModel, SceneConfig, dict]:
    model, manifest, _ = load_run(path)
    scene = SceneConfig.from_dict(manifest["scene"]) if "scene" in manifest else SceneConfig()
    return model, scene, manifest


def _read_json_list(path, what: str) -> list:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, list):
        raise InvalidConfig(f"{path}: {what} must be a JSON list")
    return data


def _check_image(img: np.ndarray, scene: SceneConfig, path) -> None:
    if img.shape[:2] != (scene.height, scene.width):
        raise InvalidConfig(f"{path}: image is {img.shape[1]}x{img.shape[0]}, model expects {scene.width}x{scene.height}")


def track(model: TackModel, scene: SceneConfig, annotations: list[tuple[np.ndarray, tuple[float, float]]], views: list[tuple[np.ndarray, geo.Camera]]):
    """Detections in every view and, with two or more views, the best-subset 3D point."""
    if not 1 <= len(annotations) <= 16:
        raise InvalidConfig(f"need 1 to 16 annotations, got {len(annotations)}")
    if not views:
        raise InvalidConfig("need at least one view")
    dt = model.params["dec.stem.w"].dtype
    imgs = np.stack([a[0] for a in annotations]).astype(dt)
    tg = np.stack([make_target(a[1], scene.sigma, (scene.width, scene.height)) for a in annotations]).astype(dt)[..., None]
    with ad.no_grad():
        c = model.encode(imgs, tg).data.mean(axis=0, keepdims=True)
        vimgs = np.stack([v[0] for v in views]).astype(dt)
        kp, _ = model.decode(vimgs, np.repeat(c, len(views), axis=0))
    logits = kp.data[..., 0].astype(np.float64)
    dets = soft_argmax_batch(logits)
    point, subset = None, None
    if len(views) >= 2:
        p, s = geo.best_subset_triangulate([v[1] for v in views], list(logits))
        point, subset = p.tolist(), list(s)
    return {"detections": dets.tolist(), "point": point, "subset": subset, "embedding": c[0].astype(float).tolist()}, logits


def cmd_track(args) -> int:
    model, scene, _ = _load_model(args.ckpt)
    ann_path, view_path = Path(args.annotations), Path(args.views)
    anns = []
    for a in _read_json_list(ann_path, "annotations"):
        if not isinstance(a, dict) or "image" not in a or "pixel" not in a or len(a["pixel"]) != 2:
            raise InvalidConfig(f"{ann_path}: every annotation needs 'image' and 'pixel' [u, v]")
        img = read_ppm(ann_path.parent / a["image"])
        _check_image(img, scene, a["image"])
        anns.append((img, (float(a["pixel"][0]), float(a["pixel"][1]))))
    views = []
    for v in _read_json_list(view_path, "views"):
        if not isinstance(v, dict) or "image" not in v:
            raise InvalidConfig(f"{view_path}: every view needs an 'image'")
        img = read_ppm(view_path.parent / v["image"])
        _check_image(img, scene, v["image"])
        cam = geo.Camera.from_dict(v["camera"]) if "camera" in v else scene.camera()
        if (cam.width, cam.height) != (scene.width, scene.height):
            raise InvalidConfig(f"{view_path}: camera resolution does not match the image")
        views.append((img, cam))
    result, logits = track(model, scene, anns, views)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "track.json").write_text(json.dumps(result, indent=2) + "\n")
        if args.dump_heatmaps:
            for i, lg in enumerate(logits):
                write_pgm(out / f"heatmap_{i}.pgm", np.exp(lg - lg.max()))
    print(json.dumps(result))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, scene, manifest = _load_model(args.ckpt)
    run = _load_config(args, {"scene": cfgmod._jsonable(scene.to_dict())} if args.config is None else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ev = run.eval
    if args.report == "rmse":
        batches = read_dataset(args.data) if args.data else _eval_batches(run, ev.meta_batches)
        if not batches:
            raise EmptyInput("evaluation dataset is empty")
        rows = [eval_rmse(model, batches, r) for r in ("adaptation", "autoencoder")]
        with open(out / "rmse.csv", "w") as f:
            f.write("regime,rmse,count\n")
            for r in rows:
                f.write(f"{r.conditions[0]},{r.rmse[0]!r},{r.counts[0]}\n")
        print(json.dumps({r.conditions[0]: r.rmse[0] for r in rows}))
    elif args.report == "sweep":
        tasks = sweep_tasks(run.seed ^ 0x5EE9, ev.sweep_tasks, eval_objects(run.scene), run.scene, ev.max_annotations, ev.test_views, _cams(run))
        curve = annotation_sweep(model, tasks, range(1, ev.max_annotations + 1), ev.test_views)
        with open(out / "annotation_sweep.csv", "w") as f:
            f.write("annotations,rmse\n")
            for n, r in curve:
                f.write(f"{n},{r!r}\n")
        print(json.dumps(dict(curve)))
    elif args.report == "offsurface":
        table = offsurface_eval(model, eval_objects(run.scene), run.scene, ev.offsurface_sigma, ev.points_per_object, run.seed, run.train.n_cond, _cams(run))
        table.write_csv(out / "offsurface.csv")
        print(json.dumps({"buckets": len(table.buckets), "queries": int(len(table.distances))}))
    elif args.report == "compare":
        rep = compare_sparse_methods(eval_objects(run.scene)[0], run.scene, run.model, run.train, seed=run.seed, full_model=model)
        rep.write_csv(out / "compare.csv")
        print(json.dumps(rep.as_dict()))
    return EXIT_OK


def cmd_viz(args) -> int:
    model, scene, _ = _load_model(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img = read_ppm(args.image)
    _check_image(img, scene, args.image)
    dt = model.params["dec.stem.w"].dtype

    def embed_at(pixel):
        tg = make_target(pixel, scene.sigma, (scene.width, scene.height)).astype(dt)[None, ..., None]
        with ad.no_grad():
            return model.encode(img[None].astype(dt), tg).data[0].astype(np.float64)

    if args.report == "embedding":
        write_ppm(out / "embedding.ppm", embedding_image(model, img, scene.sigma))
    elif args.report == "interpolate":
        if args.pixel is None or args.pixel_end is None:
            raise InvalidConfig("interpolation needs --pixel and --pixel-end")
        poly = interpolate_embeddings(model, img, embed_at(args.pixel), embed_at(args.pixel_end), args.steps)
        (out / "interpolation.json").write_text(json.dumps(poly.tolist()) + "\n")
    elif args.report == "saliency":
        if args.pixel is None:
            raise InvalidConfig("saliency needs --pixel")
        if args.mode == "encoder":
            cond = make_target(args.pixel, scene.sigma, (scene.width, scene.height))
        else:
            cond = embed_at(args.pixel)
        s = saliency(model, img, cond, args.mode)
        rgb = s if s.shape[-1] == 3 else np.concatenate([s, np.zeros(s.shape[:2] + (1,))], axis=-1)
        write_ppm(out / f"saliency_{args.mode}.ppm", rgb)
    print(json.dumps({"out": str(out), "report": args.report}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = _load_config(args)
    values = [int(v) if args.param != "mode" else v for v in args.values]
    param = "embedding_size" if args.param == "embedding-size" else args.param
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(param, values, train_objects(run.scene), run.scene, run.model, run.train, args.seeds, run.train.eval_batches or 32, out / f"sweep_{param}.csv")
    print(json.dumps(rows))
    return EXIT_OK


def cmd_schema(args) -> int:
    text = cfgmod.schema_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tack", description="Few-shot conditioned keypoint tracking toolkit.")
    p.add_argument("--threads", type=int, default=1, help="worker threads for data generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a meta-batch dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=2000)
    g.add_argument("--seed", type=int)
    g.add_argument("--ppm", action="store_true", help="also export every view as PPM")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory from 'tack gen'")
    src.add_argument("--online", action="store_true", help="generate fresh tasks for every step")
    t.add_argument("--out", required=True)
    t.add_argument("--loss", choices=("adapt", "auto", "both"))
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-at", type=int, help="stop after this many total steps (schedule unchanged)")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="detect a keypoint in views and triangulate it")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--annotations", required=True, help="JSON list of {image, pixel}")
    k.add_argument("--views", required=True, help="JSON list of {image, camera}")
    k.add_argument("--out")
    k.add_argument("--dump-heatmaps", action="store_true")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="evaluation reports")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", choices=("rmse", "sweep", "offsurface", "compare"), default="rmse")
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    z = sub.add_parser("viz", help="visualisations")
    z.add_argument("--ckpt", required=True)
    z.add_argument("--report", choices=("embedding", "interpolate", "saliency"), required=True)
    z.add_argument("--image", required=True)
    z.add_argument("--pixel", type=float, nargs=2)
    z.add_argument("--pixel-end", type=float, nargs=2)
    z.add_argument("--steps", type=int, default=9)
    z.add_argument("--mode", choices=("encoder", "decoder"), default="decoder")
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_viz)

    s = sub.add_parser("sweep", help="train-and-evaluate sweep over a model setting")
    s.add_argument("--config")
    s.add_argument("--param", choices=("embedding-size", "mode"), required=True)
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    sc = sub.add_parser("schema", help="print the run-config JSON schema")
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (NonFiniteLoss, DegenerateGeometry, NoValidSubset, FloatingPointError) as e:
        print(f"tack: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorruptManifest, OSError) as e:
        print(f"tack: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ShapeMismatch as e:
        print(f"tack: data error: {e}", file=sys.stderr)
        return EXIT_IO
    except (InvalidConfig, EmptyInput, KTooSmall, FovBudgetExceeded, ValueError, KeyError) as e:
        print(f"tack: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
