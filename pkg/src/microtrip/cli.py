"""Command-line pipeline: ingest, cluster, fit-markov, train, generate, evaluate, report.

Each command writes its artifact plus ``<artifact>.manifest.json`` recording
input/output digests, the seed, the config digest and the wall time. Errors
print one JSON object on stderr and exit with 1 (usage or invalid input),
2 (missing or unreadable artifact) or 3 (numerical failure).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, ingest, metrics, postgen, svg
from .config import ConfigError, RunConfig, load_config
from .diffusion import ConditionVector, NumericalError, make_schedule
from .markov import InfeasibleBridgeError, TransitionModel, fit_second_order, generate_markov
from .neural.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .neural.models import build_model
from .neural.train import TrainConfig, TrainingError, history_csv, train

CONDITION_FIELDS = ("avg_speed_mps", "duration_s", "max_speed_mps", "d_veh")
ENGINE_VARIANT = {"unet": "unet", "csdi": "transformer"}


class CliError(Exception):
    def __init__(self, code, message, exit_code=1):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", message, 1)


# ------------------------------------------------------------------ helpers


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path, code):
    if path is None or not Path(path).exists():
        raise CliError(code, f"file not found: {path}", 2)
    return Path(path)


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_manifest(out, command, cfg: RunConfig, inputs, outputs, seed, started, extra=None):
    man = {
        "command": command,
        "config_digest": cfg.digest(),
        "seed": seed,
        "inputs": {Path(p).name: _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        man.update(extra)
    _write(f"{out}.manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")


def _load_ds(path, code="E_DATASET_NOT_FOUND"):
    return ingest.load_dataset(_require(path, code))


def _save_ds(trips, provenance, path, cfg):
    ds = ingest.Dataset(list(trips), {**provenance, "config_digest": cfg.digest()})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ingest.save_dataset(ds, path)
    return ds


def conditions_csv(trips) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONDITION_FIELDS)
    for t in trips:
        c = ConditionVector.from_trip(t, "csdi")
        s = t.stats
        w.writerow([repr(s.avg_speed_mps), s.duration_s, repr(s.max_speed_mps), repr(float(c.d_veh))])
    return buf.getvalue()


def read_conditions(path):
    with open(_require(path, "E_CONDITIONS_NOT_FOUND"), newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CONDITION_FIELDS:
            raise CliError("E_INVALID_INPUT", f"conditions file must have columns {','.join(CONDITION_FIELDS)}")
        return [{k: float(row[k]) for k in CONDITION_FIELDS} for row in reader]


def _to_condition(row, mode):
    return ConditionVector.from_stats(row["avg_speed_mps"], row["duration_s"], mode, row["max_speed_mps"], row["d_veh"])


# ------------------------------------------------------------------ commands


def cmd_fixture(args, cfg):
    from .fixtures import fixture_trace_csv, generate_fixture

    started = time.perf_counter()
    ds, _ = generate_fixture(args.n, seed=args.seed, max_duration=args.max_duration)
    _write(args.out, fixture_trace_csv(ds, seed=args.seed))
    _write_manifest(args.out, "fixture", cfg, [], [args.out], args.seed, started, {"n_trips": len(ds)})


def cmd_ingest(args, cfg):
    started = time.perf_counter()
    src = _require(args.input, "E_INPUT_NOT_FOUND")
    stop = args.stop_speed if args.stop_speed is not None else cfg.ingest.stop_speed
    mind = args.min_duration if args.min_duration is not None else cfg.ingest.min_duration
    ds = ingest.ingest_traces(src.read_bytes(), stop, mind)
    if not len(ds):
        raise CliError("E_EMPTY_DATASET", "segmentation produced no micro-trips")
    _save_ds(ds, ds.provenance, args.output, cfg)
    if args.summary:
        _write(args.summary, ingest.summary_csv(ingest.dataset_summary(ds)))
    outs = [args.output] + ([args.summary] if args.summary else [])
    _write_manifest(args.output, "ingest", cfg, [src], outs, None, started, {"n_trips": len(ds)})


def cmd_cluster(args, cfg):
    started = time.perf_counter()
    ds = _load_ds(args.dataset)
    k = args.k if args.k is not None else cfg.cluster.k
    seed = args.seed if args.seed is not None else cfg.cluster.seed
    X = analysis.feature_matrix(ds)
    model = analysis.kmeans_fit(X, k=k, seed=seed)
    pca = analysis.pca_project(X, dims=2)
    train_idx, test_idx = analysis.stratified_split(model.assignments, cfg.cluster.train_frac, cfg.cluster.split_seed)
    doc = {
        **model.to_dict(),
        "config_digest": cfg.digest(),
        "pca": {
            "components": pca.components.tolist(),
            "explained_variance_ratio": pca.explained_variance_ratio.tolist(),
        },
        "split": {"train": train_idx.tolist(), "test": test_idx.tolist()},
    }
    _write(args.out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    outs = [args.out]
    if args.projections:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trip_index", "cluster", "pc1", "pc2"])
        for i, (c, p) in enumerate(zip(model.assignments, pca.coords)):
            w.writerow([i, int(c), repr(float(p[0])), repr(float(p[1]))])
        _write(args.projections, buf.getvalue())
        outs.append(args.projections)
    if args.report:
        rows = analysis.cluster_report(X, model)
        buf = io.StringIO()
        cols = ["cluster", "count", "avg_speed_mps", "max_speed_mps", "stops_per_km", "idle_ratio_pct"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        _write(args.report, buf.getvalue())
        outs.append(args.report)
    prov = {"source": Path(args.dataset).name}
    if args.train_out:
        _save_ds(ds.subset(train_idx), {**prov, "split": "train"}, args.train_out, cfg)
        outs.append(args.train_out)
    if args.test_out:
        _save_ds(ds.subset(test_idx), {**prov, "split": "test"}, args.test_out, cfg)
        outs.append(args.test_out)
    if args.conditions_out:
        _write(args.conditions_out, conditions_csv(ds.subset(test_idx)))
        outs.append(args.conditions_out)
    _write_manifest(args.out, "cluster", cfg, [args.dataset], outs, seed, started)


def cmd_fit_markov(args, cfg):
    started = time.perf_counter()
    ds = _load_ds(args.train)
    dv = args.delta_v if args.delta_v is not None else cfg.markov.delta_v
    alpha = args.alpha if args.alpha is not None else cfg.markov.alpha
    model = fit_second_order(list(ds), delta_v=dv, alpha=alpha)
    doc = {**model.to_dict(), "config_digest": cfg.digest()}
    _write(args.out, json.dumps(doc, sort_keys=True) + "\n")
    _write_manifest(args.out, "fit-markov", cfg, [args.train], [args.out], None, started)


def cmd_train(args, cfg):
    started = time.perf_counter()
    ds = _load_ds(args.train)
    sec = cfg.engine(args.engine)
    seed = args.seed if args.seed is not None else sec.seed
    epochs = args.epochs if args.epochs is not None else sec.epochs
    arch = {**sec.architecture, "variant": ENGINE_VARIANT[args.engine]}
    if args.engine == "csdi":
        arch.setdefault("in_channels", 1)
        arch.setdefault("cond_dim", 4)
    model = build_model(arch, seed=seed)
    tcfg = TrainConfig(
        epochs=epochs,
        batch_size=sec.batch_size,
        learning_rate=sec.learning_rate,
        cond_dropout=sec.cond_dropout,
        physics_min_alpha_bar=sec.physics_min_alpha_bar,
        schedule=sec.schedule,
        diffusion_steps=sec.diffusion_steps,
        seed=seed,
    )
    sched = make_schedule(sec.schedule, sec.diffusion_steps)
    result = train(model, list(ds), sched, tcfg, mode=args.engine)
    stem = Path(args.out)
    save_checkpoint(
        model,
        stem,
        config=tcfg.to_dict(),
        extra={"engine": args.engine, "config_digest": cfg.digest(), "train_sha256": _sha256(args.train)},
    )
    hist = stem.with_suffix(".history.csv")
    _write(hist, history_csv(result.history))
    outs = [stem.with_suffix(".json"), stem.with_suffix(".bin"), hist]
    _write_manifest(stem, "train", cfg, [args.train], outs, seed, started, {"steps": result.steps})


def cmd_generate(args, cfg):
    started = time.perf_counter()
    gen = cfg.generation
    seed = args.seed if args.seed is not None else gen.seed
    inputs = []
    engine = args.engine
    if engine == "markov":
        model_path = _require(args.model or args.checkpoint, "E_MODEL_NOT_FOUND")
        inputs.append(model_path)
    else:
        stem = Path(args.checkpoint) if args.checkpoint else None
        if stem is None or not stem.with_suffix(".json").exists():
            raise CliError("E_CHECKPOINT_NOT_FOUND", f"checkpoint not found: {args.checkpoint}", 2)
        inputs += [stem.with_suffix(".json"), stem.with_suffix(".bin")]
    mode = "unet" if engine == "unet" else "csdi"
    n = args.n if args.n is not None else gen.n
    overrides = {
        k: v
        for k, v in {
            "boost_speed": gen.boost_speed,
            "boost_duration": gen.boost_duration,
            "guidance_scale": gen.guidance_scale,
        }.items()
        if v is not None
    }
    gcfg = postgen.GenerationConfig.for_engine(mode, corr_sigma=gen.corr_sigma, batch_size=gen.batch_size, **overrides)
    if args.conditions:
        rows = read_conditions(args.conditions)
        inputs.append(args.conditions)
        if n:
            rows = rows[:n]
        conds = [_to_condition(r, mode) for r in rows]
    elif args.pool:
        pool = _load_ds(args.pool)
        inputs.append(args.pool)
        if not n:
            raise CliError("E_USAGE", "--pool needs --n")
        conds, _ = postgen.sample_conditions(
            list(pool), gcfg.boost_speed, gcfg.boost_duration, n, np.random.default_rng(seed), mode=mode
        )
    else:
        raise CliError("E_USAGE", "generate needs --conditions or --pool")
    if engine == "markov":
        model = TransitionModel.load(model_path)
        trips = generate_markov(model, [c.duration for c in conds], seed=seed, smooth=cfg.markov.smooth)
        prov = {"engine": "markov", "seed": seed}
    else:
        model, manifest = load_checkpoint(stem)
        if manifest.get("engine") != engine:
            raise CliError("E_INVALID_INPUT", f"checkpoint was trained for engine {manifest.get('engine')!r}")
        tc = manifest["config"]
        sched = make_schedule(tc["schedule"], tc["diffusion_steps"])
        trips = postgen.generate_diffusion(model, sched, conds, engine, gcfg, seed=seed)
        prov = {"engine": engine, "seed": seed, "generation": gcfg.to_dict()}
    _save_ds(trips, prov, args.out, cfg)
    _write_manifest(args.out, "generate", cfg, inputs, [args.out], seed, started, {"n_trips": len(trips)})


def cmd_evaluate(args, cfg):
    started = time.perf_counter()
    real = _load_ds(args.real)
    synth = _load_ds(args.synth)
    inputs = [args.real, args.synth]
    dr, ds_ = real.provenance.get("config_digest"), synth.provenance.get("config_digest")
    if not args.force and dr != ds_:
        raise CliError(
            "E_DIGEST_MISMATCH", f"real and synthetic datasets come from different configs ({dr} vs {ds_}); use --force", 1
        )
    tstr_train = None
    if args.tstr_train:
        tstr_train = list(_load_ds(args.tstr_train))
        inputs.append(args.tstr_train)
    seed = args.seed if args.seed is not None else cfg.metrics.seed
    report = metrics.full_report(
        list(real),
        list(synth),
        seed=seed,
        bandwidth=cfg.metrics.bandwidth,
        tstr_train=tstr_train,
        config={"config_digest": cfg.digest(), "engine": synth.provenance.get("engine")},
    )
    _write(args.out, report.to_json())
    outs = [args.out]
    if args.csv:
        _write(args.csv, report.to_csv())
        outs.append(args.csv)
    _write_manifest(args.out, "evaluate", cfg, inputs, outs, seed, started)


def cmd_report(args, cfg):
    started = time.perf_counter()
    rep_path = _require(args.report, "E_REPORT_NOT_FOUND")
    rep = json.loads(rep_path.read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "synthetic", "real"])
    for name in metrics.REPORT_FIELDS:
        ref = rep.get("reference", {}).get(name, "")
        w.writerow([name, rep[name], ref])
    outs = [out / "metrics.csv", out / "metrics.json"]
    _write(outs[0], buf.getvalue())
    _write(outs[1], json.dumps(rep, indent=2, sort_keys=True) + "\n")
    inputs = [rep_path]
    if args.plots:
        real, synth = _load_ds(args.real), _load_ds(args.synth)
        inputs += [args.real, args.synth]
        vr, ar = metrics.pooled_speed_accel(real)
        vs, as_ = metrics.pooled_speed_accel(synth)
        figs = {
            "speed_hist.svg": svg.histogram_svg(
                {"real": vr, "synthetic": vs}, title="Speed distribution", xlabel="speed (m/s)"
            ),
            "accel_hist.svg": svg.histogram_svg(
                {"real": ar, "synthetic": as_},
                title="Acceleration distribution",
                xlabel="acceleration (m/s^2)",
                value_range=(-5, 5),
            ),
            "vsp_hist.svg": svg.histogram_svg(
                {"real": metrics.vsp(vr, ar), "synthetic": metrics.vsp(vs, as_)},
                title="VSP distribution",
                xlabel="VSP (kW/ton)",
            ),
            "trips.svg": svg.lines_svg(
                {f"synthetic {i}": synth[i].speeds for i in range(min(3, len(synth)))}, title="Synthetic micro-trips"
            ),
        }
        for name, trips in (("real", real), ("synthetic", synth)):
            h = metrics.SafdHistogram.from_trips(trips)
            figs[f"safd_{name}.svg"] = svg.heatmap_svg(
                h.mass, h.speed_edges, h.accel_edges, f"SAFD ({name})", "speed (m/s)", "acceleration (m/s^2)"
            )
        for name, text in figs.items():
            _write(out / name, text)
            outs.append(out / name)
    _write_manifest(out / "report", "report", cfg, inputs, outs, None, started)


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="microtrip", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="run config JSON")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fixture", help="write a synthetic trace CSV")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-duration", type=int, default=511)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("ingest", help="segment raw traces into micro-trips")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--stop-speed", type=float)
    s.add_argument("--min-duration", type=int)
    s.add_argument("--summary", help="dataset summary CSV")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("cluster", help="K-means regimes, PCA and the stratified split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--projections")
    s.add_argument("--report")
    s.add_argument("--train-out")
    s.add_argument("--test-out")
    s.add_argument("--conditions-out")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("fit-markov", help="fit the second-order Markov baseline")
    s.add_argument("--train", required=True)
    s.add_argument("--delta-v", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_markov)

    s = sub.add_parser("train", help="train a diffusion denoiser")
    s.add_argument("--train", required=True)
    s.add_argument("--engine", choices=("unet", "csdi"), required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="checkpoint stem")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate synthetic micro-trips")
    s.add_argument("--engine", choices=("markov", "unet", "csdi"), required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--model")
    s.add_argument("--conditions")
    s.add_argument("--pool")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="compare synthetic with real micro-trips")
    s.add_argument("--real", required=True)
    s.add_argument("--synth", required=True)
    s.add_argument("--tstr-train")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="render tables and SVG plots")
    s.add_argument("--report", required=True)
    s.add_argument("--real")
    s.add_argument("--synth")
    s.add_argument("--plots", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _classify(exc):
    if isinstance(exc, CliError):
        return exc.code, exc.exit_code
    if isinstance(exc, (NumericalError, TrainingError, InfeasibleBridgeError, FloatingPointError)):
        return "E_NUMERICAL", 3
    if isinstance(exc, (ingest.DatasetFormatError, CheckpointError)):
        return "E_ARTIFACT_INVALID", 2
    if isinstance(exc, FileNotFoundError):
        return "E_FILE_NOT_FOUND", 2
    if isinstance(exc, (ConfigError, ingest.IngestError, ValueError, KeyError)):
        return "E_INVALID_INPUT", 1
    return None, None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "report" and args.plots and not (args.real and args.synth):
            raise CliError("E_USAGE", "--plots needs --real and --synth")
        cfg = load_config(args.config) if args.config is None or Path(args.config).exists() else None
        if cfg is None:
            raise CliError("E_CONFIG_NOT_FOUND", f"config not found: {args.config}", 2)
        threads = os.environ.get("MICROTRIP_THREADS")
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=max(1, int(threads))):
                args.func(args, cfg)
        else:
            args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code, status = _classify(exc)
        if code is None:
            raise
        sys.stderr.write(json.dumps({"error": code, "message": str(exc), "exit_code": status}) + "\n")
        return status
    return 0


if __name__ == "__main__":
    sys.exit(main())
