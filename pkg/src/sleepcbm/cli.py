"""Command-line entry point: ``sleepcbm <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
Every run writes ``run_manifest.json`` (tool version, seed, config hash) into
``--out-dir``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, nn
from .concepts import compute_concepts
from .core import CONCEPT_NAMES
from .experiments import (ExperimentConfig, build_context, corruption_ablation,
                          fusion_baselines, intervention_study, load_cohort,
                          pipeline_bmi_report, pipeline_importance, prepare_cohort,
                          proportion_sweep, run_pipeline, split_indices, write_evaluation)
from .preprocess import ConfigError, OximetryPreprocessor
from .regressor import MLPAHIRegressor, fuse, severity_array
from .slam import SlamRegressor, TrainingDivergedError
from .synth import SynthConfig, generate_cohort

logger = logging.getLogger("sleepcbm")

ABLATIONS = ("corruption", "sweep", "intervention", "fusion", "importance", "bmi")
SEVERITY_LABELS = ("Normal", "Mild", "Moderate", "Severe")
PREDICTION_COLUMNS = ("id", "pred_ahi", "severity", "reference_ahi", "reference_severity")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(parser):
    parser.add_argument("--config", type=Path, help="experiment configuration JSON")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sleepcbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic cohort of study bundles")
    _common(p)
    p.add_argument("--n-studies", type=int)

    for name, text in (("preprocess", "write preprocessed signals"),
                       ("oracle", "compute reference concepts from annotations")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--input", type=Path, required=True, help="study bundle directory")

    p = sub.add_parser("train-slam", help="train the signal-to-concept network")
    _common(p)
    p.add_argument("--input", type=Path, help="bundles (default: generate per config)")

    p = sub.add_parser("train-reg", help="train the AHI regressor")
    _common(p)
    p.add_argument("--input", type=Path, help="bundles (default: generate per config)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--slam-model", type=Path,
                     help="network bundle; concepts are its predictions")
    src.add_argument("--concepts", type=Path,
                     help="concept CSV keyed by id (e.g. from `oracle` or `predict`)")

    p = sub.add_parser("predict", help="concepts, AHI and severity for study bundles")
    _common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--slam-model", type=Path, required=True)
    p.add_argument("--reg-model", type=Path, required=True)
    p.add_argument("--saliency", action="store_true", help="also write saliency maps")

    p = sub.add_parser("evaluate", help="agreement and classification reports")
    _common(p)
    p.add_argument("--predictions", type=Path, required=True,
                   help="CSV with columns id, pred_ahi, reference_ahi")

    p = sub.add_parser("pipeline", help="full train + evaluate run on all cohorts")
    _common(p)
    p.add_argument("--slam-model", type=Path)

    p = sub.add_parser("ablate", help="concept-quality experiments")
    _common(p)
    p.add_argument("kind", choices=ABLATIONS)
    p.add_argument("--slam-model", type=Path,
                   help="reuse a trained network instead of training one")
    return parser


# helpers ------------------------------------------------------------------------

def load_config(path, seed) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise io.MissingFileError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    try:
        config = ExperimentConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if seed is not None:
        config = replace(config.with_seed(seed), slam=replace(config.slam, seed=seed))
    return config


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: ExperimentConfig, extra=None):
    doc = {"tool": "sleepcbm", "version": __version__, "command": command,
           "seed": config.seed, "config_hash": config_hash(config),
           "config": config.to_dict()}
    if extra:
        doc.update(extra)
    (out_dir / "run_manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def save_model(model, directory: Path):
    meta, arrays = model.get_state()
    meta["version"] = __version__
    nn.save_bundle(directory, meta, arrays)


def load_slam(directory) -> SlamRegressor:
    meta, arrays = nn.load_bundle(directory)
    if meta.get("kind") != "slam":
        raise ConfigError(f"{directory} is not a concept-network bundle")
    return SlamRegressor.from_state(meta, arrays)


def load_regressor(directory) -> MLPAHIRegressor:
    meta, arrays = nn.load_bundle(directory)
    if meta.get("kind") != "mlp_regressor":
        raise ConfigError(f"{directory} is not a regressor bundle")
    return MLPAHIRegressor.from_state(meta, arrays)


def _studies(args, config):
    if getattr(args, "input", None) is not None:
        return load_cohort({"name": "input", "path": str(args.input)})
    return load_cohort(config.cohort)


def _split(config, studies):
    data = prepare_cohort(studies, config.cohort["name"], config.preprocess)
    tr, va, te = split_indices(len(data), config.fractions, config.seed)
    return data.subset(tr, "train"), data.subset(va, "val"), data.subset(te, "test")


# subcommands --------------------------------------------------------------------

def cmd_synth(args, config):
    synth = dict(config.cohort.get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    if args.n_studies is not None:
        synth["n_studies"] = args.n_studies
    cfg = SynthConfig.from_dict(synth)
    generate_cohort(cfg, args.out_dir / "cohort")
    return {"synth": cfg.to_dict()}


def cmd_preprocess(args, config):
    studies = _studies(args, config)
    pre = config.preprocess
    X = OximetryPreprocessor(pre.target_len, pre.savgol_window,
                             pre.savgol_order).fit_transform([s.signal for s in studies])
    out = args.out_dir / "preprocessed"
    out.mkdir(parents=True, exist_ok=True)
    for study, row in zip(studies, X):
        io.save_table(({"t": t, "value": v} for t, v in enumerate(row)),
                      out / f"{study.id}.csv", columns=("t", "value"))


def cmd_oracle(args, config):
    rows = []
    for s in _studies(args, config):
        c = compute_concepts(s.events, s.signal, s.total_sleep_time_h)
        rows.append({"id": s.id, **c.as_dict(), "reference_ahi": s.reference_ahi})
    io.save_table(rows, args.out_dir / "concepts.csv",
                  columns=("id", *CONCEPT_NAMES, "reference_ahi"))


def cmd_train_slam(args, config):
    train, val, _ = _split(config, _studies(args, config))
    model = SlamRegressor.from_config(config.slam).fit(train.X, train.C, val.X, val.C)
    save_model(model, args.out_dir / "slam_model")
    io.save_table([{"epoch": h.epoch, "train_mae": h.train_mae, "val_mae": h.val_mae}
                   for h in model.history_], args.out_dir / "history.csv")


def cmd_train_reg(args, config):
    train, val, _ = _split(config, _studies(args, config))
    if args.slam_model is not None:
        slam = load_slam(args.slam_model)
        c_train, c_val = slam.predict(train.X), slam.predict(val.X)
        source = "network"
    elif args.concepts is not None:
        table = read_concept_csv(args.concepts)
        c_train, c_val = _lookup(table, train.ids), _lookup(table, val.ids)
        source = str(args.concepts)
    else:
        c_train, c_val = train.C, val.C
        source = "oracle"
    model = MLPAHIRegressor.from_config(config.regressor).fit(
        fuse(c_train, train.clinical), train.ahi, fuse(c_val, val.clinical), val.ahi)
    save_model(model, args.out_dir / "reg_model")
    return {"concept_source": source}


def read_concept_csv(path) -> dict:
    rows = io.read_table(path)
    if not rows or not {"id", *CONCEPT_NAMES} <= set(rows[0]):
        raise ConfigError(f"{path} needs columns id and {', '.join(CONCEPT_NAMES)}")
    try:
        return {r["id"]: np.array([float(r[n]) for n in CONCEPT_NAMES]) for r in rows}
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _lookup(table, ids):
    missing = [i for i in ids if i not in table]
    if missing:
        raise ConfigError(f"concept CSV lacks studies {missing[:5]}")
    return np.vstack([table[i] for i in ids])


def cmd_predict(args, config):
    studies = _studies(args, config)
    slam, reg = load_slam(args.slam_model), load_regressor(args.reg_model)
    data = prepare_cohort(studies, "input", config.preprocess)
    concepts = slam.predict(data.X)
    ahi = reg.predict(fuse(concepts, data.clinical))
    pred_cls, ref_cls = severity_array(ahi), severity_array(data.ahi)
    io.save_table([{"id": i, **dict(zip(CONCEPT_NAMES, c))}
                   for i, c in zip(data.ids, concepts)], args.out_dir / "concepts.csv")
    io.save_table([{"id": data.ids[i], "pred_ahi": ahi[i],
                    "severity": SEVERITY_LABELS[pred_cls[i]],
                    "reference_ahi": data.ahi[i],
                    "reference_severity": SEVERITY_LABELS[ref_cls[i]]}
                   for i in range(len(data.ids))], args.out_dir / "predictions.csv",
                  columns=PREDICTION_COLUMNS)
    if args.saliency:
        out = args.out_dir / "saliency"
        out.mkdir(parents=True, exist_ok=True)
        maps = slam.saliency(data.X)
        for study_id, row in zip(data.ids, maps):
            io.save_table(({"t_s": t, "saliency": v} for t, v in enumerate(row)),
                          out / f"{study_id}.csv", columns=("t_s", "saliency"))
        (out / "metadata.json").write_text(json.dumps(
            {"trained": bool(slam.trained_), "n": len(data.ids)}, indent=2))
    return {"trained_network": bool(slam.trained_)}


def cmd_evaluate(args, config):
    rows = io.read_table(args.predictions)
    if not rows:
        raise ConfigError(f"{args.predictions} has no rows")
    missing = {"id", "pred_ahi", "reference_ahi"} - set(rows[0])
    if missing:
        raise ConfigError(f"{args.predictions} lacks columns {sorted(missing)}")
    try:
        ref = np.array([float(r["reference_ahi"]) for r in rows])
        pred = np.array([float(r["pred_ahi"]) for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{args.predictions}: {exc}") from None
    write_evaluation(ref, pred, args.out_dir, [r["id"] for r in rows],
                     config.bootstrap_n, config.seed)


def _context(args, config):
    slam = load_slam(args.slam_model) if args.slam_model is not None else None
    return build_context(config, slam=slam)


def cmd_pipeline(args, config):
    ctx = _context(args, config)
    result = run_pipeline(config, args.out_dir, context=ctx)
    if args.slam_model is None:
        save_model(ctx.slam, args.out_dir / "slam_model")
    save_model(result.regressor, args.out_dir / "reg_model")


def cmd_ablate(args, config):
    ctx = _context(args, config)
    out = args.out_dir
    if args.kind == "corruption":
        corruption_ablation(ctx, out)
    elif args.kind == "sweep":
        proportion_sweep(ctx, out)
    elif args.kind == "intervention":
        intervention_study(ctx, out)
    elif args.kind == "fusion":
        fusion_baselines(ctx, out)
    elif args.kind == "importance":
        pipeline_importance(ctx, out)
    else:
        result = run_pipeline(config, None, context=ctx)
        pipeline_bmi_report(ctx, result.predictions["test"], out)
    return {"ablation": args.kind}


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "oracle": cmd_oracle,
    "train-slam": cmd_train_slam, "train-reg": cmd_train_reg, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "pipeline": cmd_pipeline, "ablate": cmd_ablate,
}

VALIDATION_ERRORS = (ValueError, io.BundleError, FileNotFoundError, KeyError)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"sleepcbm: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.seed)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, config)
        write_manifest(args.out_dir, args.command, config, extra)
    except TrainingDivergedError as exc:
        print(f"sleepcbm: training failed: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"sleepcbm: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        logger.debug("runtime failure", exc_info=True)
        print(f"sleepcbm: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
