# app/cli.py
import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from app.api.server import serve
from app.core.config import CHECKPOINT_NAME, EPOCH_LOG_NAME, RunConfig, load_config
from app.core.errors import CheckpointError, GFEFError, InputValidationError
from app.core.logging_config import setup_logging
from app.core.models import Dataset
from app.repository.dataset_repository import DatasetRepository
from app.repository.run_repository import RunRepository
from app.services.dataset_service import generate_strain_dataset, load_datasets
from app.services.diagnostics_service import DiagnosticsService
from app.services.gradcheck_service import SELECTORS, gradient_check
from app.services.prediction_service import Predictor, load_model, save_result
from app.services.training_service import TrainResult, history_frame, train

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfef", description="Global-feature hypergraph time-series classifier")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one dotted configuration key (repeatable)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", parents=[common], help="Train and write a checkpoint")
    p.add_argument("--out", default=CHECKPOINT_NAME, help="Checkpoint path")

    p = commands.add_parser("evaluate", parents=[common], help="Print metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    p = commands.add_parser("predict", parents=[common], help="Classify series read from a file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="One series per line, comma or whitespace separated")
    p.add_argument("--out", help="Write JSON lines here instead of stdout")

    p = commands.add_parser("generate", parents=[common], help="Write a synthetic strain dataset")
    p.add_argument("--out", required=True, help="Training split path")
    p.add_argument("--test-out", help="Also write the split drawn with dataset.synthetic.test_seed")
    p.add_argument("--format", choices=("ucr", "strain_csv"), default="ucr")

    p = commands.add_parser("serve", parents=[common], help="Start the classification service")
    p.add_argument("--checkpoint", required=True)

    p = commands.add_parser("gradcheck", parents=[common], help="Finite-difference gradient verification")
    p.add_argument("--selector", choices=SELECTORS, default="model")
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--tolerance", type=float)

    p = commands.add_parser("diagnose", parents=[common], help="Hyperedge composition of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="Delimited composition table")
    return parser


# --- Commands ---

def _seed_path(out: str, seed: int, many: bool) -> Path:
    path = Path(out)
    return path.with_name(f"{path.stem}-seed{seed}{path.suffix}") if many else path


def cmd_train(args, config: RunConfig) -> int:
    train_set, validation = load_datasets(config)
    runs = RunRepository(config.run.db_path)
    runs.create_tables()
    many = len(config.train.seeds) > 1
    results: List[TrainResult] = []
    for seed in config.train.seeds:
        run_id = runs.start_run(train_set.name, config.model.architecture, seed, config.to_dict())
        result = train(config, train_set, validation, seed=seed, on_epoch=lambda rec: runs.add_epoch(run_id, rec))
        path = _seed_path(args.out, seed, many)
        save_result(result, str(path))
        log_path = path.parent / (EPOCH_LOG_NAME if not many else f"{path.stem}-{EPOCH_LOG_NAME}")
        history_frame(result.history).to_csv(log_path, sep="\t", index=False)
        runs.finish_run(run_id, str(path), result.final_metrics())
        results.append(result)
        print(f"checkpoint: {path}")
        print(f"epoch_log: {log_path}")

    finals = [r.final_metrics() for r in results if r.final_metrics() is not None]
    for name in ("accuracy", "f1", "precision"):
        values = np.array([getattr(m, name) for m in finals])
        if values.size:
            print(f"{name}: {values.mean():.6f} +/- {values.std():.6f}")
    return 0


def _evaluation_set(config: RunConfig) -> Dataset:
    ds = config.dataset
    if ds.format == "synthetic":
        return generate_strain_dataset(ds.synthetic.n_per_class, ds.synthetic.test_seed)
    repo = DatasetRepository()
    loader = repo.load_ucr if ds.format == "ucr" else repo.load_strain_csv
    return loader(ds.test_path or ds.path)


def cmd_evaluate(args, config: RunConfig) -> int:
    predictor = Predictor(load_model(args.checkpoint))
    metrics = predictor.evaluate(_evaluation_set(config))
    print(f"accuracy: {metrics.accuracy:.6f}")
    print(f"f1: {metrics.f1:.6f}")
    print(f"precision: {metrics.precision:.6f}")
    print("confusion:")
    for row in metrics.confusion:
        print("  " + " ".join(str(int(v)) for v in row))
    return 0


def read_series_file(path: str) -> List[List[float]]:
    file_path = Path(path)
    if not file_path.exists():
        raise InputValidationError(f"Input file not found: {path}")
    series = []
    for number, line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), start=1):
        tokens = [t for t in re.split(r"[,\s]+", line.strip()) if t]
        if not tokens:
            continue
        try:
            series.append([float(t) for t in tokens])
        except ValueError as exc:
            raise InputValidationError(f"Line {number} of {path}: {exc}") from exc
    return series


def cmd_predict(args, config: RunConfig) -> int:
    predictor = Predictor(load_model(args.checkpoint))
    lines = [json.dumps(p.to_json()) for p in predictor.predict_many(read_series_file(args.input))]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args, config: RunConfig) -> int:
    synthetic = config.dataset.synthetic
    repo = DatasetRepository()
    save = repo.save_ucr if args.format == "ucr" else repo.save_strain_csv
    save(generate_strain_dataset(synthetic.n_per_class, synthetic.seed), args.out)
    print(f"train: {args.out}")
    if args.test_out:
        save(generate_strain_dataset(synthetic.n_per_class, synthetic.test_seed), args.test_out)
        print(f"test: {args.test_out}")
    return 0


def cmd_serve(args, config: RunConfig) -> int:
    try:
        predictor: Optional[Predictor] = Predictor(load_model(args.checkpoint))
    except CheckpointError as exc:
        logger.error("Model not loaded, answering 503: %s", exc)
        predictor = None
    serve(predictor, config.service)
    return 0


def cmd_gradcheck(args, config: RunConfig) -> int:
    report = gradient_check(args.selector, args.trials, args.tolerance, seed=config.train.seeds[0], config=config)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_diagnose(args, config: RunConfig) -> int:
    loaded = load_model(args.checkpoint)
    if loaded.config.model.architecture != "gfef" or loaded.config.features.fusion != "hypergraph":
        raise CheckpointError("Only hypergraph-fusion checkpoints have hyperedges to diagnose")
    service = DiagnosticsService()
    output = service.capture(loaded, _evaluation_set(config))
    tags = loaded.config.features.active_types()
    nodes = loaded.config.model.nodes_per_type
    composition = service.hyperedge_composition(output.structure, tags, nodes)
    service.export(composition, args.out)
    print(service.composition_by_family(composition).to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "generate": cmd_generate,
    "serve": cmd_serve,
    "gradcheck": cmd_gradcheck,
    "diagnose": cmd_diagnose,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        config = load_config(args.config, args.overrides)
        setup_logging(config.run.log_level)
        return COMMANDS[args.command](args, config)
    except GFEFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
