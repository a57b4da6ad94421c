"""Command-line entry point: synth, validate, train, predict, score, analyze.

Settings resolve in three layers: built-in defaults, then a flat `key = value`
config file (--config), then explicit flags. Unknown config keys are
rejected. Exit codes: 0 success, 1 runtime or numeric failure, 2 config or
usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    landing_zone_distribution,
    mean_probability,
    predicted_type_vote,
    round_trend,
    shot_distribution,
    write_mean_probability,
)
from .autodiff import NumericHealthError
from .court import CourtSpec, ShotTypeVocab, load_vocab, validate_rally
from .dataset import (
    FilterPolicy,
    ParseError,
    SynthConfig,
    TAU,
    filter_training,
    parse_dataset,
    split,
    synthesize_dataset,
    write_dataset,
)
from .network import Forecaster, ModelConfig
from .scoring import (
    EXPECTED_SAMPLE_SETS,
    export_predictions,
    generate_sample_sets,
    import_predictions,
    score_sample_sets,
)
from .training import TrainConfig, TrainingDivergedError, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Configuration or usage problem; maps to exit code 2."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_optional_int(raw: str) -> int | None:
    return None if raw.strip().lower() == "none" else int(raw)


CONFIG_SCHEMA = {
    "seed": int,
    "n_rallies": int,
    "mean_length": float,
    "vocab": str,
    "embed_dim": int,
    "n_heads": int,
    "n_layers": int,
    "ffn_dim": _parse_optional_int,
    "dropout": float,
    "embedding_mode": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "clip_norm": float,
    "eval_every": int,
    "eval_samples": int,
    "train_fraction": float,
    "split_by_match": _parse_bool,
    "max_rally_length": _parse_optional_int,
    "max_match_total_rounds": _parse_optional_int,
    "min_rally_length": int,
    "samples": int,
    "horizon": int,
    "jobs": int,
    "mirror": str,
}

DEFAULTS = {
    "seed": 0,
    "n_rallies": 32,
    "mean_length": 7.0,
    "vocab": None,
    "embed_dim": 16,
    "n_heads": 2,
    "n_layers": 1,
    "ffn_dim": None,
    "dropout": 0.2,
    "embedding_mode": "modified",
    "epochs": 300,
    "batch_size": 16,
    "learning_rate": 1e-4,
    "clip_norm": 5.0,
    "eval_every": 0,
    "eval_samples": 100,
    "train_fraction": 0.8,
    "split_by_match": False,
    "max_rally_length": 35,
    "max_match_total_rounds": 300,
    "min_rally_length": TAU + 1,
    "samples": EXPECTED_SAMPLE_SETS,
    "horizon": 20,
    "jobs": 1,
    "mirror": "none",
}


def load_config_file(path: str) -> dict:
    """Parse a flat `key = value` config file; '#' starts a comment."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    out = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected 'key = value', found {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"{p}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = CONFIG_SCHEMA[key](value)
        except ValueError as exc:
            raise UsageError(f"{p}:{lineno}: bad value for {key}: {exc}") from exc
    return out


class Settings:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""

    def __init__(self, args: argparse.Namespace):
        self.values = dict(DEFAULTS)
        if getattr(args, "config", None):
            self.values.update(load_config_file(args.config))
        for key in CONFIG_SCHEMA:
            flag = getattr(args, key, None)
            if flag is not None:
                self.values[key] = flag

    def __getitem__(self, key: str):
        return self.values[key]


def _resolve_vocab(settings: Settings) -> ShotTypeVocab:
    path = settings["vocab"]
    if path is None:
        return ShotTypeVocab.default()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"vocabulary file not found: {p}")
    return load_vocab(p)


def _require(args: argparse.Namespace, name: str) -> str:
    value = getattr(args, name, None)
    if not value:
        raise UsageError(f"--{name.replace('_', '-')} is required for this command")
    return value


def _load_rallies(path: str, vocab: ShotTypeVocab, court: CourtSpec, mirror: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"dataset file not found: {p}")
    rallies, meta, rejects = parse_dataset(p, vocab, court, mirror=mirror)
    if rejects:
        print(f"note: {len(rejects)} rows rejected, see {p.name}.rejects.csv")
    return rallies, meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    settings = Settings(args)
    vocab = _resolve_vocab(settings)
    out = Path(_require(args, "out"))
    config = SynthConfig(
        n_rallies=settings["n_rallies"],
        mean_length=settings["mean_length"],
        vocab=vocab,
        seed=settings["seed"],
    )
    rallies = synthesize_dataset(config)
    write_dataset(rallies, vocab, out)
    print(f"wrote {sum(len(r) for r in rallies)} strokes in {len(rallies)} rallies to {out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    settings = Settings(args)
    vocab = _resolve_vocab(settings)
    court = CourtSpec()
    rallies, _ = _load_rallies(_require(args, "data"), vocab, court, settings["mirror"])
    n_violations = 0
    for rally in rallies:
        for v in validate_rally(rally, vocab, strict_serve=args.strict_serve):
            n_violations += 1
            print(f"{rally.match_id}/{rally.rally_id} stroke {v.stroke_index}: {v.rule}: {v.detail}")
    print(f"{len(rallies)} rallies checked, {n_violations} violations")
    return EXIT_OK if n_violations == 0 else EXIT_RUNTIME


def cmd_train(args: argparse.Namespace) -> int:
    settings = Settings(args)
    vocab = _resolve_vocab(settings)
    court = CourtSpec()
    out_dir = Path(_require(args, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)

    rallies, _ = _load_rallies(_require(args, "data"), vocab, court, settings["mirror"])
    policy = FilterPolicy(
        max_rally_length=settings["max_rally_length"],
        max_match_total_rounds=settings["max_match_total_rounds"],
        min_rally_length=settings["min_rally_length"],
    )
    kept, dropped = filter_training(rallies, policy)
    if dropped:
        print(f"filter dropped {len(dropped)} of {len(rallies)} rallies")
    if not kept:
        raise UsageError("no rallies left after filtering")
    train_set, val_set = split(kept, settings["train_fraction"], settings["seed"], by_match=settings["split_by_match"])

    model_config = ModelConfig(
        embed_dim=settings["embed_dim"],
        n_heads=settings["n_heads"],
        n_layers=settings["n_layers"],
        ffn_dim=settings["ffn_dim"],
        dropout_rate=settings["dropout"],
        vocab_size=vocab.size,
        n_players=max(1, len({n for r in train_set for n in (r.player_a, r.player_b)})),
        embedding_mode=settings["embedding_mode"],
    )
    train_config = TrainConfig(
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        clip_norm=settings["clip_norm"],
        eval_every=settings["eval_every"],
        eval_samples=settings["eval_samples"],
        seed=settings["seed"],
    )

    def progress(stats, val_score):
        val = f" val {val_score:.6f}" if val_score is not None else ""
        print(f"epoch {stats.epoch} shot {stats.shot_loss:.6f} area {stats.area_loss:.6f} total {stats.total_loss:.6f}{val}")

    model, report = train(train_set, val_set, model_config, train_config, court, vocab, progress=progress)

    checkpoint = out_dir / "model.ckpt"
    model.save(checkpoint)
    report.checkpoint_path = str(checkpoint)
    report.write_csv(out_dir / "report.csv")
    write_dataset(train_set, vocab, out_dir / "train_split.csv")
    write_dataset(val_set, vocab, out_dir / "val_split.csv")
    print(f"best epoch {report.best_epoch}, wall clock {report.wall_clock_s:.1f}s, checkpoint {checkpoint}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    settings = Settings(args)
    checkpoint = Path(_require(args, "checkpoint"))
    if not checkpoint.exists():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    model = Forecaster.load(checkpoint)
    rallies, _ = _load_rallies(_require(args, "data"), model.vocab, model.court, settings["mirror"])
    out = Path(_require(args, "out"))
    tau = model.config.tau
    open_ended = bool(getattr(args, "open_ended", False))
    horizon = settings["horizon"] if open_ended else None
    if not open_ended:
        short = [r.rally_id for r in rallies if len(r) < tau + 1]
        if short:
            raise ParseError(f"rallies too short to predict (need {tau + 1} strokes): {short[:5]}")

    n_samples = settings["samples"]
    sets = generate_sample_sets(
        model, rallies, n_samples, settings["seed"], jobs=settings["jobs"], horizon=horizon
    )
    export_predictions(rallies, sets, model.vocab, out)
    n_rows = sum(len(suffix) for one in sets for suffix in one)
    print(f"wrote {n_rows} prediction rows ({n_samples} sample sets) to {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    settings = Settings(args)
    vocab = _resolve_vocab(settings)
    court = CourtSpec()
    truths, _ = _load_rallies(_require(args, "truth"), vocab, court, settings["mirror"])
    pred_path = Path(_require(args, "predictions"))
    if not pred_path.exists():
        raise UsageError(f"prediction file not found: {pred_path}")
    pred = import_predictions(pred_path, vocab)
    if pred.n_samples != EXPECTED_SAMPLE_SETS:
        raise UsageError(f"expected {EXPECTED_SAMPLE_SETS} sample sets, found {pred.n_samples}")
    scorable = [r for r in truths if len(r) >= TAU + 1]
    report = score_sample_sets(pred.sample_sets(scorable), scorable, protocol="min_of_sets")
    for line in report.lines():
        print(line)
    if args.out:
        report.write_csv(args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    settings = Settings(args)
    vocab = _resolve_vocab(settings)
    court = CourtSpec()
    kind = args.kind
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset_kinds = {
        "shot-by-round": "ball_round",
        "shot-by-player": "player",
        "shot-by-zone": "landing_zone",
        "shot-by-location": "player_location_zone",
    }
    if kind in dataset_kinds:
        rallies, _ = _load_rallies(_require(args, "data"), vocab, court, settings["mirror"])
        grouping = dataset_kinds[kind]
        table = shot_distribution(rallies, grouping, vocab, court)
        path = out_dir / f"analysis_shot_distribution_{grouping}.csv"
        table.write_csv(path)
        print(f"wrote {path}")
        return EXIT_OK

    if kind not in ("vote", "zones", "trend"):
        raise UsageError(f"unknown --kind {kind!r}")
    pred_path = getattr(args, "predictions", None)
    if not pred_path:
        raise UsageError(f"--kind {kind} needs --predictions")
    if not Path(pred_path).exists():
        raise UsageError(f"prediction file not found: {pred_path}")
    pred = import_predictions(pred_path, vocab)

    if kind == "vote":
        winners, table = predicted_type_vote(pred, vocab)
        per_stroke = out_dir / "analysis_vote_per_stroke.csv"
        lines = ["rally_id,ball_round,final_type,votes"]
        for wv in winners:
            lines.append(f"{wv.rally_id},{wv.ball_round},{wv.type_name},{wv.votes}")
        per_stroke.write_text("\n".join(lines) + "\n", encoding="utf-8")
        dist = out_dir / "analysis_vote_distribution.csv"
        table.write_csv(dist)
        print(f"wrote {per_stroke}")
        print(f"wrote {dist}")
    elif kind == "zones":
        hist = landing_zone_distribution(pred, court)
        path = out_dir / "analysis_zone_histogram_landing_zone.csv"
        hist.write_csv(path)
        print(f"wrote {path}")
    else:
        trend = round_trend(pred, vocab)
        path = out_dir / "analysis_round_trend_ball_round.csv"
        trend.write_csv(path)
        means_path = out_dir / "analysis_mean_probability_all.csv"
        write_mean_probability(mean_probability(pred, vocab), means_path)
        print(f"wrote {path}")
        print(f"wrote {means_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rallycast", description="Rally stroke forecasting toolkit")
    parser.add_argument("--version", action="version", version=f"rallycast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--vocab", help="vocabulary CSV (type_id,name,is_serve)")
        p.add_argument("--mirror", choices=["none", "odd", "even"], help="mirror this round parity on ingest")

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    common(p)
    p.add_argument("--n", dest="n_rallies", type=int)
    p.add_argument("--mean-length", dest="mean_length", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("validate", help="check a dataset against the rally invariants")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--strict-serve", action="store_true")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("train", help="filter, split, and train a forecaster")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--ffn-dim", dest="ffn_dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--embedding-mode", dest="embedding_mode", choices=["baseline", "modified"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-samples", dest="eval_samples", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--split-by-match", dest="split_by_match", action="store_const", const=True)
    p.add_argument("--max-rally-length", dest="max_rally_length", type=int)
    p.add_argument("--max-match-total-rounds", dest="max_match_total_rounds", type=int)
    p.add_argument("--min-rally-length", dest="min_rally_length", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="sample suffix sets for every rally in a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--horizon", type=int, help="strokes per rally in open-ended mode")
    p.add_argument("--open-ended", dest="open_ended", action="store_true",
                   help="generate a fixed horizon instead of matching ground-truth lengths")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("score", help="score a prediction file against ground truth")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("analyze", help="emit analysis tables from datasets or predictions")
    common(p)
    p.add_argument("--kind", required=True)
    p.add_argument("--data")
    p.add_argument("--predictions")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(handler=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, NumericHealthError, TrainingDivergedError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
