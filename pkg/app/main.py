# app/main.py
# Command-line entry point: python -m app.main <synth|train|experiment|report> [options]
#
# Option values resolve as Settings defaults < --config key=value file < command-line flags.
# Exit codes: 0 success, 2 usage error (nothing written), 3 runtime failure.

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.core.config import Settings, get_settings
from app.core.exceptions import ConfigError, SslbError
from app.core.logging_config import configure_logging
from app.jobs.run_grid import check_resume, load_grid_results, run_grid
from app.schemas.cli import CliConfig
from app.schemas.experiment import GridConfig, MethodId, TrainingConfig
from app.schemas.mixmatch import MixMatchConfig
from app.schemas.model import ModelConfig
from app.schemas.scenario import ScenarioConfig
from app.services.datasets import ImageDataset, generate_synthetic, load_image_directory, write_image_directory
from app.services.reporting import append_result, write_report
from app.services.scenario import sample_scenario, write_manifest
from app.services.statistics import comparisons_for, summarize
from app.services.training import run_training

logger = logging.getLogger("sslb.cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


# -- Option parsing -----------------------------------------------------------

def _parse_bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in {"1", "true", "yes", "on"}:
        return True
    if text in {"0", "false", "no", "off", ""}:
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _parse_list(convert: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(value: str) -> List[Any]:
        items = [item.strip() for item in str(value).split(",") if item.strip()]
        if not items:
            raise ConfigError("expected a comma-separated list")
        return [convert(item) for item in items]

    return parse


def _parse_method(value: str) -> MethodId:
    try:
        return MethodId(value.strip().lower())
    except ValueError:
        valid = ", ".join(m.value for m in MethodId)
        raise ConfigError(f"unknown method {value!r}; valid methods: {valid}") from None


def _number(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(value: str) -> Any:
        try:
            return convert(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {convert.__name__}, got {value!r}") from None

    return parse


OPTION_PARSERS: Dict[str, Callable[[str], Any]] = {
    "data": Path,
    "positive_class": str,
    "out": Path,
    "seed": _number(int),
    "seeds": _number(int),
    "method": _parse_list(_parse_method),
    "nl": _parse_list(_number(int)),
    "neg_frac": _parse_list(_number(float)),
    "epochs": _number(int),
    "batch": _number(int),
    "lr": _number(float),
    "weight_decay": _number(float),
    "gamma": _number(float),
    "k": _number(int),
    "temperature": _number(float),
    "alpha": _number(float),
    "rampup": _number(int),
    "image_size": _number(int),
    "jobs": _number(int),
    "synthetic": _parse_bool,
    "resume": _parse_bool,
    "per_class": _number(int),
    "difficulty": _number(float),
    "significance": _number(float),
    "total_sample": _number(int),
    "val_fraction": _number(float),
    "debug": _parse_bool,
}
FLAG_OPTIONS = ("synthetic", "resume", "debug")
KEY_ALIASES = {"size": "image_size"}


def _normalize_key(key: str) -> str:
    key = key.strip().lstrip("-").replace("-", "_").lower()
    return KEY_ALIASES.get(key, key)


def default_options(s: Settings) -> Dict[str, Any]:
    return {
        "data": None,
        "positive_class": None,
        "out": Path(s.out_dir),
        "seed": 0,
        "seeds": s.seeds,
        "method": None,
        "nl": None,
        "neg_frac": None,
        "epochs": s.epochs,
        "batch": s.batch_size,
        "lr": s.lr,
        "weight_decay": s.weight_decay,
        "gamma": s.gamma,
        "k": s.k,
        "temperature": s.temperature,
        "alpha": s.alpha,
        "rampup": s.rampup,
        "image_size": s.image_size,
        "jobs": s.jobs,
        "synthetic": False,
        "resume": False,
        "per_class": s.synthetic_per_class,
        "difficulty": s.synthetic_difficulty,
        "significance": s.significance,
        "total_sample": s.total_sample,
        "val_fraction": s.val_fraction,
        "debug": s.debug,
    }


COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "train": {"method": [MethodId.MIXMATCH_PBC], "nl": [20], "neg_frac": [0.8]},
    "experiment": {"method": list(MethodId), "nl": [10, 15, 20], "neg_frac": [0.5, 0.7, 0.8]},
}


def read_config_file(path: Path) -> Dict[str, Any]:
    """key=value lines; blank lines and # comments are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    options: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = _normalize_key(key)
        if key not in OPTION_PARSERS:
            raise ConfigError(f"{path}:{number}: unknown option {key!r}")
        options[key] = OPTION_PARSERS[key](value)
    return options


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, MethodId):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def format_config(options: Dict[str, Any]) -> str:
    lines = [f"{key}={_format_value(value)}" for key, value in sorted(options.items()) if value is not None]
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    for key in OPTION_PARSERS:
        flag = "--" + key.replace("_", "-")
        if key in FLAG_OPTIONS:
            common.add_argument(flag, dest=key, action="store_true", default=None)
        elif key == "image_size":
            common.add_argument(flag, "--size", dest=key, default=None)
        else:
            common.add_argument(flag, dest=key, default=None)
    common.add_argument("--config", dest="config", type=Path, default=None, help="key=value option file")

    parser = argparse.ArgumentParser(prog="sslb", description="MixMatch with pseudo-label balance correction")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic image dataset")
    sub.add_parser("train", parents=[common], help="train one method on one scenario")
    sub.add_parser("experiment", parents=[common], help="run the paired experiment grid")
    sub.add_parser("report", parents=[common], help="summarize an existing results.csv")
    return parser


def resolve_config(argv: Sequence[str], settings: Optional[Settings] = None) -> CliConfig:
    args = build_parser().parse_args(list(argv))
    options = default_options(settings or get_settings())
    options.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config is not None:
        options.update(read_config_file(args.config))
    for key, parse in OPTION_PARSERS.items():
        value = getattr(args, key)
        if value is None:
            continue
        options[key] = value if key in FLAG_OPTIONS else parse(value)
    _validate(args.command, options)
    return CliConfig(command=args.command, options=options, config_path=args.config)


def _validate(command: str, options: Dict[str, Any]) -> None:
    positive = ["seeds", "epochs", "batch", "k", "rampup", "image_size", "jobs", "per_class"]
    bad = [key for key in positive if options[key] is not None and options[key] < 1]
    if bad:
        raise ConfigError(", ".join(f"--{k.replace('_', '-')} must be >= 1, got {options[k]}" for k in bad))
    if not 0.0 < options["difficulty"] <= 1.0:
        raise ConfigError(f"--difficulty must lie in (0, 1], got {options['difficulty']}")
    if command in ("train", "experiment") and options["data"] is None and not options["synthetic"]:
        raise ConfigError(f"{command} needs --data <dir> or --synthetic")
    if command == "train":
        for key in ("method", "nl", "neg_frac"):
            if len(options[key]) != 1:
                raise ConfigError(f"train takes a single --{key.replace('_', '-')}, got {_format_value(options[key])}")


# -- Builders -----------------------------------------------------------------

def training_config(options: Dict[str, Any]) -> TrainingConfig:
    return TrainingConfig(
        epochs=options["epochs"],
        batch_size=options["batch"],
        max_lr=options["lr"],
        weight_decay=options["weight_decay"],
        model=ModelConfig(input_size=options["image_size"]),
        mixmatch=MixMatchConfig(
            k=options["k"],
            temperature=options["temperature"],
            alpha=options["alpha"],
            gamma=options["gamma"],
            rampup_horizon=options["rampup"],
        ),
    )


def data_source(options: Dict[str, Any]) -> str:
    if options["data"] is not None:
        if options["positive_class"] is not None:
            return f"{options['data']}:positive={options['positive_class']}"
        return str(options["data"])
    return (
        f"synthetic:seed={options['seed']},per_class={options['per_class']},"
        f"difficulty={options['difficulty']!r},size={options['image_size']}"
    )


def load_pools(options: Dict[str, Any]) -> Tuple[ImageDataset, ImageDataset]:
    """(positive pool, negative pool)."""
    if options["data"] is not None:
        dataset = load_image_directory(options["data"], options["image_size"], options["positive_class"])
    else:
        dataset = generate_synthetic(
            options["seed"], options["per_class"], options["image_size"], options["difficulty"]
        )
    return dataset.of_class(1), dataset.of_class(0)


def echo_config(config: CliConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    path.write_text(format_config(config.options), encoding="utf-8")
    return path


# -- Commands -----------------------------------------------------------------

def cmd_synth(config: CliConfig) -> int:
    o = config.options
    dataset = generate_synthetic(o["seed"], o["per_class"], o["image_size"], o["difficulty"])
    out = Path(o["out"])
    try:
        write_image_directory(dataset, out)
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    neg, pos = dataset.class_counts()
    print(f"wrote {len(dataset)} images to {out} (negative={neg}, positive={pos})")
    return EXIT_OK


def cmd_train(config: CliConfig) -> int:
    o = config.options
    training = training_config(o)
    scenario_config = ScenarioConfig(
        total_sample=o["total_sample"],
        val_fraction=o["val_fraction"],
        n_l=o["nl"][0],
        neg_fraction=o["neg_frac"][0],
        seed=o["seed"],
    )
    method = o["method"][0]
    pos_pool, neg_pool = load_pools(o)

    out = Path(o["out"])
    echo_config(config, out)
    scenario = sample_scenario(pos_pool, neg_pool, scenario_config)
    write_manifest(scenario, out / "manifests" / f"train_seed{o['seed']}.txt")

    def on_epoch(epoch: int, acc: float) -> None:
        print(f"epoch {epoch}/{training.epochs} val_acc={acc:.4f}", flush=True)

    result = run_training(
        scenario, method, training.epochs, o["seed"], training, on_epoch=on_epoch, checkpoint_path=out / "model.ckpt"
    )
    append_result(out / "results.csv", result)
    if result.failed:
        print(f"FAILED in epoch {result.failed_epoch}: {result.error}")
        return EXIT_RUNTIME
    best_epoch = result.val_curve.index(result.best_val_acc) + 1
    print(f"BEST {result.best_val_acc:.4f} (epoch {best_epoch})")
    return EXIT_OK


def cmd_experiment(config: CliConfig) -> int:
    o = config.options
    methods = o["method"]
    grid = GridConfig(
        seeds=[o["seed"] + i for i in range(o["seeds"])],
        methods=methods,
        neg_fractions=o["neg_frac"],
        n_ls=o["nl"],
        training=training_config(o),
        total_sample=o["total_sample"],
        val_fraction=o["val_fraction"],
        data_source=data_source(o),
        jobs=o["jobs"],
    )
    for nl in grid.n_ls:
        for nf in grid.neg_fractions:
            ScenarioConfig(total_sample=grid.total_sample, val_fraction=grid.val_fraction, n_l=nl, neg_fraction=nf)
    pos_pool, neg_pool = load_pools(o)

    out = Path(o["out"])
    if o["resume"]:
        check_resume(grid, out)
    echo_config(config, out)
    results = run_grid(grid, pos_pool, neg_pool, out, resume=o["resume"])
    print(f"{len(results)} runs in {out / 'results.csv'}")
    return _report(results, out, o["significance"], comparisons_for(methods), expected_seeds=len(grid.seeds))


def cmd_report(config: CliConfig) -> int:
    out = Path(config["out"])
    results = load_grid_results(out)
    if results is None:
        print(f"error: {out / 'results.csv'} not found", file=sys.stderr)
        return EXIT_USAGE
    methods = {r.method for r in results}
    return _report(results, out, config["significance"], comparisons_for(methods))


def _report(results, out: Path, significance: float, comparisons, expected_seeds: Optional[int] = None) -> int:
    table = summarize(results, comparisons, significance=significance, expected_seeds=expected_seeds)
    paths = write_report(table, out)
    print(paths["text"].read_text(encoding="utf-8"), end="")
    return EXIT_OK


HANDLERS: Dict[str, Callable[[CliConfig], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = resolve_config(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(config["debug"])
    try:
        return HANDLERS[config.command](config)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SslbError as exc:
        logger.error("%s failed: %s", config.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
