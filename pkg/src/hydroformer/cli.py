"""Command-line front door: datagen | train | evaluate | predict | explain | bench.

Config files are flat key = value text with dotted sections (model., train.,
data., eval., shap.); unknown keys are rejected. Every run directory receives
the fully-resolved config for provenance.
"""

import argparse
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import explain as explain_mod
from .errors import ConfigError, DataError, NumericError
from .model import (ModelConfig, TransformerModel, checkpoint_digest,
                    load_checkpoint, save_checkpoint)
from .training import TrainConfig, evaluate_split, fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk_scale)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_path: str = ""
    leads: tuple = (1, 3, 5, 7)
    r2_mode: str = "paper"
    shap_estimator: str = "sampled"
    shap_permutations: int = 20
    shap_exact_cap: int = explain_mod.EXACT_CAP_DEFAULT
    shap_allow_large_exact: bool = False
    seed: int = 0


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


def _parse_bool(text):
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


def _parse_leads(text):
    return tuple(int(x) for x in text.split(","))


def _parse_optional_int(text):
    return None if text.strip().lower() in ("none", "auto") else int(text)


_KEY_PARSERS = {
    "model.d_model": int, "model.n_heads": int, "model.n_encoder_layers": int,
    "model.n_decoder_layers": int, "model.d_ffn": int,
    "model.attention_mode": str, "model.k_sparse": _parse_optional_int,
    "model.output_head": str, "model.head_activation": str,
    "model.lookback": int, "model.horizon": int,
    "train.batch_size": int, "train.learning_rate": float,
    "train.max_epochs": int, "train.early_stop_patience": int,
    "train.min_delta": float, "train.shuffle_train": _parse_bool,
    "data.path": str, "data.lookback": int, "data.horizon": int,
    "eval.leads": _parse_leads, "eval.r2_mode": str,
    "shap.estimator": str, "shap.permutations": int,
    "shap.exact_cap": int, "shap.allow_large_exact": _parse_bool,
    "seed": int,
}


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _KEY_PARSERS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _KEY_PARSERS[key](val.strip())
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {e}") from e
    return values


def build_run_config(values: dict, seed_override=None) -> RunConfig:
    model_kwargs = {}
    train_kwargs = {}
    cfg = RunConfig()
    for key, val in values.items():
        section, _, name = key.partition(".")
        if section == "model":
            model_kwargs[name] = val
        elif section == "train":
            train_kwargs[name] = val
        elif key == "data.path":
            cfg.data_path = val
        elif key == "data.lookback":
            model_kwargs["lookback"] = val
        elif key == "data.horizon":
            model_kwargs["horizon"] = val
        elif key == "eval.leads":
            cfg.leads = val
        elif key == "eval.r2_mode":
            cfg.r2_mode = val
        elif key == "shap.estimator":
            cfg.shap_estimator = val
        elif key == "shap.permutations":
            cfg.shap_permutations = val
        elif key == "shap.exact_cap":
            cfg.shap_exact_cap = val
        elif key == "shap.allow_large_exact":
            cfg.shap_allow_large_exact = val
        elif key == "seed":
            cfg.seed = val
    desk_defaults = {f.name: getattr(ModelConfig.desk_scale(), f.name)
                     for f in fields(ModelConfig)}
    desk_defaults.update(model_kwargs)
    cfg.model = ModelConfig(**desk_defaults)
    train_kwargs.setdefault("seed", cfg.seed)
    cfg.train = TrainConfig(**train_kwargs)
    if seed_override is not None:
        cfg.seed = seed_override
        cfg.train.seed = seed_override
    if cfg.r2_mode not in ("paper", "standard"):
        raise ConfigError(f"eval.r2_mode must be paper or standard, got {cfg.r2_mode!r}")
    if cfg.shap_estimator not in ("exact", "sampled"):
        raise ConfigError(f"shap.estimator must be exact or sampled, got {cfg.shap_estimator!r}")
    return cfg


def load_run_config(path, seed_override=None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return build_run_config(parse_config_text(text), seed_override)


def resolved_config_text(cfg: RunConfig) -> str:
    lines = []
    for name, val in sorted(asdict(cfg.model).items()):
        lines.append(f"model.{name} = {val}")
    for name, val in sorted(asdict(cfg.train).items()):
        lines.append(f"train.{name} = {val}")
    lines.append(f"data.path = {cfg.data_path}")
    lines.append(f"eval.leads = {','.join(str(x) for x in cfg.leads)}")
    lines.append(f"eval.r2_mode = {cfg.r2_mode}")
    lines.append(f"shap.estimator = {cfg.shap_estimator}")
    lines.append(f"shap.permutations = {cfg.shap_permutations}")
    lines.append(f"shap.exact_cap = {cfg.shap_exact_cap}")
    lines.append(f"shap.allow_large_exact = {cfg.shap_allow_large_exact}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def _load_dataset(cfg: RunConfig):
    series = data_mod.load_table(cfg.data_path)
    series, _ = data_mod.fill_missing(series)
    return data_mod.make_windows(series, cfg.model.lookback, cfg.model.horizon)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_datagen(args) -> int:
    series = data_mod.synth_generate(seed=args.seed, length=args.length)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.write_table(series, out)
    print(f"wrote {args.length} rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    out = _outdir(args)
    (out / "resolved_config.txt").write_text(resolved_config_text(cfg), encoding="utf-8")
    dataset = _load_dataset(cfg)
    model = TransformerModel(cfg.model, seed=cfg.seed)
    curve = fit(model, dataset, cfg.train)
    (out / "loss_curve.csv").write_text(curve.to_text(), encoding="utf-8")
    ckpt = out / "checkpoint.bin"
    save_checkpoint(model, dataset.normalizer, ckpt)
    print(f"trained {len(curve.epochs)} epochs (best epoch {curve.best_epoch})")
    print(f"checkpoint {ckpt} sha256 {checkpoint_digest(ckpt)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    if normalizer is None:
        raise DataError("checkpoint carries no normalizer; cannot evaluate")
    series, _ = data_mod.fill_missing(data_mod.load_table(args.data))
    dataset = data_mod.make_windows(series, model.config.lookback, model.config.horizon)
    dataset.normalizer = normalizer
    leads = _parse_leads(args.leads)
    report, series_by_lead = evaluate_split(model, dataset, args.split, leads,
                                            r2_mode=args.r2_mode)
    out = _outdir(args)
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    for lead, rows in series_by_lead.items():
        lines = ["date,actual,predicted"]
        lines += [f"{d.isoformat()},{a!r},{p!r}" for d, a, p in rows]
        (out / f"predictions_lead{lead}.csv").write_text("\n".join(lines) + "\n",
                                                         encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    if normalizer is None:
        raise DataError("checkpoint carries no normalizer; cannot predict")
    series, _ = data_mod.fill_missing(data_mod.load_table(args.data))
    lookback = model.config.lookback
    if series.values.shape[0] < lookback:
        raise DataError(f"need at least {lookback} rows, got {series.values.shape[0]}")
    window = normalizer.apply(series.values[-lookback:])
    preds = normalizer.invert_target(model.predict(window, model.config.horizon).ravel())
    for step, val in enumerate(preds, start=1):
        print(f"lead {step}: {val!r}")
    return EXIT_OK


def _explain_instances(args, model, dataset):
    test = dataset.split("test")
    if args.instance is not None:
        import datetime
        want = datetime.date.fromisoformat(args.instance)
        matches = [i for i, d in enumerate(test.anchors) if d == want]
        if not matches:
            raise DataError(f"no test-split sample anchored at {want}")
        return matches
    n = len(test.windows)
    if n == 0:
        raise DataError("test split is empty")
    rng = np.random.default_rng(args.seed)
    size = min(args.sample, n)
    return sorted(rng.choice(n, size=size, replace=False).tolist())


def cmd_explain(args) -> int:
    model, normalizer = load_checkpoint(args.checkpoint)
    if normalizer is None:
        raise DataError("checkpoint carries no normalizer; cannot explain")
    series, _ = data_mod.fill_missing(data_mod.load_table(args.data))
    dataset = data_mod.make_windows(series, model.config.lookback, model.config.horizon)
    dataset.normalizer = normalizer
    test = dataset.split("test")
    indices = _explain_instances(args, model, dataset)
    out = _outdir(args)

    explanations = []
    raw_rows = []
    for i in indices:
        vf = explain_mod.model_value_function(model, normalizer, test.windows[i],
                                              lead=args.lead)
        if args.estimator == "exact":
            e = explain_mod.exact_shapley(vf, cap=args.exact_cap,
                                          allow_large=args.allow_large_exact)
        else:
            e = explain_mod.sampled_shapley(vf, m=args.permutations, seed=args.seed + i)
        explanations.append(e)
        raw_rows.append(normalizer.invert(test.windows[i])[-1])

    if args.instance is not None:
        text = explain_mod.force_report_to_text(explanations[0])
        (out / "force_report.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    else:
        gi = explain_mod.global_importance(explanations)
        (out / "global_importance.txt").write_text(gi.to_text(), encoding="utf-8")
        rows = explain_mod.beeswarm_export(explanations, np.array(raw_rows))
        (out / "beeswarm.txt").write_text(explain_mod.beeswarm_to_text(rows),
                                          encoding="utf-8")
        print(gi.to_text(), end="")
    (out / "estimator.txt").write_text(
        f"estimator = {args.estimator}\npermutations = {args.permutations}\n"
        f"lead = {args.lead}\nseed = {args.seed}\n", encoding="utf-8")
    return EXIT_OK


def cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    ks = [x.strip() for x in args.ks.split(",")]
    rows = bench_mod.bench_attention(lengths, ks, d_k=args.d_k,
                                     repeats=args.repeats, seed=args.seed)
    text = bench_mod.rows_to_text(rows)
    if args.out:
        out = _outdir(args)
        (out / "bench.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydroformer",
                                     description="Sparse-attention Transformer "
                                                 "water-level forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic input file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a data file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--leads", default="1,3,5,7")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--r2-mode", dest="r2_mode", default="paper",
                   choices=["paper", "standard"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict from the last window of a data file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="Shapley attribution for predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--instance", help="anchor date (YYYY-MM-DD) for a force report")
    group.add_argument("--global", dest="global_mode", action="store_true",
                       help="global importance over a test sample")
    p.add_argument("--sample", type=int, default=64)
    p.add_argument("--lead", type=int, default=1)
    p.add_argument("--estimator", default="sampled", choices=["exact", "sampled"])
    p.add_argument("--permutations", type=int, default=20)
    p.add_argument("--exact-cap", dest="exact_cap", type=int,
                   default=explain_mod.EXACT_CAP_DEFAULT)
    p.add_argument("--allow-large-exact", dest="allow_large_exact",
                   action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="time dense vs sparse attention")
    p.add_argument("--lengths", default="64,128,256")
    p.add_argument("--ks", default="8,L/4,L")
    p.add_argument("--d-k", dest="d_k", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
