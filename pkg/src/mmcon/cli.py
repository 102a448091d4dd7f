"""``mmcon`` command line.

Configuration is an INI file whose sections mirror the config objects::

    [data]      SyntheticConfig fields, plus ``path`` for an existing dataset file
    [loss]      LossConfig fields
    [policy]    PairingPolicy fields
    [train]     TrainConfig scalar fields, plus ``holdout_fold``
    [check]     gradcheck / oracle-check knobs

Dotted ``section.key=value`` arguments and the dedicated flags override the
file.  Exit status: 0 success, 1 validation/config error, 2 numerical
error or a verification above tolerance.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

from . import data as data_mod
from .errors import NumericalError, ValidationError
from .experiment import (
    FoldRow,
    TrainConfig,
    compute_metrics,
    cross_validate,
    evaluate_fold,
    load_checkpoint,
    save_checkpoint,
    train_fold,
    write_loss_curve,
    write_metrics,
    MetricsReport,
)
from .losses import LossConfig
from .multiview import PairingPolicy
from .oracles import oracle_sweep
from .verify import gradcheck_sweep

SUBCOMMANDS = ("gen-data", "train", "eval", "cross-validate", "gradcheck", "oracle-check")
LOSS_ALIASES = {"supcon": "supcon", "margincon": "margin_con", "margin_con": "margin_con", "mmcon": "mmcon"}
MARGIN_ALIASES = {"literal": "literal", "positive-only": "positive_only", "positive_only": "positive_only"}
DENOM_ALIASES = {"negatives-only": "negatives_only", "negatives_only": "negatives_only", "all": "all_non_anchor", "all_non_anchor": "all_non_anchor"}

CHECK_DEFAULTS = {
    "gradcheck_configs": "20",
    "gradcheck_step": "1e-5",
    "gradcheck_tolerance": "1e-5",
    "gradcheck_temperature": "0.07",
    "oracle_batches": "100",
    "oracle_max_n": "8",
    "oracle_tolerance": "1e-10",
    "seed": "0",
}


class ConfigError(ValidationError):
    pass


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def _build(cls, section: dict, name: str, skip=(), **fixed):
    kwargs = dict(fixed)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in known or key in fixed:
            raise ConfigError(f"unknown config key {name}.{key}")
        if key == "views":
            low = raw.strip().lower()
            kwargs[key] = None if low in ("", "all") else tuple(int(v) for v in raw.split(","))
            continue
        kwargs[key] = _coerce(raw, known[key].default, f"{name}.{key}")
    return cls(**kwargs)


class Settings:
    """Merged configuration: defaults < config file < dotted overrides < flags."""

    SECTIONS = ("data", "loss", "policy", "train", "check")

    def __init__(self):
        self.values: dict[str, dict[str, str]] = {s: {} for s in self.SECTIONS}

    def set(self, dotted: str, value):
        section, _, key = dotted.partition(".")
        if section not in self.values or not key:
            raise ConfigError(f"override {dotted!r} must look like section.key with section in {self.SECTIONS}")
        self.values[section][key] = str(value)

    def load_file(self, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in self.values:
                raise ConfigError(f"{path}: unknown section [{section}]")
            self.values[section].update(parser[section])

    def synthetic(self) -> data_mod.SyntheticConfig:
        return _build(data_mod.SyntheticConfig, self.values["data"], "data", skip=("path",))

    def loss(self) -> LossConfig:
        section = dict(self.values["loss"])
        section.setdefault("reduction", "mean")
        return _build(LossConfig, section, "loss")

    def policy(self) -> PairingPolicy:
        return _build(PairingPolicy, self.values["policy"], "policy")

    def train(self) -> TrainConfig:
        return _build(TrainConfig, self.values["train"], "train", skip=("holdout_fold",), loss=self.loss(), policy=self.policy())

    @property
    def holdout_fold(self) -> int:
        return int(self.values["train"].get("holdout_fold", "-1"))

    def check(self, key: str) -> str:
        return self.values["check"].get(key, CHECK_DEFAULTS[key])

    def effective(self) -> configparser.ConfigParser:
        """Every resolved value, for provenance."""
        out = configparser.ConfigParser()
        syn = self.synthetic()
        out["data"] = {f.name: str(getattr(syn, f.name)) for f in dataclasses.fields(syn)}
        if "path" in self.values["data"]:
            out["data"]["path"] = self.values["data"]["path"]
        loss = self.loss()
        out["loss"] = {f.name: str(getattr(loss, f.name)) for f in dataclasses.fields(loss)}
        pol = self.policy()
        out["policy"] = {f.name: str(getattr(pol, f.name)) for f in dataclasses.fields(pol)}
        tr = self.train()
        out["train"] = {
            f.name: ("all" if getattr(tr, f.name) is None else ",".join(map(str, tr.views)) if f.name == "views" else str(getattr(tr, f.name)))
            for f in dataclasses.fields(tr)
            if f.name not in ("loss", "policy")
        }
        out["train"]["holdout_fold"] = str(self.holdout_fold)
        out["check"] = {k: self.check(k) for k in CHECK_DEFAULTS}
        return out


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: one line, exit status 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmcon", description="Multi-view margin contrastive learning toolkit")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("overrides", nargs="*", metavar="SECTION.KEY=VALUE", help="dotted config overrides")
    parser.add_argument("--config", type=Path, help="INI config file")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--seed", type=int, help="seed for data generation, splitting and training")
    parser.add_argument("--loss", choices=sorted(LOSS_ALIASES))
    parser.add_argument("--margin-mode", choices=["literal", "positive-only"])
    parser.add_argument("--denominator", choices=["negatives-only", "all"])
    parser.add_argument("--k", type=int, help="number of folds")
    parser.add_argument("--jobs", type=int, default=1, help="parallel folds for cross-validate")
    parser.add_argument("--data", type=Path, help="dataset file (overrides data.path)")
    parser.add_argument("--test-data", type=Path, help="eval: separate test dataset file")
    parser.add_argument("--checkpoint", type=Path, help="eval: checkpoint written by train")
    parser.add_argument("--figures", action="store_true", help="also render PNG figures next to the text outputs")
    return parser


def resolve_settings(args) -> Settings:
    settings = Settings()
    if args.config is not None:
        settings.load_file(args.config)
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        settings.set(key.strip(), value.strip())
    if args.seed is not None:
        for key in ("data.rng_seed", "train.rng_seed", "check.seed"):
            settings.set(key, args.seed)
    if args.loss:
        settings.set("train.loss_kind", LOSS_ALIASES[args.loss])
    if args.margin_mode:
        settings.set("loss.margin_mode", MARGIN_ALIASES[args.margin_mode])
    if args.denominator:
        settings.set("loss.denominator_mode", DENOM_ALIASES[args.denominator])
    if args.k is not None:
        settings.set("train.k_folds", args.k)
    if args.data is not None:
        settings.set("data.path", args.data)
    return settings


def _load_data(settings: Settings) -> data_mod.Dataset:
    path = settings.values["data"].get("path")
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"dataset file not found: {path}")
        return data_mod.read_dataset(path)
    return data_mod.generate_synthetic(settings.synthetic())


def _split(ds, settings: Settings):
    """(train, test) datasets according to train.holdout_fold."""
    fold = settings.holdout_fold
    if fold < 0:
        return ds, None
    cfg = settings.train()
    if fold >= cfg.k_folds:
        raise ConfigError(f"train.holdout_fold={fold} but only {cfg.k_folds} folds")
    assignment = data_mod.kfold_split(ds, cfg.k_folds, seed=cfg.rng_seed, stratified=cfg.stratified)
    train_ids, test_ids = assignment.split(fold)
    return ds.subset(train_ids), ds.subset(test_ids)


def cmd_gen_data(args, settings: Settings) -> int:
    ds = data_mod.generate_synthetic(settings.synthetic())
    path = args.out / "dataset.csv"
    data_mod.write_dataset(ds, path)
    cfg = settings.train()
    data_mod.kfold_split(ds, cfg.k_folds, seed=cfg.rng_seed, stratified=cfg.stratified).write(args.out / "folds.csv")
    info = data_mod.describe(ds)
    print(f"wrote {path}: {info['patients']} patients x {info['views']} views = {info['rows']} rows, {info['positives']} positive")
    return 0


def cmd_train(args, settings: Settings) -> int:
    ds = _load_data(settings)
    train, _ = _split(ds, settings)
    result = train_fold(train, settings.train())
    save_checkpoint(result.model, args.out / "checkpoint.json")
    write_loss_curve([result.loss_curve], args.out / "loss_curve.csv")
    if args.figures:
        from .plotting import plot_loss_curves

        plot_loss_curves([result.loss_curve], args.out / "loss_curve.png")
    print(f"trained on {len(train)} patients; loss {result.loss_curve[0]:.6g} -> {result.loss_curve[-1]:.6g}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    if args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint")
    if not args.checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    ds = _load_data(settings)
    if args.test_data is not None:
        if not args.test_data.is_file():
            raise ConfigError(f"test dataset not found: {args.test_data}")
        train, test, label = ds, data_mod.read_dataset(args.test_data), "test"
    else:
        train, test = _split(ds, settings)
        if test is None:
            raise ConfigError("eval needs --test-data or train.holdout_fold >= 0")
        label = str(settings.holdout_fold)
    cfg = settings.train()
    ev = evaluate_fold(model, train, test, cfg.policy, cfg.head)
    m = compute_metrics(ev.counts, cfg.average)
    row = FoldRow(label, m.accuracy, m.precision, m.recall, m.f1, ev.alignment, ev.uniformity)
    report = MetricsReport([row], row, row, [ev.counts])
    text = report.to_csv().splitlines()
    (args.out / "metrics.csv").write_text("\n".join(text[:2]) + "\n", encoding="utf-8")
    print(f"accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}")
    if m.undefined:
        print(f"note: undefined (reported as 0): {', '.join(m.undefined)}")
    return 0


def cmd_cross_validate(args, settings: Settings) -> int:
    ds = _load_data(settings)
    cfg = settings.train()
    report = cross_validate(ds, cfg, jobs=args.jobs)
    write_metrics(report, args.out / "metrics.csv")
    write_loss_curve(report.loss_curves, args.out / "loss_curve.csv")
    data_mod.kfold_split(ds, cfg.k_folds, seed=cfg.rng_seed, stratified=cfg.stratified).write(args.out / "folds.csv")
    if args.figures:
        from .plotting import plot_fold_metrics, plot_loss_curves

        plot_loss_curves(report.loss_curves, args.out / "loss_curves.png", title=f"{cfg.loss_kind} training loss")
        plot_fold_metrics(report, args.out / "fold_metrics.png")
    print(report.to_csv(), end="")
    return 0


def cmd_gradcheck(args, settings: Settings) -> int:
    tol = float(settings.check("gradcheck_tolerance"))
    result = gradcheck_sweep(
        n_configs=int(settings.check("gradcheck_configs")),
        seed=int(settings.check("seed")),
        temperature=float(settings.check("gradcheck_temperature")),
        step=float(settings.check("gradcheck_step")),
    )
    print(f"gradcheck: {result.checks} checks, max relative error {result.max_relative_error:.3e} (tolerance {tol:g})")
    if result.max_relative_error > tol:
        print(f"gradcheck: FAILED, worst case {result.worst}")
        return 2
    return 0


def cmd_oracle_check(args, settings: Settings) -> int:
    tol = float(settings.check("oracle_tolerance"))
    worst, count = oracle_sweep(
        n_batches=int(settings.check("oracle_batches")),
        max_n=int(settings.check("oracle_max_n")),
        seed=int(settings.check("seed")),
    )
    print(f"oracle-check: {count} comparisons, max abs difference {worst:.3e} (tolerance {tol:g})")
    return 0 if worst <= tol else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "cross-validate": cmd_cross_validate,
    "gradcheck": cmd_gradcheck,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    try:
        settings = resolve_settings(args)
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / "effective_config.ini").open("w", encoding="utf-8") as fh:
            settings.effective().write(fh)
        return COMMANDS[args.subcommand](args, settings)
    except (ValidationError, OSError) as exc:
        print(f"mmcon: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"mmcon: numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
