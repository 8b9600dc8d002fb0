"""Command-line front end: ``siamcd {generate,glimpse,train,eval,infer}``.

Settings come from a ``key=value`` config file (``#`` comments) and are
overridden by flags or ``--set key=value``.  Exit codes: 0 success, 1 usage
error, 2 data or validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, engine, glimpse, metrics
from .model import ModelConfig, build
from .objective import LossConfig, balance_beta
from .rawio import FormatError, atomic_write, save_scdt

log = logging.getLogger("siamcd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _beta(text):
    return "auto" if str(text) == "auto" else float(text)


# key -> (parser, default)
SETTINGS = {
    "model.variant": (str, "conc"),
    "model.gated": (_bool, False),
    "model.encoder_filters": (_ints, (16, 32, 64, 128)),
    "model.decoder_filters": (_ints, ()),  # empty: mirror the encoder
    "model.kernel": (int, 3),
    "model.seed": (int, 0),
    "train.steps": (int, 300),
    "train.batch_size": (int, 4),
    "train.learning_rate": (float, 1e-3),
    "train.optimizer": (str, "adam"),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.adam_eps": (float, 1e-8),
    "train.seed": (int, 0),
    "train.eval_every": (int, 0),
    "train.beta": (_beta, "auto"),
    "train.epsilon": (float, 1e-7),
    "train.deterministic": (_bool, True),
    "train.threshold": (float, 0.5),
    "glimpse.u": (float, 0.1),
    "glimpse.s": (float, 0.5),
    "glimpse.d": (float, 2.0),
    "data.count": (int, 16),
    "data.test_count": (int, 4),
    "data.size": (int, 64),
    "data.change_fraction": (float, 0.1),
    "data.seed": (int, 0),
}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def resolve(file_values: dict, overrides: dict) -> dict:
    """Defaults, then file values, then command-line overrides."""
    merged = {k: default for k, (_, default) in SETTINGS.items()}
    for source in (file_values, overrides):
        for key, value in source.items():
            if key not in SETTINGS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                merged[key] = SETTINGS[key][0](value)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
    return merged


def _settings(args, flag_map: dict) -> dict:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    return resolve(file_values, overrides)


def _write_text(path, text: str) -> None:
    with atomic_write(path, "w") as fh:
        fh.write(text)


def _glimpse_sidecar(root) -> tuple | None:
    path = Path(root) / "glimpse.txt"
    if not path.exists():
        return None
    vals = dict(line.split("=", 1) for line in path.read_text().split() if "=" in line)
    return vals.get("u", ""), vals.get("s", ""), vals.get("d", "")


# -- subcommands ---------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _settings(args, {"count": "data.count", "test_count": "data.test_count", "size": "data.size",
                           "change_fraction": "data.change_fraction", "seed": "data.seed"})
    size = (cfg["data.size"], cfg["data.size"])
    seed = cfg["data.seed"]
    train = data.synth_generate(seed, cfg["data.count"], size, cfg["data.change_fraction"])
    test = data.synth_generate(seed, cfg["data.test_count"], size, cfg["data.change_fraction"], start=cfg["data.count"])
    split = data.DatasetSplit(train, test, seed)
    data.write_dataset(args.out, train + test, data.manifest_files(split))
    print(f"wrote {len(train)} train and {len(test)} test pairs to {args.out}")
    return EXIT_OK


def cmd_glimpse(args) -> int:
    cfg = _settings(args, {"u": "glimpse.u", "s": "glimpse.s", "d": "glimpse.d"})
    params = glimpse.GlimpseParams(cfg["glimpse.u"], cfg["glimpse.s"], cfg["glimpse.d"])
    src = Path(args.input)
    pairs = [glimpse.preprocess_pair(p, params) for p in data.load_dataset(src)]
    files = {m: (src / m).read_text() for m in ("train.txt", "test.txt") if (src / m).exists()}
    files["glimpse.txt"] = f"u={params.u}\ns={params.s}\nd={params.d}\n"
    data.write_dataset(args.out, pairs, files, raw=args.raw)
    print(f"glimpsed {len(pairs)} pairs (u={params.u}, s={params.s}, d={params.d}) into {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _settings(args, {
        "variant": "model.variant", "gated": "model.gated", "steps": "train.steps",
        "batch_size": "train.batch_size", "lr": "train.learning_rate", "seed": "train.seed",
        "encoder_filters": "model.encoder_filters", "decoder_filters": "model.decoder_filters",
    })
    split = data.load_split(args.data, cfg["train.seed"])
    if not split.train:
        raise data.DatasetError(f"{args.data} has no training samples")
    first = split.train[0]
    enc = cfg["model.encoder_filters"]
    dec = cfg["model.decoder_filters"] or tuple(reversed(enc))
    model_cfg = ModelConfig(
        fusion=cfg["model.variant"], gated=cfg["model.gated"], encoder_filters=enc, decoder_filters=dec,
        kernel=cfg["model.kernel"], input_channels=first.t1.shape[0], input_size=first.size,
    )
    beta = balance_beta(split.train) if cfg["train.beta"] == "auto" else cfg["train.beta"]
    loss = LossConfig(beta, cfg["train.epsilon"])
    train_cfg = engine.TrainConfig(
        steps=cfg["train.steps"], batch_size=cfg["train.batch_size"], learning_rate=cfg["train.learning_rate"],
        optimizer=cfg["train.optimizer"], beta1=cfg["train.beta1"], beta2=cfg["train.beta2"],
        adam_eps=cfg["train.adam_eps"], seed=cfg["train.seed"], eval_every=cfg["train.eval_every"],
        loss=loss, deterministic=cfg["train.deterministic"], threshold=cfg["train.threshold"],
    )
    model = build(model_cfg, cfg["model.seed"])
    log.info("training %s (%d steps, beta=%.3f)", model_cfg.variant, train_cfg.steps, loss.beta)
    model, history = engine.train(model, split, train_cfg)
    checkpoint.save_checkpoint(model, args.out)
    log_path = args.log or f"{args.out}.log.csv"
    _write_text(log_path, engine.log_csv(history))
    print(f"{model_cfg.variant}: final loss {history[-1].loss:.5f}; checkpoint {args.out}, log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = checkpoint.load_checkpoint(args.ckpt)
    split = data.load_split(args.data)
    pairs = split.test or split.train
    if args.oracle:
        preds = [p.label for p in pairs]
        probs = [p.label.astype(np.float32) for p in pairs]
    else:
        results = [engine.infer(model, p, args.threshold) for p in pairs]
        probs = [r[0] for r in results]
        preds = [r[1] for r in results]
    overall, tiles = metrics.evaluate(preds, [p.label for p in pairs])
    row = metrics.table_row(model.config.variant, overall, _glimpse_sidecar(args.data))
    sys.stdout.write(metrics.table_text([row]))

    tile_lines = ["id,tp,fp,tn,fn,Recall,F1,Precision,Accuracy"]
    for pair, c in zip(pairs, tiles):
        pct = metrics.scores(c).as_percent()
        tile_lines.append(",".join([pair.id, str(c.tp), str(c.fp), str(c.tn), str(c.fn)]
                                   + [f"{pct[k]:.2f}" for k in ("Recall", "F1", "Precision", "Accuracy")]))
    sweep_lines = []
    if args.sweep:
        sweep_lines.append("threshold,positives")
        for t in sorted(args.sweep):
            positives = int(sum(int(metrics.binarize(p, t).sum()) for p in probs))
            sweep_lines.append(f"{t},{positives}")
            print(f"threshold {t}: {positives} positive pixels")
    if args.out:
        _write_text(f"{args.out}.csv", metrics.table_csv([row]))
        _write_text(f"{args.out}.txt", metrics.table_text([row]))
        _write_text(f"{args.out}.tiles.csv", "\n".join(tile_lines) + "\n")
        if sweep_lines:
            _write_text(f"{args.out}.sweep.csv", "\n".join(sweep_lines) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = checkpoint.load_checkpoint(args.ckpt)
    t1, t2 = data.read_image(args.t1), data.read_image(args.t2)
    if t1.shape != t2.shape:
        raise data.DatasetError(f"t1 {t1.shape} and t2 {t2.shape} differ in size")
    pair = data.SamplePair(t1, t2, np.zeros(t1.shape[1:], dtype=np.uint8), Path(args.t1).stem)
    prob, change = engine.infer(model, pair, args.threshold)
    save_scdt(f"{args.out}.prob.scdt", prob[None])
    data.write_label_png(f"{args.out}.png", change)
    print(f"changed pixels: {int(change.sum())} of {change.size}; wrote {args.out}.prob.scdt and {args.out}.png")
    return EXIT_OK


# -- parser --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for settings-backed flags whose argparse default
    is None (their documented default is already in the help text)."""

    def _get_help_string(self, action):
        if action.default is None or action.default is argparse.SUPPRESS or action.default is False:
            return action.help
        return super()._get_help_string(action)


def _setting(p: argparse.ArgumentParser, flag: str, key: str, text: str, **kw) -> None:
    default = SETTINGS[key][1]
    if default == ():
        default = "mirror of the encoder"
    elif isinstance(default, tuple):
        default = ",".join(map(str, default))
    elif isinstance(default, bool):
        default = str(default).lower()
    p.add_argument(flag, help=f"{text} (default: {default}; setting {key})", **kw)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (default: none)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="siamcd", description=__doc__.splitlines()[0], formatter_class=_Help)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic change dataset", formatter_class=_Help)
    p.add_argument("--out", required=True, help="output dataset directory")
    _setting(p, "--count", "data.count", "training pairs", type=int)
    _setting(p, "--test-count", "data.test_count", "held-out pairs", type=int)
    _setting(p, "--size", "data.size", "square image side in pixels", type=int)
    _setting(p, "--change-fraction", "data.change_fraction", "target changed-pixel fraction", type=float)
    _setting(p, "--seed", "data.seed", "generator seed", type=int)
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("glimpse", help="apply Gaussian attention to a dataset", formatter_class=_Help)
    p.add_argument("--in", dest="input", required=True, help="input dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    _setting(p, "--u", "glimpse.u", "first center as a fraction of the axis", type=float)
    _setting(p, "--s", "glimpse.s", "Gaussian standard deviation in pixels", type=float)
    _setting(p, "--d", "glimpse.d", "spacing of Gaussian centers in pixels", type=float)
    p.add_argument("--raw", action="store_true", help="write images as SCDT1 instead of 8-bit PNG")
    _common(p)
    p.set_defaults(func=cmd_glimpse)

    p = sub.add_parser("train", help="train a Siamese change detector", formatter_class=_Help)
    p.add_argument("--data", required=True, help="dataset directory")
    _setting(p, "--variant", "model.variant", "skip fusion", choices=("conc", "diff"))
    _setting(p, "--gated", "model.gated", "attention gates in the decoder, true/false")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    _setting(p, "--steps", "train.steps", "optimizer steps", type=int)
    _setting(p, "--batch-size", "train.batch_size", "pairs per step", type=int)
    _setting(p, "--lr", "train.learning_rate", "learning rate", type=float)
    _setting(p, "--seed", "train.seed", "shuffling seed", type=int)
    _setting(p, "--encoder-filters", "model.encoder_filters", "comma-separated encoder ladder")
    _setting(p, "--decoder-filters", "model.decoder_filters", "comma-separated decoder ladder")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset", formatter_class=_Help)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory (test split if listed)")
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for 'changed'")
    p.add_argument("--out", help="prefix for .csv/.txt/.tiles.csv outputs (default: none; table printed only)")
    p.add_argument("--sweep", type=float, nargs="+", help="also count positives at these thresholds (default: no sweep)")
    p.add_argument("--oracle", action="store_true", help="debug: score the labels themselves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a change map for one image pair", formatter_class=_Help)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--t1", required=True, help="first image (PNG or SCDT1)")
    p.add_argument("--t2", required=True, help="second image (PNG or SCDT1)")
    p.add_argument("--out", required=True, help="prefix for .prob.scdt and .png outputs")
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for 'changed'")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"siamcd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except engine.NumericalError as exc:
        print(f"siamcd: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data.DatasetError, FormatError, ValueError, OSError) as exc:
        print(f"siamcd: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
