"""Command-line surface.

Subcommands: train, compress, eval, sweep, spectrum, verify, count.
Config files are INI-style sections of flat key-value pairs; any knob
given both in the config and as a flag takes the flag value. Exit
codes: 0 success, 1 usage/config error, 2 runtime/numeric error,
3 verification failure.
"""

import argparse
import configparser
import csv
import io
import os
import sys
import tempfile

import numpy as np

from . import checkpoint, compress, data, metrics, nn, optim, theory
from .errors import ConfigError, ConvergenceError, ShapeError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_csv(path, header, rows):
    """Write a CSV atomically: header row, '.' decimal, newline-terminated."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v!r}" if isinstance(v, float) else v for v in row])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_config(path):
    if path is None:
        return configparser.ConfigParser()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = configparser.ConfigParser()
    cfg.read(path)
    return cfg


def _pick(args_value, cfg, section, key, cast, default=None):
    """Flag value wins over config value wins over default."""
    if args_value is not None:
        return args_value
    if cfg.has_option(section, key):
        return cast(cfg.get(section, key))
    return default


def _load_dataset(cfg, prefix):
    """Build a Dataset from the [data] section (idx files or synth blobs)."""
    if not cfg.has_section("data"):
        raise ConfigError("config is missing a [data] section")
    kind = cfg.get("data", "kind", fallback="idx")
    if kind == "synth":
        seed = cfg.getint("data", "seed", fallback=0)
        if prefix == "test":
            # same blob centers as training unless a test_seed is given
            seed = cfg.getint("data", "test_seed", fallback=seed)
        return data.synth_blobs(
            n_per_class=cfg.getint("data", "n_per_class", fallback=200),
            classes=cfg.getint("data", "classes", fallback=2),
            d=cfg.getint("data", "d", fallback=2),
            separation=cfg.getfloat("data", "separation", fallback=10.0),
            seed=seed,
        )
    if kind == "idx":
        images = cfg.get("data", f"{prefix}_images", fallback=None)
        labels = cfg.get("data", f"{prefix}_labels", fallback=None)
        if images is None or labels is None:
            raise ConfigError(f"[data] must set {prefix}_images and {prefix}_labels")
        for p in (images, labels):
            if not os.path.exists(p):
                raise ConfigError(f"dataset file not found: {p}")
        return data.load_idx(images, labels)
    raise ConfigError(f"unknown data kind {kind!r} (expected idx or synth)")


def _model_dims(cfg):
    if not cfg.has_option("model", "dims"):
        raise ConfigError("config is missing dims under [model]")
    dims = [int(t) for t in cfg.get("model", "dims").split()]
    if len(dims) < 2:
        raise ConfigError("[model] dims needs at least input and output sizes")
    return dims


def _out_dir(args):
    out = args.out if args.out is not None else "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args):
    cfg = _read_config(args.config)
    dims = _model_dims(cfg)
    n_factors = _pick(args.n_factors, cfg, "model", "n_factors", int, 1)
    seed = _pick(args.seed, cfg, "train", "seed", int, 0)
    tc = optim.TrainConfig(
        lr=cfg.getfloat("train", "lr", fallback=1e-2),
        weight_decay=cfg.getfloat("train", "weight_decay", fallback=0.0),
        epochs=cfg.getint("train", "epochs", fallback=50),
        batch_size=cfg.getint("train", "batch_size", fallback=128),
        seed=seed,
        optimizer=cfg.get("train", "optimizer", fallback="adam"),
    )
    train_ds = _load_dataset(cfg, "train")
    try:
        test_ds = _load_dataset(cfg, "test")
    except ConfigError:
        test_ds = None

    model = nn.build_mlp(dims, depth=n_factors, seed=seed)
    history = optim.train(model, train_ds, tc, test_dataset=test_ds)

    out = _out_dir(args)
    meta = {
        "dims": " ".join(str(d) for d in dims),
        "n_factors": n_factors,
        "seed": seed,
        "weight_decay": repr(tc.weight_decay),
        "epochs": tc.epochs,
    }
    checkpoint.save_model(os.path.join(out, "model.ckpt"), model, meta)
    header = ["epoch", "train_loss", "train_accuracy", "objective"]
    rows = [[m.epoch, m.train_loss, m.train_accuracy, m.objective] for m in history]
    if test_ds is not None:
        header.append("test_accuracy")
        for row, m in zip(rows, history):
            row.append(m.test_accuracy)
    _write_csv(os.path.join(out, "metrics.csv"), header, rows)
    final = history[-1]
    line = f"train_accuracy {final.train_accuracy!r}"
    if test_ds is not None:
        line += f" test_accuracy {final.test_accuracy!r}"
    print(line)
    return EXIT_OK


def _load_model(path):
    model, kind, meta = checkpoint.load(path)
    if kind != "factorized":
        raise ConfigError(f"{path}: expected a factorized checkpoint, got {kind}")
    return model, meta


def cmd_compress(args):
    cfg = _read_config(args.config)
    model, _ = _load_model(args.checkpoint)
    scheme = args.scheme if args.scheme is not None else cfg.get(
        "compress", "scheme", fallback=None
    )
    if scheme is None:
        raise ConfigError("compress requires --scheme (or [compress] scheme)")

    dataset = None
    try:
        dataset = _load_dataset(cfg, "train")
    except ConfigError:
        pass
    test_ds = None
    try:
        test_ds = _load_dataset(cfg, "test")
    except ConfigError:
        test_ds = dataset

    keep = _pick(args.keep, cfg, "compress", "keep", float)
    if scheme == "lsvt":
        if args.rank is not None:
            plan = compress.lsvt(model, r=args.rank)
        elif keep is not None:
            plan = compress.lsvt(model, fraction=keep)
        else:
            raise ConfigError("lsvt requires --rank or --keep")
    elif scheme == "gsvt":
        if keep is None:
            raise ConfigError("gsvt requires --keep")
        plan = compress.gsvt(model, keep_fraction=keep)
    elif scheme == "isvt":
        if dataset is None:
            raise ConfigError("isvt requires a [data] section for the probe set")
        if keep is None:
            raise ConfigError("isvt requires --keep (target retained-params fraction)")
        seed = args.seed if args.seed is not None else 0
        probe = data.subsample(dataset, min(args.probe, dataset.features.shape[0]), seed)
        full_params = sum(m * n for m, n in zip(
            (layer.out_dim for layer in model.layers),
            (layer.in_dim for layer in model.layers),
        ))
        plan = compress.isvt(
            model,
            probe,
            step_params=args.step,
            target_retained_params=int(keep * full_params),
        )
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")

    cm = compress.apply_plan(model, plan)
    params_before = metrics.count_params(metrics.mlp_arch(model))
    flops_before = metrics.count_flops(metrics.mlp_arch(model))
    acc_before = metrics.evaluate(model, test_ds) if test_ds is not None else float("nan")

    if args.finetune_epochs is not None and args.finetune_epochs > 0:
        if dataset is None:
            raise ConfigError("--finetune-epochs requires a [data] section")
        ft_cfg = optim.TrainConfig(
            lr=cfg.getfloat("finetune", "lr", fallback=1e-3),
            epochs=args.finetune_epochs,
            batch_size=cfg.getint("finetune", "batch_size", fallback=128),
            seed=args.seed if args.seed is not None else 0,
        )
        compress.finetune(cm, dataset, ft_cfg)

    params_after = metrics.count_params(metrics.compressed_arch(cm))
    flops_after = metrics.count_flops(metrics.compressed_arch(cm))
    acc_after = metrics.evaluate(cm, test_ds) if test_ds is not None else float("nan")

    out = _out_dir(args)
    checkpoint.save_compressed(
        os.path.join(out, "compressed.ckpt"),
        cm,
        {"scheme": scheme, "ranks": " ".join(str(r) for r in plan.ranks)},
    )
    _write_csv(
        os.path.join(out, "summary.csv"),
        [
            "scheme", "retained_sv_fraction", "params_before", "params_after",
            "flops_before", "flops_after", "accuracy_before", "accuracy_after",
        ],
        [[
            scheme, compress.retained_sv_fraction(plan, model),
            params_before, params_after, flops_before, flops_after,
            acc_before, acc_after,
        ]],
    )
    print(
        f"scheme {scheme} ranks {' '.join(str(r) for r in plan.ranks)}"
        f" params {params_before}->{params_after}"
        f" accuracy {acc_before!r}->{acc_after!r}"
    )
    return EXIT_OK


def cmd_eval(args):
    cfg = _read_config(args.config)
    model, kind, _ = checkpoint.load(args.checkpoint)
    dataset = _load_dataset(cfg, "test")
    acc = metrics.evaluate(model, dataset)
    if args.out is not None:
        _write_csv(os.path.join(_out_dir(args), "eval.csv"),
                   ["kind", "accuracy"], [[kind, acc]])
    print(f"accuracy {acc!r}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _read_config(args.config)
    model, _ = _load_model(args.checkpoint)
    dataset = _load_dataset(cfg, "test")
    scheme = args.scheme if args.scheme is not None else "gsvt"
    fractions = [float(t) for t in args.fractions.split(",")]
    points = metrics.sweep_curve(model, dataset, scheme, fractions)
    _write_csv(
        os.path.join(_out_dir(args), "sweep.csv"),
        ["retained_fraction", "test_accuracy", "accuracy_drop",
         "retained_params", "flops"],
        [[p.retained_fraction, p.test_accuracy, p.accuracy_drop,
          p.retained_params, p.flops] for p in points],
    )
    for p in points:
        print(
            f"fraction {p.retained_fraction!r}"
            f" accuracy {p.test_accuracy!r} drop {p.accuracy_drop!r}"
        )
    return EXIT_OK


def cmd_spectrum(args):
    model, _ = _load_model(args.checkpoint)
    rows = metrics.spectrum_report(model)
    _write_csv(
        os.path.join(_out_dir(args), "spectrum.csv"),
        ["layer", "index", "s_normalized"],
        [[r.layer, r.index, r.s_normalized] for r in rows],
    )
    print(f"wrote {len(rows)} spectrum rows for {len(model.layers)} layers")
    return EXIT_OK


def cmd_verify(args):
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    failures = 0

    for n_factors, shape in ((2, (6, 4)), (4, (8, 8))):
        a = rng.standard_normal(shape)
        spec = theory.SchattenSpec.frobenius_chain(n_factors)
        report = theory.verify_prop1(a, spec, n_restarts=2, seed=seed)
        status = "pass" if report.passed else "FAIL"
        print(
            f"norm-factorization N={n_factors} {shape[0]}x{shape[1]}: {status}"
            f" (analytic {report.analytic!r}, balanced {report.balanced_value!r},"
            f" descent {report.descent_best!r})"
        )
        failures += not report.passed

    dataset = data.synth_blobs(n_per_class=20, classes=5, d=6, separation=5.0, seed=seed)
    spec2 = theory.RescalingSpec(alphas=(1.0, 4.0, 16.0), depth=2, p=2.0)
    model3 = nn.build_mlp([6, 8, 8, 5], depth=2, seed=seed)
    report2 = theory.verify_prop2(model3, spec2, dataset)
    status = "pass" if report2.passed else "FAIL"
    print(
        f"rescaling-invariance L=3 K=2: {status}"
        f" (max output diff {report2.max_output_diff!r},"
        f" objective rel diff {report2.objective_rel_diff!r})"
    )
    failures += not report2.passed

    return EXIT_OK if failures == 0 else EXIT_VERIFY


def cmd_count(args):
    if args.arch in metrics.NAMED_ARCHS:
        arch = metrics.NAMED_ARCHS[args.arch]()
    elif os.path.exists(args.arch):
        model, kind, _ = checkpoint.load(args.arch)
        arch = (metrics.compressed_arch(model) if kind == "compressed"
                else metrics.mlp_arch(model))
    else:
        known = ", ".join(sorted(metrics.NAMED_ARCHS))
        raise ConfigError(f"unknown architecture {args.arch!r} (known: {known})")
    params = metrics.count_params(arch)
    flops = metrics.count_flops(arch)
    if args.out is not None:
        _write_csv(os.path.join(_out_dir(args), "count.csv"),
                   ["arch", "params", "flops"], [[arch.name, params, flops]])
    print(f"arch {arch.name} params {params} flops {flops}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="lorita", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint_arg=False):
        p.add_argument("--config", metavar="PATH", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", metavar="DIR", default=None)
        if checkpoint_arg:
            p.add_argument("checkpoint", help="path to a model checkpoint")

    p = sub.add_parser("train", help="train a factorized MLP")
    common(p)
    p.add_argument("--n-factors", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress a trained checkpoint")
    common(p, checkpoint_arg=True)
    p.add_argument("--scheme", choices=["lsvt", "gsvt", "isvt"], default=None)
    p.add_argument("--keep", type=float, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--step", type=int, default=500)
    p.add_argument("--probe", type=int, default=120)
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, checkpoint_arg=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="accuracy-vs-retention curve")
    common(p, checkpoint_arg=True)
    p.add_argument("--scheme", choices=["lsvt", "gsvt"], default=None)
    p.add_argument("--fractions", default="0.15,0.2,0.3")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("spectrum", help="per-layer normalized singular values")
    common(p, checkpoint_arg=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("verify", help="run the analytic self-checks")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("count", help="parameter/FLOP accounting")
    common(p)
    p.add_argument("arch", help="named architecture or checkpoint path")
    p.set_defaults(func=cmd_count)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, data.IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, ShapeError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
