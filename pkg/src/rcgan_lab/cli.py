"""Command-line entry point: ``rcgan-lab {theory,train,eval,heatmap,synth}``.

Every option can also come from a ``key = value`` config file passed with
``--config``; a flag given on the command line wins over the file. The
resolved options are echoed to ``<out>/config.txt``.

Randomness: the root ``--seed`` is expanded with
``numpy.random.SeedSequence(seed).spawn(3)`` into (data, training, test)
streams. The training stream's first 32-bit word seeds the trainer, which
splits it again into init/batches/latent/penalty streams.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (
    DataFormatError,
    load_csv,
    read_dataset_csv,
    split,
    write_dataset_csv,
    write_grid_csv,
    write_pgm,
)
from .distributions import DistSpec, Grid2D, manifold_distance, sample
from .gan_training import (
    RCGANModel,
    Streams,
    TrainConfig,
    TrainingDiverged,
    build_model,
    train,
)
from .nn_core import DimensionError
from .scoring_eval import ScoreReport, SingleClassError, evaluate, heatmap, score
from .theory import InfeasibleGridError, OracleNotConverged, fig2_demo

log = logging.getLogger("rcgan_lab")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# name -> (type, default, help); None defaults mean "required or optional"
OPTIONS: dict[str, dict[str, tuple]] = {
    "theory": {
        "q": (str, "gaussian(0, 0.01)", "normal-data distribution"),
        "t": (str, "uniform(-1, 1)", "penalty distribution"),
        "grid": (str, "-1,1,-1,1,50,50", "xlo,xhi,ylo,yhi,nx,ny"),
        "method": (str, "bisection", "bisection or breakpoint"),
    },
    "train": {
        "data": (str, None, "numeric CSV (label column optional, only label 0 rows used)"),
        "schema": (str, None, "schema file: treat --data as a raw tabular CSV and split it"),
        "label-column": (str, "label", "label column name"),
        "train-fraction": (float, 0.8, "fraction of rows sampled for training"),
        "synth": (str, None, "synthetic shape to sample instead of --data"),
        "n": (int, 5000, "synthetic sample count"),
        "mode": (str, "rcgan", "rcgan, no-penalty, alice-baseline or ali"),
        "epochs": (int, 100, "training epochs"),
        "max-steps": (int, None, "stop after this many generator steps"),
        "batch-size": (int, 128, "minibatch size"),
        "lr": (float, 5e-4, "Adam learning rate"),
        "beta1": (float, 0.5, "Adam first-moment decay"),
        "disc-steps": (int, 1, "discriminator updates per generator update"),
        "penalty": (str, "gaussian(0, 1)", "penalty distribution t(x)"),
        "latent-dim": (int, 2, "latent dimension"),
        "hidden": (str, "64,64", "hidden widths, comma separated"),
        "grid": (str, "-3,3,-3,3,64,64", "heatmap grid for 2-D data"),
    },
    "eval": {
        "checkpoint": (str, None, "trained model (.npz)"),
        "data": (str, None, "numeric CSV with a label column"),
        "scores": (str, None, "precomputed score CSV (id,score,label) instead of a model"),
        "score": (str, "dxx", "dxx or fm"),
        "ratio": (float, 0.2, "fraction of test examples flagged as anomalous"),
    },
    "heatmap": {
        "checkpoint": (str, None, "trained model (.npz)"),
        "grid": (str, "-3,3,-3,3,64,64", "xlo,xhi,ylo,yhi,nx,ny"),
        "which": (str, "both", "dxz, dxx or both"),
    },
    "synth": {
        "shape": (str, "loop", "loop, arc or four-dot"),
        "n": (int, 5000, "normal training samples"),
        "n-test": (int, 1000, "normal test samples"),
        "anomalies": (int, 1000, "uniform-box anomalies drawn for the test split"),
        "box": (float, 3.0, "anomalies are uniform on [-box, box]^2"),
        "margin": (float, 0.5, "anomalies closer than this to the shape are redrawn"),
    },
}
COMMON = {
    "seed": (int, 0, "root seed"),
    "out": (str, None, "output directory"),
}


def read_config(path: str | Path) -> dict[str, str]:
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        cfg[key.replace("_", "-")] = value
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rcgan-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="key = value config file")
        for name, (_, default, help_) in {**opts, **COMMON}.items():
            # real defaults are applied after merging with the config file
            p.add_argument(f"--{name}", default=None, help=f"{help_} (default: {default})")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags, converting types."""
    table = {**OPTIONS[args.command], **COMMON}
    file_cfg = read_config(args.config) if args.config else {}
    unknown = set(file_cfg) - set(table)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name, (typ, default, _) in table.items():
        flag = getattr(args, name.replace("-", "_"))
        raw = flag if flag is not None else file_cfg.get(name)
        if raw is None:
            out[name] = default
            continue
        try:
            out[name] = typ(raw)
        except ValueError:
            raise UsageError(f"--{name}: cannot read {raw!r} as {typ.__name__}") from None
    if out["out"] is None:
        raise UsageError("--out is required")
    return out


def echo_config(cfg: dict, out: Path, command: str) -> None:
    lines = [f"# rcgan-lab {__version__} {command}"]
    lines += [f"{k} = {v}" for k, v in cfg.items() if v is not None]
    (out / "config.txt").write_text("\n".join(lines) + "\n")


def split_seed(seed: int) -> tuple[np.random.Generator, int, np.random.Generator]:
    """(data generator, integer training seed, test generator)."""
    data, training, test = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(data),
        int(training.generate_state(1)[0]),
        np.random.default_rng(test),
    )


def _write_grid(out: Path, name: str, values: np.ndarray, vmax: float | None = None) -> None:
    write_grid_csv(out / f"{name}.csv", values)
    write_pgm(out / f"{name}.pgm", values, vmax=vmax)


# -- commands ----------------------------------------------------------------


def cmd_theory(cfg: dict, out: Path) -> int:
    qspec = DistSpec.parse(cfg["q"])
    tspec = DistSpec.parse(cfg["t"])
    grid = Grid2D.parse(cfg["grid"])
    res = fig2_demo(qspec, tspec, grid, method=cfg["method"])
    for name in ("q", "t", "p"):
        _write_grid(out, name, getattr(res, name))
    (out / "beta.txt").write_text(f"{res.beta!r}\n")
    print(f"beta = {res.beta:.12f}")
    print(f"support: {int((res.p > 0).sum())} of {res.p.size} cells")
    return EXIT_OK


def _hidden(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(h) for h in text.split(",") if h.strip())
    except ValueError:
        raise UsageError(f"--hidden: expected comma-separated integers, got {text!r}") from None
    if not widths or min(widths) < 1:
        raise UsageError("--hidden needs at least one positive width")
    return widths


def _training_data(cfg: dict, data_rng, out: Path) -> np.ndarray:
    if cfg["synth"]:
        return sample(DistSpec.parse(cfg["synth"]), cfg["n"], data_rng)
    if not cfg["data"]:
        raise UsageError("train needs --data or --synth")
    if cfg["schema"]:
        ds = load_csv(cfg["data"], cfg["schema"], cfg["label-column"])
        tr, te = split(ds, cfg["train-fraction"], seed=cfg["seed"])
        write_dataset_csv(out / "test.csv", te.features, te.labels, te.feature_names)
        print(f"split: {len(tr)} normal training rows, {len(te)} test rows -> test.csv")
        return tr.features
    x, labels = read_dataset_csv(cfg["data"], cfg["label-column"])
    return x[labels == 0]


def cmd_train(cfg: dict, out: Path) -> int:
    data_rng, train_seed, _ = split_seed(cfg["seed"])
    x = _training_data(cfg, data_rng, out)
    tcfg = TrainConfig(
        mode=cfg["mode"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch-size"],
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        disc_steps=cfg["disc-steps"],
        seed=train_seed,
        max_steps=cfg["max-steps"],
    )
    x_dim = x.shape[1]
    penalty = DistSpec.parse(cfg["penalty"], dim=x_dim)
    model = build_model(
        x_dim,
        cfg["latent-dim"],
        Streams(train_seed).init,
        hidden=_hidden(cfg["hidden"]),
        penalty_spec=penalty,
    )
    model.save(out / "init.npz", {"train_config": asdict(tcfg)})
    trained, report = train(model, x, tcfg, checkpoint=out / "model.npz")
    report.to_csv(out / "losses.csv")
    if x_dim == 2:
        grid = Grid2D.parse(cfg["grid"])
        for which in ("dxz", "dxx"):
            _write_grid(out, f"heatmap_{which}", heatmap(trained, grid, which), vmax=1.0)
    last = report.epoch_means()[-1] if report.steps else {}
    print(f"trained {report.steps[-1]['step'] + 1 if report.steps else 0} steps; "
          + ", ".join(f"{k}={v:.4f}" for k, v in last.items() if k != "epoch"))
    return EXIT_OK


def cmd_eval(cfg: dict, out: Path) -> int:
    if cfg["scores"]:
        report = ScoreReport.from_csv(cfg["scores"], kind=cfg["score"])
    else:
        if not (cfg["checkpoint"] and cfg["data"]):
            raise UsageError("eval needs --checkpoint and --data, or --scores")
        model = RCGANModel.load(cfg["checkpoint"])
        x, labels = read_dataset_csv(cfg["data"])
        if x.shape[1] != model.x_dim:
            raise DimensionError(
                f"data has {x.shape[1]} features, model expects {model.x_dim}"
            )
        report = ScoreReport(score(model, x, cfg["score"]), labels, cfg["score"])
    summary = evaluate(report, cfg["ratio"])
    report.to_csv(out / "scores.csv")
    row = summary.as_row()
    with open(out / "metrics.csv", "w") as fh:
        fh.write(",".join(row) + "\n")
        fh.write(",".join(repr(v) for v in row.values()) + "\n")
    for k, v in row.items():
        print(f"{k:10s} {v}")
    return EXIT_OK


def cmd_heatmap(cfg: dict, out: Path) -> int:
    if not cfg["checkpoint"]:
        raise UsageError("heatmap needs --checkpoint")
    model = RCGANModel.load(cfg["checkpoint"])
    grid = Grid2D.parse(cfg["grid"])
    which = ("dxz", "dxx") if cfg["which"] == "both" else (cfg["which"],)
    for w in which:
        _write_grid(out, f"heatmap_{w}", heatmap(model, grid, w), vmax=1.0)
    return EXIT_OK


def synth_split(shape: str, n: int, n_test: int, n_anom: int, box: float, margin: float,
                seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normal training samples plus a labelled test set with box anomalies."""
    spec = DistSpec.parse(shape)
    data_rng, _, test_rng = split_seed(seed)
    train_x = sample(spec, n, data_rng)
    normal = sample(spec, n_test, test_rng)
    anomalies = np.empty((0, 2))
    while anomalies.shape[0] < n_anom:
        cand = test_rng.uniform(-box, box, size=(n_anom, 2))
        anomalies = np.vstack((anomalies, cand[manifold_distance(spec, cand) > margin]))
    test_x = np.vstack((normal, anomalies[:n_anom]))
    labels = np.r_[np.zeros(n_test, dtype=int), np.ones(n_anom, dtype=int)]
    return train_x, test_x, labels


def cmd_synth(cfg: dict, out: Path) -> int:
    train_x, test_x, labels = synth_split(
        cfg["shape"], cfg["n"], cfg["n-test"], cfg["anomalies"], cfg["box"],
        cfg["margin"], cfg["seed"],
    )
    write_dataset_csv(out / "train.csv", train_x, np.zeros(len(train_x), dtype=int))
    write_dataset_csv(out / "test.csv", test_x, labels)
    print(f"wrote {len(train_x)} training and {len(test_x)} test rows to {out}")
    return EXIT_OK


COMMANDS = {
    "theory": cmd_theory,
    "train": cmd_train,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, out, args.command)
        return COMMANDS[args.command](cfg, out)
    except (UsageError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, InfeasibleGridError, OracleNotConverged, SingleClassError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataFormatError) as err:
        print(f"io failure: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
