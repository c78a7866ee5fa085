"""Command-line interface: ``entropy-sc <command> [flags]``.

Commands: generate-bars, make-patches, train, eval, verify, report.

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 I/O error. The worker thread count comes from ``--threads`` or the
``SC_THREADS`` environment variable.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("entropy_sc")


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


# train flags and their defaults; JSON config files use the same keys
TRAIN_DEFAULTS = {
    "data": None,
    "out": None,
    "posterior": "diag",
    "rank": 5,
    "n_latents": 10,
    "amortized": False,
    "anneal": "none",
    "gamma_const": 1.0,
    "epochs": 10,
    "batch": 512,
    "seed": 0,
    "optimizer": "em",
    "dictionary_optimizer": "sgd",
    "dictionary_lr": 0.05,
    "encoder_lr": 1e-3,
    "e_step_iters": 50,
    "eval_iters": 100,
    "lbfgs_memory": 10,
    "hidden": None,
    "posterior_init": "zero",
    "warm_start": True,
    "snapshot_every": 0,
    "figures": False,
}


def _apply_threads(n):
    if n is None:
        env = os.environ.get("SC_THREADS")
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return Path(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate_bars(args):
    from .data import BarsSpec, field_grid, generate_bars, write_pgm, write_scd1
    try:
        spec = BarsSpec(grid=args.grid, n_fields=args.n_fields, lam=args.lam, noise_sigma=args.noise_sigma,
                        n=args.n, seed=args.seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    data, w = generate_bars(spec)
    out = _ensure_dir(args.out)
    write_scd1(out / "bars.scd", data)
    _write_json(out / "ground_truth.json", {"w": w.tolist(), "lambdas": [spec.lam] * spec.n_fields,
                                            "sigma2": spec.noise_sigma ** 2, "grid": spec.grid, "seed": spec.seed})
    write_pgm(out / "ground_truth_fields.pgm", field_grid(w, (spec.grid, spec.grid)))
    k = min(data.n, 25)
    write_pgm(out / "samples.pgm", field_grid(data.x[:k].T, (spec.grid, spec.grid)))
    print(f"wrote {data.n}x{data.d} bars dataset to {out / 'bars.scd'}")
    return EXIT_OK


def cmd_make_patches(args):
    from .data import PatchSpec, dead_leaves_image, extract_patches, read_pgm, write_scd1
    try:
        spec = PatchSpec(patch_side=args.patch_side, n_patches=args.n, whitening=args.whitening, seed=args.seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if args.images:
        images = [read_pgm(p) for p in args.images]
    else:
        images = [dead_leaves_image(args.image_size, seed=args.seed * 1000 + i) for i in range(args.n_images)]
    try:
        data = extract_patches(images, spec)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_scd1(args.out, data)
    print(f"wrote {data.n}x{data.d} patch dataset to {args.out}")
    return EXIT_OK


def _merge_train_config(args, explicit):
    cfg = dict(TRAIN_DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(TRAIN_DEFAULTS))
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in explicit.items() if k in TRAIN_DEFAULTS})
    return cfg


def _train_config(cfg, n_data):
    from .optim import AnnealingSchedule
    errors = []
    if not cfg["data"]:
        errors.append("--data is required")
    if not cfg["out"]:
        errors.append("--out is required")
    if cfg["posterior"] not in ("full", "diag", "lowrank"):
        errors.append(f"--posterior must be full, diag or lowrank (got {cfg['posterior']!r})")
    if cfg["optimizer"] not in ("em", "adam"):
        errors.append(f"--optimizer must be em or adam (got {cfg['optimizer']!r})")
    amortized = bool(cfg["amortized"]) or cfg["optimizer"] == "adam"
    if not isinstance(cfg["snapshot_every"], int) or cfg["snapshot_every"] < 0:
        errors.append("--snapshot-every must be an integer >= 0")
    try:
        schedule = AnnealingSchedule(cfg["anneal"], float(cfg["gamma_const"]))
    except ValueError as err:
        errors.append(str(err))
        schedule = AnnealingSchedule()
    try:
        tc = _build_train_config(cfg, n_data, amortized, schedule)
    except (TypeError, ValueError) as err:
        raise ConfigError(errors + [f"bad value in train settings: {err}"]) from None
    errors += tc.validate()
    if errors:
        raise ConfigError(errors)
    return tc


def _build_train_config(cfg, n_data, amortized, schedule):
    from .optim import TrainConfig
    return TrainConfig(posterior_variant=cfg["posterior"], rank=int(cfg["rank"]), n_latents=int(cfg["n_latents"]),
                       batch_size=min(int(cfg["batch"]), n_data) if n_data else int(cfg["batch"]),
                       epochs=int(cfg["epochs"]), e_step_iters=int(cfg["e_step_iters"]),
                       eval_iters=int(cfg["eval_iters"]), lbfgs_memory=int(cfg["lbfgs_memory"]),
                       dictionary_optimizer=cfg["dictionary_optimizer"], dictionary_lr=float(cfg["dictionary_lr"]),
                       encoder_lr=float(cfg["encoder_lr"]), amortized=amortized,
                       hidden=None if cfg["hidden"] is None else int(cfg["hidden"]), seed=int(cfg["seed"]),
                       schedule=schedule, posterior_init=cfg["posterior_init"], warm_start=bool(cfg["warm_start"]))


def cmd_train(args, explicit):
    from .data import field_grid, load_dataset, write_pgm
    from .optim import amortized_train, em_train, write_checkpoint, write_trace
    cfg = _merge_train_config(args, explicit)
    if not cfg["data"]:
        _train_config(cfg, None)  # reports every missing/invalid flag
    data = load_dataset(cfg["data"])
    tc = _train_config(cfg, data.n)
    out = _ensure_dir(cfg["out"])
    side = int(round(np.sqrt(data.d)))
    shape = (side, side) if side * side == data.d else (1, data.d)
    every = int(cfg["snapshot_every"])

    def snapshot(epoch, w_tilde, row):
        if every and epoch % every == 0:
            write_pgm(out / f"fields_epoch{epoch:03d}.pgm", field_grid(w_tilde, shape))

    train = amortized_train if tc.amortized else em_train
    result = train(data, tc, on_epoch=snapshot)
    write_checkpoint(out / "checkpoint.json", result)
    write_trace(out / "trace.csv", result.trace)
    write_pgm(out / "fields_final.pgm", field_grid(result.w_tilde, shape))
    _write_json(out / "run_config.json", cfg)
    for msg in result.diagnostics:
        log.warning(msg)
    if cfg["figures"]:
        _render_figures(out, result.trace, result.w_tilde, result.breakdown.lambda_opt, shape)
    print(f"final ELBO {result.final_elbo:.6f}  ({len(result.trace) - 1} epochs) -> {out}")
    return EXIT_OK


def _load_dictionary(path):
    from .data import read_csv_matrix
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_matrix(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("w", "preimage", "w_tilde"):
        if isinstance(doc, dict) and key in doc:
            return np.asarray(doc[key], dtype=np.float64)
    if isinstance(doc, list):
        return np.asarray(doc, dtype=np.float64)
    raise ConfigError(f"{path}: no dictionary found (expected key 'w', 'preimage' or 'w_tilde')")


def cmd_eval(args):
    from .data import load_dataset
    from .optim import eval_external_dictionary, read_checkpoint
    if bool(args.checkpoint) == bool(args.dictionary):
        raise ConfigError("give exactly one of --checkpoint or --dictionary")
    data = load_dataset(args.data)
    variant, rank, posteriors = args.posterior, args.rank, None
    if args.checkpoint:
        ck = read_checkpoint(args.checkpoint)
        w = ck["preimage"]
        variant = ck["config"].posterior_variant
        rank = ck["config"].rank
        post = ck.get("posteriors")
        if post is not None and post.n == data.n and post.h == w.shape[1]:
            posteriors = post
    else:
        w = _load_dictionary(args.dictionary)
    if w.ndim != 2 or w.shape[0] != data.d:
        raise ConfigError(f"dictionary shape {w.shape} does not match data dimension D={data.d}")
    res = eval_external_dictionary(w, data, variant=variant, rank=rank, max_iters=args.max_iters,
                                   seed=args.seed, posteriors=posteriors)
    report = {"breakdown": res.breakdown.to_dict(),
              "gini": {"mean": res.gini.mean, "sd": res.gini.sd},
              "posterior_variant": variant, "converged": res.converged, "n": data.n, "d": data.d}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite
    suites = ["math", "theorems", "gradients", "mc"] if args.suite == "all" else [args.suite]
    reports = [run_suite(s, seed=args.seed, trials=args.trials) for s in suites]
    doc = {"passed": all(r["passed"] for r in reports), "suites": reports}
    if args.out:
        _write_json(args.out, doc)
    for r in reports:
        print(f"{r['suite']:10s} {'PASS' if r['passed'] else 'FAIL'}  {r['n_checks'] - r['n_failed']}/{r['n_checks']}"
              f"  ({r['seconds']:.2f}s)")
        for c in r["checks"]:
            if not c["passed"]:
                print(f"  failed {c['name']} seed={c['seed']} value={c['value']} threshold={c['threshold']}")
    return EXIT_OK if doc["passed"] else EXIT_VERIFY


def _render_figures(out, trace, w_tilde, lambdas, shape):
    from .plotting import plot_fields, plot_lambdas, plot_trace
    fig_dir = _ensure_dir(Path(out) / "figures")
    plot_trace(trace, fig_dir / "trace.png")
    plot_fields(w_tilde, fig_dir / "fields.png", shape)
    plot_lambdas(lambdas, fig_dir / "lambdas.png")
    return fig_dir


def cmd_report(args):
    """Summary table of a training run on stdout plus figures next to it."""
    from .model import normalize_columns
    from .optim import read_checkpoint, read_trace
    from .optim.trainer import TRACE_FIELDS
    run = Path(args.run)
    trace = read_trace(run / "trace.csv")
    ck = read_checkpoint(run / "checkpoint.json")
    w = normalize_columns(ck["preimage"])
    d = w.shape[0]
    side = int(round(np.sqrt(d)))
    shape = (side, side) if side * side == d else (1, d)
    fig_dir = _render_figures(run, trace, w, ck["lambdas"], shape)
    cols = [c for c in TRACE_FIELDS if c != "wallclock_seconds"]
    print(",".join(cols))
    for row in trace:
        print(",".join(str(row.epoch) if c == "epoch" else f"{getattr(row, c):.6f}" for c in cols))
    print(f"# figures: {fig_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _bool_flag(p, name, help):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", default=argparse.SUPPRESS,
                   help=help)
    p.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_false", default=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(prog="entropy-sc", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="worker thread cap (default: $SC_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-bars", help="synthetic bars dataset")
    p.add_argument("--grid", type=int, default=5)
    p.add_argument("--n-fields", type=int, default=None, help="default: 2 * grid")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("make-patches", help="image patch dataset (PGM inputs or synthetic dead-leaves images)")
    p.add_argument("--images", nargs="*", default=None, help="8-bit PGM files")
    p.add_argument("--patch-side", type=int, default=8)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--whitening", choices=("none", "zca"), default="zca")
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .scd file")

    p = sub.add_parser("train", help="train a dictionary", argument_default=argparse.SUPPRESS)
    p.add_argument("--config", default=None, help="JSON file with train settings (flags override it)")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--posterior", choices=("full", "diag", "lowrank"))
    p.add_argument("--rank", type=int)
    p.add_argument("--n-latents", type=int)
    _bool_flag(p, "amortized", "train an encoder network instead of per-datapoint posteriors")
    p.add_argument("--anneal", choices=("none", "prior", "beta", "tempering"))
    p.add_argument("--gamma-const", type=float, help="tempering constant c")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=("em", "adam"), help="em: stored posteriors; adam: amortized")
    p.add_argument("--dictionary-optimizer", choices=("sgd", "adam", "joint"))
    p.add_argument("--dictionary-lr", type=float)
    p.add_argument("--encoder-lr", type=float)
    p.add_argument("--e-step-iters", type=int)
    p.add_argument("--eval-iters", type=int)
    p.add_argument("--lbfgs-memory", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--posterior-init", choices=("zero", "projection"))
    _bool_flag(p, "warm-start", "keep posteriors between visits of a batch")
    p.add_argument("--snapshot-every", type=int, help="write a field grid every k epochs (0: final only)")
    _bool_flag(p, "figures", "also render matplotlib figures into OUT/figures")

    p = sub.add_parser("eval", help="ELBO of a trained or external dictionary")
    p.add_argument("--checkpoint")
    p.add_argument("--dictionary", help="CSV (D rows x H columns) or JSON with key 'w'")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", choices=("full", "diag", "lowrank"), default="diag")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("verify", help="oracle-backed property suites")
    p.add_argument("--suite", choices=("math", "theorems", "gradients", "mc", "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("report", help="summarize a run directory and render figures")
    p.add_argument("--run", required=True, help="directory written by 'train'")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _apply_threads(args.threads)
        try:
            if args.command == "generate-bars":
                if args.n_fields is None:
                    args.n_fields = 2 * args.grid
                return cmd_generate_bars(args)
            if args.command == "make-patches":
                return cmd_make_patches(args)
            if args.command == "train":
                explicit = {k: v for k, v in vars(args).items()
                            if k not in ("command", "threads", "verbose", "config")}
                args.config = getattr(args, "config", None)
                return cmd_train(args, explicit)
            if args.command == "eval":
                return cmd_eval(args)
            if args.command == "verify":
                return cmd_verify(args)
            return cmd_report(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as err:
        for e in err.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        # malformed inputs (bad file contents, shape mismatches)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
