"""Command-line front end.

Exit codes: 0 ok, 1 verify failure, 2 bad config, 3 training divergence,
4 I/O or corrupt checkpoint.
"""
import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__, artcase, config, multask, prmetrics, verify
from ._accel import backend_name, set_threads
from .dist import temper_seq
from .errors import CheckpointError, ConfigError, DivergenceError, DomainError, ResourceError
from .nn import checkpoint, train

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("prcurves")


# --------------------------------------------------------------------------
# CSV rows
# --------------------------------------------------------------------------

CSV_COLUMNS = ("run_id", "method", "method_params", "temperature", "lambda",
               "precision", "recall", "n_samples", "seed")
ARTCASE_EXTRA = ("enum_precision", "enum_recall", "deviation")


def fmt(x):
    """Six significant digits; empty for a missing value."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.6g}"


def _parse_float(s):
    return None if s == "" else float(s)


def _parse_int(s):
    return None if s == "" else int(s)


@dataclass(frozen=True)
class CsvRow:
    run_id: str
    method: str
    method_params: str
    temperature: float
    lam: float
    precision: float
    recall: float
    n_samples: int
    seed: int

    def cells(self):
        return [self.run_id, self.method, self.method_params, fmt(self.temperature), fmt(self.lam),
                fmt(self.precision), fmt(self.recall), fmt(self.n_samples), fmt(self.seed)]

    @classmethod
    def from_cells(cls, cells):
        r, m, mp, t, lam, p, rc, n, s = cells[: len(CSV_COLUMNS)]
        return cls(r, m, mp, _parse_float(t), _parse_float(lam), _parse_float(p),
                   _parse_float(rc), _parse_int(n), _parse_int(s))


def write_csv(path, rows, extra_columns=(), extra=None):
    """Header plus one line per row; ``extra[i]`` supplies the extra columns of row ``i``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS + tuple(extra_columns))
        for i, row in enumerate(rows):
            w.writerow(row.cells() + ([fmt(v) for v in extra[i]] if extra else []))


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[: len(CSV_COLUMNS)]) != CSV_COLUMNS:
            raise DomainError(f"{path}: unexpected header {header}")
        return [CsvRow.from_cells(cells) for cells in reader]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _load_config(args):
    cfg = config.load(args.config) if args.config else config.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args):
    cfg = _load_config(args)
    out = args.out or os.path.join(cfg.out_dir(), cfg.run_id())
    os.makedirs(out, exist_ok=True)
    config.dump(cfg, os.path.join(out, "config.resolved.json"))

    rng = np.random.default_rng(cfg.task.seed)
    samples = multask.gen_dataset(cfg.task.dataset_size, cfg.skew(), rng)
    multask.write_dataset(os.path.join(out, "dataset.txt"), samples)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    params = state = None
    if args.init:
        base = checkpoint.load(args.init)
        # the init seed is irrelevant once weights exist
        if replace(base.model_cfg, seed=model_cfg.seed) != model_cfg:
            raise ConfigError(f"--init: checkpoint model {base.model_cfg} differs from config {model_cfg}",
                              field="model")
        params, state = base.params, base.state

    log_path = os.path.join(out, "train_log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "mean_weight", "kept_fraction", "seconds"])

        def on_epoch(e):
            writer.writerow([e.epoch, fmt(e.loss), fmt(e.mean_weight), fmt(e.kept_fraction), fmt(e.seconds)])
            fh.flush()
            if not args.quiet:
                print(f"epoch {e.epoch:4d}  loss {e.loss:.4f}  weight {e.mean_weight:.3f}  "
                      f"kept {e.kept_fraction:.3f}  {e.seconds:.1f}s", flush=True)

        result = train(model_cfg, train_cfg, multask.dataset_tokens(samples), on_epoch=on_epoch,
                       params=params, state=state)

    ck = args.checkpoint or os.path.join(out, "checkpoint.npz")
    extra = {"run_id": cfg.run_id(), "method": train_cfg.loss.method.value,
             "method_params": train_cfg.loss.params_str(), "train": train_cfg.to_dict(),
             "task": asdict(cfg.task), "init": os.path.abspath(args.init) if args.init else None}
    checkpoint.save(ck, model_cfg, result.params, result.state, extra)
    print(f"wrote {ck}")
    return EXIT_OK


def _t_grid(args, cfg):
    if args.t_grid:
        try:
            return tuple(float(x) for x in args.t_grid.split(","))
        except ValueError as exc:
            raise ConfigError(f"--t-grid: {exc}", field="t_grid") from exc
    return cfg.eval.t_grid


def cmd_sweep(args):
    cfg = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("sweep needs --checkpoint", field="checkpoint")
    ck = checkpoint.load(args.checkpoint)
    t_grid = _t_grid(args, cfg)
    n = args.n or cfg.eval.n
    seed = cfg.eval.seed
    decoding = cfg.decoding()
    reports = multask.temperature_sweep(ck.params, ck.model_cfg, t_grid, n, decoding, seed,
                                        cfg.task.n_pairs)
    method = ck.extra.get("method", "")
    params_str = ck.extra.get("method_params", "")
    if decoding.kind == "top_p":
        params_str = ";".join(x for x in (params_str, decoding.label()) if x)
    run_id = ck.extra.get("run_id") or os.path.splitext(os.path.basename(args.checkpoint))[0]
    rows = [CsvRow(run_id, method, params_str, r.temperature, None, r.precision, r.recall,
                   r.n_samples, seed) for r in reports]
    out = args.out or os.path.join(cfg.out_dir(), cfg.output.csv)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_csv(out, rows)
    resolved = cfg.to_dict()
    resolved["eval"].update(t_grid=list(t_grid), n=n)
    resolved["checkpoint"] = os.path.abspath(args.checkpoint)
    _write_json(out + ".config.json", resolved)
    for r in reports:
        print(f"t={fmt(r.temperature):>6}  precision {r.precision:.4f}  recall {r.recall:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


ARTCASE_DEFAULT = {"V": 100, "K": 50, "L": 2, "l1": 1, "l2": 2, "rho": 0.5, "a": 0.725, "epsilon": 0.15}
ARTCASE_KEYS = {"params", "t_grid", "lambda_grid", "budget", "run_id"}


def _artcase_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        unknown = sorted(set(data) - ARTCASE_KEYS)
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", field=unknown[0])
    raw = dict(ARTCASE_DEFAULT)
    extra_keys = sorted(set(data.get("params", {})) - set(raw))
    if extra_keys:
        raise ConfigError(f"unknown key 'params.{extra_keys[0]}'", field=f"params.{extra_keys[0]}")
    raw.update(data.get("params", {}))
    try:
        params = artcase.ArtCaseParams(**raw)
    except DomainError as exc:
        raise ConfigError(f"params: {exc}", field="params") from exc
    t_grid = tuple(float(t) for t in data.get("t_grid", (0.1, 1.0, 10.0)))
    if args.t_grid:
        t_grid = _t_grid(args, None)
    lam_grid = data.get("lambda_grid") or list(np.geomspace(0.05, 20.0, 25))
    if args.lambda_grid:
        lam_grid = [float(x) for x in args.lambda_grid.split(",")]
    budget = int(data.get("budget", prmetrics.DEFAULT_BUDGET))
    return params, t_grid, sorted(float(x) for x in lam_grid), budget, data.get("run_id", "artcase")


def cmd_artcase(args):
    params, t_grid, lam_grid, budget, run_id = _artcase_config(args)
    if any(t <= 0 for t in t_grid) or any(lam <= 0 for lam in lam_grid):
        raise ConfigError("temperatures and lambdas must be positive", field="t_grid")
    P, Q = artcase.build_p(params), artcase.build_q(params)
    enumerable = params.V**params.L <= budget
    rows, extra = [], []
    worst = 0.0
    label = (f"V={params.V};K={params.K};L={params.L};rho={params.rho:g};"
             f"a={params.a:g};epsilon={params.epsilon:g}")
    for t in t_grid:
        enum = None
        if enumerable:
            enum = prmetrics.pr_curve_exact(P, temper_seq(Q, t), lam_grid, budget)
        for i, lam in enumerate(lam_grid):
            pt = artcase.pr_closed_form(params, t, lam)
            rows.append(CsvRow(run_id, "artcase", label, t, lam, pt.alpha, pt.beta, 0, 0))
            if enum is not None:
                e = enum[i]
                dev = max(abs(pt.alpha - e.alpha), abs(pt.beta - e.beta))
                worst = max(worst, dev)
                extra.append((e.alpha, e.beta, dev))
            else:
                extra.append((None, None, None))
    out = args.out or os.path.join(config.default_out_dir(), "artcase.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_csv(out, rows, ARTCASE_EXTRA, extra)
    _write_json(out + ".config.json", {"params": asdict(params), "t_grid": list(t_grid),
                                       "lambda_grid": lam_grid, "budget": budget, "run_id": run_id})
    e0 = artcase.epsilon0(params)
    print(f"epsilon0 = {e0.value:.6g}{' (degenerate)' if e0.degenerate else ''}")
    for t in t_grid:
        lo, hi, _, _ = artcase.regime_boundaries(params, t)
        print(f"t={fmt(t):>6}  lambda_min {lo:.6g}  lambda_max {hi:.6g}")
    if enumerable:
        print(f"enumeration cross-check: max deviation {worst:.3g}")
    else:
        print(f"enumeration skipped: V^L = {params.V**params.L} exceeds budget {budget}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args):
    t0 = time.perf_counter()
    results = verify.run_all(report=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_sparsity(args):
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.task.seed)
    n = args.n or 2000
    if args.checkpoint:
        ck = checkpoint.load(args.checkpoint)
        data = multask.dataset_tokens(multask.gen_dataset(n, cfg.skew(), rng))
        rep = multask.sparsity_probe(ck.params, data, args.p, cfg=ck.model_cfg)
        source = args.checkpoint
    else:
        skew = multask.UNIFORM_SKEW if args.uniform else cfg.skew()
        data = multask.dataset_tokens(multask.gen_dataset(n, skew, rng))
        ref = multask.reference_dist(skew)
        rep = multask.sparsity_probe(ref, data, args.p)
        source = "reference"
    out = args.out or os.path.join(cfg.out_dir(), "sparsity.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "k", "count"])
        for pos, row in enumerate(rep.histogram, start=1):
            for k, count in enumerate(row):
                if count:
                    w.writerow([pos, k, int(count)])
    print(f"{source}: geometric-mean support size {rep.geo_mean:.6g} at p={args.p:g} over {n} samples")
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="prcurves", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--checkpoint", help="checkpoint path (.npz)")
        p.add_argument("--out", help=f"output path; default under ${config.OUT_DIR_ENV} or ./runs")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
        p.add_argument("-q", "--quiet", action="store_true")
        return p

    p = common(sub.add_parser("train", help="train a model on the mod-97 task"))
    p.add_argument("--init", help="start from this checkpoint's weights and optimizer state")
    p = common(sub.add_parser("sweep", help="precision/recall over a temperature grid"))
    p.add_argument("--t-grid", help="comma-separated temperatures")
    p.add_argument("--n", type=int, help="samples per temperature")
    p = common(sub.add_parser("artcase", help="closed-form PR-curves of the two-defect toy model"))
    p.add_argument("--t-grid", help="comma-separated temperatures")
    p.add_argument("--lambda-grid", help="comma-separated trade-off values")
    common(sub.add_parser("verify", help="run the oracle suite"))
    p = common(sub.add_parser("sparsity", help="support-size probe"))
    p.add_argument("--p", type=float, default=0.9, help="mass threshold")
    p.add_argument("--n", type=int, help="number of probe sequences")
    p.add_argument("--uniform", action="store_true", help="probe the unskewed reference")
    return parser


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "artcase": cmd_artcase,
            "verify": cmd_verify, "sparsity": cmd_sparsity}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        set_threads(args.threads)
    log.debug("backend %s", backend_name())
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ResourceError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
