"""Command-line front end: ``btf {mask,impute,forecast,eval}``.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime or numerical
failures. Every run that samples writes a key=value manifest holding the
full configuration, the seed and the backend, which is enough to repeat
the run bit for bit.
"""
import argparse
import os
import re
import sys
import time
import warnings

import numpy as np

from . import __version__, _backend, data, forecast
from .btmf import ModelConfig, SamplerError, impute
from .bttf import impute_tensor


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument handling

_COMMAND_NAMES = ("mask", "impute", "forecast", "eval")
_LAG_TOKEN = re.compile(r"^(\d*)(T0)?([+-]\d+)?$")


def parse_lags(text, t0=None):
    """Parse a lag list such as ``1,2,T0`` or ``1,2,3,T0,T0+1,7T0+2``."""
    lags = []
    for tok in str(text).replace(" ", "").split(","):
        m = _LAG_TOKEN.match(tok)
        if not tok or not m or not (m.group(1) or m.group(2)):
            raise UsageError(f"bad lag {tok!r}")
        mult, has_t0, off = m.groups()
        if has_t0:
            if t0 is None:
                raise UsageError(f"lag {tok!r} needs --t0")
            lag = (int(mult) if mult else 1) * t0 + (int(off) if off else 0)
        else:
            if off:
                raise UsageError(f"bad lag {tok!r}")
            lag = int(mult)
        lags.append(lag)
    lags = sorted(set(lags))
    if lags[0] < 1:
        raise UsageError("lags must be positive")
    return tuple(lags)


def parse_dims(text):
    if text is None:
        return None
    try:
        dims = tuple(int(v) for v in str(text).lower().replace("x", ",").split(","))
    except ValueError:
        raise UsageError(f"bad --dims {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError("--dims needs three positive sizes, e.g. 10,10,200")
    return dims


def read_config_file(path):
    """Plain key=value lines; ``#`` starts a comment. Keys use flag spelling."""
    out = {}
    try:
        fh = open(path)
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_data_args(p):
    p.add_argument("--input", required=True, help="input series CSV")
    p.add_argument("--format", choices=("matrix-csv", "tensor-long-csv"), default="matrix-csv")
    p.add_argument("--dims", help="tensor sizes M,N,T (default: from the indices)")
    p.add_argument("--t0", type=int, help="season length T0 (steps per day)")


def _add_model_args(p):
    p.add_argument("--rank", type=int, help="rank R (default 10 for matrices, 30 for tensors)")
    p.add_argument("--lags", help="lag list (default 1,2,T0; 1,2 without --t0)")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-mode", choices=("isotropic", "per-series", "per-pair"))
    p.add_argument("--dynamics-mode", choices=("full", "diagonal", "identity"), default="full")
    p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend (default: BTF_BACKEND or numba)")


def build_parser():
    parser = argparse.ArgumentParser(prog="btf", description="Bayesian temporal matrix/tensor factorization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command-line flags take precedence")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common], help="hide cells (RM) or series-day blocks (NM)")
    _add_data_args(p)
    p.add_argument("--scenario", type=str.upper, choices=("RM", "NM"), default="RM")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="masked series CSV")
    p.add_argument("--index", required=True, help="held-out index file")

    p = sub.add_parser("impute", parents=[common], help="posterior imputation of missing cells")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("forecast", parents=[common], help="rolling multi-step forecasts")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--train-steps", type=int, required=True, help="steps used for training")
    p.add_argument("--horizon", type=int, required=True, help="steps per window (delta)")
    p.add_argument("--windows", type=int, required=True, help="number of windows (S)")
    p.add_argument("--gamma", type=int, default=10, help="update window multiplier")
    p.add_argument("--passes", type=int, default=1, help="re-draw passes per window update")
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("eval", parents=[common], help="MAPE and RMSE over held-out cells")
    p.add_argument("--actual", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--index", default="all", help="'all' or a held-out index file")
    p.add_argument("--format", choices=("matrix-csv", "tensor-long-csv"), default="matrix-csv")
    p.add_argument("--dims")
    return parser


def parse_args(argv):
    """Parse ``argv``, folding in ``--config`` values below the explicit flags."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    command = next((a for a in argv if a in _COMMAND_NAMES), None)
    if command is None:
        return parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key in values:
        actions[key].required = False
    # string defaults pass through each flag's type converter, so flags win
    sub.set_defaults(**values)
    args = parser.parse_args(argv)
    for key in values:
        act = actions[key]
        if act.choices and getattr(args, key) not in act.choices:
            raise UsageError(f"config {key}={values[key]!r} is not one of {list(act.choices)}")
    return args


# --------------------------------------------------------------------------
# commands


def _load(args):
    return data.load_series(args.input, args.format, period=args.t0, dims=parse_dims(args.dims))


def _model_config(args, series):
    tensor = series.ndim == 3
    rank = args.rank if args.rank is not None else (30 if tensor else 10)
    if args.lags is not None:
        lags = parse_lags(args.lags, args.t0)
    else:
        lags = (1, 2, args.t0) if args.t0 and args.t0 > 2 else (1, 2)
    try:
        cfg = ModelConfig(rank=rank, lags=lags, noise_mode=args.noise_mode, dynamics_mode=args.dynamics_mode,
                          burn_in=args.burn_in, samples=args.samples)
        cfg.check_length(series.n_steps if args.command == "impute" else args.train_steps)
    except ValueError as err:
        raise UsageError(str(err)) from None
    if tensor and cfg.noise_mode == "per-series":
        raise UsageError("use --noise-mode per-pair for tensors")
    if not tensor and cfg.noise_mode == "per-pair":
        raise UsageError("per-pair noise applies to tensors only")
    return cfg


def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries:
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={'' if value is None else value}\n")


def _base_manifest(args, cfg, series):
    return [
        ("command", args.command),
        ("version", __version__),
        ("input", os.path.abspath(args.input)),
        ("format", args.format),
        ("dims", ",".join(str(v) for v in series.shape)),
        ("t0", args.t0),
        ("rank", cfg.rank),
        ("lags", cfg.lags),
        ("burn_in", cfg.burn_in),
        ("samples", cfg.samples),
        ("seed", args.seed),
        ("noise_mode", args.noise_mode),
        ("dynamics_mode", cfg.dynamics_mode),
        ("backend", _backend.get_backend()),
        ("threads", args.threads),
    ]


def _fit(series, cfg, seed, keep_chain=False):
    if series.ndim == 3:
        return impute_tensor(series, cfg, rng=seed, keep_chain=keep_chain)
    return impute(series, cfg, rng=seed, keep_chain=keep_chain)


def cmd_mask(args):
    series = _load(args)
    try:
        spec = data.MaskSpec(args.scenario, args.rate, args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("always", data.MaskWarning)
        masked, held = data.apply_mask(series, spec)
    data.save_series(masked, args.output)
    data.write_index(args.index, held)
    print(f"held out {int(held.sum())} of {int(series.mask.sum())} observed cells")
    return 0


def cmd_impute(args):
    series = _load(args)
    cfg = _model_config(args, series)
    os.makedirs(args.output_dir, exist_ok=True)
    t0 = time.perf_counter()
    summary = _fit(series, cfg, args.seed)
    elapsed = time.perf_counter() - t0
    for name in ("mean", "std", "q05", "q95"):
        data.write_array(os.path.join(args.output_dir, f"{name}.csv"), getattr(summary, name))
    entries = _base_manifest(args, cfg, series) + [
        ("output_dir", os.path.abspath(args.output_dir)),
        ("empty_series", len(summary.empty_series)),
        ("seconds_sampling", f"{elapsed:.3f}"),
    ]
    _write_manifest(os.path.join(args.output_dir, "manifest.txt"), entries)
    print(f"imputed {series.shape} in {elapsed:.1f}s")
    return 0


def cmd_forecast(args):
    series = _load(args)
    cfg = _model_config(args, series)
    try:
        rcfg = forecast.RollingConfig(args.horizon, args.windows, args.gamma, samples=None, passes=args.passes)
    except ValueError as err:
        raise UsageError(str(err)) from None
    T = args.train_steps
    if not 0 < T <= series.n_steps:
        raise UsageError(f"--train-steps must lie in (0, {series.n_steps}]")
    if T + args.horizon * args.windows > series.n_steps:
        raise UsageError(f"{args.windows} windows of {args.horizon} steps after step {T} run past the data")
    os.makedirs(args.output_dir, exist_ok=True)
    t0 = time.perf_counter()
    summary = _fit(series.slice_time(0, T), cfg, args.seed, keep_chain=True)
    t1 = time.perf_counter()
    result = forecast.rolling_forecast(series, summary.chain, T, rcfg, cfg.lags, rng=args.seed + 1)
    t2 = time.perf_counter()
    for w in result.windows:
        for name in ("mean", "std", "q05", "q95"):
            data.write_array(os.path.join(args.output_dir, f"window_{w.index:04d}_{name}.csv"), getattr(w, name))
    data.write_array(os.path.join(args.output_dir, "forecast_mean.csv"), result.mean)
    entries = _base_manifest(args, cfg, series) + [
        ("output_dir", os.path.abspath(args.output_dir)),
        ("train_steps", T),
        ("horizon", args.horizon),
        ("windows", args.windows),
        ("gamma", args.gamma),
        ("passes", args.passes),
        ("forecast_seed", args.seed + 1),
        ("first_step", result.windows[0].start),
        ("ingestion", result.metadata["ingestion"]),
        ("seconds_sampling", f"{t1 - t0:.3f}"),
        ("seconds_forecast", f"{t2 - t1:.3f}"),
    ]
    _write_manifest(os.path.join(args.output_dir, "manifest.txt"), entries)
    print(f"forecast {args.windows} x {args.horizon} steps in {t2 - t0:.1f}s")
    return 0


def cmd_eval(args):
    dims = parse_dims(args.dims)
    actual = data.load_series(args.actual, args.format, dims=dims)
    estimate = data.load_series(args.estimate, args.format, dims=dims or (actual.shape if actual.ndim == 3 else None))
    if actual.shape != estimate.shape:
        raise UsageError(f"shape mismatch: actual {actual.shape} vs estimate {estimate.shape}")
    if args.index == "all":
        sel = actual.mask.copy()
    else:
        sel = data.read_index(args.index, actual.shape)
    sel &= actual.mask
    missing = sel & ~estimate.mask
    if missing.any():
        raise UsageError(f"estimate has no value for {int(missing.sum())} evaluated cells")
    res = data.mape_details(actual.values[sel], estimate.values[sel])
    print(f"MAPE {res.value:.2f}")
    print(f"RMSE {data.rmse(actual.values[sel], estimate.values[sel]):.4f}")
    print(f"cells {res.n_used + res.n_excluded} (zero actuals excluded from MAPE: {res.n_excluded})")
    return 0


COMMANDS = {"mask": cmd_mask, "impute": cmd_impute, "forecast": cmd_forecast, "eval": cmd_eval}


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if _backend.HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as err:
        print(f"btf: error: {err}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    previous = None
    try:
        _set_threads(args.threads)
        if getattr(args, "backend", None):
            previous = _backend.set_backend(args.backend)
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"btf {args.command}: error: {err}", file=sys.stderr)
        return 2
    except data.ParseError as err:
        print(f"btf {args.command}: data error: {err}", file=sys.stderr)
        return 1
    except SamplerError as err:
        print(f"btf {args.command}: sampler error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError, np.linalg.LinAlgError, data.UndefinedMetricError) as err:
        print(f"btf {args.command}: error: {err}", file=sys.stderr)
        return 1
    finally:
        if previous is not None:
            _backend.set_backend(previous)


if __name__ == "__main__":
    sys.exit(main())
