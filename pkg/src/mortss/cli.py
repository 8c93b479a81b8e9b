"""Command-line orchestration.

    mortss <subcommand> --config <file> [--model ...] [--seed ...] [--out ...]

Subcommands: simulate, svd-fit, fit-mle, fit-gibbs, fit-pmcmc, forecast,
lifetable, dic.  Options come from a JSON config file, overridable by
command-line flags (flags win).  Every run writes ``config.json`` (the
merged configuration) and ``manifest.json`` (the produced files) into the
output directory; files are written atomically via temp-then-rename.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from ._kernels import NumericalError
from .bayes import ChainOutput, PriorSpec, gibbs_lcsv, gibbs_linear
from .data import AgeGroup, DataError, default_grouping, load_panel
from .diagnostics import dic as compute_dic
from .diagnostics import summarize, summary_csv
from .forecast import ForecastFan, forecast_linear, forecast_sv
from .lifetable import build_table, life_expectancy_fan
from .mle import StoppingRule, default_start, fit_mle, svd_fit
from .models import ConstraintSpec, ModelKind, StaticParams, default_constraints, simulate


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


class ConfigError(ValueError):
    """Invalid run configuration."""


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunDir:
    """Output directory with a manifest of produced files."""

    def __init__(self, out: Path, config: dict):
        self.out = Path(out)
        self.config = config
        self.files: list[str] = []

    def complete(self) -> bool:
        manifest = self.out / "manifest.json"
        if not manifest.exists():
            return False
        try:
            listed = json.loads(manifest.read_text())["files"]
        except (json.JSONDecodeError, KeyError):
            return False
        return all((self.out / f).exists() for f in listed)

    def write(self, name: str, text: str) -> None:
        _write_atomic(self.out / name, text)
        self.files.append(name)

    def add_existing(self, name: str) -> None:
        self.files.append(name)

    def finalize(self) -> None:
        _write_atomic(self.out / "config.json", json.dumps(self.config, sort_keys=True, indent=1))
        manifest = {"files": sorted(set(self.files + ["config.json"]))}
        _write_atomic(self.out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_FLAGS = [
    ("--model", str, "model kind (lc, lc-h, lcsv, lcsv-h, ...)"),
    ("--data", str, "input rate CSV"),
    ("--out", str, "output directory"),
    ("--seed", int, "RNG seed (required; no wall-clock seeding)"),
    ("--iters", int, "MCMC iterations M"),
    ("--burnin", int, "burn-in sweeps"),
    ("--particles", int, "SMC particle count N"),
    ("--n-pimh", int, "PIMH refresh rounds per sweep"),
    ("--horizon", int, "forecast horizon K"),
    ("--jumpoff", str, "forecast jump-off mode: fitted or actual"),
    ("--chain", str, "chain directory (forecast/dic input)"),
    ("--fan", str, "forecast directory (lifetable input)"),
    ("--year", int, "calendar year (lifetable from data)"),
    ("--p", int, "number of age groups (simulate)"),
    ("--T", int, "number of years (simulate)"),
    ("--kappa0", float, "initial period effect (simulate)"),
    ("--k", int, "number of SVD factors"),
    ("--chains", int, "number of parallel chains"),
    ("--grad-tol", float, "MLE stopping tolerance on the score sup-norm"),
    ("--max-iter", int, "MLE iteration cap"),
]


def _parse_args(argv):
    parser = argparse.ArgumentParser(prog="mortss",
                                     description="State-space mortality models")
    parser.add_argument("subcommand", choices=[
        "simulate", "svd-fit", "fit-mle", "fit-gibbs", "fit-pmcmc",
        "forecast", "lifetable", "dic"])
    parser.add_argument("--config", type=str, help="JSON config file")
    parser.add_argument("--resume", action="store_true",
                        help="no-op if the output directory is already complete")
    parser.add_argument("--dump-samples", action="store_true",
                        help="also write raw forecast samples")
    for flag, typ, help_ in _FLAGS:
        parser.add_argument(flag, type=typ, help=help_)
    parser.add_argument("--ages", type=str, help="comma-separated expectancy ages")
    parser.add_argument("--years", type=str, help="year range first:last")
    return parser.parse_args(argv)


def _merge_config(args) -> dict:
    config: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    overrides = {
        "model": args.model, "data": args.data, "out": args.out, "seed": args.seed,
        "iters": args.iters, "burnin": args.burnin, "particles": args.particles,
        "n_pimh": args.n_pimh, "horizon": args.horizon, "jumpoff": args.jumpoff,
        "chain": args.chain, "fan": args.fan, "year": args.year,
        "p": args.p, "T": args.T, "kappa0": args.kappa0, "k": args.k,
        "chains": args.chains, "grad_tol": args.grad_tol, "max_iter": args.max_iter,
    }
    if args.ages is not None:
        overrides["ages"] = [int(a) for a in args.ages.split(",")]
    if args.years is not None:
        first, last = args.years.split(":")
        overrides["year_range"] = [int(first), int(last)]
    for key, val in overrides.items():
        if val is not None:
            config[key] = val
    return config


def _require(config, key, sub):
    if key not in config or config[key] is None:
        raise ConfigError(f"'{sub}' requires '{key}' (flag or config)")
    return config[key]


def _grouping_from_config(config):
    spec = config.get("grouping", "auto")
    if spec == "default21":
        return default_grouping()
    if spec == "auto":
        return None
    return tuple(AgeGroup(int(s), int(w)) for s, w in spec)


def _infer_panel(config, sub):
    path = Path(_require(config, "data", sub))
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    grouping = _grouping_from_config(config)
    year_range = config.get("year_range")
    if grouping is None or year_range is None:
        seen_groups, seen_years = set(), set()
        import csv as _csv

        with open(path, newline="", encoding="utf-8") as fh:
            reader = _csv.reader(fh)
            next(reader, None)
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    seen_years.add(int(row[0]))
                    seen_groups.add((int(row[1]), int(row[2])))
                except (IndexError, ValueError):
                    continue
        if not seen_years:
            raise DataError(f"{path}: no usable rows")
        if grouping is None:
            grouping = tuple(AgeGroup(s, w) for s, w in sorted(seen_groups))
        if year_range is None:
            year_range = [min(seen_years), max(seen_years)]
    return load_panel(path, grouping, year_range)


def _priors_from_config(config) -> PriorSpec:
    return PriorSpec(**config.get("priors", {}))


def _seed(config, sub) -> int:
    seed = _require(config, "seed", sub)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return seed


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _panel_to_csv(panel) -> str:
    lines = ["year,age_start,age_width,rate"]
    rates = np.exp(panel.y)
    for ti, year in enumerate(panel.years):
        for gi, g in enumerate(panel.groups):
            lines.append(f"{year},{g.start},{g.width},{_f(rates[gi, ti])}")
    return "\n".join(lines) + "\n"


def _cmd_simulate(config, run: RunDir) -> None:
    kind = ModelKind.parse(_require(config, "model", "simulate"))
    if "params" not in config:
        raise ConfigError("'simulate' requires 'params' in the config")
    params = StaticParams.from_json(json.dumps(config["params"]))
    p = int(config.get("p", params.p))
    T = int(_require(config, "T", "simulate"))
    panel, latents = simulate(kind, params, p, T,
                              kappa0=float(config.get("kappa0", 0.0)),
                              seed=_seed(config, "simulate"),
                              start_year=int(config.get("start_year", 1)))
    run.write("panel.csv", _panel_to_csv(panel))
    run.write("panel.json", panel.to_json())
    cols = {"kappa": latents.kappa}
    if latents.gamma is not None:
        cols["gamma"] = np.concatenate([[np.nan], latents.gamma])
    if latents.gamma_y is not None:
        cols["gamma_y"] = np.concatenate([[np.nan], latents.gamma_y])
    if latents.zeta is not None:
        for i in range(latents.zeta.shape[0]):
            cols[f"zeta_{i}"] = latents.zeta[i]
    header = ",".join(["t"] + list(cols))
    rows = [header] + [
        ",".join([str(t)] + [repr(float(arr[t])) for arr in cols.values()])
        for t in range(T + 1)
    ]
    run.write("latents.csv", "\n".join(rows) + "\n")


def _cmd_svd_fit(config, run: RunDir) -> None:
    panel = _infer_panel(config, "svd-fit")
    k = int(config.get("k", 1))
    alpha, betas, kappas, resid = svd_fit(panel, k=k)
    out = {"alpha": alpha.tolist(),
           "beta": [b.tolist() for b in betas],
           "kappa": [kk.tolist() for kk in kappas],
           "residual_fro": float(np.linalg.norm(resid))}
    run.write("svd.json", json.dumps(out, sort_keys=True, indent=1))


def _cmd_fit_mle(config, run: RunDir) -> None:
    panel = _infer_panel(config, "fit-mle")
    kind = ModelKind.parse(config.get("model", "lc-h"))
    if kind not in (ModelKind.LC, ModelKind.LC_H):
        raise ConfigError("fit-mle supports the linear-Gaussian kinds only")
    constraints = default_constraints(panel)
    stopping = StoppingRule(grad_tol=float(config.get("grad_tol", 1e-4)),
                            max_iter=int(config.get("max_iter", 200)))
    start = default_start(panel, constraints)
    params, grad, trace = fit_mle(panel, start, stopping, constraints=constraints)
    run.write("trace.csv", "iter,loglik,grad_norm\n" + "".join(
        f"{it},{_f(ll)},{_f(gn)}\n" for it, ll, gn in trace))
    run.write("params.json", params.to_json())
    diag = np.sqrt(np.maximum(np.diag(np.linalg.inv(grad.info)), 0.0))
    run.write("fit.json", json.dumps({
        "loglik": grad.loglik,
        "grad_norm": float(np.max(np.abs(grad.score))),
        "stderr_inv_info_diag": diag.tolist(),
        "iterations": trace[-1][0],
    }, sort_keys=True, indent=1))


def _run_one_chain(args):
    (sub, panel_json, kind_tag, priors_kw, M, burnin, N, n_pimh, seed) = args
    from .data import MortalityPanel

    panel = MortalityPanel.from_json(panel_json)
    priors = PriorSpec(**priors_kw)
    if sub == "fit-gibbs":
        return gibbs_linear(panel, kind_tag, priors=priors, M=M, burnin=burnin, seed=seed)
    return gibbs_lcsv(panel, kind_tag, priors=priors, M=M, burnin=burnin,
                      N=N, N_PIMH=n_pimh, seed=seed)


def _cmd_fit_mcmc(sub, config, run: RunDir) -> None:
    panel = _infer_panel(config, sub)
    kind = ModelKind.parse(_require(config, "model", sub))
    linear = kind in (ModelKind.LC, ModelKind.LC_H)
    if sub == "fit-gibbs" and not linear:
        raise ConfigError("fit-gibbs handles LC/LC-H; use fit-pmcmc for the SV kinds")
    if sub == "fit-pmcmc" and linear:
        raise ConfigError("fit-pmcmc handles LCSV/LCSV-H; use fit-gibbs for LC/LC-H")
    M = int(config.get("iters", 15000))
    burnin = int(config.get("burnin", 5000))
    N = int(config.get("particles", 1000))
    n_pimh = int(config.get("n_pimh", 1))
    seed = _seed(config, sub)
    n_chains = int(config.get("chains", 1))
    priors_kw = config.get("priors", {})

    jobs = [(sub, panel.to_json(), kind.value, priors_kw, M, burnin, N, n_pimh,
             seed + c) for c in range(n_chains)]
    if n_chains == 1:
        chains = [_run_one_chain(jobs[0])]
    else:
        from concurrent.futures import ProcessPoolExecutor

        from ._kernels import warmup

        warmup()  # populate the JIT cache before workers compile concurrently
        workers = min(n_chains, int(os.environ.get("MORTSS_THREADS", os.cpu_count() or 1)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(_run_one_chain, jobs))

    for c, chain in enumerate(chains):
        sub_dir = run.out if n_chains == 1 else run.out / f"chain_{c:02d}"
        chain.save(sub_dir)
        prefix = "" if n_chains == 1 else f"chain_{c:02d}/"
        for name in ("params.csv", "kappa.csv", "meta.json"):
            run.add_existing(prefix + name)
        if chain.gamma is not None:
            run.add_existing(prefix + "gamma.csv")
        run.write(prefix + "summary.csv", summary_csv(summarize(chain)))


def _load_chain(config, sub) -> ChainOutput:
    chain_dir = Path(_require(config, "chain", sub))
    if not (chain_dir / "meta.json").exists():
        raise DataError(f"no chain found in {chain_dir}")
    return ChainOutput.load(chain_dir)


def _cmd_forecast(config, run: RunDir, dump_samples: bool) -> None:
    chain = _load_chain(config, "forecast")
    K = int(config.get("horizon", 30))
    jumpoff = config.get("jumpoff", "fitted")
    rng = np.random.default_rng(_seed(config, "forecast"))
    if chain.kind in (ModelKind.LC, ModelKind.LC_H):
        fan = forecast_linear(chain, K=K, rng=rng, jumpoff=jumpoff)
    else:
        fan = forecast_sv(chain, K=K, rng=rng, jumpoff=jumpoff)
    run.write("forecast.csv", fan.to_csv())
    meta = {"jumpoff": jumpoff, "K": K, "chain_id": str(config.get("chain")),
            "groups": [list(g) for g in fan.groups],
            "years": fan.years.tolist()}
    run.write("forecast_meta.json", json.dumps(meta, sort_keys=True, indent=1))
    extra = {}
    if dump_samples:
        extra["kappa"] = fan.kappa_samples
        if fan.gamma_samples is not None:
            extra["gamma"] = fan.gamma_samples
    np.savez_compressed(run.out / "forecast_samples.npz", samples=fan.samples, **extra)
    run.add_existing("forecast_samples.npz")


def _cmd_lifetable(config, run: RunDir) -> None:
    ages = config.get("ages", [0, 65, 85])
    if config.get("fan"):
        fan_dir = Path(config["fan"])
        npz = fan_dir / "forecast_samples.npz"
        meta_path = fan_dir / "forecast_meta.json"
        if not npz.exists() or not meta_path.exists():
            raise DataError(f"no forecast outputs in {fan_dir}")
        samples = np.load(npz)["samples"]
        meta = json.loads(meta_path.read_text())
        groups = tuple(AgeGroup(int(s), int(w), str(lbl)) for s, w, lbl in meta["groups"])
        fan = ForecastFan(samples=samples, kappa_samples=np.zeros(samples.shape[:2]),
                          gamma_samples=None, jumpoff_mode=meta.get("jumpoff", "fitted"),
                          jumpoff_shift=None, groups=list(groups),
                          years=np.asarray(meta["years"]))
        e_fan = life_expectancy_fan(fan, ages, groups=groups)
        lines = ["horizon,age,mean,q025,q500,q975"]
        for age in ages:
            arr = e_fan[age]
            q = np.quantile(arr, [0.025, 0.5, 0.975], axis=0)
            for k in range(arr.shape[1]):
                lines.append(f"{k + 1},{age},{_f(arr[:, k].mean())},"
                             f"{_f(q[0, k])},{_f(q[1, k])},{_f(q[2, k])}")
        run.write("life_expectancy.csv", "\n".join(lines) + "\n")
        return
    panel = _infer_panel(config, "lifetable")
    year = int(config.get("year", panel.years[-1]))
    if year not in panel.years:
        raise DataError(f"year {year} not in the panel")
    ti = int(np.nonzero(panel.years == year)[0][0])
    table = build_table(np.exp(panel.y[:, ti]), panel.groups)
    run.write("lifetable.csv", table.to_csv())


def _cmd_dic(config, run: RunDir) -> None:
    chain = _load_chain(config, "dic")
    panel = _infer_panel(config, "dic")
    result = compute_dic(chain, panel.y)
    line = result.to_json(model=chain.kind.value)
    print(line)
    run.write("dic.json", line)


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    try:
        config = _merge_config(args)
        out = Path(_require(config, "out", args.subcommand))
        run = RunDir(out, config)
        if args.resume and run.complete():
            print(f"{out} is already complete; nothing to do")
            return 0
        if args.subcommand == "simulate":
            _cmd_simulate(config, run)
        elif args.subcommand == "svd-fit":
            _cmd_svd_fit(config, run)
        elif args.subcommand == "fit-mle":
            _cmd_fit_mle(config, run)
        elif args.subcommand in ("fit-gibbs", "fit-pmcmc"):
            _cmd_fit_mcmc(args.subcommand, config, run)
        elif args.subcommand == "forecast":
            _cmd_forecast(config, run, args.dump_samples)
        elif args.subcommand == "lifetable":
            _cmd_lifetable(config, run)
        elif args.subcommand == "dic":
            _cmd_dic(config, run)
        run.finalize()
        return 0
    except DataError as exc:
        print(f"mortss: data error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"mortss: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"mortss: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
