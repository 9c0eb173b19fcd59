"""Command-line interface: ``factorsvar simulate | estimate | benchmark``.

Exit codes: 0 success, 1 other package error, 2 validation failure,
3 numerical failure, 4 infeasible restrictions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FactorSVARError, InfeasibleRegionError, NumericalError, PatternSearchExhausted, ValidationError
from .model import ChainConfig, ModelDims, PriorConfig

log = logging.getLogger("factorsvar")

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


@dataclass
class RunManifest:
    """Record of one run; ``checksums`` are SHA-256 digests of the emitted files."""

    command: str
    argv: list[str]
    config_path: str | None
    data_path: str | None
    restrictions_path: str | None
    seed: int
    output_dir: str
    settings: dict = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)

    def add(self, path: Path) -> None:
        self.checksums[path.name] = sha256(path)

    def write(self, directory: Path) -> Path:
        """Write ``manifest.json`` atomically (temp file then rename)."""
        target = directory / "manifest.json"
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=1, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    def verify(self, directory: Path) -> list[str]:
        """Names of files whose current digest differs from the recorded one."""
        return [name for name, digest in self.checksums.items() if sha256(directory / name) != digest]


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"config {path}: top level must be an object")
    return cfg


def _pick(flag, cfg: dict, key: str, default):
    return flag if flag is not None else cfg.get(key, default)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from .dgp import DgpConfig, simulate_system

    cfg_file = _read_config(args.config)
    dgp_cfg = DgpConfig().with_overrides(**cfg_file.get("dgp", {}))
    n_impact = _pick(args.impact, cfg_file, "impact", 15)
    n_shock = _pick(args.shock, cfg_file, "shock", 6)
    seed = _pick(args.seed, cfg_file, "seed", 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    system = simulate_system(dgp_cfg, n_impact, n_shock, np.random.default_rng(seed))
    paths = system.save(out)
    manifest = RunManifest(
        "simulate", list(args.argv), args.config, None, None, seed, str(out),
        {"dgp": asdict(dgp_cfg), "impact": n_impact, "shock": n_shock},
    )
    for p in paths.values():
        manifest.add(p)
    manifest.write(out)
    print(f"wrote {', '.join(p.name for p in paths.values())} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate


def _prior_from(cfg: dict) -> PriorConfig:
    raw = dict(cfg.get("prior", {}))
    for key in ("loading_mean", "loading_cov"):
        if isinstance(raw.get(key), list):
            raw[key] = np.asarray(raw[key], dtype=float)
    try:
        return PriorConfig(**raw)
    except TypeError as exc:
        raise ValidationError(f"bad prior settings: {exc}") from None


def cmd_estimate(args) -> int:
    from .io import load_dataset_csv, load_restrictions
    from .sampler import run_gibbs
    from .structural import summarize_chain, write_long_csv

    if args.data is None:
        raise ValidationError("--data is required")
    cfg = _read_config(args.config)
    transforms = cfg.get("transforms")
    data = load_dataset_csv(args.data)
    if transforms:
        unknown = set(transforms) - set(data.names)
        if unknown:
            raise ValidationError(f"transforms name unknown variables: {sorted(unknown)}")
        tags = [transforms.get(name, "identity") for name in data.names]
        data = type(data).from_raw(data.values, data.names, data.time_index, tags)
    p = int(_pick(args.lags, cfg, "p", 4))
    restr, shocks = None, None
    r = _pick(args.shocks, cfg, "r", None)
    if args.restrictions is not None:
        restr, shocks = load_restrictions(args.restrictions, data, p, r)
        r = len(shocks)
    if r is None:
        raise ValidationError("number of shocks unknown; pass --shocks, set 'r' in the config or give restrictions")
    shocks = shocks or [f"shock{j + 1}" for j in range(int(r))]
    dims = ModelDims(data.shape[1], p, int(r), data.shape[0])
    chain_cfg = ChainConfig(
        int(_pick(args.iters, cfg, "n_iter", 6000)),
        int(_pick(args.burnin, cfg, "burn_in", 1000)),
        int(_pick(args.thin, cfg, "thin", 10)),
        int(_pick(args.seed, cfg, "seed", 0)),
    )
    horizon = int(_pick(args.horizon, cfg, "horizon", 20))
    threads = int(_pick(args.threads, cfg, "threads", 1))
    renorm = bool(args.renormalize_shocks or cfg.get("renormalize_shocks", False))
    underid = bool(args.allow_underidentified or cfg.get("allow_underidentified", False))
    prior = _prior_from(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    chain = run_gibbs(chain_cfg, dims, data, restr, prior, threads=threads, allow_underidentified=underid)
    elapsed = time.perf_counter() - t0
    summary = summarize_chain(chain.draws, data, horizon, renormalize_shocks=renorm)

    files = [out / "chain.npz", out / "irf.csv", out / "fevd.csv", out / "hd.csv", out / "summary.json"]
    chain.save(files[0])
    q = summary.quantiles
    write_long_csv(files[1], q["irf"], "horizon", data.names, shocks)
    write_long_csv(files[2], q["fevd"], "horizon", data.names, [*shocks, "idiosyncratic"])
    labels = data.time_index[p:]
    write_long_csv(files[3], q["hd"], "time", data.names, shocks, labels)
    flags = np.asarray(chain.uniqueness_flags, dtype=bool)
    files[4].write_text(json.dumps(
        {
            "retained_draws": len(chain),
            "uniqueness_rate": float(flags.mean()) if flags.size else float("nan"),
            "unique_draws": int(flags.sum()),
            "shocks": shocks,
            "variables": list(data.names),
            "restriction_rows": restr.counts() if restr is not None else {},
        },
        indent=1,
    ) + "\n")
    if args.plot:
        files += _plot_irf(q["irf"], data.names, shocks, out)

    settings = {
        "dims": asdict(dims), "chain": asdict(chain_cfg), "horizon": horizon, "threads": threads,
        "renormalize_shocks": renorm, "allow_underidentified": underid,
    }
    manifest = RunManifest(
        "estimate", list(args.argv), args.config, args.data, args.restrictions, chain_cfg.seed, str(out), settings
    )
    for f in files:
        manifest.add(f)
    manifest.write(out)
    print(f"{len(chain)} draws in {elapsed:.2f}s; unique sign patterns in {flags.mean():.1%} of draws; outputs in {out}")
    return EXIT_OK


def _plot_irf(bands, variables, shocks, out: Path) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plots")
        return []
    H, n, r = bands["median"].shape
    fig, axes = plt.subplots(n, r, figsize=(2.2 * r, 1.6 * n), squeeze=False, sharex=True)
    h = np.arange(H)
    for i in range(n):
        for j in range(r):
            ax = axes[i, j]
            ax.fill_between(h, bands["lower"][:, i, j], bands["upper"][:, i, j], alpha=0.3, lw=0)
            ax.plot(h, bands["median"][:, i, j], lw=1)
            ax.axhline(0, color="k", lw=0.5)
            if i == 0:
                ax.set_title(shocks[j], fontsize=7)
            if j == 0:
                ax.set_ylabel(variables[i], fontsize=7)
            ax.tick_params(labelsize=6)
    fig.tight_layout()
    path = out / "irf.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


# ---------------------------------------------------------------------------
# benchmark


def _parse_grid(text: str) -> tuple[tuple[int, int], ...]:
    try:
        cells = tuple(tuple(int(x) for x in item.split(":")) for item in text.split(","))
    except ValueError:
        raise ValidationError(f"bad grid {text!r}; expected e.g. 15:0,15:3,15:6") from None
    if any(len(c) != 2 for c in cells):
        raise ValidationError(f"bad grid {text!r}; expected impact:shock pairs")
    return cells


def cmd_benchmark(args) -> int:
    from .baseline import BaselineConfig, BenchmarkTask, benchmark

    cfg = _read_config(args.config)
    grid = _parse_grid(args.grid) if args.grid else tuple(tuple(c) for c in cfg.get("configs", ((15, 0), (15, 3), (15, 6))))
    task = BenchmarkTask(
        configs=grid,
        replications=int(_pick(args.replications, cfg, "replications", 10)),
        target_draws=int(cfg.get("target_draws", 100)),
        burn_in=int(_pick(args.burnin, cfg, "burn_in", 1000)),
        thin=int(_pick(args.thin, cfg, "thin", 10)),
        seed=int(_pick(args.seed, cfg, "seed", 0)),
        timeout_seconds=_pick(args.timeout, cfg, "timeout_seconds", 600.0),
        baseline=BaselineConfig(**cfg.get("baseline", {})),
        dgp_overrides=cfg.get("dgp", {}),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = benchmark(task, progress=lambda msg: print(msg, flush=True))
    csv_path, txt_path = out / "benchmark.csv", out / "benchmark.txt"
    report.write_csv(csv_path)
    txt_path.write_text(report.table() + "\n")
    print(report.table())
    settings = asdict(task)
    manifest = RunManifest("benchmark", list(args.argv), args.config, None, None, task.seed, str(out), settings)
    manifest.add(csv_path)
    manifest.add(txt_path)
    manifest.write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorsvar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON settings file; flags take precedence")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="output directory")

    s = sub.add_parser("simulate", help="generate a synthetic dataset, truth and restrictions")
    common(s)
    s.add_argument("--impact", type=int, help="number of impact sign restrictions (default 15)")
    s.add_argument("--shock", type=int, help="number of shock sign restrictions (default 6)")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the sampler and write structural summaries")
    common(e)
    e.add_argument("--data", help="CSV with a leading date column")
    e.add_argument("--restrictions", help="restriction JSON file")
    e.add_argument("--lags", type=int, help="VAR lag order p (default 4)")
    e.add_argument("--shocks", type=int, help="number of shocks when no restriction file names them")
    e.add_argument("--iters", type=int)
    e.add_argument("--burnin", type=int)
    e.add_argument("--thin", type=int)
    e.add_argument("--horizon", type=int)
    e.add_argument("--threads", type=int)
    e.add_argument("--renormalize-shocks", action="store_true", help="FEVD shares over structural shocks only")
    e.add_argument("--allow-underidentified", action="store_true", help="waive the r <= (n-1)/2 check")
    e.add_argument("--plot", action="store_true", help="also write irf.png")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="time the sampler against the accept-reject baseline")
    common(b)
    b.add_argument("--grid", help="impact:shock pairs, e.g. 15:0,15:3,15:6")
    b.add_argument("--replications", type=int)
    b.add_argument("--burnin", type=int)
    b.add_argument("--thin", type=int)
    b.add_argument("--timeout", type=float, help="per-dataset baseline ceiling in seconds")
    b.set_defaults(func=cmd_benchmark)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (InfeasibleRegionError, PatternSearchExhausted)):
        return EXIT_INFEASIBLE
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_ERROR


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FactorSVARError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
