"""Command-line pipeline: simulate fixtures, run inference, evaluate, plot.

Exit codes are stable: 0 ok, 2 config error, 3 I/O error, 4 filter/chain
degeneracy, 5 evaluation failure. Every command writes (or extends) a
manifest.json listing each output file with its content hash; the `verify`
command re-hashes a run directory against it.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .abc_filter import (
    AbcConfig,
    FilterDegeneracyError,
    kernel_bandwidths,
    run_filter,
)
from .data_io import (
    ConfigError,
    CsvFormatError,
    RateSchedule,
    from_minutes,
    load_config,
    parse_datetime,
    parse_ground_truth,
    parse_payments,
    payments_to_observations,
    read_trajectory_csv,
    scenario_from_config,
    simulate_scenario,
    write_payments_csv,
    write_trajectory_csv,
    write_truth_csv,
)
from .estimators import (
    CoverageError,
    GroundTruth,
    OverlapError,
    cruising_stats,
    evaluation_report,
    parameter_posterior_summary,
    trajectory_quantiles,
)
from .pmmh_sampler import (
    BetaPrior,
    FixedValue,
    LogNormalPrior,
    PmmhConfig,
    PriorSpec,
    ZeroAcceptanceError,
    map_estimate,
    pooled_trajectories,
    read_chain_csv,
    run_pmmh,
    write_chain_csv,
)
from .queue_core import occupancy_profile, path_to_csv
from .state_model import ModelParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4
EXIT_EVAL = 5

DESK_PARTICLES = 20_000
PAPER_PARTICLES = 600_000
DESK_PSEUDO = 64

logger = logging.getLogger(__name__)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonify(dataclasses.asdict(obj))
    return obj


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonify(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, command, config_echo, seed, started, outputs, extra=None):
    """manifest.json: config echo, seed, version, backend, runtime, hashes."""
    out_dir = Path(out_dir)
    entry = {
        "command": command,
        "version": __version__,
        "backend": _kernels.backend_name(_kernels.get_backend()),
        "config": config_echo,
        "seed": seed,
        "runtime_seconds": round(time.monotonic() - started, 3),
        "outputs": {name: _sha256(out_dir / name) for name in sorted(outputs)},
    }
    if extra:
        entry.update(extra)
    _write_json(out_dir / "manifest.json", entry)


def _merge_manifest(out_dir, command, new_outputs, started):
    """Extend an existing manifest with more outputs (used by `report`)."""
    out_dir = Path(out_dir)
    man_path = out_dir / "manifest.json"
    if man_path.exists():
        with open(man_path, encoding="utf-8") as fh:
            entry = json.load(fh)
    else:
        entry = {
            "command": command,
            "version": __version__,
            "backend": _kernels.backend_name(_kernels.get_backend()),
            "config": {},
            "seed": None,
            "outputs": {},
        }
    entry["outputs"].update({n: _sha256(out_dir / n) for n in new_outputs})
    entry["outputs"] = {k: entry["outputs"][k] for k in sorted(entry["outputs"])}
    entry["last_command"] = command
    entry["runtime_seconds"] = round(time.monotonic() - started, 3)
    _write_json(man_path, entry)


def cmd_simulate(args):
    started = time.monotonic()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = {**cfg, "seed": args.seed}
    sc = scenario_from_config(cfg)
    res = simulate_scenario(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epoch = sc.origin

    pay_times = [o.pay_time for o in res.observations]
    write_payments_csv(
        out / "payments.csv", sc.block_id, pay_times, res.amounts, epoch
    )
    write_truth_csv(out / "truth_snapshots.csv", sc.block_id, res.truth, epoch)
    at_pay = GroundTruth(
        snapshot_times=pay_times,
        occupied=occupancy_profile(res.true_path, np.asarray(pay_times)),
        capacity=np.full(len(pay_times), sc.theta.spaces, dtype=np.int64),
    )
    write_truth_csv(out / "truth_at_payments.csv", sc.block_id, at_pay, epoch)
    path_to_csv(res.true_path, out / "true_path.csv")

    outputs = [
        "payments.csv",
        "truth_snapshots.csv",
        "truth_at_payments.csv",
        "true_path.csv",
    ]
    write_manifest(out, "simulate", cfg, cfg.get("seed"), started, outputs)
    print(f"simulate: wrote {len(res.observations)} payments to {out}")
    return EXIT_OK


def _theta_from_cfg(raw, what):
    try:
        return ModelParams(
            lam=float(raw["lambda"]),
            mean_parking=float(raw["mean_parking"]),
            compliance=float(raw["compliance"]),
            spaces=int(raw["spaces"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{what} is missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def _filter_cfg_from(cfg, paper_scale):
    raw = dict(cfg.get("filter", {}))
    num = int(raw.pop("num_particles", DESK_PARTICLES))
    if paper_scale:
        num = PAPER_PARTICLES
    override = raw.pop("bandwidth_override", None)
    try:
        return AbcConfig(
            num_particles=num,
            num_pseudo_obs=int(raw.pop("num_pseudo_obs", DESK_PSEUDO)),
            kernel_bandwidth_const=float(raw.pop("kernel_bandwidth_const", 1.0)),
            ess_threshold=float(raw.pop("ess_threshold", 0.5)),
            bandwidth_override=tuple(override) if override else None,
            resampling=str(raw.pop("resampling", "multinomial")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid filter config: {exc}") from exc
    finally:
        if raw:
            logger.warning("ignoring unknown filter config keys: %s", sorted(raw))


def _prior_from_cfg(raw, default, name):
    if raw is None:
        return default
    kind = str(raw.get("type", "")).lower()
    try:
        if kind == "fixed":
            return FixedValue(float(raw["value"]))
        if kind == "lognormal":
            return LogNormalPrior(
                float(raw.get("log_median", 0.0)), float(raw.get("sd", 1.0))
            )
        if kind == "beta":
            return BetaPrior(float(raw.get("a", 2.0)), float(raw.get("b", 2.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid prior for {name}: {exc}") from exc
    raise ConfigError(f"unknown prior type {kind!r} for {name}")


def _observations_from_file(args, cfg):
    records = parse_payments(args.obs)
    if not records:
        raise ConfigError("observation file has no payment rows")
    blocks = sorted({r.block_id for r in records})
    block = cfg.get("block_id")
    if block is None:
        if len(blocks) != 1:
            raise ConfigError(f"multiple blocks {blocks} present; set block_id")
        block = blocks[0]
    block = str(block)
    mine = [r for r in records if r.block_id == block]
    if not mine:
        raise ConfigError(f"no payments for block {block}")
    if "window" in cfg:
        try:
            start = parse_datetime(cfg["window"][0])
            end = parse_datetime(cfg["window"][1])
        except (ValueError, IndexError, TypeError) as exc:
            raise ConfigError(f"invalid window: {exc}") from exc
    else:
        first = min(r.timestamp for r in mine)
        start = first.replace(minute=0, second=0, microsecond=0)
        end = max(r.timestamp for r in mine)
    amount_unit = args.amount_unit or cfg.get("amount_unit", "dollars")
    rates = None
    if "rates" in cfg:
        try:
            rates = RateSchedule.from_config(cfg["rates"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid rates: {exc}") from exc
    obs = payments_to_observations(
        records, rates, block, (start, end), amount_unit=amount_unit
    )
    if not obs:
        raise ConfigError("no observations inside the window")
    return obs, block, start


def _filter_summary(result, cfg_echo):
    last = result.observations[-1].pay_time
    cruise = cruising_stats(result.trajectories, (0.0, last))
    return {
        "log_likelihood": result.log_likelihood,
        "num_particles": result.config.num_particles,
        "num_pseudo_obs": result.config.num_pseudo_obs,
        "eps_pay_time": result.bandwidths[0],
        "eps_balance": result.bandwidths[1],
        "eps_balance_rule": (
            "fixed" if result.config.bandwidth_override else "per-particle floor"
        ),
        "ess_min": float(result.ess_history.min()),
        "ess_mean": float(result.ess_history.mean()),
        "num_resampled_steps": len(result.resampled_steps),
        "num_observations": len(result.observations),
        "cruising_summary": dataclasses.asdict(cruise),
        "config_echo": cfg_echo,
    }


def cmd_infer(args):
    started = time.monotonic()
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    obs, block, window_start = _observations_from_file(args, cfg)
    fcfg = _filter_cfg_from(cfg, args.paper_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # thread count is run metadata, not config: results must not depend on it,
    # so it stays out of the echo embedded in hashed outputs
    cfg_echo = {
        **cfg,
        "mode": args.mode,
        "paper_scale": bool(args.paper_scale),
        "block_id": block,
    }
    pay_times = np.array([o.pay_time for o in obs])

    if args.mode == "filter":
        if "theta" not in cfg:
            raise ConfigError("filter mode needs a theta section")
        theta = _theta_from_cfg(cfg["theta"], "theta")
        result = run_filter(obs, theta, fcfg, seed=seed)
        write_trajectory_csv(
            out / "trajectory_quantiles.csv", result.band, window_start
        )
        with open(out / "ess_history.csv", "w", newline="") as fh:
            fh.write("step,time,ess,log_factor,resampled\n")
            resampled = set(result.resampled_steps)
            for k, ob in enumerate(result.observations):
                stamp = from_minutes(ob.pay_time, window_start).isoformat(sep=" ")
                fh.write(
                    f"{k},{stamp},{result.ess_history[k]!r},"
                    f"{result.step_log_factors[k]!r},{int(k in resampled)}\n"
                )
        _write_json(out / "summary.json", _filter_summary(result, cfg_echo))
        outputs = ["trajectory_quantiles.csv", "ess_history.csv", "summary.json"]
        write_manifest(out, "infer", cfg_echo, seed, started, outputs,
                       extra={"threads": args.threads})
        print(
            f"infer(filter): log-likelihood {result.log_likelihood:.3f}, "
            f"{len(result.resampled_steps)} resampling steps"
        )
        return EXIT_OK

    # pmmh mode
    praw = dict(cfg.get("pmmh", {}))
    prior_spec = PriorSpec(
        lam=_prior_from_cfg(praw.get("priors", {}).get("lambda"), PriorSpec.lam, "lambda"),
        mean_parking=_prior_from_cfg(
            praw.get("priors", {}).get("mean_parking"), PriorSpec.mean_parking,
            "mean_parking",
        ),
        compliance=_prior_from_cfg(
            praw.get("priors", {}).get("compliance"), PriorSpec.compliance,
            "compliance",
        ),
    )
    if "spaces" not in cfg:
        raise ConfigError("pmmh mode needs a top-level spaces field")
    init_theta = (
        _theta_from_cfg(praw["init"], "pmmh init") if "init" in praw else None
    )
    try:
        pcfg = PmmhConfig(
            num_accepts_burn_in=int(praw.get("num_accepts_burn_in", 200)),
            num_accepts_post=int(praw.get("num_accepts_post", 3800)),
            max_iterations=int(praw.get("max_iterations", 50_000)),
            prior_spec=prior_spec,
            proposal_init_scale=praw.get("proposal_init_scale", 0.15),
            adapt=bool(praw.get("adapt", True)),
            filter_cfg=fcfg,
            seed=seed,
            spaces=int(cfg["spaces"]),
            init_theta=init_theta,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid pmmh config: {exc}") from exc

    chain = run_pmmh(obs, pcfg)
    write_chain_csv(chain, out / "chain.csv")
    post = [s for s in chain if not s.burn_in and s.trajectory is not None]
    if not post:
        raise ZeroAcceptanceError("chain produced no post-burn-in samples")
    band = trajectory_quantiles(pooled_trajectories(chain), pay_times)
    write_trajectory_csv(out / "trajectory_quantiles.csv", band, window_start)
    best = map_estimate(chain)
    path_to_csv(best.trajectory, out / "map_trajectory.csv")

    summary = parameter_posterior_summary([s.theta for s in post])
    hist_files = _write_histograms(out, summary)
    accepts_post = sum(1 for s in post if s.accepted)
    eps = kernel_bandwidths(fcfg, obs)
    _write_json(
        out / "posterior_summary.json",
        {
            "marginals": summary["marginals"],
            "num_post_samples": summary["n"],
            "acceptance_rate_post": accepts_post / len(post),
            "num_iterations": chain[-1].iteration,
            "num_accepts": sum(1 for s in chain if s.accepted),
            "map": {
                "lambda": best.theta.lam,
                "mean_parking": best.theta.mean_parking,
                "p": best.theta.compliance,
                "log_likelihood": best.log_likelihood,
                "iteration": best.iteration,
            },
            "num_particles": fcfg.num_particles,
            "num_pseudo_obs": fcfg.num_pseudo_obs,
            "eps_pay_time": eps[0],
            "eps_balance_floor": eps[2] if eps[3] < 0 else eps[3],
            "config_echo": cfg_echo,
        },
    )
    outputs = [
        "chain.csv",
        "trajectory_quantiles.csv",
        "map_trajectory.csv",
        "posterior_summary.json",
    ] + hist_files
    write_manifest(out, "infer", cfg_echo, seed, started, outputs,
                   extra={"threads": args.threads})
    print(
        f"infer(pmmh): {sum(1 for s in chain if s.accepted)} accepts in "
        f"{chain[-1].iteration} iterations; MAP lambda {best.theta.lam:.3f}, "
        f"mean parking {best.theta.mean_parking:.3f}, p {best.theta.compliance:.3f}"
    )
    return EXIT_OK


def _write_histograms(out, summary):
    names = {"lambda": "lambda", "mean_parking": "mean_parking", "compliance": "p"}
    files = []
    for (na, nb), grid in summary["pairs"].items():
        fname = f"hist_{names[na]}_{names[nb]}.csv"
        with open(out / fname, "w", newline="") as fh:
            fh.write("x_low,x_high,y_low,y_high,count\n")
            xe, ye, counts = grid["x_edges"], grid["y_edges"], grid["counts"]
            for i in range(counts.shape[0]):
                for j in range(counts.shape[1]):
                    fh.write(
                        f"{xe[i]!r},{xe[i + 1]!r},{ye[j]!r},{ye[j + 1]!r},"
                        f"{int(counts[i, j])}\n"
                    )
        files.append(fname)
    return files


def cmd_evaluate(args):
    started = time.monotonic()
    traj, epoch = read_trajectory_csv(args.traj)
    truth_by_block, _ = parse_ground_truth(args.truth, epoch=epoch)
    if not truth_by_block:
        raise CsvFormatError([(2, "no snapshots")], "truth file")
    if len(truth_by_block) > 1:
        raise ConfigError(
            f"truth file holds blocks {sorted(truth_by_block)}; supply one block"
        )
    truth = next(iter(truth_by_block.values()))
    report = evaluation_report(traj, truth)
    report["cruising_summary"] = None  # needs path-level output, not a band CSV
    report["config_echo"] = {"traj": str(args.traj), "truth": str(args.truth)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "evaluation_report.json", report)
    write_manifest(
        out, "evaluate", report["config_echo"], None, started,
        ["evaluation_report.json"],
    )
    print(
        f"evaluate: rmse {report['rmse_cars']:.3f} cars, "
        f"coverage {report['coverage_fraction_05_95']:.3f}"
    )
    return EXIT_OK


def _setup_svg_determinism():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "meterflow"
    return matplotlib


def cmd_report(args):
    started = time.monotonic()
    run_dir = Path(args.run_dir)
    traj_path = run_dir / "trajectory_quantiles.csv"
    if not traj_path.exists():
        raise FileNotFoundError(f"{traj_path} not found")
    traj, epoch = read_trajectory_csv(traj_path)

    truth = None
    truth_path = Path(args.truth) if args.truth else None
    if truth_path is None:
        for cand in ("truth_at_payments.csv", "truth_snapshots.csv"):
            if (run_dir / cand).exists():
                truth_path = run_dir / cand
                break
    if truth_path is not None and truth_path.exists():
        blocks, _ = parse_ground_truth(truth_path, epoch=epoch)
        if len(blocks) == 1:
            truth = next(iter(blocks.values()))

    matplotlib = _setup_svg_determinism()
    import matplotlib.pyplot as plt

    new_files = []
    fig, ax = plt.subplots(figsize=(8, 4.5))
    t = traj.eval_times
    ax.fill_between(t, traj.quantiles[0.05], traj.quantiles[0.95],
                    alpha=0.25, color="tab:blue", label="5-95%")
    ax.fill_between(t, traj.quantiles[0.25], traj.quantiles[0.75],
                    alpha=0.45, color="tab:blue", label="25-75%")
    ax.plot(t, traj.quantiles[0.5], color="tab:blue", label="median")
    if truth is not None:
        ax.plot(truth.snapshot_times, truth.occupied, color="black",
                drawstyle="steps-post", label="truth")
    ax.set_xlabel("minutes from window start")
    ax.set_ylabel("occupied spaces")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(run_dir / "occupancy.svg", metadata={"Date": None})
    plt.close(fig)
    new_files.append("occupancy.svg")

    chain_path = run_dir / "chain.csv"
    if chain_path.exists():
        chain = read_chain_csv(chain_path)
        pairs = (
            ("lambda", "mean_parking"),
            ("lambda", "p"),
            ("mean_parking", "p"),
        )
        for xa, xb in pairs:
            fig, ax = plt.subplots(figsize=(4.5, 4))
            ax.hist2d(chain[xa], chain[xb], bins=40, cmap="viridis")
            ax.set_xlabel(xa)
            ax.set_ylabel(xb)
            fig.tight_layout()
            name = f"hist_{xa}_{xb}.svg"
            fig.savefig(run_dir / name, metadata={"Date": None})
            plt.close(fig)
            new_files.append(name)

    _merge_manifest(run_dir, "report", new_files, started)
    print(f"report: wrote {', '.join(new_files)} in {run_dir}")
    return EXIT_OK


def cmd_verify(args):
    run_dir = Path(args.run_dir)
    man_path = run_dir / "manifest.json"
    if not man_path.exists():
        raise FileNotFoundError(f"{man_path} not found")
    with open(man_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    bad = 0
    for name, recorded in sorted(manifest.get("outputs", {}).items()):
        target = run_dir / name
        if not target.exists():
            print(f"MISSING {name}")
            bad += 1
            continue
        actual = _sha256(target)
        if actual != recorded:
            print(f"MISMATCH {name}")
            bad += 1
        else:
            print(f"OK {name}")
    if bad:
        print(f"verify: {bad} problem(s)")
        return EXIT_EVAL
    print("verify: all outputs match the manifest")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meterflow",
        description="Block-level parking occupancy estimation from meter payments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic fixture")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_inf = sub.add_parser("infer", help="run the filter or the full chain")
    p_inf.add_argument("--obs", required=True)
    p_inf.add_argument("--config", required=True)
    p_inf.add_argument("--out", required=True)
    p_inf.add_argument("--mode", choices=("filter", "pmmh"), default="filter")
    p_inf.add_argument("--seed", type=int, default=None)
    p_inf.add_argument("--threads", type=int, default=1,
                       help="worker cap; never changes results")
    p_inf.add_argument("--paper-scale", action="store_true",
                       help=f"use {PAPER_PARTICLES} particles")
    p_inf.add_argument("--amount-unit", choices=("dollars", "minutes"), default=None)
    p_inf.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("evaluate", help="score a trajectory against truth")
    p_eval.add_argument("--traj", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_rep = sub.add_parser("report", help="render static SVG plots for a run")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--truth", default=None)
    p_rep.set_defaults(func=cmd_report)

    p_ver = sub.add_parser("verify", help="re-hash outputs against the manifest")
    p_ver.add_argument("run_dir")
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CsvFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_IO
    except IsADirectoryError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FilterDegeneracyError as exc:
        print(f"degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ZeroAcceptanceError as exc:
        print(f"chain failure: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OverlapError, CoverageError) as exc:
        print(f"evaluation failure: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
