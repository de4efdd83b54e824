"""Command-line entry point: ``run``, ``simulate`` and ``score`` subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import io
from .diagnostics import DegenerateSeries, gelman_rubin
from .evaluate import model_select
from .model import ModelParams
from .sampler import SamplerConfig, run
from .simulate import SimulationSpec, simulate_dataset

logger = logging.getLogger("phyloclone")


@dataclass
class RunManifest:
    counts: str
    depths: str
    clones: list
    seeds: list
    outdir: str
    config: SamplerConfig = field(default_factory=SamplerConfig)
    params: ModelParams = field(default_factory=ModelParams)
    truth: Optional[str] = None
    near_tie: float = 1.0
    jobs: int = 1

    def __post_init__(self):
        self.clones = [int(k) for k in self.clones]
        self.seeds = [int(s) for s in self.seeds]
        if not self.clones:
            raise ValueError("empty clone-count range")
        if min(self.clones) < 2:
            raise ValueError("clone counts must be at least 2")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("replicate seeds must be distinct and non-empty")
        if isinstance(self.config, dict):
            self.config = SamplerConfig(**self.config)
        if isinstance(self.params, dict):
            self.params = ModelParams(**self.params)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["config"]["frozen"] = list(self.config.frozen)
        return doc

    @classmethod
    def from_file(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _run_one(job):
    data, K, params, config, outdir, truth = job
    trace, est = run(data, K, params, config)
    io.save_outputs(trace, est, outdir, data=data, truth=truth)
    return est, trace.log_posterior


def run_analysis(manifest: RunManifest) -> int:
    """Fit every K and replicate, then write ``summary.json``.  Returns an exit code."""
    out = Path(manifest.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=1) + "\n")
    data = io.load_counts(manifest.counts, manifest.depths)
    truth = io.load_truth(manifest.truth) if manifest.truth else None

    jobs, keys = [], []
    for K in manifest.clones:
        for r, seed in enumerate(manifest.seeds):
            cfg = SamplerConfig(**{**asdict(manifest.config), "seed": seed})
            jobs.append((data, K, manifest.params, cfg, out / f"K{K}" / f"rep{r + 1}", truth))
            keys.append((K, r))

    results, failed = {}, 0
    if manifest.jobs > 1:
        with ProcessPoolExecutor(manifest.jobs) as pool:
            futures = [pool.submit(_run_one, job) for job in jobs]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported and counted
                    outcomes.append(exc)
    else:
        outcomes = []
        for job in jobs:
            logger.info("fitting K=%d into %s", job[1], job[4])
            try:
                outcomes.append(_run_one(job))
            except Exception as exc:  # noqa: BLE001
                outcomes.append(exc)
    for key, res in zip(keys, outcomes):
        if isinstance(res, Exception):
            logger.error("run K=%d replicate %d failed: %s", key[0], key[1] + 1, res)
            failed += 1
        else:
            results[key] = res

    summary = {"candidates": {}, "selected_K": None}
    firsts = []
    for K in manifest.clones:
        entry = {}
        reps = [results[(K, r)] for r in range(len(manifest.seeds)) if (K, r) in results]
        if (K, 0) in results:
            est = results[(K, 0)][0]
            firsts.append((K, est))
            entry.update(log_posterior=est.log_posterior, log_likelihood=est.log_likelihood)
            if truth is not None:
                entry["scores"] = io.score(est, truth)
        if len(reps) >= 2:
            try:
                entry["psrf"] = gelman_rubin([lp for _, lp in reps])
            except (DegenerateSeries, ValueError) as exc:
                logger.warning("PSRF unavailable for K=%d: %s", K, exc)
                entry["psrf"] = None
        summary["candidates"][str(K)] = entry
    if firsts:
        summary["selected_K"] = model_select(firsts, near_tie=manifest.near_tie)
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    logger.info("selected K=%s", summary["selected_K"])
    return 1 if failed else 0


# ----------------------------------------------------------------------------
# argument parsing


def parse_clones(text: str) -> list:
    """``"4"`` or ``"3..5"`` to a list of clone counts."""
    if ".." in text:
        lo, hi = (int(v) for v in text.split("..", 1))
        return list(range(lo, hi + 1))
    return [int(text)]


def _add_model_flags(p):
    d = ModelParams()
    g = p.add_argument_group("model")
    g.add_argument("--mu", type=float, default=d.mu)
    g.add_argument("--rho", type=float, default=d.rho)
    g.add_argument("--nu", type=float, default=d.nu)
    g.add_argument("--delta", type=float, default=None, help="default 1/(2K)")
    g.add_argument("--epsilon-seq", type=float, default=d.epsilon_seq)
    g.add_argument("--gamma-prior-shape", type=float, default=d.gamma_prior_shape)
    g.add_argument("--gamma-prior-rate", type=float, default=d.gamma_prior_rate)
    g.add_argument("--s-prior-shape", type=float, default=d.s_prior_shape)
    g.add_argument("--s-prior-rate", type=float, default=d.s_prior_rate)


def _add_sampler_flags(p):
    d = SamplerConfig()
    g = p.add_argument_group("sampler")
    g.add_argument("--iterations", type=int, default=d.iterations)
    g.add_argument("--chains", type=int, default=d.n_chains)
    g.add_argument("--delta-t", type=float, default=d.delta_T)
    g.add_argument("--swap-interval", type=int, default=d.swap_interval)
    g.add_argument("--burn-in", type=float, default=d.burn_in_fraction)
    g.add_argument("--thin", type=int, default=d.thin)
    g.add_argument("--theta", type=float, default=d.theta_flip)
    g.add_argument("--psi", type=float, default=d.psi)
    g.add_argument("--proposal-bias", type=float, default=d.proposal_bias)
    g.add_argument("--sigma-s", type=float, default=d.sigma_s)
    g.add_argument("--sigma-gamma", type=float, default=d.sigma_gamma)
    g.add_argument("--parent-swap-prob", type=float, default=d.parent_swap_prob)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phyloclone",
                                     description="Phylogenetic clonal deconvolution by MCMCMC.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="fit one or more clone counts")
    p.add_argument("--manifest", help="JSON run manifest; replaces all other run flags")
    p.add_argument("--counts")
    p.add_argument("--depths")
    p.add_argument("--clones", default="4", help="K or lo..hi")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="seed of replicate 1; others follow")
    p.add_argument("--out", default="phyloclone-out")
    p.add_argument("--truth", help="ground-truth JSON for scoring")
    p.add_argument("--near-tie", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    _add_sampler_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("simulate", help="write a synthetic dataset and its truth")
    p.add_argument("--mutations", "-J", type=int, default=100)
    p.add_argument("--samples", "-T", type=int, default=5)
    p.add_argument("--clones", "-K", type=int, default=4)
    p.add_argument("--mean-depth", type=float, default=200.0)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--nu", type=float, default=0.9)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--epsilon-seq", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score a saved MAP estimate against a truth file")
    p.add_argument("--map", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="write scores JSON here as well as to stdout")
    return parser


def manifest_from_args(args, parser) -> RunManifest:
    if args.manifest:
        return RunManifest.from_file(args.manifest)
    if not args.counts or not args.depths:
        parser.error("run needs --counts and --depths (or --manifest)")
    try:
        clones = parse_clones(args.clones)
    except ValueError:
        parser.error(f"cannot parse --clones {args.clones!r}")
    if not clones:
        parser.error(f"empty clone range {args.clones!r}")
    if args.replicates < 1:
        parser.error("--replicates must be at least 1")
    config = SamplerConfig(
        iterations=args.iterations, n_chains=args.chains, delta_T=args.delta_t,
        swap_interval=args.swap_interval, burn_in_fraction=args.burn_in, thin=args.thin,
        theta_flip=args.theta, psi=args.psi, proposal_bias=args.proposal_bias,
        sigma_s=args.sigma_s, sigma_gamma=args.sigma_gamma,
        parent_swap_prob=args.parent_swap_prob, seed=args.seed,
    )
    params = ModelParams(
        mu=args.mu, rho=args.rho, nu=args.nu, delta=args.delta, epsilon_seq=args.epsilon_seq,
        gamma_prior_shape=args.gamma_prior_shape, gamma_prior_rate=args.gamma_prior_rate,
        s_prior_shape=args.s_prior_shape, s_prior_rate=args.s_prior_rate,
    )
    return RunManifest(
        counts=args.counts, depths=args.depths, clones=clones,
        seeds=[args.seed + r for r in range(args.replicates)], outdir=args.out,
        config=config, params=params, truth=args.truth, near_tie=args.near_tie, jobs=args.jobs,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")

    if args.command == "run":
        try:
            manifest = manifest_from_args(args, parser)
        except ValueError as exc:
            parser.error(str(exc))
        try:
            return run_analysis(manifest)
        except (OSError, ValueError) as exc:
            print(f"phyloclone: {exc}", file=sys.stderr)
            return 1

    if args.command == "simulate":
        spec = SimulationSpec(J=args.mutations, T=args.samples, K=args.clones,
                              mean_depth=args.mean_depth, mu=args.mu, rho=args.rho, nu=args.nu,
                              gamma_sym=args.gamma, epsilon_seq=args.epsilon_seq, seed=args.seed)
        data, truth = simulate_dataset(spec)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.save_dataset(data, out / "counts.tsv", out / "depths.tsv")
        io.save_truth(truth, out / "truth.json")
        return 0

    if args.command == "score":
        scores = io.score(io.load_map(args.map), io.load_truth(args.truth))
        text = json.dumps(scores, indent=1)
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
