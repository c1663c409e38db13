"""Command line entry point (``dmpsc``)."""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import orjson
import structlog
from dotenv import load_dotenv

from src.artifacts import load_artifacts, save_artifacts, synthesize_artifacts
from src.bench import PolicySpec, compare_controllers, make_policy, simulate
from src.core.config import settings
from src.core.log import configure_logging
from src.distsolve import ConsensusParams
from src.netmodel import build_chain_benchmark, load_model, save_model
from src.terminal import verify_terminal
from src.tube import check_rpi_lmis, verify_budget_split_sampling, verify_rpi_monte_carlo

logger = structlog.get_logger(__name__)


def _emit(payload: dict) -> None:
    sys.stdout.write(orjson.dumps(payload, option=orjson.OPT_INDENT_2).decode() + "\n")


def _benchmark_model(args: argparse.Namespace) -> int:
    model = build_chain_benchmark(M=args.masses, dt=args.dt)
    save_model(model, args.out)
    _emit({"model": str(args.out), "subsystems": model.M, "states": model.n})
    return 0


def _synth(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    artifacts = synthesize_artifacts(model, tau=args.tau)
    save_artifacts(artifacts, args.out)
    _emit(
        {
            "artifacts": str(args.out),
            "tau": artifacts.tube.tau,
            "tube_objective": artifacts.tube.objective,
            "alpha_bar": artifacts.terminal.alpha_bar,
        }
    )
    return 0


def _verify_tube(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    artifacts = load_artifacts(model, args.artifacts)
    lmis = check_rpi_lmis(artifacts.tube, model)
    rpi_violations = verify_rpi_monte_carlo(artifacts.tube, model, samples=args.samples, seed=args.seed)
    split_violations = verify_budget_split_sampling(artifacts.tube, model, samples=args.samples, seed=args.seed)
    terminal = verify_terminal(artifacts.terminal, model, artifacts.tightened, seed=args.seed)
    ok = lmis.ok and rpi_violations == 0 and split_violations == 0 and terminal.ok
    _emit(
        {
            "ok": ok,
            "rpi_lmis": lmis.model_dump(),
            "rpi_violations": rpi_violations,
            "budget_split_violations": split_violations,
            "terminal": terminal.model_dump(),
        }
    )
    return 0 if ok else 1


def _certify_run(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    artifacts = load_artifacts(model, args.artifacts)
    policy = make_policy(PolicySpec(kind=args.policy, horizon=args.horizon), model, artifacts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    consensus = None
    if args.solver == "distributed":
        consensus = ConsensusParams(
            rho=args.rho,
            max_iter=args.max_iter,
            tol=args.consensus_tol,
            telemetry_path=str(out / "consensus.jsonl"),
        )
    trace = simulate(
        model,
        artifacts,
        policy,
        controller=args.controller,
        T=args.steps,
        seed=args.seed,
        horizon=args.horizon,
        backend=args.solver,
        consensus=consensus,
    )
    trace.write(out)
    summary = trace.summary()
    _emit(summary.model_dump())
    if args.controller != "raw" and (summary.state_violations or summary.input_violations):
        logger.error("Certified run violated constraints", state=summary.state_violations)
        return 1
    return 0


def _compare(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    artifacts = load_artifacts(model, args.artifacts)
    summary = compare_controllers(
        model,
        artifacts,
        T=args.steps,
        n_runs=args.runs,
        seed=args.seed,
        horizon=args.horizon,
        workers=args.workers,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    _emit({name: {"median_cost": v.median_cost, "median_solve_ms": v.median_solve_ms} for name, v in summary.variants.items()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpsc", description="Distributed model predictive safety certification")
    parser.add_argument("--log-level", default=None, help="Override DMPSC_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["json", "console"], default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("benchmark-model", help="Write the mass-spring-damper chain model")
    p.add_argument("--out", required=True)
    p.add_argument("--masses", type=int, default=9)
    p.add_argument("--dt", type=float, default=0.2)
    p.set_defaults(handler=_benchmark_model)

    p = commands.add_parser("synth", help="Synthesize tube, tightened sets and terminal ingredients")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=None, help="Fixed contraction factor; line search if omitted")
    p.set_defaults(handler=_synth)

    p = commands.add_parser("verify-tube", help="Check the synthesized tube and terminal set")
    p.add_argument("--model", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--samples", type=int, default=settings.mc_samples)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_verify_tube)

    p = commands.add_parser("certify-run", help="Simulate one closed-loop run")
    p.add_argument("--model", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--policy", choices=["linear-feedback", "nominal-dmpc", "zero"], default="linear-feedback")
    p.add_argument("--controller", choices=["certified", "raw", "rdmpc"], default="certified")
    p.add_argument("--steps", type=int, default=settings.sim_steps)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=settings.horizon)
    p.add_argument("--out", required=True)
    p.add_argument("--solver", choices=["centralized", "distributed"], default="centralized")
    p.add_argument("--rho", type=float, default=settings.admm_rho)
    p.add_argument("--max-iter", type=int, default=settings.admm_max_iter)
    p.add_argument("--consensus-tol", type=float, default=settings.admm_tol)
    p.set_defaults(handler=_certify_run)

    p = commands.add_parser("compare", help="Closed-loop cost comparison over many runs")
    p.add_argument("--model", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--runs", type=int, default=settings.bench_runs)
    p.add_argument("--steps", type=int, default=settings.sim_steps)
    p.add_argument("--horizon", type=int, default=settings.horizon)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=settings.bench_workers)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
