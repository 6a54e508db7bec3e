"""
Command line
==============
``sinkscale scale``, ``sinkscale match`` and ``sinkscale verify``.

Exit codes:

* ``0``: success (converged, perfect matching likely, no violations)
* ``1``: invalid input (flags, files, instance)
* ``2``: ``scale`` exhausted its iteration budget
* ``3``: ``match`` found the largest matching below ``n (1 - eps)``

Verification failures in ``verify`` also exit with ``1``.

Every random draw comes from a Philox-4x64 generator seeded with
``--seed``. Timings are logged, never written to output files, so repeated
runs give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Annotated, NoReturn

import arrow
import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    FilePath,
    field_validator,
    model_validator,
)

import sinkscale
from sinkscale.core import (
    TargetVectors,
    iteration_budget,
    uniform_targets,
    validate_instance,
)
from sinkscale.divergence import (
    EasierInequalitiesReport,
    ThetaFactsReport,
    sample_pairs,
    theta_constants,
    verify_easier_inequalities,
    verify_inequalities,
    verify_theta_facts,
)
from sinkscale.matching import distinguish
from sinkscale.oracles import max_matching_exact
from sinkscale.sinkhorn import Metric, Outcome, Phase, StoppingRule, run
from sinkscale.util.mmio import read_edge_list, read_matrix_market, read_vector
from sinkscale.util.rng import make_rng

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_BUDGET_EXHAUSTED = 2
EXIT_MATCHING_BELOW = 3

SCHEMA_VERSION = 1
DEFAULT_THETAS = (0.1, 0.5, 1.0, 2.0, 10.0)
DEFAULT_GRID_POINTS = 10_000


def _writable(path: Path) -> Path:
    if not path.parent.is_dir():
        raise ValueError(f"directory of {path} does not exist")
    return path


OutputPath = Annotated[Path, AfterValidator(_writable)]


class ScaleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    matrix: FilePath
    targets: tuple[FilePath, FilePath] | None = None
    uniform: bool = False
    metric: Metric
    eps: float | None = Field(default=None, gt=0)
    delta: float | None = Field(default=None, gt=0)
    max_iters: int | None = Field(default=None, ge=1)
    witness: FilePath | None = None
    trace: OutputPath | None = None
    out: OutputPath | None = None

    @model_validator(mode="after")
    def check_rule(self) -> ScaleConfig:
        if (self.targets is None) == (not self.uniform):
            raise ValueError("give exactly one of --targets and --uniform")
        if self.metric == "kl" and self.delta is None:
            raise ValueError("--metric kl needs --delta")
        if self.metric != "kl" and self.eps is None:
            raise ValueError(f"--metric {self.metric} needs --eps")
        return self

    @property
    def threshold(self) -> float:
        if self.metric == "kl":
            return self.delta  # type: ignore[return-value]
        return self.eps  # type: ignore[return-value]


class MatchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    graph: FilePath
    eps: float = Field(gt=0, lt=1)
    oracle: bool = False


class VerifyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    pairs: int = Field(default=100_000, ge=0)
    thetas: tuple[float, ...] = DEFAULT_THETAS
    min_size: int = Field(default=2, ge=1)
    max_size: int = Field(default=64, ge=1)
    grid_points: int = Field(default=DEFAULT_GRID_POINTS, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("thetas")
    @classmethod
    def check_thetas(cls, thetas: tuple[float, ...]) -> tuple[float, ...]:
        for theta in thetas:
            theta_constants(theta)
        return thetas

    @model_validator(mode="after")
    def check_sizes(self) -> VerifyConfig:
        if self.min_size > self.max_size:
            raise ValueError("--min-size exceeds --max-size")
        return self


class Report(BaseModel):
    """Base of every JSON document written by the tool."""

    model_config = ConfigDict(frozen=True)

    schema_version: int = Field(
        default=SCHEMA_VERSION, serialization_alias="schema"
    )

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


class ScalersReport(Report):
    row_scaler: list[float]
    col_scaler: list[float]
    iterations: int
    outcome: Outcome
    phase: Phase
    err1: float
    """l1 error of the returned iterate"""

    err2: float
    best_err1: float
    """Smallest l1 error over every traced half-step"""

    best_err2: float
    best_kl: float


class MatchReport(Report):
    verdict: str
    bound: float | None
    iterations: int
    err1: float | None
    budget: int
    oracle_size: int | None = None
    oracle_agrees: bool | None = None


class VerifyReport(Report):
    checked: int
    violations: int
    worst_slack: float | None
    by_inequality: dict[str, int]
    theta_facts: list[ThetaFactsReport]
    easier_inequalities: EasierInequalitiesReport


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _theta_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid theta list '{text}'")


def _add_global_flags(parser: argparse.ArgumentParser, top: bool) -> None:
    """``--seed``, ``--json``, ``-q`` and ``-v``.

    Accepted before and after the subcommand. The subcommand copies carry no
    defaults, so a value given before the subcommand is kept.
    """

    def default(value: object) -> object:
        return value if top else argparse.SUPPRESS

    parser.add_argument(
        "--seed",
        type=int,
        default=default(0),
        help="Seed of the Philox generator.",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        default=default(False),
        help="Print a JSON report to stdout.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-q",
        "--quiet",
        action="store_true",
        default=default(False),
        help="Only log warnings.",
    )
    verbosity.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        default=default(False),
        help="Log every half-step.",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, top=False)

    parser = _Parser(
        prog="sinkscale",
        description="Sinkhorn-Knopp matrix scaling with convergence "
        "certificates.",
    )
    _add_global_flags(parser, top=True)
    parser.add_argument(
        "--version", action="version", version=sinkscale.__version__
    )
    sub = parser.add_subparsers(dest="command", required=True)

    scale = sub.add_parser(
        "scale", parents=[common], help="Scale a Matrix Market matrix."
    )
    scale.add_argument("--matrix", type=Path, required=True)
    targets = scale.add_mutually_exclusive_group(required=True)
    targets.add_argument(
        "--targets",
        type=Path,
        nargs=2,
        metavar=("R_FILE", "C_FILE"),
        help="Row and column target files, one float per line.",
    )
    targets.add_argument(
        "--uniform", action="store_true", help="Use r = c = 1."
    )
    scale.add_argument("--metric", choices=("l1", "l2", "kl"), required=True)
    scale.add_argument("--eps", type=float, help="l1 or l2 threshold.")
    scale.add_argument(
        "--delta",
        type=float,
        help="KL threshold for --metric kl; otherwise the delta used to "
        "derive the iteration budget.",
    )
    scale.add_argument("--max-iters", type=int)
    scale.add_argument(
        "--witness", type=Path, help="A known feasible scaling of the matrix."
    )
    scale.add_argument("--trace", type=Path, help="Trace CSV to write.")
    scale.add_argument("--out", type=Path, help="Scalers JSON to write.")
    scale.set_defaults(handler=cmd_scale)

    match = sub.add_parser(
        "match",
        parents=[common],
        help="Test a bipartite graph for a perfect matching.",
    )
    match.add_argument("--graph", type=Path, required=True)
    match.add_argument("--eps", type=float, required=True)
    match.add_argument(
        "--oracle",
        action="store_true",
        help="Also compute an exact maximum matching.",
    )
    match.set_defaults(handler=cmd_match)

    verify = sub.add_parser(
        "verify",
        parents=[common],
        help="Check the divergence inequalities on random pairs.",
    )
    verify.add_argument("--pairs", type=int, default=100_000)
    verify.add_argument(
        "--theta",
        type=_theta_list,
        default=DEFAULT_THETAS,
        help="Comma separated theta values.",
    )
    verify.add_argument("--min-size", type=int, default=2)
    verify.add_argument("--max-size", type=int, default=64)
    verify.add_argument(
        "--grid-points", type=int, default=DEFAULT_GRID_POINTS
    )
    verify.set_defaults(handler=cmd_verify)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    if args.quiet:
        level = logging.WARNING
    elif args.verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def cmd_scale(args: argparse.Namespace) -> int:
    cfg = ScaleConfig(
        matrix=args.matrix,
        targets=args.targets,
        uniform=args.uniform,
        metric=args.metric,
        eps=args.eps,
        delta=args.delta,
        max_iters=args.max_iters,
        witness=args.witness,
        trace=args.trace,
        out=args.out,
    )
    A = read_matrix_market(cfg.matrix)
    if cfg.targets is not None:
        targets = TargetVectors(
            read_vector(cfg.targets[0]), read_vector(cfg.targets[1])
        )
    else:
        targets = uniform_targets(A.n_rows, A.n_cols)
    witness = read_matrix_market(cfg.witness) if cfg.witness else None
    instance = validate_instance(A, targets)

    max_iters = cfg.max_iters
    if max_iters is None and cfg.metric != "kl" and cfg.delta is not None:
        max_iters = iteration_budget(instance.params, cfg.delta)
    rule = StoppingRule(
        metric=cfg.metric, threshold=cfg.threshold, max_iters=max_iters
    )
    result = run(instance, rule, witness)

    last = result.trace[-1]
    report = ScalersReport(
        row_scaler=result.state.row_scaler.tolist(),
        col_scaler=result.state.col_scaler.tolist(),
        iterations=result.state.t,
        outcome=result.outcome,
        phase=result.state.phase,
        err1=last.err1,
        err2=last.err2,
        best_err1=result.trace.best_error1,
        best_err2=result.trace.best_error2,
        best_kl=result.trace.best_kl,
    )
    if cfg.trace is not None:
        result.trace.write_csv(cfg.trace)
    if cfg.out is not None:
        cfg.out.write_text(report.to_json() + "\n", encoding="utf-8")
    if args.json:
        print(report.to_json())
    elif result.outcome == "converged":
        print(
            f"converged at {last.phase}({last.t}): "
            f"err1={last.err1!r} err2={last.err2!r}"
        )
    else:
        print(
            f"budget_exhausted at {last.phase}({last.t}): "
            f"best err1={report.best_err1!r} best err2={report.best_err2!r}"
        )
    if result.outcome == "converged":
        return EXIT_OK
    return EXIT_BUDGET_EXHAUSTED


def cmd_match(args: argparse.Namespace) -> int:
    cfg = MatchConfig(graph=args.graph, eps=args.eps, oracle=args.oracle)
    G = read_edge_list(cfg.graph)
    verdict = distinguish(G, cfg.eps)

    oracle_size = None
    agrees = None
    if cfg.oracle:
        oracle_size = max_matching_exact(G)
        n = G.n_left
        if verdict.perfect_matching_likely:
            agrees = oracle_size >= math.ceil(n * (1.0 - cfg.eps) - 1e-9)
        else:
            agrees = oracle_size < n
        if not agrees:
            LOGGER.warning(
                f"Verdict {verdict.verdict} disagrees with the exact "
                f"maximum matching of size {oracle_size}"
            )
    report = MatchReport(
        verdict=verdict.verdict,
        bound=verdict.bound,
        iterations=verdict.iterations_used,
        err1=verdict.achieved_error1,
        budget=verdict.budget,
        oracle_size=oracle_size,
        oracle_agrees=None if agrees is None else bool(agrees),
    )
    if args.json:
        print(report.to_json())
    else:
        bound = "" if report.bound is None else f" (bound {report.bound!r})"
        print(f"{report.verdict}{bound} after {report.iterations} iterations")
    if verdict.perfect_matching_likely:
        return EXIT_OK
    return EXIT_MATCHING_BELOW


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = VerifyConfig(
        pairs=args.pairs,
        thetas=args.theta,
        min_size=args.min_size,
        max_size=args.max_size,
        grid_points=args.grid_points,
        seed=args.seed,
    )
    rng = make_rng(cfg.seed)
    pairs = verify_inequalities(
        sample_pairs(rng, cfg.pairs, cfg.min_size, cfg.max_size),
        cfg.thetas,
    )
    t_grid = np.linspace(-1.0, 100.0, cfg.grid_points + 1)[1:]
    z_grid = np.linspace(0.0, 100.0, cfg.grid_points + 1)[1:]
    theta_facts = [verify_theta_facts(theta, t_grid) for theta in cfg.thetas]
    easier = verify_easier_inequalities(z_grid)

    violations = (
        pairs.violations
        + sum(r.violations for r in theta_facts)
        + easier.violations
    )
    report = VerifyReport(
        checked=pairs.checked,
        violations=violations,
        worst_slack=pairs.worst_slack,
        by_inequality=pairs.by_inequality,
        theta_facts=theta_facts,
        easier_inequalities=easier,
    )
    if args.json:
        print(report.to_json())
    else:
        print(
            f"checked {report.checked} pairs, "
            f"{report.violations} violations"
        )
    return EXIT_OK if violations == 0 else EXIT_INPUT_ERROR


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)

    start = arrow.utcnow()
    try:
        code: int = args.handler(args)
    except (ValueError, OSError) as err:
        LOGGER.debug("Input error", exc_info=True)
        print(f"sinkscale: error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    elapsed = arrow.utcnow() - start
    LOGGER.info(
        f"{args.command} finished in {elapsed.total_seconds():.3f}s "
        f"with exit code {code}"
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
