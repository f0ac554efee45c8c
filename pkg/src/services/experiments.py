"""
Experiment runners behind the command-line subcommands.

Each runner validates nothing itself: it receives a resolved ExperimentConfig, does its
numerical work (fanning out over seeds or replicates on a thread pool), and hands rows to
a single collector that writes `<command>.csv` and `<command>_summary.json` under the
output directory.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, root_validator

from src.data.enumeration import nishimori_check, replicate_posteriors
from src.data.gaussian_reference import gaussian_reference
from src.data.instance import sample_instance
from src.ml.vamp import (
    empirical_overlaps,
    predicted_overlaps,
    run_stationary_vamp,
    run_vamp,
    stationary_start,
)
from src.theory.overlap import delta_table, gprime_at_star
from src.theory.prior import AtomPrior, GaussianPrior, PriorSpec, Quadrature, prior_from_spec
from src.theory.replica import (
    FixedPoint,
    SolverOptions,
    StateEvolution,
    check_identities,
    i_rs_gradient,
    small_eps_report,
    solve_fixed_point,
    state_evolution,
)
from src.theory.spectrum import LawSpec, free_cumulants, law_from_spec, spectral_moments
from src.utils.config import (
    DEFAULT_THREADS,
    ENUMERATION_BUDGET,
    OUTPUT_DIR,
    QUAD2_ORDER,
    QUAD_ORDER,
    RESIDUAL_TOL,
)
from src.utils.errors import BudgetExceededError, DomainError, ResidualError
from src.utils.helpers import (
    derive_seed,
    format_report,
    mean_and_stderr,
    read_csv,
    write_csv,
    write_json_summary,
)
from src.utils.observability import get_observability_manager, traceable

logger = logging.getLogger(__name__)

FIXED_POINT_COLUMNS = ["eta_inv_star", "gamma_star", "delta_star", "kappa_star", "b_star",
                       "i_rs", "psi_rs", "residual"]
STATE_EVOLUTION_COLUMNS = ["t", "gamma1", "eta1", "gamma2", "eta2", "eta1_inv", "eta2_inv"]
DELTA_COLUMNS = ["s", "t", "delta"]
SIMULATE_COLUMNS = ["seed", "t", "mse1", "mse2", "eta1_inv_pred", "eta2_inv_pred", "tap_residual"]
SIMULATE_SUMMARY_COLUMNS = ["t", "rel_err1_mean", "rel_err1_stderr", "rel_err2_mean", "rel_err2_stderr"]
STATIONARY_COLUMNS = ["block", "s", "t", "empirical", "predicted"]
ORACLE_COLUMNS = ["n", "m", "i_n_hat", "stderr", "i_rs", "mmse_n_hat", "eta_inv_star",
                  "tap_residual_mean", "nishimori_difference", "nishimori_stderr"]
GAUSSIAN_COLUMNS = ["seed", "n", "m", "mmse_n", "mse_n", "log_z", "eta_inv_star"]
IDENTITY_COLUMNS = ["identity", "residual"]


class ExperimentConfig(BaseModel):
    """
    Resolved configuration of one run.

    Files are JSON objects with these keys; command-line flags override file values.
    """
    prior: PriorSpec = Field(default_factory=PriorSpec)
    law: LawSpec = Field(default_factory=LawSpec)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    n: int = Field(500, ge=1)
    m: int = Field(600, ge=1)
    T: int = Field(10, ge=1)
    reps: int = Field(100, ge=2)
    seeds: int = Field(10, ge=1, description="Number of independent instances for simulate/gaussian-ref")
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: int = Field(DEFAULT_THREADS, ge=1)
    quad_order: int = Field(QUAD_ORDER, ge=2)
    quad2_order: int = Field(QUAD2_ORDER, ge=2)
    oracle_sizes: List[int] = Field(default_factory=lambda: [8, 12, 16])
    m_ratio: float = Field(1.2, gt=0)
    max_configs: int = Field(ENUMERATION_BUDGET, ge=1)
    average_over_a: bool = False
    out: str = OUTPUT_DIR

    class Config:
        extra = "forbid"

    @root_validator(skip_on_failure=True)
    def buildable_and_consistent(cls, values):
        # surfaces atom-list errors at load time rather than mid-run
        rho = prior_from_spec(values["prior"]).rho_star
        law_from_spec(values["law"])
        starts = values["solver"].starts
        if starts:
            bad = [s for s in starts if s > rho]
            if bad:
                raise ValueError(f"solver starts {bad} lie above rho*={rho}")
        if any(size < 1 for size in values["oracle_sizes"]):
            raise ValueError("oracle_sizes must be positive")
        return values

    def resolved(self) -> Dict[str, Any]:
        """JSON-ready dict of every setting that affects results, for run provenance."""
        return self.dict(exclude={"out"})


class ExperimentRunner:
    """
    Runs one subcommand for a validated configuration.

    The prior, spectral law and quadrature rules are built once; every command writes its
    outputs through `_emit`.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.prior = prior_from_spec(config.prior)
        self.law = law_from_spec(config.law)
        self.quad = Quadrature.gauss_hermite(config.quad_order)
        self.quad2 = Quadrature.gauss_hermite(config.quad2_order)
        self.out_dir = Path(config.out)
        self.observability = get_observability_manager()
        self._fixed_point: Optional[FixedPoint] = None

    # ------------------------------------------------------------------ helpers

    def fixed_point(self) -> FixedPoint:
        if self._fixed_point is None:
            self._fixed_point = solve_fixed_point(self.prior, self.law, self.config.solver, self.quad,
                                                  threads=self.config.threads)
        return self._fixed_point

    def run_seeds(self) -> List[int]:
        # 63 bits so the seed column stays a signed int64 in pandas
        return [derive_seed(self.config.seed, "run", i) >> 1 for i in range(self.config.seeds)]

    def _map(self, fn: Callable, items: Sequence) -> List:
        """Apply fn over items on the worker pool, results in input order."""
        if self.config.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as executor:
                return list(executor.map(fn, items))
        return [fn(item) for item in items]

    def _emit(self, command: str, rows: List[Dict[str, Any]], columns: Sequence[str],
              headline: Dict[str, Any]) -> Dict[str, Any]:
        stem = command.replace("-", "_")
        write_csv(self.out_dir / f"{stem}.csv", rows, columns)
        summary = {"command": command, "config": self.config.resolved(), "results": headline}
        write_json_summary(self.out_dir / f"{stem}_summary.json", summary)
        self.observability.log_metrics(
            {f"{stem}/{k}": v for k, v in headline.items() if isinstance(v, (int, float))}
        )
        logger.info(f"✅ {command}: results written to {self.out_dir}")
        return summary

    # ---------------------------------------------------------------- commands

    @traceable(name="cmd_fixed_point")
    def fixed_point_command(self) -> Dict[str, Any]:
        fp = self.fixed_point()
        report: Dict[str, Any] = {k: v for k, v in fp.dict().items() if k != "candidates"}
        report["psi_plus_i"] = fp.psi_rs + fp.i_rs
        grad = i_rs_gradient(self.prior, self.law, fp.eta_inv_star, fp.gamma_star, self.quad)
        report["grad_gamma"], report["grad_eta_inv"] = grad
        report["candidate_count"] = len(fp.candidates)

        if self.law.degenerate:
            logger.warning("⚠️  Degenerate spectral law; identity checks skipped")
            report["identities"] = "skipped"
        else:
            identities = check_identities(fp, self.law, self.prior, self.quad)
            report["identity_max_residual"] = identities.max_residual
            eps_report = small_eps_report(fp, self.law)
            report["small_eps_passed"] = eps_report.passed
            for check in eps_report.checks:
                report[f"small_eps_{check.name}_ratio"] = check.ratio

        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "fixed_point_report.txt").write_text(format_report(report))
        summary = self._emit("fixed-point", [fp.summary()], FIXED_POINT_COLUMNS, report)
        if fp.residual > RESIDUAL_TOL:
            raise ResidualError(f"fixed-point residual {fp.residual:.3e} above {RESIDUAL_TOL:.0e}")
        return summary

    @traceable(name="cmd_state_evolution")
    def state_evolution_command(self) -> Dict[str, Any]:
        se = state_evolution(self.prior, self.law, None, self.config.T, self.quad)
        rows = [
            {"t": t + 1, "gamma1": se.gamma1[t], "eta1": se.eta1[t], "gamma2": se.gamma2[t],
             "eta2": se.eta2[t], "eta1_inv": 1.0 / se.eta1[t], "eta2_inv": 1.0 / se.eta2[t]}
            for t in range(se.T)
        ]
        fp = self.fixed_point()
        headline = {
            "eta2_nondecreasing": bool(np.all(np.diff(se.eta2) >= -1e-12 * np.abs(se.eta2[1:]))),
            "final_eta2_inv": float(se.eta2_inv[-1]),
            "eta_inv_star": fp.eta_inv_star,
            "final_gap": float(abs(se.eta2_inv[-1] - fp.eta_inv_star)),
        }
        return self._emit("state-evolution", rows, STATE_EVOLUTION_COLUMNS, headline)

    @traceable(name="cmd_delta_table")
    def delta_table_command(self) -> Dict[str, Any]:
        fp = self.fixed_point()
        T = max(self.config.T, 2)
        table = delta_table(self.prior, fp, T, self.quad2, self.quad)
        matrix = table.matrix
        rows = [{"s": s + 1, "t": t + 1, "delta": matrix[s, t]} for s in range(T) for t in range(T)]
        g_prime = gprime_at_star(self.prior, fp, self.quad)
        headline = {
            "delta_star": table.delta_star,
            "delta_12": table.delta_12,
            "gprime_at_star": g_prime,
            "gprime_bound": (fp.gamma_star / fp.eta_star) ** 2,
            "contracting": g_prime < min(1.0, (fp.gamma_star / fp.eta_star) ** 2),
            "last_offdiagonal_gap": float(table.delta_star - table.off_diagonal(1)[-1]),
            "min_eigenvalue": table.min_eigenvalue,
        }
        return self._emit("delta-table", rows, DELTA_COLUMNS, headline)

    @traceable(name="cmd_simulate")
    def simulate_command(self, resume: bool = False) -> Dict[str, Any]:
        cfg = self.config
        fp = self.fixed_point()
        se = state_evolution(self.prior, self.law, None, cfg.T, self.quad)
        seeds = self.run_seeds()
        csv_path = self.out_dir / "simulate.csv"

        done: set = set()
        if resume and csv_path.exists():
            existing = read_csv(csv_path)
            if list(existing.columns) != SIMULATE_COLUMNS:
                raise DomainError(f"cannot resume: {csv_path} has columns {list(existing.columns)}")
            counts = existing.groupby("seed")["t"].nunique()
            done = {int(seed) for seed, count in counts.items() if count >= cfg.T}
            if len(done) < len(counts):
                # drop seeds cut off mid-write before appending their full rows
                kept = existing[existing["seed"].isin(done)]
                write_csv(csv_path, kept.to_dict("records"), SIMULATE_COLUMNS)
            logger.info(f"ℹ️  Resuming: {len(done)} of {len(seeds)} seeds already present")
        pending = [seed for seed in seeds if seed not in done]

        def one(seed: int) -> List[Dict[str, Any]]:
            inst = sample_instance(self.law, self.prior, cfg.n, cfg.m, seed)
            run = run_vamp(inst, self.prior, T=cfg.T, se=se, gamma_star=fp.gamma_star, seed=seed)
            return run.records(seed)

        rows = [row for seed_rows in self._map(one, pending) for row in seed_rows]
        write_csv(csv_path, rows, SIMULATE_COLUMNS, append=bool(done))

        frame = read_csv(csv_path)
        frame = frame[frame["seed"].isin(seeds)]
        summary_rows = []
        for t, group in frame.groupby("t", sort=True):
            err1 = (group["mse1"] - group["eta1_inv_pred"]).abs() / group["eta1_inv_pred"]
            err2 = (group["mse2"] - group["eta2_inv_pred"]).abs() / group["eta2_inv_pred"]
            m1, s1 = mean_and_stderr(err1.to_numpy())
            m2, s2 = mean_and_stderr(err2.to_numpy())
            summary_rows.append({"t": int(t), "rel_err1_mean": m1, "rel_err1_stderr": s1,
                                 "rel_err2_mean": m2, "rel_err2_stderr": s2})
        write_csv(self.out_dir / "simulate_summary.csv", summary_rows, SIMULATE_SUMMARY_COLUMNS)

        headline = {
            "seeds_run": len(pending),
            "seeds_total": len(seeds),
            "max_rel_err1": max((r["rel_err1_mean"] for r in summary_rows), default=math.nan),
            "max_rel_err2": max((r["rel_err2_mean"] for r in summary_rows), default=math.nan),
            "eta_inv_star": fp.eta_inv_star,
        }
        stem = "simulate"
        write_json_summary(self.out_dir / f"{stem}_summary.json",
                           {"command": "simulate", "config": cfg.resolved(), "results": headline})
        self.observability.log_metrics({f"{stem}/{k}": v for k, v in headline.items()})
        logger.info(f"✅ simulate: {len(pending)} seeds run, results in {self.out_dir}")
        return headline

    @traceable(name="cmd_stationary")
    def stationary_command(self) -> Dict[str, Any]:
        cfg = self.config
        fp = self.fixed_point()
        T = max(cfg.T, 2)
        inst = sample_instance(self.law, self.prior, cfg.n, cfg.m, cfg.seed)
        stationary = run_stationary_vamp(inst, self.prior, fp, cfg.seed, T)

        _, init = stationary_start(inst, self.prior, fp, cfg.seed)
        standard = run_vamp(inst, self.prior, T=T, init=init, se=StateEvolution.constant(fp, T),
                            keep_history=True, seed=cfg.seed)
        beta = inst.beta_star[:, None]
        x_from_standard = standard.history["r2"] - beta
        y_from_standard = standard.history["r1"] - stationary.e[:, None] - beta
        scale_x = max(float(np.abs(stationary.X).max()), 1e-300)
        scale_y = max(float(np.abs(stationary.Y).max()), 1e-300)
        equivalence_x = float(np.abs(stationary.X - x_from_standard).max()) / scale_x
        equivalence_y = float(np.abs(stationary.Y - y_from_standard).max()) / scale_y

        empirical = empirical_overlaps(stationary)
        predicted = predicted_overlaps(fp, delta_table(self.prior, fp, T, self.quad2, self.quad), T)
        rows: List[Dict[str, Any]] = [
            {"block": "ete", "s": 0, "t": 0, "empirical": empirical.ete, "predicted": predicted.ete}
        ]
        for name in ("XtX", "YtY", "XtY"):
            emp, pred = getattr(empirical, name), getattr(predicted, name)
            rows.extend({"block": name, "s": s + 1, "t": t + 1, "empirical": emp[s, t], "predicted": pred[s, t]}
                        for s in range(T) for t in range(T))
        for name in ("Xte", "Yte"):
            emp, pred = getattr(empirical, name), getattr(predicted, name)
            rows.extend({"block": name, "s": s + 1, "t": 0, "empirical": emp[s], "predicted": pred[s]}
                        for s in range(T))

        headline = {
            "equivalence_x": equivalence_x,
            "equivalence_y": equivalence_y,
            "max_block_deviation": max(abs(r["empirical"] - r["predicted"]) for r in rows),
            "delta_star": fp.delta_star,
        }
        return self._emit("stationary", rows, STATIONARY_COLUMNS, headline)

    @traceable(name="cmd_oracle")
    def oracle_command(self) -> Dict[str, Any]:
        cfg = self.config
        if not isinstance(self.prior, AtomPrior):
            raise DomainError("the enumeration oracle needs a finite-support prior")
        largest = max(cfg.oracle_sizes)
        if self.prior.size ** largest > cfg.max_configs:
            raise BudgetExceededError(self.prior.size ** largest, cfg.max_configs)
        fp = self.fixed_point()

        rows = []
        nishimori_passed = True
        for n in sorted(cfg.oracle_sizes):
            m = math.ceil(cfg.m_ratio * n)
            results = replicate_posteriors(
                self.law, self.prior, n, m, cfg.reps, derive_seed(cfg.seed, "oracle", n),
                max_configs=cfg.max_configs, average_over_a=cfg.average_over_a,
                gamma_star=fp.gamma_star, threads=cfg.threads,
            )
            i_hat, stderr = mean_and_stderr([r.i_n for r in results])
            nishimori = nishimori_check(results)
            nishimori_passed = nishimori_passed and nishimori.passed
            rows.append({
                "n": n,
                "m": m,
                "i_n_hat": i_hat,
                "stderr": stderr,
                "i_rs": fp.i_rs,
                "mmse_n_hat": float(np.mean([r.mmse_n for r in results])),
                "eta_inv_star": fp.eta_inv_star,
                "tap_residual_mean": float(np.mean([r.tap_residual for r in results])),
                "nishimori_difference": nishimori.difference,
                "nishimori_stderr": nishimori.stderr,
            })
            logger.info(f"ℹ️  oracle n={n}: i_n={i_hat:.6f} +- {stderr:.6f} (i_RS={fp.i_rs:.6f})")

        headline = {
            "i_rs": fp.i_rs,
            "max_i_gap": max(abs(r["i_n_hat"] - fp.i_rs) for r in rows),
            "nishimori_passed": nishimori_passed,
        }
        return self._emit("oracle", rows, ORACLE_COLUMNS, headline)

    @traceable(name="cmd_gaussian_ref")
    def gaussian_ref_command(self) -> Dict[str, Any]:
        cfg = self.config
        rho = self.prior.rho_star
        reference_prior = GaussianPrior(rho_star=rho)
        fp = solve_fixed_point(reference_prior, self.law, cfg.solver, self.quad, threads=cfg.threads)

        def one(seed: int) -> Dict[str, Any]:
            inst = sample_instance(self.law, reference_prior, cfg.n, cfg.m, seed)
            post = gaussian_reference(inst, rho)
            return {"seed": seed, "n": cfg.n, "m": cfg.m, "mmse_n": post.mmse_n, "mse_n": post.mse_n,
                    "log_z": post.log_z, "eta_inv_star": fp.eta_inv_star}

        rows = self._map(one, self.run_seeds())
        mmse_mean, _ = mean_and_stderr([r["mmse_n"] for r in rows])
        headline = {
            "rho_star": rho,
            "eta_inv_star": fp.eta_inv_star,
            "mmse_n_mean": mmse_mean,
            "relative_gap": abs(mmse_mean - fp.eta_inv_star) / fp.eta_inv_star,
        }
        return self._emit("gaussian-ref", rows, GAUSSIAN_COLUMNS, headline)

    @traceable(name="cmd_identities")
    def identities_command(self) -> Dict[str, Any]:
        fp = self.fixed_point()
        if self.law.degenerate:
            logger.warning("⚠️  Degenerate spectral law; identity checks skipped")
            return self._emit("identities", [], IDENTITY_COLUMNS, {"skipped": True})
        report = check_identities(fp, self.law, self.prior, self.quad)
        rows = [{"identity": name, "residual": value} for name, value in sorted(report.residuals.items())]
        rows.append({"identity": "psi_plus_i", "residual": abs(fp.psi_rs + fp.i_rs + 0.5)})

        K = 12
        cumulants = free_cumulants(self.law, K)
        moments = spectral_moments(self.law, K)
        bound = 16 * self.law.eps
        headline = {
            "max_residual": max(r["residual"] for r in rows),
            "cumulant_bound_holds": bool(all(abs(c) <= bound ** k for k, c in enumerate(cumulants[1:], start=2))),
            "moment_bound_holds": bool(all(
                abs(mu) <= self.law.eps ** (k - 2) * self.law.kappa2 * (1 + 1e-9) + 1e-15
                for k, mu in enumerate(moments[2:], start=3)
            )),
        }
        return self._emit("identities", rows, IDENTITY_COLUMNS, headline)


def run_command(command: str, config: ExperimentConfig, resume: bool = False) -> Dict[str, Any]:
    """Dispatch a subcommand name to its runner."""
    runner = ExperimentRunner(config)
    handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
        "fixed-point": runner.fixed_point_command,
        "state-evolution": runner.state_evolution_command,
        "delta-table": runner.delta_table_command,
        "simulate": lambda: runner.simulate_command(resume=resume),
        "stationary": runner.stationary_command,
        "oracle": runner.oracle_command,
        "gaussian-ref": runner.gaussian_ref_command,
        "identities": runner.identities_command,
    }
    if command not in handlers:
        raise DomainError(f"unknown command '{command}'")
    runner.observability.start_run(command, config.resolved())
    return handlers[command]()
