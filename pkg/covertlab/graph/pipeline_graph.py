import asyncio
import datetime
import logging
import math
from pathlib import Path
from typing import Any, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from covertlab.core.errors import (
    EXIT_ASSERTION,
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    AssertionFailure,
    CovertLabError,
    SlacknessTooLarge,
)
from covertlab.engines import detect, maskopt, scheme, specmask
from covertlab.engines.analysis import reliability_bound
from covertlab.engines.channel import AwgnSpec
from covertlab.engines.pulses import RrcPulse
from covertlab.reporting import emitters
from covertlab.schemas.covert_schemas import ExperimentConfig, FrequencyGrid, SlacknessSpec

logger = logging.getLogger(__name__)

STAGES = [
    "load_mask",
    "optimize",
    "blocklength",
    "derive_params",
    "generate",
    "check_mask_fit",
    "concentration",
    "reliability",
    "covertness",
    "rearrange",
    "verify_esd",
    "emit",
]
NEXT_STAGE = dict(zip(STAGES, STAGES[1:] + [END]))


class PipelineState(TypedDict):
    config: ExperimentConfig
    run_dir: str
    stage: str | None  # last completed stage
    mask: Any | None
    optimizer: Any | None
    pulse: RrcPulse | None
    used_p2: bool
    blocklength: Any | None
    params: Any | None
    sim_params: Any | None
    codebook: Any | None
    checks: dict[str, dict]
    error_rates: Any | None
    covertness: dict | None
    rearranged: Any | None
    artifacts: list[str]
    error: str | None
    failed_stage: str | None
    exit_code: int


class PipelineGraph:
    """End-to-end run: mask -> pulse -> parameters -> codebook -> checks -> simulation -> rearrangement -> artifacts."""

    def __init__(self, recursion_limit: int = 40):
        self.recursion_limit = recursion_limit
        self.graph = self._build_graph()

    async def _run_stage(self, state: PipelineState, name: str, work) -> PipelineState:
        logger.info("---NODE: %s---", name.upper())
        try:
            update = await asyncio.to_thread(work, state)
            return {**state, **update, "stage": name}
        except CovertLabError as e:
            e.with_stage(name)
            code = e.exit_code
            new_error_message = f"{type(e).__name__} in {name}: {e.message}"
        except ValueError as e:
            code = EXIT_CONFIG
            new_error_message = f"ValueError in {name}: {e}"
        except Exception as e:
            code = EXIT_NUMERIC
            new_error_message = f"{type(e).__name__} in {name}: {e}"
        logger.error(new_error_message)
        current_error = state.get("error")
        return {
            **state,
            "error": f"{current_error}; {new_error_message}" if current_error else new_error_message,
            "failed_stage": state.get("failed_stage") or name,
            "exit_code": code,
        }

    @staticmethod
    def _record(state: PipelineState, name: str, passed: bool, **details) -> dict[str, dict]:
        return {**state["checks"], name: {"passed": bool(passed), **details}}

    # stage bodies run in a worker thread and return the state update

    def _load_mask(self, state: PipelineState) -> dict:
        return {"mask": state["config"].resolved_mask()}

    def _optimize(self, state: PipelineState) -> dict:
        cfg, mask = state["config"], state["mask"]
        result = maskopt.solve_p1(mask, cfg.beta_grid, cfg.tol)
        t0, used_p2 = result.t0_star, False
        if cfg.t is not None:
            slack = SlacknessSpec(t=cfg.t, nw=cfg.nw, nb=cfg.nb, delta=cfg.delta, metric=cfg.metric)
            try:
                t0, used_p2 = maskopt.solve_p2(mask, result.beta_star, slack, cfg.tol), True
            except SlacknessTooLarge as e:
                logger.warning("slackness-tightened problem infeasible (%s); falling back to the plain optimum", e.message)
        return {"optimizer": result, "pulse": RrcPulse(t0=t0, beta=result.beta_star), "used_p2": used_p2}

    def _blocklength(self, state: PipelineState) -> dict:
        cfg = state["config"]
        if cfg.n is not None:
            return {"blocklength": None}
        res = maskopt.blocklength(state["mask"], cfg.t, cfg.xi, state["optimizer"], cfg.nw, cfg.nb, cfg.delta, cfg.metric)
        if res.n < 3:
            raise ValueError(f"T={cfg.t} yields blocklength {res.n} < 3")
        return {"blocklength": res}

    def _derive_params(self, state: PipelineState) -> dict:
        cfg = state["config"]
        n = cfg.n if cfg.n is not None else state["blocklength"].n
        params = scheme.derive_params(n, cfg.nw, cfg.nb, cfg.delta, cfg.metric)
        sim = scheme.simulation_params(params, cfg.rate_backoff, cfg.key_backoff, cfg.sim_m, cfg.sim_k)
        return {"params": params, "sim_params": sim}

    def _generate(self, state: PipelineState) -> dict:
        return {"codebook": scheme.generate_codebook(state["sim_params"], state["config"].seed)}

    def _check_mask_fit(self, state: PipelineState) -> dict:
        profile = specmask.codebook_esd(state["codebook"], state["pulse"])
        report = specmask.check_fit(profile, state["mask"], FrequencyGrid(cross_check=False))
        return {"checks": self._record(state, "mask_fit", report.fits, report=report)}

    def _concentration(self, state: PipelineState) -> dict:
        report = specmask.concentration_check(state["codebook"], state["pulse"])
        return {"checks": self._record(state, "concentration", report.holds, report=report)}

    def _reliability(self, state: PipelineState) -> dict:
        cfg, sim = state["config"], state["sim_params"]
        rates = scheme.measure_error_rates(state["codebook"], AwgnSpec(intensity=cfg.nb, seed=cfg.seed), cfg.trials,
                                           cfg.seed, sim)
        checks = self._record(state, "reliability", rates.p_err <= cfg.max_error, p_err=rates.p_err,
                              stderr=rates.stderr, max_error=cfg.max_error, margin=cfg.max_error - rates.p_err,
                              ensemble_bound=reliability_bound(sim).total)
        return {"error_rates": rates, "checks": checks}

    def _covertness(self, state: PipelineState) -> dict:
        cfg, cb = state["config"], state["codebook"]
        subsample = detect.SUBSAMPLE_SIZE
        if cfg.metric == "tv":
            ensemble = detect.tv_product(cb.n, cb.a_n, cfg.nw).closed_form
            code = detect.tv_codebook(cb, cfg.nw, cfg.trials, cfg.seed, subsample=subsample)
            estimate, extra = code.vs_silence, {"vs_ensemble": code.vs_ensemble, "subsample": code.subsample}
        else:
            ensemble = cb.n * detect.kl_single_letter(cb.a_n, cfg.nw).quadrature
            code = detect.kl_codebook(cb, cfg.nw, max(cfg.trials, 2), cfg.seed, subsample=subsample)
            estimate, extra = code.vs_silence, {"vs_ensemble": code.vs_ensemble, "cross_term": code.cross_term}
        limit = cfg.delta + 3.0 * estimate.stderr
        summary = {"metric": cfg.metric, "ensemble": ensemble, "vs_silence": estimate, **extra}
        checks = self._record(state, "covertness", estimate.value <= limit, value=estimate.value,
                              stderr=estimate.stderr, delta=cfg.delta, margin=limit - estimate.value)
        return {"covertness": summary, "checks": checks}

    def _rearrange(self, state: PipelineState) -> dict:
        cfg, rates = state["config"], state["error_rates"]
        errors = rates.subcode_errors
        epsilon = cfg.epsilon
        if epsilon is None:
            # measured average, kept inside (0, 1)
            epsilon = min(max(float(np.mean(errors)), 1.0 / (cfg.trials + 1)), 1.0 - 1e-9)
        rc = scheme.rearrange(state["codebook"], errors, epsilon)
        predicted = rc.predicted_errors(errors)
        worst = max(predicted)
        checks = self._record(state, "rearrangement_bound", worst <= rc.error_bound, epsilon=epsilon,
                              k_prime=rc.k_prime, m_prime=rc.m_prime, worst_predicted=worst,
                              bound=rc.error_bound, margin=rc.error_bound - worst,
                              epsilon_hat=rc.epsilon_hat, epsilon_hat_nominal=rc.epsilon_hat_nominal)
        return {"rearranged": rc, "checks": checks}

    def _verify_esd(self, state: PipelineState) -> dict:
        rc, pulse = state["rearranged"], state["pulse"]
        before = specmask.codebook_esd(state["codebook"], pulse)
        after = specmask.codebook_esd(rc.materialize(), pulse)
        gap = float(np.max(np.abs(after.lags - before.lags)))
        passed = rc.is_bijection() and gap == 0.0
        return {"checks": self._record(state, "esd_preserved", passed, bijection=rc.is_bijection(), max_lag_gap=gap)}

    def _emit(self, state: PipelineState) -> dict:
        cfg = state["config"]
        run_dir = Path(state["run_dir"])
        artifacts = self._write_artifacts(state, run_dir)
        failed = [name for name in cfg.assertions if not state["checks"].get(name, {}).get("passed", False)]
        summary = self._summary(state, "failed" if failed else "ok")
        artifacts.append(str(emitters.write_json(run_dir / "summary.json", summary)))
        if failed:
            raise AssertionFailure(f"assertions failed: {', '.join(failed)}", stage="emit")
        return {"artifacts": artifacts}

    def _write_artifacts(self, state: PipelineState, run_dir: Path) -> list[str]:
        cfg, pulse, cb = state["config"], state["pulse"], state["codebook"]
        paths = []
        curve = state["optimizer"].c_beta_curve
        paths.append(emitters.write_csv(run_dir / "c_beta.csv", ["beta", "c"], curve))

        f_max = pulse.spectral_extent()
        f, ens = specmask.ensemble_esd(cb.a_n, cb.n, pulse).table(f_max)
        _, code = specmask.codebook_esd(cb, pulse).table(f_max)
        paths.append(emitters.write_csv(run_dir / "esd.csv", ["f", "ensemble", "codebook"], zip(f, ens, code)))

        rates = state["error_rates"]
        rows = [(s, e.value, e.stderr, total) for s, (e, total) in
                enumerate(zip(rates.per_subcode, rates.subcode_errors), start=1)]
        paths.append(emitters.write_csv(run_dir / "subcode_errors.csv", ["s", "error", "stderr", "with_false_activity"],
                                        rows))
        if cfg.plots:
            finite = [(b, c) for b, c in curve if math.isfinite(c)]
            paths.append(emitters.plot_xy([b for b, _ in finite], {"c(beta)": [c for _, c in finite]},
                                          run_dir / "c_beta.svg", "beta", "W T0*"))
            mask = state["mask"]
            thresholds = [(c.alpha * mask.w, c.v * float(np.max(ens))) for c in mask.constraints]
            paths.append(emitters.plot_esd(f, {"ensemble": ens, "codebook": code}, run_dir / "esd.svg", thresholds))
        return [str(p) for p in paths]

    @staticmethod
    def _summary(state: PipelineState, status: str) -> dict:
        opt = state.get("optimizer")
        return {
            "status": status,
            "created_at": datetime.datetime.now().isoformat(),
            "name": state["config"].name,
            "failed_stage": state.get("failed_stage"),
            "error": state.get("error"),
            "pulse": state.get("pulse"),
            "used_p2": state.get("used_p2"),
            "optimizer": opt.model_dump(exclude={"c_beta_curve"}) if opt is not None else None,
            "blocklength": state.get("blocklength"),
            "params": state.get("params"),
            "sim_params": state.get("sim_params"),
            "error_rates": state.get("error_rates"),
            "covertness": state.get("covertness"),
            "checks": state.get("checks"),
        }

    # graph nodes

    async def _load_mask_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "load_mask", self._load_mask)

    async def _optimize_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "optimize", self._optimize)

    async def _blocklength_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "blocklength", self._blocklength)

    async def _derive_params_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "derive_params", self._derive_params)

    async def _generate_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "generate", self._generate)

    async def _check_mask_fit_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "check_mask_fit", self._check_mask_fit)

    async def _concentration_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "concentration", self._concentration)

    async def _reliability_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "reliability", self._reliability)

    async def _covertness_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "covertness", self._covertness)

    async def _rearrange_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "rearrange", self._rearrange)

    async def _verify_esd_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "verify_esd", self._verify_esd)

    async def _emit_node(self, state: PipelineState) -> PipelineState:
        return await self._run_stage(state, "emit", self._emit)

    async def _error_handler_node(self, state: PipelineState) -> PipelineState:
        logger.info("---NODE: ERROR HANDLER---")
        logger.error("pipeline stopped at %s: %s", state.get("failed_stage"), state.get("error"))
        if state.get("failed_stage") != "emit":
            try:
                emitters.write_json(Path(state["run_dir"]) / "summary.json", self._summary(state, "failed"))
            except Exception as e:
                logger.error("could not write failure summary: %s", e)
        return state

    def _should_continue(self, state: PipelineState) -> str:
        if state.get("error"):
            return "error_handler"
        return NEXT_STAGE[state["stage"]]

    def _build_graph(self):
        workflow = StateGraph(PipelineState)
        nodes = {name: getattr(self, f"_{name}_node") for name in STAGES}
        for name, node in nodes.items():
            workflow.add_node(name, node)
        workflow.add_node("error_handler", self._error_handler_node)

        workflow.set_entry_point(STAGES[0])
        for name in STAGES:
            nxt = NEXT_STAGE[name]
            workflow.add_conditional_edges(name, self._should_continue, {nxt: nxt, "error_handler": "error_handler"})
        workflow.add_edge("error_handler", END)
        return workflow.compile()

    def initial_state(self, config: ExperimentConfig, run_dir: Path) -> PipelineState:
        return PipelineState(
            config=config, run_dir=str(run_dir), stage=None, mask=None, optimizer=None, pulse=None, used_p2=False,
            blocklength=None, params=None, sim_params=None, codebook=None, checks={}, error_rates=None,
            covertness=None, rearranged=None, artifacts=[], error=None, failed_stage=None, exit_code=EXIT_OK,
        )

    async def run(self, config: ExperimentConfig, run_dir: Path | None = None) -> PipelineState:
        run_dir = run_dir or emitters.make_run_dir(config.name, config.output_dir)
        emitters.write_json(Path(run_dir) / "config.resolved.json", config)
        state = self.initial_state(config, Path(run_dir))
        try:
            final_state = await self.graph.ainvoke(state, config={"recursion_limit": self.recursion_limit})
        except Exception as e:
            logger.error("critical error while running the pipeline graph: %s", e)
            final_state = {**state, "error": f"critical graph error: {e}", "failed_stage": "graph",
                           "exit_code": EXIT_NUMERIC}
        if final_state.get("error") and final_state.get("exit_code", EXIT_OK) == EXIT_OK:
            final_state = {**final_state, "exit_code": EXIT_ASSERTION}
        logger.info("pipeline finished in %s (exit %d)", run_dir, final_state["exit_code"])
        return final_state
