"""Command line entry point: ``bdflow <command> --config run.json [--out dir]``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from . import evolution as ev
from .config import ConfigError
from .diagnostics import (DiagnosticsError, RateModel, fit_rate, lyapunov_series,
                          mode_expansion, monotone_report, ordering_report,
                          perturbation_norms, second_difference_report, verify_suite)
from .dtn import build_dtn
from .io import stamp, write_csv, write_json
from .numerics import NumericsError
from .spectrum import SpectrumError, linearized_spectrum, project_modes
from .stationary import (ProblemError, Regime, SteadyStateError, make_problem, mass_of,
                         random_positive_field, solve_steady)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
SOLVER_ERRORS = (SteadyStateError, ev.EvolutionError, ev.StepError, SpectrumError,
                 DiagnosticsError, NumericsError)


class Run:
    """Shared plumbing for one command: config, output directory, problem."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.output["directory"])
        self.formats = set(cfg.output["formats"])
        self._spec = None

    @property
    def spec(self):
        if self._spec is None:
            curve = self.cfg.curve()
            d = self.cfg.dtn
            dtn = build_dtn(curve, method=d["method"], charge_offset=d["offset"], reg=d["reg"])
            try:
                self._spec = make_problem(curve, dtn, self.cfg.p, self.cfg.coefficient(curve),
                                          self.cfg.problem["zero_tol"])
            except ProblemError as exc:
                raise ConfigError(str(exc)) from exc
        return self._spec

    def json(self, name, doc):
        self.out.mkdir(parents=True, exist_ok=True)
        return write_json(self.out / name, doc, self.cfg.hash)

    def csv(self, name, header, rows):
        self.out.mkdir(parents=True, exist_ok=True)
        return write_csv(self.out / name, header, rows, self.cfg.hash)

    def figure(self, name, draw, *args):
        if "png" not in self.formats:
            return
        from . import plotting

        self.out.mkdir(parents=True, exist_ok=True)
        getattr(plotting, draw)(*args, self.out / name, stamp(self.cfg.hash))

    def steady(self, mass_target=None):
        mass = mass_target if mass_target is not None else self.cfg.problem["mass_target"]
        if self.spec.regime is Regime.NEUTRAL and mass is None:
            raise ConfigError("the Neutral regime (lambda1 = 0) needs problem.mass_target "
                              "to select the steady profile")
        return solve_steady(self.spec, mass_target=mass)

    def initial(self):
        """Initial data, resolving the keys that refer to the steady state."""
        init = self.cfg.initial
        if init is None:
            raise ConfigError("this command needs an 'initial' section")
        spec = self.spec
        refs = {"from_steady", "separable_c", "perturb_mode"} & set(init)
        if "random_seed" in init:
            u0 = random_positive_field(spec.curve, np.random.default_rng(int(init["random_seed"])))
        elif refs:
            u0 = None
        else:
            u0 = self.cfg.initial_field(spec.curve)
        if init.get("normalize_mass") and u0 is not None:
            u0 = u0 * (mass_of(np.ones_like(u0), spec) / mass_of(u0, spec)) ** (1.0 / spec.p)
        if u0 is not None:
            return u0
        phi = self.steady().phi
        if "separable_c" in init:
            return ev.separable_initial(spec, phi, float(init["separable_c"]))
        u0 = phi.copy()
        if "perturb_mode" in init:
            k = int(init["perturb_mode"])
            modes = linearized_spectrum(spec, phi).modes
            if not 1 <= k <= modes.shape[1]:
                raise ConfigError(f"initial.perturb_mode must lie in 1..{modes.shape[1]}")
            u0 = u0 + float(init.get("perturb_amplitude", 0.01)) * modes[:, k - 1]
        if np.min(u0) <= 0:
            raise ConfigError("perturbed initial data is not strictly positive")
        return u0

    def controls(self, **over):
        tm = self.cfg.time
        kw = dict(rtol=tm["rtol"], fixed_dt=tm["fixed_dt"], dt0=tm["dt0"], dt_max=tm["dt_max"],
                  store_stride=tm["store_stride"], floor_factor=tm["floor_factor"],
                  ceiling_factor=tm["ceiling_factor"])
        kw.update(over)
        return ev.EvolveControls(**kw)


def _mode(cfg):
    return ev.FlowMode.PHYSICAL if cfg.time["mode"] == "physical" else ev.FlowMode.NORMALIZED


def _trajectory_rows(traj):
    header = ["time", *ev.DIAGNOSTIC_NAMES] + [f"u{i}" for i in range(traj.fields.shape[1])]
    rows = [[t, *(traj.diagnostics[k][i] for k in ev.DIAGNOSTIC_NAMES), *traj.fields[i]]
            for i, t in enumerate(traj.times)]
    return header, rows


def cmd_steady(run: Run) -> int:
    spec = run.spec
    st = run.steady()
    doc = st.to_dict()
    doc.update(p=spec.p, N=spec.curve.N, domain=spec.curve.describe(),
               dtn=spec.dtn.build_report, phi=st.phi)
    run.json("steady.json", doc)
    run.csv("phi.csv", ["theta", "x", "y", "phi"],
            np.column_stack([spec.curve.theta, spec.curve.nodes, st.phi]))
    run.figure("phi.png", "plot_steady", spec.curve, st.phi)
    print(f"lambda1 = {st.lambda1:.12g}  regime = {st.regime.value}  residual = {st.residual:.3e}")
    return EXIT_OK


def _comparison(run, u0, traj):
    other = run.cfg.initial["compare_with"]
    if run.cfg.time["fixed_dt"] is None:
        raise ConfigError("initial.compare_with needs time.fixed_dt so both runs share samples")
    mean, terms = config_mod._series(other, "initial.compare_with")
    v0 = run.cfg._synth(run.spec.curve, mean, terms, "initial.compare_with")
    if np.min(v0) <= 0:
        raise ConfigError("initial.compare_with must be strictly positive")
    if np.all(u0 <= v0):
        lower_first = True
    elif np.all(u0 >= v0):
        lower_first = False
    else:
        raise ConfigError("initial data and compare_with must be pointwise ordered")
    partner = ev.evolve(run.spec, v0, _mode(run.cfg), run.cfg.time["horizon"], run.controls())
    pair = (traj, partner) if lower_first else (partner, traj)
    rep = ordering_report(*pair)
    rep["verdict"] = "pass" if rep["passed"] else "fail"
    return rep


def cmd_evolve(run: Run) -> int:
    spec, cfg = run.spec, run.cfg
    u0 = run.initial()
    mode = _mode(cfg)
    traj = ev.evolve(spec, u0, mode, cfg.time["horizon"], run.controls())
    doc = {"mode": mode.value, "regime": spec.regime.value, "lambda1": spec.lambda1,
           "p": spec.p, "samples": len(traj), "steps": traj.steps, "rejected": traj.rejected,
           "halted": traj.halted, "final_time": float(traj.times[-1]),
           "final_min": float(traj.diagnostics["min"][-1]),
           "final_max": float(traj.diagnostics["max"][-1])}
    checks = {"I": monotone_report(traj.diagnostics["I"]).to_dict()}
    if mode is ev.FlowMode.NORMALIZED:
        checks["G"] = lyapunov_series(traj).to_dict()
    if traj.halted in ("floor", "ceiling"):
        fit = ev.fit_Tstar(traj)
        doc["Tstar_estimate"] = fit.Tstar
        doc["Tstar_fit"] = {"slope": fit.slope, "intercept": fit.intercept, "rms": fit.rms,
                            "secant": fit.secant, "window": fit.window}
        checks["Z"] = second_difference_report(traj.times, traj.diagnostics["Z"],
                                               1 if spec.p > 1 else -1)
    elif mode is ev.FlowMode.PHYSICAL and spec.regime is Regime.EXTINCTION_OR_BLOWUP:
        doc["Tstar_estimate"] = None
    if mode is ev.FlowMode.PHYSICAL and spec.regime is Regime.EXTINCTION_OR_BLOWUP:
        phi = run.steady().phi
        doc["Tstar_bracket"] = list(ev.separable_bracket(spec, phi, u0))
    doc["checks"] = checks
    if "compare_with" in cfg.initial:
        doc["comparison"] = _comparison(run, u0, traj)
    run.json("summary.json", doc)
    run.csv("trajectory.csv", *_trajectory_rows(traj))
    run.figure("trajectory.png", "plot_trajectory", traj)
    line = f"{len(traj)} samples, {traj.steps} steps, halted = {traj.halted}"
    if doc.get("Tstar_estimate") is not None:
        line += f", T* ~ {doc['Tstar_estimate']:.10g}"
    print(line)
    return EXIT_OK


def cmd_spectrum(run: Run) -> int:
    spec = run.spec
    st = run.steady()
    sp = linearized_spectrum(spec, st.phi)
    count = min(int(run.cfg.data["rates"]["modes"]), sp.modes.shape[1])
    doc = sp.to_dict()
    doc.update(lambda1=st.lambda1, regime=st.regime.value, p=spec.p)
    run.json("spectrum.json", doc)
    run.csv("modes.csv", [f"e{i + 1}" for i in range(count)], sp.modes[:, :count])
    run.figure("spectrum.png", "plot_spectrum", sp)
    print(f"mu[:6] = {np.array2string(sp.mu[:6], precision=6)}  gamma_p = {sp.gamma_p:.10g}")
    return EXIT_OK


def _normalized_trajectory(run, u0, phi, spectrum):
    """Fixed-step normalized trajectory for the rate fit, plus provenance notes.

    Growth and Neutral data start the normalized flow unchanged. In the
    extinction/blow-up regime a physical run estimates T*, shooting refines
    it, and the data are rescaled with the refined value.
    """
    spec, rates = run.spec, run.cfg.data["rates"]
    dt, tau_end = float(rates["dt"]), float(rates["tau_end"])
    ctl = ev.EvolveControls(fixed_dt=dt)
    if spec.regime is not Regime.EXTINCTION_OR_BLOWUP:
        return ev.evolve(spec, u0, ev.FlowMode.NORMALIZED, tau_end, ctl), {}
    phys = ev.evolve(spec, u0, ev.FlowMode.PHYSICAL, run.cfg.time["horizon"], run.controls())
    if phys.Tstar_estimate is None:
        raise ev.EvolutionError("the physical run did not reach the singular time; "
                                "increase time.horizon")
    drift = spec.curve.weights * spectrum.weight * spectrum.modes[:, 0]
    T = ev.shoot_Tstar(spec, u0, phi, phys.Tstar_estimate, drift, tau_end, dt)
    traj = ev.evolve(spec, ev.normalized_initial(u0, spec, T), ev.FlowMode.NORMALIZED, tau_end,
                     ctl)
    return traj, {"Tstar_extrapolated": phys.Tstar_estimate, "Tstar": T}


def cmd_rates(run: Run) -> int:
    spec, rates = run.spec, run.cfg.data["rates"]
    u0 = run.initial()
    mass = mass_of(u0, spec) if spec.regime is Regime.NEUTRAL else None
    if mass is not None and run.cfg.problem["mass_target"] is not None:
        mass = None  # an explicit target wins
    st = run.steady(mass)
    sp = linearized_spectrum(spec, st.phi)
    traj, notes = _normalized_trajectory(run, u0, st.phi, sp)
    report = fit_rate(traj, st.phi, rates["window_fraction"], gamma_p=sp.gamma_p)
    doc = {"regime": spec.regime.value, "p": spec.p, "dt": traj.meta["fixed_dt"],
           "tau_end": float(traj.times[-1]), "gamma_p": sp.gamma_p, "I": sp.I,
           "K": sp.K, "k": sp.k, "mu": sp.mu[:int(rates["modes"])], "fit": report.to_dict(),
           **notes}
    if report.model is RateModel.EXPONENTIAL:
        doc["expansion"] = mode_expansion(traj, sp, rates["tail_fraction"],
                                          rate=report).to_dict()
    else:
        doc["expansion"] = None
    run.json("rates.json", doc)
    m = min(int(rates["modes"]), sp.modes.shape[1])
    hn = perturbation_norms(traj, st.phi)
    y = project_modes(traj.fields - st.phi[None, :], sp, spec.curve, m)
    d = traj.diagnostics
    run.csv("modes_series.csv", ["tau", "h_L2", *(f"y{i + 1}" for i in range(m)), "G", "I", "Z"],
            np.column_stack([traj.times, hn, y, d["G"], d["I"], d["Z"]]))
    run.figure("rates.png", "plot_rates", traj.times, hn, report)
    agree = report.agreement
    print(f"model = {report.model.value}  rate = {report.gamma_fit:.6g}  gamma_p = "
          f"{sp.gamma_p:.6g}" + (f"  (agreement {agree:.2%})" if agree is not None else ""))
    return EXIT_OK


def cmd_verify(run: Run | None, out_dir) -> int:
    results = verify_suite(run.cfg if run else None)
    for r in results:
        print(r.line())
    doc = {"passed": all(r.passed for r in results), "criteria": [r.to_dict() for r in results]}
    if run is not None:
        run.json("verify.json", doc)
    elif out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "verify.json", doc, "none")
    return EXIT_OK if doc["passed"] else EXIT_VERIFY


COMMANDS = {"steady": cmd_steady, "evolve": cmd_evolve, "spectrum": cmd_spectrum,
            "rates": cmd_rates}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdflow", description="Boundary diffusion flows driven "
                                 "by the Dirichlet-to-Neumann map.")
    ap.add_argument("command", choices=[*COMMANDS, "verify"])
    ap.add_argument("--config", help="JSON run configuration (optional for verify)")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--version", action="version", version=f"bdflow {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        if args.config is None:
            if args.command != "verify":
                raise ConfigError(f"'{args.command}' needs --config")
        else:
            run = Run(config_mod.load(args.config), args.out)
        if args.command == "verify":
            return cmd_verify(run, args.out)
        return COMMANDS[args.command](run)
    except (ConfigError, ProblemError) as exc:
        print(f"bdflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"bdflow: solver failure: {exc}", file=sys.stderr)
        if run is not None:
            info = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
            if getattr(exc, "residual", None) is not None:
                info["residual"] = exc.residual
            state = getattr(exc, "state", None)
            if state is not None:
                info.update(time=state.time, min=float(np.min(state.u)),
                            max=float(np.max(state.u)))
            run.json("error.json", info)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
