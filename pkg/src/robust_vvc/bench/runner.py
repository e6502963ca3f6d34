"""Training orchestration over the delay bank, evaluation, brute-force oracle and reports.

Run directory layout::

    <out>/config.ini              resolved configuration
    <out>/delay_model.json        mu, sigma, candidates, weights
    <out>/delay_NN/checkpoint.json, curve.csv, train.json, done
    <out>/eval/metrics.csv, metrics.json, steps.csv, voltages.csv, config.ini
    <out>/bruteforce/bruteforce.csv, config.ini
    <out>/report/summary.txt, curves.csv, voltage_trajectories.csv
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import delay as dl
from .. import forecast as fc
from ..env import N_SAMPLES, VVCEnv, q_limits
from ..grid import CaseError, NetworkModel, load_case
from ..marl.agents import Ensemble
from ..marl.training import read_curve, train, write_curve
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

V_MIN, V_MAX = 0.95, 1.05
METRIC_FIELDS = ["method", "AverVolDevia", "AverPowLoss", "AverObjValue", "MaxVolDevia", "VoltageInRange", "steps"]
METHOD_LABELS = {"mpnrs-matd3": "MPNRS-MATD3+DA", "matd3": "MATD3+DA", "maddpg": "MADDPG+DA"}
BRUTEFORCE_MAX_INVERTERS = 3
BRUTEFORCE_MAX_POINTS = 21


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------- building blocks

def network(cfg: ExperimentConfig) -> NetworkModel:
    try:
        return load_case(cfg.case)
    except (CaseError, OSError) as exc:
        raise ConfigError(f"case {cfg.case!r}: {exc}") from None


def profiles(cfg: ExperimentConfig, net: NetworkModel) -> tuple[fc.Profiles, fc.Profiles]:
    """Training and test traces: disjoint seeded synthetic profiles unless CSVs are given."""
    def one(path, seed):
        if path:
            try:
                return fc.read_profiles(path, net)
            except (fc.ForecastError, OSError) as exc:
                raise ConfigError(f"profile {path}: {exc}") from None
        return fc.generate_profiles(seed, cfg.profile_duration_s, net)
    return one(cfg.profile_path, cfg.profile_seed), one(cfg.test_profile_path, cfg.test_profile_seed)


def delay_model(cfg: ExperimentConfig) -> dl.DelayModel:
    rng = (cfg.delay_low, cfg.delay_high)
    try:
        if cfg.delay_history:
            return dl.fit_delay_model(dl.read_delay_csv(cfg.delay_history), cfg.delay_n, rng)
        return dl.make_delay_model(rng, cfg.delay_n, cfg.delay_mu, cfg.delay_sigma)
    except (dl.DelayError, OSError) as exc:
        raise ConfigError(f"delay model: {exc}") from None


def make_env(cfg: ExperimentConfig, net: NetworkModel, prof: fc.Profiles, horizon: float,
             noise_seed: int = 0) -> VVCEnv:
    return VVCEnv(net, prof, horizon, cfg.env_config(noise_seed))


def _write_config(cfg: ExperimentConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    cfg.save(str(directory / "config.ini"))


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh)
    os.replace(tmp, path)


def _delay_dir(out: Path, n: int) -> Path:
    return out / f"delay_{n:02d}"


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------- train

def _check_resume(cfg: ExperimentConfig, out: Path) -> None:
    prev = out / "config.ini"
    if not prev.exists():
        return
    old = ExperimentConfig.load(str(prev))
    # the trained subset may differ between invocations; nothing else may
    if old.replace(delays="", out="") != cfg.replace(delays="", out=""):
        raise ConfigError(f"{out} holds a run made with a different configuration")


def cmd_train(cfg: ExperimentConfig, progress=None) -> list[int]:
    """Train one ensemble per selected delay candidate, skipping those already completed."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _check_resume(cfg, out)
    _write_config(cfg, out)
    net = network(cfg)
    train_prof, _ = profiles(cfg, net)
    model = delay_model(cfg)
    dl.write_model_json(str(out / "delay_model.json"), model)
    trained = []
    for n in cfg.delay_indices():
        d = _delay_dir(out, n)
        if (d / "done").exists():
            log.info("delay index %d already trained; skipping", n)
            continue
        d.mkdir(exist_ok=True)
        horizon = model.candidates[n]
        try:
            env = make_env(cfg, net, train_prof, horizon, noise_seed=cfg.profile_seed)
            res = train(env, cfg.learner(), cfg.episodes, seed=[cfg.train_seed, n],
                        episode_length=cfg.episode_length, progress=progress)
        except (ValueError, FloatingPointError) as exc:
            raise type(exc)(f"delay index {n} ({horizon:g} s): {exc}") from exc
        if not all(np.all(np.isfinite(h.flat)) for a in res.ensemble.agents for h in a.heads):
            raise NumericalError(f"delay index {n}: policy parameters became non-finite")
        _atomic_json(d / "checkpoint.json", res.ensemble.to_dict())
        write_curve(str(d / "curve.csv"), res.curve)
        _atomic_json(d / "train.json", {
            "delay_index": n, "horizon_s": horizon, "episodes": cfg.episodes,
            "stored_transitions": res.stored, "failed_steps": res.failures,
            "iterations": res.ensemble.iterations, "starts": res.starts, "steps": res.steps,
        })
        (d / "done").write_text("ok\n")
        trained.append(n)
    return trained


def load_bank(cfg: ExperimentConfig, model: dl.DelayModel) -> dict[int, Ensemble]:
    out = Path(cfg.out)
    bank = {}
    for n in range(len(model.candidates)):
        p = _delay_dir(out, n) / "checkpoint.json"
        if not p.exists():
            raise ConfigError(f"missing checkpoint for delay index {n} ({p})")
        with open(p) as fh:
            bank[n] = Ensemble.from_dict(json.load(fh))
    return bank


# ---------------------------------------------------------------- eval

@dataclass
class StepMetrics:
    dev_sum: float
    loss_mw: float
    objective: float
    max_dev: float
    in_range: bool
    v: np.ndarray


def test_starts(cfg: ExperimentConfig, env: VVCEnv, max_delay_steps: int) -> list[int]:
    last = len(env.profiles) - 1 - max_delay_steps - (cfg.test_steps - 1)
    if last < env.first_start:
        raise ConfigError("test profile is too short for the requested test segment")
    if cfg.test_start >= 0:
        starts = [cfg.test_start + e * cfg.test_steps for e in range(cfg.eval_episodes)]
        if starts[0] < env.first_start or starts[-1] > last:
            raise ConfigError(f"test segments must start within [{env.first_start}, {last}]")
        return starts
    rng = np.random.default_rng([cfg.eval_seed, 0])
    return [int(s) for s in rng.integers(env.first_start, last + 1, size=cfg.eval_episodes)]


def realized_metrics(env: VVCEnv, state: np.ndarray, q: np.ndarray) -> StepMetrics:
    """Apply ``q`` (clamped to the inverter limits at the realized PV output) to a true state."""
    p_inv = np.clip(state[fc.PV_P, env.inv_bus], env.p_min, np.minimum(env.s_cap, env.p_max))
    lim = q_limits(env.net, p_inv, env.cfg.beta)
    sol = env.solve(state, np.clip(q, -lim, lim), p_inv)
    if not sol.converged:
        raise NumericalError(f"power flow on the realized state failed: {sol.diagnostic}")
    o = env.score(sol)
    ok = bool(np.all((sol.v >= V_MIN - 1e-12) & (sol.v <= V_MAX + 1e-12)))
    return StepMetrics(o.voltage_deviation_sum, o.network_loss, o.weighted, o.max_bus_deviation, ok, sol.v)


def policy_command(env: VVCEnv, ens: Ensemble, t: int) -> np.ndarray:
    """Reactive command of one delay's policy at time ``t``: the worst-sample action on its prediction."""
    samples = env.samples_at(t)
    ratios = env.joint_ratios(ens.select_actions(env.observe(samples)))
    f, _, _, qs, ok = env.evaluate_samples(samples, ratios)
    if not ok:
        raise NumericalError(f"power flow on a predicted sample failed at t={t}")
    return qs[int(np.argmax(f))]


def summarize(rows: list[StepMetrics]) -> dict:
    return {
        "AverVolDevia": float(np.mean([r.dev_sum for r in rows])),
        "AverPowLoss": float(np.mean([r.loss_mw for r in rows])),
        "AverObjValue": float(np.mean([r.objective for r in rows])),
        "MaxVolDevia": float(np.max([r.max_dev for r in rows])),
        "VoltageInRange": float(np.mean([r.in_range for r in rows])),
        "steps": len(rows),
    }


def cmd_eval(cfg: ExperimentConfig, bank: dict[int, Ensemble] | None = None) -> dict:
    """Closed-loop test: compose per-delay commands and apply them after a random true delay."""
    t_start = time.perf_counter()
    out = Path(cfg.out)
    net = network(cfg)
    _, test_prof = profiles(cfg, net)
    model = delay_model(cfg)
    if bank is None:
        bank = load_bank(cfg, model)
    elif sorted(bank) != list(range(len(model.candidates))):
        raise ConfigError("checkpoint bank does not match the delay candidates")
    weights = dl.delay_weights(model)
    order = sorted(range(len(model.candidates)), key=lambda n: (model.candidates[n], n))
    envs = {n: make_env(cfg, net, test_prof, model.candidates[n], noise_seed=cfg.test_profile_seed)
            for n in order}
    max_delay = int(round(model.t_high / cfg.period_s))
    ref_env = envs[order[0]]
    starts = test_starts(cfg, ref_env, max_delay)
    delay_rng = np.random.default_rng([cfg.eval_seed, 1])

    controlled, baseline, steps_rows, volt_rows, episode_rewards = [], [], [], [], []
    for e, t0 in enumerate(starts):
        ep_obj = []
        for k in range(cfg.test_steps):
            t = t0 + k
            per_delay = np.stack([policy_command(envs[n], bank[n], t) for n in order])
            q = dl.compose_command(per_delay, weights[order])
            true_delay = dl.sample_true_delay(model, delay_rng, cfg.period_s)
            idx = t + int(round(true_delay / cfg.period_s))
            state = test_prof.data[idx]
            m = realized_metrics(ref_env, state, q)
            controlled.append(m)
            ep_obj.append(m.objective)
            steps_rows.append(["policy", e, k, t, true_delay, m.dev_sum, m.loss_mw, m.objective, m.max_dev])
            volt_rows.extend([e, k, net.buses[i].id, float(m.v[i])] for i in range(net.n_bus))
            if cfg.no_control:
                b = realized_metrics(ref_env, state, np.zeros(len(net.inverters)))
                baseline.append(b)
                steps_rows.append(["no_control", e, k, t, true_delay, b.dev_sum, b.loss_mw, b.objective, b.max_dev])
        episode_rewards.append(-float(np.mean(ep_obj)))

    results = [{"method": METHOD_LABELS[cfg.algorithm], **summarize(controlled)}]
    if cfg.no_control:
        results.insert(0, {"method": "No control", **summarize(baseline)})

    ev = out / "eval"
    _write_config(cfg, ev)
    with open(ev / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in results:
            w.writerow([_fmt(r[k]) for k in METRIC_FIELDS])
    with open(ev / "steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "episode", "step", "t", "true_delay_s", "dev_sum", "loss_mw", "objective", "max_dev"])
        w.writerows([[_fmt(v) for v in row] for row in steps_rows])
    with open(ev / "voltages.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "bus", "v_pu"])
        w.writerows([[_fmt(v) for v in row] for row in volt_rows])
    report = {
        "metrics": results,
        "episode_rewards": episode_rewards,
        "starts": starts,
        "weights": [float(w) for w in weights],
        "wall_clock_s": time.perf_counter() - t_start,
    }
    with open(ev / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report


# ---------------------------------------------------------------- brute force

@dataclass
class GridResult:
    ratios: np.ndarray  # best ratio per inverter
    value: float  # max_j f_j at the best ratios
    f: np.ndarray  # per-sample objective at the best ratios
    grid: np.ndarray  # ratio levels per inverter
    table: np.ndarray  # robust objective at every grid point, shape (points,) * D


def robust_grid_search(env: VVCEnv, samples: np.ndarray, grid_points: int = 21) -> GridResult:
    """Exhaustive min over a ratio grid of the worst-sample objective (ties keep the first point)."""
    D = len(env.net.inverters)
    if D > BRUTEFORCE_MAX_INVERTERS:
        raise ConfigError(f"brute force supports at most {BRUTEFORCE_MAX_INVERTERS} inverters, case has {D}")
    if not 2 <= grid_points <= BRUTEFORCE_MAX_POINTS:
        raise ConfigError(f"grid resolution must lie in [2, {BRUTEFORCE_MAX_POINTS}]")
    levels = np.linspace(-env.cfg.eta, env.cfg.eta, grid_points)
    table = np.empty((grid_points,) * D)
    best, best_val, best_f = None, math.inf, None
    for idx in itertools.product(range(grid_points), repeat=D):
        a = levels[list(idx)]
        val, f, ok = env.robust_objective(samples, a)
        table[idx] = val
        if ok and val < best_val:
            best, best_val, best_f = a, val, f
    if best is None:
        raise NumericalError("no grid point gives converged power flows on all samples")
    return GridResult(best, float(best_val), best_f, levels, table)


def bruteforce_horizon(model: dl.DelayModel) -> float:
    """Candidate with the largest weight (the only one when N = 1)."""
    return model.candidates[int(np.argmax(dl.delay_weights(model)))]


def cmd_bruteforce(cfg: ExperimentConfig, grid_points: int | None = None) -> list[dict]:
    g = cfg.grid_points if grid_points is None else grid_points
    net = network(cfg)
    if len(net.inverters) > BRUTEFORCE_MAX_INVERTERS:
        raise ConfigError(f"brute force supports at most {BRUTEFORCE_MAX_INVERTERS} inverters, "
                          f"case {cfg.case!r} has {len(net.inverters)}")
    if not 2 <= g <= BRUTEFORCE_MAX_POINTS:
        raise ConfigError(f"grid resolution must lie in [2, {BRUTEFORCE_MAX_POINTS}]")
    _, test_prof = profiles(cfg, net)
    model = delay_model(cfg)
    env = make_env(cfg, net, test_prof, bruteforce_horizon(model), noise_seed=cfg.test_profile_seed)
    t0 = test_starts(cfg, env, int(round(model.t_high / cfg.period_s)))[0]
    rows = []
    for k in range(min(cfg.bruteforce_steps, cfg.test_steps)):
        t = t0 + k
        samples = env.samples_at(t)
        res = robust_grid_search(env, samples, g)
        q_mid, _ = env.dispatch(res.ratios, samples[N_SAMPLES - 1, fc.PV_P])
        rows.append({"step": k, "t": t, "ratios": res.ratios.tolist(), "q_mid_mvar": q_mid.tolist(),
                     "objective": res.value, "f": res.f.tolist()})
    bd = Path(cfg.out) / "bruteforce"
    _write_config(cfg, bd)
    D = len(net.inverters)
    with open(bd / "bruteforce.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", *[f"a_{i + 1}" for i in range(D)], *[f"q_mid_{i + 1}" for i in range(D)],
                    "objective", "f1", "f2", "f3"])
        for r in rows:
            w.writerow([r["step"], r["t"], *map(_fmt, r["ratios"]), *map(_fmt, r["q_mid_mvar"]),
                        _fmt(r["objective"]), *map(_fmt, r["f"])])
    return rows


# ---------------------------------------------------------------- report

def cmd_report(run_dir: str) -> str:
    """Summary table, learning curves and voltage trajectories from a finished run directory."""
    root = Path(run_dir)
    need = [root / "config.ini", root / "eval" / "metrics.json", root / "eval" / "voltages.csv"]
    missing = [str(p) for p in need if not p.exists()]
    delay_dirs = sorted(p for p in root.glob("delay_*") if p.is_dir())
    if not delay_dirs:
        missing.append(str(root / "delay_*"))
    missing += [str(p / "curve.csv") for p in delay_dirs if not (p / "curve.csv").exists()]
    if missing:
        raise ConfigError("incomplete run directory, missing: " + ", ".join(missing))
    cfg = ExperimentConfig.load(str(root / "config.ini"))
    with open(root / "eval" / "metrics.json") as fh:
        metrics = json.load(fh)["metrics"]
    with open(root / "delay_model.json") as fh:
        candidates = json.load(fh)["candidates"]

    rep = root / "report"
    rep.mkdir(exist_ok=True)
    header = f"{'Method':<18}{'AverVolDevia(p.u.)':>20}{'AverPowLoss(MW)':>18}{'AverObjValue':>15}{'MaxVolDevia(p.u.)':>20}"
    lines = [f"case {cfg.case}, {len(candidates)} delay candidates, algorithm {cfg.algorithm}", "", header]
    for m in metrics:
        lines.append(f"{m['method']:<18}{m['AverVolDevia']:>20.4f}{m['AverPowLoss']:>18.4f}"
                     f"{m['AverObjValue']:>15.4f}{m['MaxVolDevia']:>20.4f}")
    base = next((m for m in metrics if m["method"] == "No control"), None)
    if base is not None and base["AverObjValue"] > 0:
        for m in metrics:
            if m is not base:
                gain = 1.0 - m["AverObjValue"] / base["AverObjValue"]
                lines.append(f"\n{m['method']} objective reduction vs no control: {100 * gain:.1f}%")
    text = "\n".join(lines) + "\n"
    (rep / "summary.txt").write_text(text)

    with open(rep / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_index", "delay_s", "episode", "mean_reward", "r_ll", "r_vd", "phi"])
        for d in delay_dirs:
            n = int(d.name.split("_")[1])
            for row in read_curve(str(d / "curve.csv")):
                w.writerow([n, _fmt(candidates[n]), row["episode"], _fmt(row["mean_reward"]),
                            _fmt(row["r_ll"]), _fmt(row["r_vd"]), _fmt(row["phi"])])
    with open(root / "eval" / "voltages.csv", newline="") as src, \
            open(rep / "voltage_trajectories.csv", "w", newline="") as dst:
        dst.write(src.read())
    return text
