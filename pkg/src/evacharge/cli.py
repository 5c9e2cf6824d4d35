"""Command-line entry point: simulation, training, benchmarks and reports."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import traces
from .metrics import afd_report, risk_metrics, summarize
from .scenario import Scenario, ScenarioError, load_scenario, load_scenario_cfg

POLICIES = ("no-mct", "greedy", "mappo", "armd", "ca", "of-mip", "rh-mip")


class CliError(Exception):
    pass


def _write_csv(path: Path, header: list[str], rows) -> None:
    traces.write_rows(path, header, rows)


def _scenario(args, variant: str | None = None, fleet: int | None = None) -> Scenario:
    sc = load_scenario(args.scenario, variant if variant is not None else getattr(args, "variant", None))
    if fleet is not None:
        sc = sc.with_fleet_size(fleet)
    return sc


def _seeds(args, sc: Scenario) -> list[int]:
    return list(args.seeds) if args.seeds else list(sc.seeds)


def _need(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(f"--{what} is required for this policy")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} file not found: {p}")
    return p


# ---------------------------------------------------------------- policies
def policy_label(name: str, no_finetune: bool, no_reroute: bool) -> str:
    if name != "armd":
        return name
    return "armd" + ("-nf" if no_finetune else "") + ("-nr" if no_reroute else "")


def build_policy(name: str, opts: dict, sc: Scenario):
    """(policy, router) for a policy name and the checkpoint options."""
    from .simulator import SnapshotRouter

    if name == "no-mct":
        from .policies import HoldPolicy

        return HoldPolicy(), None
    if name == "greedy":
        from .policies import GreedyPolicy

        return GreedyPolicy(), None
    if name in ("mappo", "armd"):
        from .autodiff import ParamStore

        actor = ParamStore.load(_need(opts.get("actor"), "actor"))
        stochastic = not opts.get("greedy_actions", False)
        if name == "mappo":
            from .mappo import ActorPolicy

            return ActorPolicy(actor, stochastic), None
        from .adapt import ArmdPolicy, ExperienceBank
        from .router import make_router, stpm_forecaster

        finetune = not opts.get("no_finetune", False)
        bank = ExperienceBank.load(_need(opts.get("bank"), "bank")) if finetune else None
        pol = ArmdPolicy(actor, bank, finetune=finetune, stochastic=stochastic)
        fc = None
        if not opts.get("no_reroute", False):
            fc = stpm_forecaster(ParamStore.load(_need(opts.get("stpm"), "stpm")))
        return pol, make_router(fc, opts.get("no_reroute", False))
    if name == "ca":
        from .autodiff import ParamStore
        from .mappo import CentralPolicy

        return CentralPolicy(ParamStore.load(_need(opts.get("ca"), "ca")), not opts.get("greedy_actions", False)), SnapshotRouter()
    if name in ("of-mip", "rh-mip"):
        from .mip.drive import MipPolicy, forecast_profiles

        prof = forecast_profiles(sc, opts.get("profile_runs", 10))
        return MipPolicy(prof, "offline" if name == "of-mip" else "rolling"), None
    raise CliError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def run_one(job: tuple) -> tuple[list, dict]:
    """Worker body: one (scenario, variant, policy, seed, fleet) episode."""
    scenario, variant, policy, seed, fleet, opts = job
    from .simulator import run_episode

    sc = load_scenario(scenario, variant)
    if fleet is not None:
        sc = sc.with_fleet_size(fleet)
    pol, router = build_policy(policy, opts, sc)
    res = run_episode(sc, pol, seed, router=router)
    m = risk_metrics(res.queue, res.risk, max(res.n_evac, 1), res.step_min)
    label = policy_label(policy, opts.get("no_finetune", False), opts.get("no_reroute", False))
    row = [sc.name, label, seed, sc.fleet.trucks, m.are, m.psre, m.asre_l, res.total_risk, res.n_evac]
    extra = {}
    out = opts.get("trace_dir")
    if out:
        stem = Path(out) / f"{row[0].replace(':', '_')}_{label}_f{sc.fleet.trucks}_s{seed}"
        traces.write_station_trace(f"{stem}_stations.csv", res)
        traces.write_truck_trace(f"{stem}_trucks.csv", res)
    adaptations = getattr(pol, "adaptations", None)
    if adaptations is not None:
        extra["max_kl"] = max((a.mean_kl for a in adaptations), default=0.0)
        extra["reset_ok"] = all(h == pol.pretrained_hash for h in pol.epoch_hashes)
    return row, extra


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("EVACHARGE_WORKERS", "1")))
    except ValueError as exc:
        raise CliError("EVACHARGE_WORKERS must be an integer") from exc


def _run_jobs(jobs: list[tuple]) -> list[tuple[list, dict]]:
    n = _workers()
    if n == 1 or len(jobs) < 2:
        return [run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(run_one, jobs))


def _opts(args) -> dict:
    return {
        "actor": getattr(args, "actor", None),
        "bank": getattr(args, "bank", None),
        "stpm": getattr(args, "stpm", None),
        "ca": getattr(args, "ca", None),
        "no_finetune": getattr(args, "no_finetune", False),
        "no_reroute": getattr(args, "no_reroute", False),
        "greedy_actions": getattr(args, "greedy_actions", False),
        "profile_runs": getattr(args, "profile_runs", 10),
    }


# ---------------------------------------------------------------- commands
def cmd_simulate(args) -> None:
    sc = _scenario(args, fleet=args.fleet)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = _opts(args)
    opts["trace_dir"] = str(out)
    jobs = [(args.scenario, args.variant, args.policy, s, args.fleet, opts) for s in _seeds(args, sc)]
    rows = [r for r, _ in _run_jobs(jobs)]
    traces.write_summary(out / "summary.csv", rows)


def cmd_evaluate(args) -> None:
    base = load_scenario_cfg(args.scenario)
    variants = args.variants or [None]
    for v in variants:
        if v not in (None, "base") and v not in base.variants:
            raise CliError(f"unknown variant {v!r}")
    opts = _opts(args)
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
        opts["trace_dir"] = args.trace_dir
    jobs = []
    for v in variants:
        sc = _scenario(args, v)
        seeds = _seeds(args, sc)
        for pol in args.policies:
            if pol not in POLICIES:
                raise CliError(f"unknown policy {pol!r}; choose from {', '.join(POLICIES)}")
            for fleet in args.fleets or [None]:
                for s in seeds:
                    jobs.append((args.scenario, v, pol, s, fleet, opts))
    results = _run_jobs(jobs)
    traces.write_summary(args.out, [r for r, _ in results])
    groups: dict[tuple, list[float]] = {}
    for r, _ in results:
        groups.setdefault((r[0], r[1], r[3]), []).append(r[4])
    for (scn, pol, fleet), ares in groups.items():
        mean, se = summarize(ares)
        print(f"{scn} {pol} fleet={fleet} ARE mean={mean:.6g} se={se:.3g} n={len(ares)}")


def cmd_train_mappo(args) -> None:
    from .mappo import PPOConfig, train, train_ca

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    variants = args.variants or [None]
    scs = [_scenario(args, v) for v in variants]
    seeds = list(range(args.train_seed_base, args.train_seed_base + args.n_seeds))
    cfg = PPOConfig(episodes_per_iter=args.episodes_per_iter, lr=args.lr, critic_lr=args.lr)
    log_rows: list[list] = []

    def log(r: dict) -> None:
        log_rows.append([r["iteration"], r["mean_return"], r.get("actor_loss", 0.0), r.get("critic_loss", 0.0), r.get("entropy", 0.0)])

    if args.central:
        res = train_ca(scs[0], seeds, args.iterations, cfg, init_seed=args.seed, time_budget_s=args.time_budget)
        for r in res.log:
            log(r)
        res.actor.save(out / "ca.psto")
    else:
        res = train(scs, seeds, args.iterations, cfg, init_seed=args.seed, time_budget_s=args.time_budget, log_fn=log)
        res.actor.save(out / "actor.psto")
        res.critic.save(out / "critic.psto")
    _write_csv(out / "train_log.csv", ["iteration", "mean_return", "actor_loss", "critic_loss", "entropy"], log_rows)


def cmd_build_bank(args) -> None:
    from .adapt import build_bank
    from .autodiff import ParamStore

    actor = ParamStore.load(_need(args.actor, "actor"))
    critic = ParamStore.load(_need(args.critic, "critic"))
    variants = args.variants or [None]
    scs = [_scenario(args, v) for v in variants]
    seeds = list(range(args.seed_base, args.seed_base + args.n_seeds))
    bank = build_bank(actor, critic, scs, seeds, max_records=args.max_records)
    bank.save(args.out)
    print(f"bank records: {len(bank)}")


def cmd_train_stpm(args) -> None:
    from .stpm import StpmConfig, TrafficDataset, generate_training_data, train_stpm

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset and Path(args.dataset).exists():
        ds = TrafficDataset.load(args.dataset)
    else:
        variants = args.variants or [None]
        scs = [_scenario(args, v) for v in variants]
        seeds = list(range(args.seed_base, args.seed_base + args.n_scenarios))
        ds = generate_training_data(scs, args.n_scenarios, seeds)
        ds.save(args.dataset or out / "dataset.stpd")
    net = _scenario(args).network
    rows: list[list] = []
    res = train_stpm(
        ds,
        net,
        args.epochs,
        lr=args.lr,
        cfg=StpmConfig(),
        seed=args.seed,
        batch=args.batch,
        steps_per_epoch=args.steps_per_epoch,
        time_budget_s=args.time_budget,
        log_fn=lambda r: rows.append([r["epoch"], r["train_loss"], r["val_loss"]]),
    )
    res.params.save(out / "stpm.psto")
    _write_csv(out / "stpm_log.csv", ["epoch", "train_loss", "val_loss"], rows)


def cmd_mip(args) -> None:
    from .mip.drive import MipPolicy, forecast_profiles, instance_from_state
    from .mip.lpfile import export_lp
    from .simulator import Simulation, run_episode

    sc = _scenario(args, fleet=args.fleet)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prof = forecast_profiles(sc, args.profile_runs)
    if args.export_lp:
        sim = Simulation(sc, _seeds(args, sc)[0])
        export_lp(instance_from_state(sim, prof, 0, args.lp_horizon), args.export_lp)
    rows = []
    for s in _seeds(args, sc):
        pol = MipPolicy(prof, args.mode)
        res = run_episode(sc, pol, s)
        m = risk_metrics(res.queue, res.risk, max(res.n_evac, 1), res.step_min)
        rows.append([sc.name, pol.name, s, sc.fleet.trucks, m.are, m.psre, m.asre_l, res.total_risk, res.n_evac])
        sol_rows = []
        for n, sol in enumerate(pol.solutions):
            K, F, P = sol.x.shape if sol.x.size else (0, sol.Q.shape[0], sol.Q.shape[1] - 1)
            for k in range(K):
                for p in range(P):
                    for i in range(F):
                        if sol.x[k, i, p]:
                            sol_rows.append([n, f"x_{k}_{i}_{p}", 1])
                        if sol.U[k, i, p]:
                            sol_rows.append([n, f"U_{k}_{i}_{p}", float(sol.U[k, i, p])])
            for i in range(F):
                for p in range(P):
                    sol_rows.append([n, f"S_{i}_{p}", float(sol.S[i, p])])
                    sol_rows.append([n, f"Q_{i}_{p + 1}", float(sol.Q[i, p + 1])])
            sol_rows.append([n, "objective", float(sol.objective)])
            sol_rows.append([n, "exact", int(sol.exact)])
        _write_csv(out / f"{pol.name}_s{s}_solutions.csv", ["solve", "variable", "value"], sol_rows)
    traces.write_summary(out / "summary.csv", rows)


def cmd_afd_report(args) -> None:
    from .mip.drive import forecast_profiles
    from .policies import HoldPolicy
    from .simulator import run_episode

    variants = args.variants or [None]
    rows, station_rows = [], []
    for v in variants:
        sc = _scenario(args, v)
        prof = forecast_profiles(sc, args.profile_runs)
        for s in _seeds(args, sc):
            res = run_episode(sc, HoldPolicy(), s)
            rep = afd_report(res.arrivals_by_epoch, prof.arrivals)
            name = sc.name
            rows.append([name, s, rep.mean, rep.gini])
            station_rows += [[name, s, i, a] for i, a in enumerate(rep.per_station)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "afd_summary.csv", ["scenario", "seed", "afd_mean", "afd_gini"], rows)
    _write_csv(out / "afd_stations.csv", ["scenario", "seed", "station_id", "afd"], station_rows)


# ---------------------------------------------------------------- parser
def _common(p: argparse.ArgumentParser, variants: bool = False) -> None:
    p.add_argument("--scenario", default="default", help="scenario file, or a bundled name (default, tiny, toy)")
    if variants:
        p.add_argument("--variants", nargs="*", default=None, help="scenario variants (base = no toggles)")
    else:
        p.add_argument("--variant", default=None)
    p.add_argument("--seeds", nargs="*", type=int, default=None, help="episode seeds (default: the scenario's list)")


def _ckpts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--actor")
    p.add_argument("--bank")
    p.add_argument("--stpm")
    p.add_argument("--ca")
    p.add_argument("--no-finetune", action="store_true", help="ARMD without online adaptation (ARMD-NF)")
    p.add_argument("--no-reroute", action="store_true", help="ARMD with snapshot routing (ARMD-NR)")
    p.add_argument("--greedy-actions", action="store_true", help="argmax instead of sampling for learned policies")
    p.add_argument("--profile-runs", type=int, default=10, help="No-MCT runs behind MIP forecast profiles")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evacharge", description="Mobile charging truck dispatch during hurricane evacuations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run episodes and write traces plus a summary")
    _common(p)
    _ckpts(p)
    p.add_argument("--policy", default="greedy", choices=POLICIES)
    p.add_argument("--fleet", type=int, default=None, help="override the truck count (0 = No-MCT)")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="sweep policies x variants x seeds x fleet sizes")
    _common(p, variants=True)
    _ckpts(p)
    p.add_argument("--policies", nargs="+", default=["no-mct", "greedy"])
    p.add_argument("--fleets", nargs="*", type=int, default=None)
    p.add_argument("--trace-dir", default=None)
    p.add_argument("--out", default="summary.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-mappo", help="PPO training of the shared actor and critic")
    _common(p, variants=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--time-budget", type=float, default=420.0, help="seconds")
    p.add_argument("--episodes-per-iter", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-seed-base", type=int, default=1000)
    p.add_argument("--n-seeds", type=int, default=100)
    p.add_argument("--central", action="store_true", help="train the centralized (CA) variant instead")
    p.add_argument("--out", default="checkpoints")
    p.set_defaults(func=cmd_train_mappo)

    p = sub.add_parser("build-bank", help="roll the frozen actor into an experience bank")
    _common(p, variants=True)
    p.add_argument("--actor", required=True)
    p.add_argument("--critic", required=True)
    p.add_argument("--seed-base", type=int, default=2000)
    p.add_argument("--n-seeds", type=int, default=20)
    p.add_argument("--max-records", type=int, default=50_000)
    p.add_argument("--out", default="checkpoints/bank.psto")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("train-stpm", help="generate traffic data and train the travel-time predictor")
    _common(p, variants=True)
    p.add_argument("--n-scenarios", type=int, default=64)
    p.add_argument("--seed-base", type=int, default=500)
    p.add_argument("--dataset", default=None, help="dataset file to reuse or create")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--steps-per-epoch", type=int, default=25)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-budget", type=float, default=330.0, help="seconds")
    p.add_argument("--out", default="checkpoints")
    p.set_defaults(func=cmd_train_stpm)

    p = sub.add_parser("mip", help="OF-MIP / RH-MIP benchmark runs and solution dumps")
    _common(p)
    p.add_argument("--mode", choices=("offline", "rolling"), default="rolling")
    p.add_argument("--fleet", type=int, default=None)
    p.add_argument("--profile-runs", type=int, default=10)
    p.add_argument("--export-lp", default=None, help="write the epoch-0 instance as an LP file")
    p.add_argument("--lp-horizon", type=int, default=3)
    p.add_argument("--out", default="mip_runs")
    p.set_defaults(func=cmd_mip)

    p = sub.add_parser("afd-report", help="arrival forecast deviation of No-MCT runs against forecast profiles")
    _common(p, variants=True)
    p.add_argument("--profile-runs", type=int, default=10)
    p.add_argument("--out", default="afd")
    p.set_defaults(func=cmd_afd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.func(args)
    except (CliError, ScenarioError, OSError, ValueError, KeyError) as exc:
        line = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        sys.stderr.write(json.dumps(line, sort_keys=True) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
