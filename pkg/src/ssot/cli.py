"""Command-line surface: solve OT instances, benchmark solvers, generate
synthetic adaptation tasks, and run the full training loop.

Exit codes: 0 success, 2 usage/input error, 3 numerical failure. Every
command is seeded and reproducible; output CSVs are byte-identical across
repeat runs except for wall-clock columns. The output root defaults to the
working directory and can be overridden with the SSOT_OUT_DIR environment
variable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import datagen, fileio, nnet, pda, semidual
from .measures import LabeledMeasure, squared_euclidean_cost, uniform_measure
from .sinkhorn import plan_marginal_error, sinkhorn_solve

SOLVERS = ("sinkhorn", "sgd", "sag", "network")

EXIT_NUMERICAL = 3


def _out_root() -> Path:
    return Path(os.environ.get("SSOT_OUT_DIR", "."))


def _resolve_out(path_str: str) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else _out_root() / p


def _require_file(path_str: str) -> Path:
    p = Path(path_str)
    if not p.is_file():
        raise click.UsageError(f"input file not found: {p}")
    return p


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _manifest(command: str, config: dict, seed, outputs: list[str], started: str) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": _git_describe(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@click.group()
def main():
    """Entropic optimal transport solvers and OT-based partial domain
    adaptation experiments."""


@main.group()
def ot():
    """Optimal transport solvers on point-cloud instances."""


@main.group(name="pda")
def pda_group():
    """Synthetic partial-adaptation tasks and training runs."""


@ot.command("solve")
@click.option("--solver", type=click.Choice(SOLVERS), default="sinkhorn", show_default=True)
@click.option("--eps", type=float, default=1.0, show_default=True, help="Entropic regularization.")
@click.option("--src", "src_path", required=True, help="Source point-cloud CSV.")
@click.option("--tgt", "tgt_path", required=True, help="Target point-cloud CSV.")
@click.option("--steps", type=int, default=2000, show_default=True,
              help="Gradient steps for the stochastic solvers.")
@click.option("--lr", type=float, default=None, help="Step size (defaults per solver).")
@click.option("--batch-source", type=int, default=32, show_default=True)
@click.option("--batch-target", type=int, default=32, show_default=True)
@click.option("--max-iter", type=int, default=10000, show_default=True, help="Sinkhorn sweeps.")
@click.option("--tol", type=float, default=1e-9, show_default=True, help="Sinkhorn tolerance.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", default=None, help="Result JSON path (default: stdout only).")
def ot_solve(solver, eps, src_path, tgt_path, steps, lr, batch_source, batch_target,
             max_iter, tol, seed, out_path):
    """Solve one OT instance between two point clouds (uniform weights)."""
    if eps <= 0:
        raise click.UsageError("--eps must be > 0")
    src_points, _ = fileio.load_points_csv(_require_file(src_path))
    tgt_points, _ = fileio.load_points_csv(_require_file(tgt_path))
    mu = uniform_measure(src_points)
    nu = uniform_measure(tgt_points)
    C = squared_euclidean_cost(src_points, tgt_points)
    started = _now()
    t0 = time.perf_counter()
    if solver == "sinkhorn":
        res = sinkhorn_solve(mu, nu, C, eps, max_iter=max_iter, tol=tol)
        value = res.regularized_value
        transport_cost = res.transport_cost
        iterations = res.iterations
        marg = res.marginal_error
    else:
        config = semidual.SemidualConfig(
            epsilon=eps,
            learning_rate=lr if lr is not None else (eps if solver != "network" else 0.01),
            inner_steps=steps,
            solver_kind=solver,
            batch_source=batch_source,
            batch_target=batch_target,
        )
        if solver == "network":
            net = nnet.mlp_init([src_points.shape[1], 32, 1], "identity",
                                seed=seed, zero_final=True)
            _, value = semidual.solve_network(mu, nu, C, net, config, seed)
            v = nnet.forward(net, tgt_points)[0][:, 0]
        else:
            solve = semidual.solve_vector_sgd if solver == "sgd" else semidual.solve_vector_sag
            v = solve(mu, nu, C, config, seed)
            value = semidual.semidual_objective(v, mu, nu, C, eps)
        plan = semidual.recover_plan(v, mu, nu, C, eps)
        transport_cost = float((plan * C).sum())
        iterations = steps
        marg = plan_marginal_error(plan, mu, nu)
    seconds = time.perf_counter() - t0
    result = {
        "solver": solver,
        "value": value,
        "transport_cost": transport_cost,
        "iterations": iterations,
        "seconds": seconds,
        "marginal_error": marg,
    }
    click.echo(json.dumps(result, indent=2))
    if out_path is not None:
        out = _resolve_out(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(result, indent=2) + "\n")
        manifest = _manifest(
            "ot solve",
            {"solver": solver, "eps": eps, "src": str(src_path), "tgt": str(tgt_path),
             "steps": steps, "max_iter": max_iter, "tol": tol},
            seed, [str(out)], started,
        )
        out.with_name(out.stem + "_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _random_instance(n: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    src = rng.standard_normal((n, dim))
    tgt = rng.standard_normal((n, dim)) + 0.5
    return uniform_measure(src), uniform_measure(tgt), squared_euclidean_cost(src, tgt)


@ot.command("bench")
@click.option("--n", type=int, default=32, show_default=True, help="Atoms per side.")
@click.option("--dim", type=int, default=2, show_default=True)
@click.option("--eps", type=float, default=1.0, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--solvers", default="sinkhorn,sgd,sag,network", show_default=True,
              help="Comma-separated subset of sinkhorn,sgd,sag,network.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", default="bench", show_default=True)
def ot_bench(n, dim, eps, epochs, solvers, seed, out_dir):
    """Convergence/timing comparison of the solvers on one random instance.

    Writes one CSV row per (solver, epoch) with the full-support semi-dual
    objective and cumulative seconds, plus a summary JSON with per-epoch
    mean times. One 'epoch' is one Sinkhorn sweep or one gradient update.
    """
    if eps <= 0:
        raise click.UsageError("--eps must be > 0")
    chosen = [s.strip() for s in solvers.split(",") if s.strip()]
    bad = [s for s in chosen if s not in SOLVERS]
    if bad:
        raise click.UsageError(f"unknown solver(s): {', '.join(bad)}")
    started = _now()
    out = _resolve_out(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench.csv"
    csv_path.unlink(missing_ok=True)
    mu, nu, C = _random_instance(n, dim, seed)
    summary = {}
    for solver in chosen:
        if solver == "sinkhorn":
            t0 = time.perf_counter()
            res = sinkhorn_solve(mu, nu, C, eps, max_iter=epochs, tol=0.0)
            elapsed = time.perf_counter() - t0
            # sweeps can stop short of the budget on instances where the
            # marginal error hits exactly zero
            per = elapsed / len(res.objective_history)
            rows = [
                (k + 1, obj, per * (k + 1))
                for k, obj in enumerate(res.objective_history)
            ]
            final = res.objective_history[-1]
        else:
            trace = semidual.TraceRecorder(every=1)
            config = semidual.SemidualConfig(
                epsilon=eps,
                learning_rate=eps if solver != "network" else 0.02,
                inner_steps=epochs,
                solver_kind=solver,
                batch_source=n,
                batch_target=n,
            )
            if solver == "network":
                net = nnet.mlp_init([dim, 32, 1], "identity", seed=seed, zero_final=True)
                _, final = semidual.solve_network(mu, nu, C, net, config, seed, trace=trace)
            else:
                solve = semidual.solve_vector_sgd if solver == "sgd" else semidual.solve_vector_sag
                v = solve(mu, nu, C, config, seed, trace=trace)
                final = semidual.semidual_objective(v, mu, nu, C, eps)
            rows = [r for r in trace.rows if r[0] >= 1]
            elapsed = trace.rows[-1][2]
            per = elapsed / epochs
        fileio.append_trace_csv(csv_path, solver, rows)
        summary[solver] = {
            "final_objective": float(final),
            "mean_seconds_per_epoch": per,
        }
        click.echo(f"{solver}: final objective {final:.6f}, {per * 1e3:.3f} ms/epoch")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    manifest = _manifest(
        "ot bench",
        {"n": n, "dim": dim, "eps": eps, "epochs": epochs, "solvers": chosen},
        seed, [str(csv_path), str(out / "summary.json")], started,
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


_SYNTH_DEFAULTS = datagen.SynthConfig()


@pda_group.command("synth")
@click.option("--k-source", type=int, default=_SYNTH_DEFAULTS.k_source, show_default=True)
@click.option("--k-target", type=int, default=_SYNTH_DEFAULTS.k_target, show_default=True)
@click.option("--per-class", type=int, default=_SYNTH_DEFAULTS.per_class, show_default=True)
@click.option("--dim", type=int, default=_SYNTH_DEFAULTS.dim, show_default=True)
@click.option("--radius", type=float, default=_SYNTH_DEFAULTS.radius, show_default=True)
@click.option("--std", type=float, default=_SYNTH_DEFAULTS.std, show_default=True)
@click.option("--translation", show_default=True,
              default=",".join(str(t) for t in _SYNTH_DEFAULTS.translation),
              help="Comma-separated shift vector (dim components).")
@click.option("--rotation-deg", type=float, default=_SYNTH_DEFAULTS.rotation_deg,
              show_default=True)
@click.option("--target-proportions", default=None,
              help="Comma-separated class proportions for the target (k-target values).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", default="task", show_default=True)
def pda_synth(k_source, k_target, per_class, dim, radius, std, translation,
              rotation_deg, target_proportions, seed, out_dir):
    """Generate a synthetic partial-adaptation task (source.csv, target.csv,
    task.json). Held-out target labels live only in task.json."""
    try:
        props = None
        if target_proportions is not None:
            props = tuple(float(x) for x in target_proportions.split(","))
        config = datagen.SynthConfig(
            k_source=k_source, k_target=k_target, per_class=per_class, dim=dim,
            radius=radius, std=std,
            translation=tuple(float(x) for x in translation.split(",")),
            rotation_deg=rotation_deg, target_proportions=props, seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    started = _now()
    task = datagen.generate(config)
    out = _resolve_out(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_points_csv(out / "source.csv", task.source.measure.points, task.source.labels)
    fileio.save_points_csv(out / "target.csv", task.target_points)
    task_info = {
        "k_source": k_source,
        "k_target": k_target,
        "true_target_prior": task.true_target_prior.tolist(),
        "target_labels_heldout": task.target_labels_heldout.tolist(),
        "config": dataclasses.asdict(config),
    }
    (out / "task.json").write_text(json.dumps(task_info, indent=2) + "\n")
    manifest = _manifest(
        "pda synth", dataclasses.asdict(config), seed,
        [str(out / name) for name in ("source.csv", "target.csv", "task.json")],
        started,
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    click.echo(f"wrote task with {task.source.n_atoms} source rows and "
               f"{task.target_points.shape[0]} target rows to {out}")


def load_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


_CONFIG_FIELDS = {
    "lambda_ot": float, "lambda_ent": float, "epsilon": float,
    "batch_source": int, "batch_target": int, "epochs": int,
    "potential_steps": int, "lr_model": float, "lr_potential": float,
    "pretrain_steps": int, "prior_refresh": str, "ablation": str,
}


def _load_task(task_dir: Path):
    source_pts, source_labels = fileio.load_points_csv(task_dir / "source.csv")
    if source_labels is None:
        raise click.UsageError(f"{task_dir / 'source.csv'} has no label column")
    target_pts, _ = fileio.load_points_csv(task_dir / "target.csv")
    info = json.loads((task_dir / "task.json").read_text())
    source = LabeledMeasure(uniform_measure(source_pts), source_labels, info["k_source"])
    eval_labels = np.asarray(info["target_labels_heldout"], dtype=np.int64)
    return source, target_pts, eval_labels, info


def _dataset_hash(task_dir: Path) -> str:
    digest = hashlib.sha256()
    for name in ("source.csv", "target.csv"):
        digest.update((task_dir / name).read_bytes())
    return digest.hexdigest()


def _run_single_seed(task_dir: str, config_kwargs: dict, out_dir: str) -> dict:
    """One training run in its own directory; used directly and by the
    per-seed process pool."""
    source, target_pts, eval_labels, _ = _load_task(Path(task_dir))
    config = pda.SsotConfig(**config_kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    try:
        state = pda.train_ssot(source, target_pts, config, eval_labels=eval_labels)
    except pda.DivergenceError as exc:
        snapshot = out / "diverged_state"
        _save_state(exc.state, snapshot)
        return {"seed": config.seed, "diverged": True, "snapshot": str(snapshot)}
    fileio.write_csv(out / "metrics.csv", pda.METRIC_COLUMNS, state.metric_rows())
    _save_state(state, out)
    manifest = _manifest(
        "pda run", config_kwargs, config.seed,
        [str(out / "metrics.csv")], started,
    )
    manifest["dataset_sha256"] = _dataset_hash(Path(task_dir))
    manifest["final_target_acc"] = state.metrics[-1].target_acc
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return {
        "seed": config.seed,
        "diverged": False,
        "final_target_acc": state.metrics[-1].target_acc,
        "out_dir": str(out),
    }


def _save_state(state: pda.SsotState, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    nnet.save_mlp(state.feature_net, out / "feature_net")
    nnet.save_mlp(state.classifier_net, out / "classifier_net")
    nnet.save_mlp(state.potential_net, out / "potential_net")
    np.savetxt(out / "importance.csv", state.importance[None, :], delimiter=",")
    if state.metrics:
        fileio.write_csv(out / "metrics.csv", pda.METRIC_COLUMNS, state.metric_rows())


@pda_group.command("run")
@click.option("--task-dir", required=True, help="Directory from `ssot pda synth`.")
@click.option("--config", "config_path", default=None, help="key=value config file.")
@click.option("--epochs", type=int, default=None)
@click.option("--lambda-ot", type=float, default=None)
@click.option("--lambda-ent", type=float, default=None)
@click.option("--eps", "epsilon", type=float, default=None)
@click.option("--batch-source", type=int, default=None)
@click.option("--batch-target", type=int, default=None)
@click.option("--potential-steps", type=int, default=None)
@click.option("--lr-model", type=float, default=None)
@click.option("--lr-potential", type=float, default=None)
@click.option("--pretrain-steps", type=int, default=None)
@click.option("--prior-refresh", type=click.Choice(["iteration", "epoch"]), default=None)
@click.option("--ablate", "ablation", type=click.Choice(list(pda.ABLATIONS)), default=None)
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated seeds; each runs in its own worker and directory.")
@click.option("--out-dir", default="runs", show_default=True)
def pda_run(task_dir, config_path, seeds, out_dir, **flag_values):
    """Train on a synthetic task; one metrics CSV and saved model per seed."""
    task = Path(task_dir)
    for name in ("source.csv", "target.csv", "task.json"):
        if not (task / name).is_file():
            raise click.UsageError(f"input file not found: {task / name}")
    base: dict = {}
    if config_path is not None:
        try:
            raw = load_config_file(_require_file(config_path))
        except ValueError as exc:
            raise click.UsageError(str(exc))
        for key, val in raw.items():
            if key == "seed":
                raise click.UsageError("set seeds with --seeds, not in the config file")
            if key not in _CONFIG_FIELDS:
                raise click.UsageError(f"unknown config key: {key}")
            try:
                base[key] = _CONFIG_FIELDS[key](val)
            except ValueError:
                raise click.UsageError(f"bad value for config key {key}: {val!r}")
    for key, val in flag_values.items():
        if val is not None:
            base[key] = val  # flags override the file
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError(f"bad --seeds value: {seeds!r}")
    if not seed_list:
        raise click.UsageError("--seeds must name at least one seed")

    out = _resolve_out(out_dir)
    jobs = []
    for seed in seed_list:
        kwargs = dict(base, seed=seed)
        try:
            pda.SsotConfig(**kwargs)  # validate before spawning workers
        except ValueError as exc:
            raise click.UsageError(str(exc))
        jobs.append((str(task), kwargs, str(out / f"seed_{seed}")))
    if len(jobs) == 1:
        results = [_run_single_seed(*jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_run_single_seed, *zip(*jobs)))

    diverged = [r for r in results if r["diverged"]]
    for r in results:
        if r["diverged"]:
            click.echo(f"seed {r['seed']}: DIVERGED, snapshot at {r['snapshot']}", err=True)
        else:
            click.echo(f"seed {r['seed']}: target accuracy {r['final_target_acc']:.4f}")
    if diverged:
        sys.exit(EXIT_NUMERICAL)
    accs = [r["final_target_acc"] for r in results]
    click.echo(f"mean target accuracy over {len(accs)} seed(s): {float(np.mean(accs)):.4f}")


if __name__ == "__main__":
    main()
