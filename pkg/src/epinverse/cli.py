"""Batch command-line front end.

Commands: `ep`, `mcmc`, `compare`, `synth`, `mesh`; each reads a flat
key-value config (see config.py), writes node-indexed CSV artifacts plus a
versioned summary.json into the output directory, and is reproducible
bit-for-bit from (config, seed).  Numeric CSV output uses full-precision
scientific notation.  No plots are rendered; the CSVs are the plotting
contract.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigKeyError
from .ep import EPOptions, Site
from .errors import EpinverseError
from .factors import LaplacePositivityFactor
from .mcmc import (
    ChainConfig,
    LaplacePositivityPrior,
    Posterior,
    adapt_proposal,
    multi_chain_report,
    overdispersed_inits,
    run_chains,
)
from .nonlinear import LinearModel, NonlinearOptions, run_nonlinear
from .eit import cem
from .eit.mesh import gen_disk_mesh, read_mesh, write_mesh

SCHEMA_VERSION = 1


def _fmt(v: float) -> str:
    return f"{float(v):.17e}"


def _write_vector_csv(path: Path, ids, values, name: str) -> None:
    lines = [f"node,{name}"]
    lines += [f"{int(i)},{_fmt(v)}" for i, v in zip(ids, values)]
    path.write_text("\n".join(lines) + "\n")


def _read_vector_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = [ln.split(",") for ln in path.read_text().splitlines()[1:] if ln]
    ids = np.array([int(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows])
    return ids, vals


def _write_matrix_csv(path: Path, M: np.ndarray) -> None:
    lines = [",".join(_fmt(v) for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n")


def _write_trace_csv(path: Path, rows) -> None:
    lines = ["outer,inner,e_p_mu,e_f_mu,e_p_C,e_f_C"]
    for r in rows:
        lines.append(
            f"{r.outer},{r.inner},{_fmt(r.e_p_mu)},{_fmt(r.e_f_mu)},{_fmt(r.e_p_C)},{_fmt(r.e_f_C)}"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_data_csv(path: Path, cfg: cem.CEMConfig, data: np.ndarray) -> None:
    lines = ["pattern_id,electrode_id,voltage"]
    k = 0
    for p, kept in enumerate(cfg.kept_electrodes()):
        for l in kept:
            lines.append(f"{p},{int(l)},{_fmt(data[k])}")
            k += 1
    path.write_text("\n".join(lines) + "\n")


def _read_data_csv(path: Path, cfg: cem.CEMConfig) -> np.ndarray:
    rows = [ln.split(",") for ln in path.read_text().splitlines()[1:] if ln]
    expected = [
        (p, int(l)) for p, kept in enumerate(cfg.kept_electrodes()) for l in kept
    ]
    if len(rows) != len(expected):
        raise ConfigKeyError(
            f"data file has {len(rows)} rows, expected {len(expected)}", "data_shape_mismatch"
        )
    vals = np.empty(len(rows))
    for k, (row, (p, l)) in enumerate(zip(rows, expected)):
        if (int(row[0]), int(row[1])) != (p, l):
            raise ConfigKeyError(
                f"data row {k} is ({row[0]}, {row[1]}), expected ({p}, {l})",
                "data_shape_mismatch",
            )
        vals[k] = float(row[2])
    return vals


def _cem_config_from(cfg: dict[str, str]) -> cem.CEMConfig:
    L = cfgmod.get_int(cfg, "electrodes", cem.N_ELECTRODES)
    z_raw = cfgmod.get_str(cfg, "impedances", "default")
    if z_raw == "default":
        z = cem.default_config(L).z
    else:
        z = np.asarray(cfgmod.get_float_list(cfg, "impedances"))
        if z.shape != (L,):
            raise ConfigKeyError(f"impedances must list {L} values", "bad_impedances")
    pat_raw = cfgmod.get_str(cfg, "patterns", "adjacent")
    if pat_raw == "adjacent":
        patterns = cem.adjacent_patterns(L)
    else:
        patterns = []
        for tok in pat_raw.split(","):
            a, b = tok.split("-")
            patterns.append((int(a), int(b)))
    amplitude = cfgmod.get_float(cfg, "amplitude", cem.CURRENT_AMPLITUDE)
    return cem.CEMConfig(z=z, patterns=patterns, amplitude=amplitude)


def _build_linear_problem(cfg: dict[str, str], seed: int):
    """Deterministic synthetic linear problem shared by ep and mcmc."""
    m = cfgmod.get_int(cfg, "linear_m", 20)
    n = cfgmod.get_int(cfg, "linear_n", 12)
    k_sparse = cfgmod.get_int(cfg, "linear_sparsity", 3)
    amp = cfgmod.get_float(cfg, "linear_amplitude", 1.0)
    alpha = _check_positive(cfgmod.get_float(cfg, "alpha", 400.0), "alpha")
    lam = _check_positive(cfgmod.get_float(cfg, "lambda", 2.0), "lambda")
    floor = cfgmod.get_float(cfg, "floor", 0.0)
    bg = cfgmod.get_float(cfg, "sigma_bg", 0.0)
    rng = np.random.default_rng(seed)
    if cfgmod.get_bool(cfg, "linear_diagonal", False):
        if m != n:
            raise ConfigKeyError("linear_diagonal requires linear_m == linear_n", "bad_linear_diagonal")
        A = np.diag(rng.uniform(0.5, 1.5, size=n))
    else:
        A = rng.standard_normal((m, n)) / math.sqrt(m)
    x_true = np.full(n, bg)
    idx = rng.choice(n, size=k_sparse, replace=False)
    x_true[idx] = bg + amp
    noise_std = 1.0 / math.sqrt(alpha)
    data = A @ x_true + noise_std * rng.standard_normal(m)
    model = LinearModel(A)
    return model, data, alpha, lam, bg, floor, x_true


def _ep_options(cfg: dict[str, str]) -> EPOptions:
    return EPOptions(
        max_sweeps=cfgmod.get_int(cfg, "ep_max_sweeps", 5),
        site_tol=cfgmod.get_float(cfg, "ep_site_tol", 1e-4),
        sweep_mode=cfgmod.get_str(cfg, "ep_sweep_mode", "serial"),
        on_downdate_failure=cfgmod.get_str(cfg, "ep_on_downdate_failure", "skip_site"),
    )


def _check_positive(value: float, key: str) -> float:
    if not value > 0.0:
        raise ConfigKeyError(f"key {key!r} must be > 0, got {value}", f"bad_{key}")
    return value


def cmd_ep(cfg: dict[str, str], out: Path, seed: int, threads: int) -> dict:
    problem = cfgmod.get_str(cfg, "problem")
    inner = _ep_options(cfg)
    if problem == "linear":
        model, data, alpha, lam, bg, floor, _ = _build_linear_problem(cfg, seed)
        node_ids = np.arange(model.n)
        bg_vec = np.full(model.n, bg)
    elif problem == "eit":
        mesh_path = cfgmod.get_existing_path(cfg, "mesh", "mesh_not_found")
        mesh = read_mesh(mesh_path)
        cem_cfg = _cem_config_from(cfg)
        data_path = cfgmod.get_existing_path(cfg, "data", "data_not_found")
        data = _read_data_csv(data_path, cem_cfg)
        alpha = _check_positive(cfgmod.get_float(cfg, "alpha", cem.ALPHA_DEFAULT), "alpha")
        lam = _check_positive(cfgmod.get_float(cfg, "lambda", cem.LAMBDA_DEFAULT), "lambda")
        floor = cfgmod.get_float(cfg, "floor", cem.SIGMA_FLOOR)
        bg = cfgmod.get_float(cfg, "sigma_bg", cem.SIGMA_BG)
        model = cem.EITForwardModel(mesh, cem_cfg, bg, floor)
        node_ids = mesh.interior_node_ids
        bg_vec = np.full(model.n, bg)
    else:
        raise ConfigKeyError(f"unknown problem {problem!r}", "bad_problem")

    n = model.n
    sites = [
        Site(np.eye(n)[i : i + 1], LaplacePositivityFactor(lam, bg, floor)) for i in range(n)
    ]
    opts = NonlinearOptions(
        alpha=alpha,
        max_outer=cfgmod.get_int(cfg, "ep_max_outer", 10),
        outer_tol=cfgmod.get_float(cfg, "ep_outer_tol", 1e-3),
        inner=inner,
        floor=floor if math.isfinite(floor) else None,
    )
    res = run_nonlinear(model, data, sites, opts, bg_vec)

    std = np.sqrt(np.diag(res.cov))
    _write_vector_csv(out / "mean.csv", node_ids, res.mean, "mean")
    _write_vector_csv(out / "std.csv", node_ids, std, "std")
    if n <= 1000:
        _write_matrix_csv(out / "cov.csv", res.cov)
    _write_trace_csv(out / "trace.csv", res.trace)
    return {
        "problem": problem,
        "n": int(n),
        "outer_iterations": res.outer_iters,
        "total_inner_sweeps": int(sum(r.inner_sweeps for r in res.outer_records)),
        "converged": bool(res.converged),
        "skipped_sites": [
            {"sweep": s.sweep, "site": s.index, "reason": s.reason}
            for s in res.last_ep.skipped_sites
        ],
        "tau": [r.tau for r in res.outer_records],
    }


def cmd_mcmc(cfg: dict[str, str], out: Path, seed: int, threads: int) -> dict:
    problem = cfgmod.get_str(cfg, "problem")
    if problem == "linear":
        model, data, alpha, lam, bg, floor, _ = _build_linear_problem(cfg, seed)
        node_ids = np.arange(model.n)
        center = np.full(model.n, max(bg, floor))
        forward_fn = model.evaluate
        scale0 = 0.1
    elif problem == "eit":
        mesh_path = cfgmod.get_existing_path(cfg, "mesh", "mesh_not_found")
        mesh = read_mesh(mesh_path)
        cem_cfg = _cem_config_from(cfg)
        data = _read_data_csv(cfgmod.get_existing_path(cfg, "data", "data_not_found"), cem_cfg)
        alpha = _check_positive(cfgmod.get_float(cfg, "alpha", cem.ALPHA_DEFAULT), "alpha")
        lam = _check_positive(cfgmod.get_float(cfg, "lambda", cem.LAMBDA_DEFAULT), "lambda")
        floor = cfgmod.get_float(cfg, "floor", cem.SIGMA_FLOOR)
        bg = cfgmod.get_float(cfg, "sigma_bg", cem.SIGMA_BG)
        model = cem.EITForwardModel(mesh, cem_cfg, bg, floor)
        node_ids = mesh.interior_node_ids
        center = np.full(model.n, bg)
        forward_fn = model.evaluate
        scale0 = 0.05 * bg
    else:
        raise ConfigKeyError(f"unknown problem {problem!r}", "bad_problem")

    prior = LaplacePositivityPrior(lam=lam, bg=bg, floor=floor)
    post = Posterior(forward_fn, data, alpha, prior)

    n_chains = cfgmod.get_int(cfg, "mcmc_chains", 8)
    steps = cfgmod.get_int(cfg, "mcmc_steps", 1_000_000)
    burn_in = cfgmod.get_int(cfg, "mcmc_burn_in", steps // 10)
    thin = cfgmod.get_int(cfg, "mcmc_thin", 10)
    init_spread = cfgmod.get_float(cfg, "mcmc_init_spread", 0.0)

    std0 = cfgmod.get_float(cfg, "mcmc_proposal_std", scale0)
    adapted = adapt_proposal(
        post, center, std0, pilot_steps=cfgmod.get_int(cfg, "mcmc_pilot_steps", 4000), seed=seed
    )
    inits = (
        overdispersed_inits(center, init_spread, n_chains, seed=seed, floor=floor)
        if init_spread > 0.0
        else [center.copy() for _ in range(n_chains)]
    )
    same_seed = cfgmod.get_bool(cfg, "mcmc_same_seed", False)
    chain_cfgs = [
        ChainConfig(
            steps=steps,
            burn_in=burn_in,
            thin=thin,
            proposal_std=adapted,
            seed=seed if same_seed else seed * 100003 + 17 * k,
        )
        for k in range(n_chains)
    ]
    if same_seed:
        inits = [inits[0].copy() for _ in range(n_chains)]
    chains = run_chains(chain_cfgs, inits, post, workers=threads)

    for k, ch in enumerate(chains):
        lines = [f"# acceptance_rate={ch.acceptance_rate!r} samples_kept={ch.samples_kept} seed={ch.seed}"]
        lines.append("node,mean,std")
        lines += [
            f"{int(i)},{_fmt(m)},{_fmt(s)}" for i, m, s in zip(node_ids, ch.mean, ch.std)
        ]
        (out / f"chain_{k}.csv").write_text("\n".join(lines) + "\n")

    rep = multi_chain_report(chains)
    case = cfgmod.get_str(cfg, "case", "default")
    table = ["case,mean-err,std-err,R-hat"]
    table.append(f"{case},{_fmt(rep.mean_err)},{_fmt(rep.std_err)},{_fmt(rep.rhat_max)}")
    (out / "table3.csv").write_text("\n".join(table) + "\n")
    _write_vector_csv(out / "grand_mean.csv", node_ids, rep.grand_mean, "mean")
    _write_vector_csv(out / "grand_std.csv", node_ids, rep.grand_std, "std")
    return {
        "problem": problem,
        "chains": n_chains,
        "steps": steps,
        "proposal_std": adapted,
        "acceptance_rates": rep.acceptance_rates,
        "mean_err": rep.mean_err,
        "std_err": rep.std_err,
        "rhat_max": rep.rhat_max,
    }


def cmd_compare(cfg: dict[str, str], out: Path, seed: int, threads: int) -> dict:
    ep_dir = Path(cfgmod.get_str(cfg, "ep_dir"))
    mcmc_dir = Path(cfgmod.get_str(cfg, "mcmc_dir"))
    for p, code in ((ep_dir / "mean.csv", "ep_outputs_not_found"),
                    (mcmc_dir / "grand_mean.csv", "mcmc_outputs_not_found")):
        if not p.is_file():
            raise ConfigKeyError(f"{p} not found", code)
    ids_e, mean_e = _read_vector_csv(ep_dir / "mean.csv")
    _, std_e = _read_vector_csv(ep_dir / "std.csv")
    ids_m, mean_m = _read_vector_csv(mcmc_dir / "grand_mean.csv")
    _, std_m = _read_vector_csv(mcmc_dir / "grand_std.csv")
    if ids_e.shape != ids_m.shape or not np.array_equal(ids_e, ids_m):
        raise ConfigKeyError("ep and mcmc outputs index different nodes", "shape_mismatch")

    denom_m = np.maximum(np.abs(mean_m), 1e-300)
    denom_s = np.maximum(np.abs(std_m), 1e-300)
    lines = ["node,mean_rel_diff,std_rel_diff"]
    for i, dm, ds in zip(ids_e, np.abs(mean_e - mean_m) / denom_m, np.abs(std_e - std_m) / denom_s):
        lines.append(f"{int(i)},{_fmt(dm)},{_fmt(ds)}")
    mean_rel_2norm = float(np.linalg.norm(mean_e - mean_m) / max(np.linalg.norm(mean_m), 1e-300))
    std_rel_2norm = float(np.linalg.norm(std_e - std_m) / max(np.linalg.norm(std_m), 1e-300))
    lines.append(f"ALL,{_fmt(mean_rel_2norm)},{_fmt(std_rel_2norm)}")
    (out / "compare.csv").write_text("\n".join(lines) + "\n")
    return {"mean_rel_2norm": mean_rel_2norm, "std_rel_2norm": std_rel_2norm}


def cmd_synth(cfg: dict[str, str], out: Path, seed: int, threads: int) -> dict:
    mesh_key = cfgmod.get_str(cfg, "fine_mesh", "")
    if mesh_key:
        mesh = read_mesh(cfgmod.get_existing_path(cfg, "fine_mesh", "mesh_not_found"))
    else:
        mesh = gen_disk_mesh(
            cfgmod.get_float(cfg, "radius", cem.TANK_RADIUS),
            cfgmod.get_int(cfg, "electrodes", cem.N_ELECTRODES),
            cfgmod.get_float(cfg, "electrode_coverage", cem.ELECTRODE_COVERAGE),
            cfgmod.get_int(cfg, "fine_target_nodes", 1200),
        )
        write_mesh(mesh, out / "fine_mesh.txt")
    cem_cfg = _cem_config_from(cfg)
    bg = cfgmod.get_float(cfg, "sigma_bg", cem.SIGMA_BG)
    sigma_true = np.full(mesh.n_nodes, bg)
    if "inclusion_cx" in cfg:
        sigma_true = cem.paint_disk_inclusion(
            mesh,
            bg,
            (cfgmod.get_float(cfg, "inclusion_cx"), cfgmod.get_float(cfg, "inclusion_cy")),
            cfgmod.get_float(cfg, "inclusion_radius"),
            cfgmod.get_float(cfg, "inclusion_value"),
        )
    if "noise_std" in cfg:
        noise_std = cfgmod.get_float(cfg, "noise_std")
    else:
        noise_std = 1.0 / math.sqrt(cfgmod.get_float(cfg, "alpha", cem.ALPHA_DEFAULT))
    data, truth = cem.synth_data(mesh, cem_cfg, sigma_true, noise_std, seed)
    _write_data_csv(out / "data.csv", cem_cfg, data)
    _write_vector_csv(out / "sigma_true.csv", np.arange(mesh.n_nodes), sigma_true, "sigma")
    (out / "truth.json").write_text(
        json.dumps(
            {
                "seed": truth["seed"],
                "noise_std": truth["noise_std"],
                "sigma_bg": bg,
                "n_measurements": int(data.shape[0]),
            },
            indent=2,
        )
        + "\n"
    )
    return {"n_measurements": int(data.shape[0]), "noise_std": noise_std, "fine_nodes": mesh.n_nodes}


def cmd_mesh(cfg: dict[str, str], out: Path, seed: int, threads: int) -> dict:
    mesh = gen_disk_mesh(
        cfgmod.get_float(cfg, "radius", cem.TANK_RADIUS),
        cfgmod.get_int(cfg, "electrodes", cem.N_ELECTRODES),
        cfgmod.get_float(cfg, "electrode_coverage", cem.ELECTRODE_COVERAGE),
        cfgmod.get_int(cfg, "target_nodes", 424),
    )
    name = cfgmod.get_str(cfg, "mesh_file", "mesh.txt")
    write_mesh(mesh, out / name)
    return {
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "interior_nodes": len(mesh.interior_node_ids),
        "file": name,
    }


_COMMANDS = {
    "ep": cmd_ep,
    "mcmc": cmd_mcmc,
    "compare": cmd_compare,
    "synth": cmd_synth,
    "mesh": cmd_mesh,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="epinverse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key-value config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for chains")
    args = parser.parse_args(argv)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "ok": False,
        "error": None,
    }
    out = Path(args.out) if args.out else None
    t0 = time.time()
    try:
        cfg = cfgmod.load_config(args.config)
        if out is None:
            out = Path(cfgmod.get_str(cfg, "out", "."))
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else cfgmod.get_int(cfg, "seed", 0)
        summary["seed"] = seed
        result = _COMMANDS[args.command](cfg, out, seed, args.threads)
        summary.update(result)
        summary["ok"] = True
        code = 0
    except ConfigKeyError as exc:
        summary["error"] = exc.code
        summary["error_detail"] = str(exc)
        code = 2
    except EpinverseError as exc:
        summary["error"] = type(exc).__name__
        summary["error_detail"] = str(exc)
        code = 1
    summary["wall_time_s"] = time.time() - t0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if summary["error"]:
        print(f"error: {summary['error']}: {summary.get('error_detail', '')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
