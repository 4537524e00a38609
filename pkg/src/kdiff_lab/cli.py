"""Experiment orchestration: config parsing, subcommand dispatch, CSV/JSON emission.

Usage:
    kdiff-lab theory|dynamics|train|sample --config <path> [--seed N] [--out DIR]

The config is a single JSON file with nested sections; unknown keys are
rejected before anything runs.  One global seed fans out to per-module
streams through a keyed derivation, so adding a consumer never perturbs the
draws of existing ones.  All numeric output uses 17 significant digits
("." decimal separator), which round-trips doubles exactly: re-running a
command with the same config and seed produces byte-identical files.

CSVs are plot-ready; no figures are rendered here.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytic, geometry, kdiff, lindyn, sampler
from .errors import ConfigError, KDiffLabError
from .schedule import (
    EPSILON_LOSS,
    EPSILON_TARGET,
    FLOW_MATCHING,
    U_LOSS,
    V_LOSS,
    V_TARGET,
    X_LOSS,
    X_TARGET,
    TargetSpec,
    TimeMeasure,
    constant_fn,
    k_target,
)
from .seeding import derive_rng

_EXIT_OK = 0
_EXIT_ERROR = 1
_EXIT_CHECK_FAILED = 2

_TOP_KEYS = {
    "seed",
    "output_dir",
    "interval",
    "process",
    "target",
    "loss",
    "time_sampler",
    "data",
    "theory",
    "dynamics",
    "train",
    "sample",
}
_SECTION_KEYS = {
    "target": {"kind", "k", "phi", "psi"},
    "time_sampler": {"kind", "mu", "sigma"},
    "data": {"D", "d", "seed", "spectrum"},
    "theory": {"k_points"},
    "dynamics": {"step_size", "steps", "mode", "batch", "tol"},
    "train": {
        "loss_mode",
        "optimizer",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "batch",
        "steps",
        "clamp_floor",
        "k_trainable",
        "k_init",
        "k_bins",
        "stop_grad_target",
    },
    "sample": {"n_samples", "steps", "solver", "clamp_floor", "net", "k"},
}

_LOSSES = {"u": U_LOSS, "x": X_LOSS, "epsilon": EPSILON_LOSS, "v": V_LOSS}
_TARGETS = {"epsilon": EPSILON_TARGET, "x": X_TARGET, "v": V_TARGET}


def load_config(path) -> dict:
    """Read and validate a JSON config, rejecting unknown keys."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in _SECTION_KEYS.items():
        value = cfg.get(section)
        if isinstance(value, dict):
            bad = set(value) - allowed
            if bad:
                raise ConfigError(f"unknown keys in section {section!r}: {sorted(bad)}")
    return cfg


def _build_process(cfg):
    name = cfg.get("process", "flow_matching")
    if name != "flow_matching":
        raise ConfigError(f"unsupported process {name!r} (only flow_matching ships)")
    return FLOW_MATCHING


def _build_target(cfg, default_k: float = 1.0) -> TargetSpec:
    spec = cfg.get("target", {"kind": "k", "k": default_k})
    if isinstance(spec, str):
        if spec not in _TARGETS:
            raise ConfigError(f"unknown target {spec!r}")
        return _TARGETS[spec]
    kind = spec.get("kind", "k")
    if kind in _TARGETS:
        return _TARGETS[kind]
    if kind == "k":
        return k_target(float(spec.get("k", default_k)))
    if kind == "linear":
        if "phi" not in spec or "psi" not in spec:
            raise ConfigError("linear target needs constant 'phi' and 'psi'")
        phi, psi = float(spec["phi"]), float(spec["psi"])
        return TargetSpec(constant_fn(phi), constant_fn(psi), name=f"linear({phi:g},{psi:g})")
    raise ConfigError(f"unknown target kind {kind!r}")


def _build_loss(cfg):
    name = cfg.get("loss", "u")
    if name not in _LOSSES:
        raise ConfigError(f"unknown loss {name!r}")
    return _LOSSES[name]


def _build_measure(cfg) -> TimeMeasure:
    interval = tuple(cfg.get("interval", (0.0, 1.0)))
    spec = cfg.get("time_sampler", {"kind": "uniform"})
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return TimeMeasure(kind="uniform", interval=interval)
    if kind == "logit_normal":
        return TimeMeasure(
            kind="logit_normal",
            interval=interval,
            mu=float(spec.get("mu", 0.0)),
            sigma_ln=float(spec.get("sigma", 1.0)),
        )
    raise ConfigError(f"unknown time sampler {kind!r}")


def _data_section(cfg) -> dict:
    data = dict(cfg.get("data", {}))
    data.setdefault("D", 16)
    data.setdefault("d", 4)
    return data


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _closed_form_applies(cfg) -> bool:
    # D/(D+d) and D/(D+trace) hold for flow matching + uniform t on [0,1] + unit weighting
    measure = _build_measure(cfg)
    return (
        _build_loss(cfg).follows_target
        and measure.kind == "uniform"
        and measure.interval == (0.0, 1.0)
        and cfg.get("process", "flow_matching") == "flow_matching"
    )


def cmd_theory(cfg: dict, out: Path, seed: int) -> int:
    """Sweep the equilibrium loss over a k grid and report its minimiser."""
    process = _build_process(cfg)
    loss = _build_loss(cfg)
    measure = _build_measure(cfg)
    data = _data_section(cfg)
    k_points = int(cfg.get("theory", {}).get("k_points", 101))
    ks = np.linspace(0.0, 1.0, k_points)

    if data.get("spectrum") is not None:
        spectrum = analytic.Spectrum(np.asarray(data["spectrum"], dtype=np.float64))

        def total(k: float) -> float:
            return analytic.colored_optimal_loss(
                spectrum, k, process=process, loss=loss, measure=measure
            ).total

        rows = [(k, total(k)) for k in ks]
        write_csv(out / "theory_colored.csv", ["k", "delta_total"], rows)
        if _closed_form_applies(cfg):
            k_star = analytic.colored_optimal_k(spectrum)
        else:
            k_star = analytic.argmin_k(total)
        summary = {"k_star": k_star, "delta_at_k_star": total(k_star)}
        write_json(out / "theory_summary.json", summary)
        print(f"theory: colored k_star = {k_star:.6f}")
        return _EXIT_OK

    dims = analytic.DimensionPair(int(data["D"]), int(data["d"]))

    def delta(k: float) -> analytic.OptimalLoss:
        moments = analytic.compute_moments(process, k_target(k), loss, measure)
        return analytic.optimal_loss(moments, dims)

    rows = []
    for k in ks:
        dl = delta(k)
        rows.append((k, dl.total, dl.parallel, dl.perpendicular))
    write_csv(
        out / "theory.csv",
        ["k", "delta_total", "delta_parallel", "delta_perpendicular"],
        rows,
    )
    if _closed_form_applies(cfg):
        k_star = analytic.optimal_k(dims)
    else:
        k_star = analytic.argmin_k(lambda k: delta(k).total)
    summary = {"k_star": k_star, "delta_at_k_star": delta(k_star).total}
    write_json(out / "theory_summary.json", summary)
    print(f"theory: k_star = {k_star:.6f}")
    return _EXIT_OK


def cmd_dynamics(cfg: dict, out: Path, seed: int) -> int:
    """Integrate the linear-model gradient flow and check convergence to equilibrium."""
    process = _build_process(cfg)
    loss = _build_loss(cfg)
    measure = _build_measure(cfg)
    data = _data_section(cfg)
    target = _build_target(cfg, default_k=1.0)
    dyn = cfg.get("dynamics", {})
    flow = lindyn.FlowConfig(
        step_size=float(dyn.get("step_size", 0.5)),
        steps=int(dyn.get("steps", 200)),
        mode=dyn.get("mode", "exact"),
        batch=int(dyn.get("batch", 256)),
    )
    tol = float(dyn.get("tol", 1e-6))

    basis_rng = derive_rng(int(data.get("seed", seed)), "geometry", "basis")
    basis = geometry.random_orthonormal_basis(int(data["D"]), int(data["d"]), basis_rng)
    weight0 = np.zeros((basis.ambient_dim, basis.ambient_dim))
    rng = derive_rng(seed, "lindyn", "stochastic") if flow.mode == "stochastic" else None
    trajectory = lindyn.run_gradient_flow(
        weight0, basis, flow, process, target, loss, measure, rng=rng
    )

    rows = [(rec.step, rec.loss, rec.dist_par, rec.dist_perp) for rec in trajectory]
    write_csv(out / "dynamics.csv", ["step", "loss", "dist_par", "dist_perp"], rows)
    final = trajectory[-1]
    converged = final.dist_par < tol and final.dist_perp < tol
    write_json(
        out / "dynamics_summary.json",
        {
            "converged": converged,
            "final_dist_par": final.dist_par,
            "final_dist_perp": final.dist_perp,
            "tol": tol,
        },
    )
    if not converged:
        print(
            "check failed: convergence_to_equilibrium "
            f"(dist_par {final.dist_par:.3e}, dist_perp {final.dist_perp:.3e}, tol {tol:g})",
            file=sys.stderr,
        )
        return _EXIT_CHECK_FAILED
    print(f"dynamics: converged (dist_par {final.dist_par:.3e}, dist_perp {final.dist_perp:.3e})")
    return _EXIT_OK


def _train_config(cfg: dict, seed: int) -> kdiff.TrainConfig:
    tr = cfg.get("train", {})
    return kdiff.TrainConfig(
        loss_mode=tr.get("loss_mode", "u"),
        optimizer=tr.get("optimizer", "adam"),
        lr=float(tr.get("lr", 1e-2)),
        beta1=float(tr.get("beta1", 0.9)),
        beta2=float(tr.get("beta2", 0.95)),
        adam_eps=float(tr.get("adam_eps", 1e-8)),
        batch=int(tr.get("batch", 256)),
        steps=int(tr.get("steps", 20_000)),
        seed=seed,
        clamp_floor=float(tr.get("clamp_floor", 0.05)),
        k_trainable=bool(tr.get("k_trainable", True)),
        k_init=float(tr.get("k_init", 0.5)),
        stop_grad_target=bool(tr.get("stop_grad_target", False)),
        measure=_build_measure(cfg),
    )


def _theory_k_star(cfg: dict, data: dict) -> float:
    if data.get("spectrum") is not None:
        spectrum = analytic.Spectrum(np.asarray(data["spectrum"], dtype=np.float64))
        if _closed_form_applies(cfg):
            return analytic.colored_optimal_k(spectrum)
        return analytic.argmin_k(
            lambda k: analytic.colored_optimal_loss(
                spectrum, k, loss=_build_loss(cfg), measure=_build_measure(cfg)
            ).total
        )
    dims = analytic.DimensionPair(int(data["D"]), int(data["d"]))
    if _closed_form_applies(cfg):
        return analytic.optimal_k(dims)
    process, loss, measure = _build_process(cfg), _build_loss(cfg), _build_measure(cfg)

    def total(k: float) -> float:
        moments = analytic.compute_moments(process, k_target(k), loss, measure)
        return analytic.optimal_loss(moments, dims).total

    return analytic.argmin_k(total)


def cmd_train(cfg: dict, out: Path, seed: int) -> int:
    """Train the toy model (optionally with a trainable k) and summarise the fixed point."""
    data = _data_section(cfg)
    config = _train_config(cfg, seed)
    k_bins = cfg.get("train", {}).get("k_bins")
    kparam = kdiff.make_kparam(config, n_bins=None if k_bins is None else int(k_bins))

    basis_rng = derive_rng(int(data.get("seed", seed)), "geometry", "basis")
    if data.get("spectrum") is not None:
        source = geometry.ColoredCovariance.from_spectrum(np.asarray(data["spectrum"], dtype=np.float64))
        dim = source.dim
    else:
        source = geometry.random_orthonormal_basis(int(data["D"]), int(data["d"]), basis_rng)
        dim = source.ambient_dim
    net = kdiff.PureLinear.zeros(dim)
    history = kdiff.train(net, kparam, source, config)

    if kparam.is_binned:
        header = ["step", "loss"] + [f"k_t{p:g}" for p in history.probe_points]
        rows = [
            (int(s), l, *kv) for s, l, kv in zip(history.steps, history.losses, history.k_values)
        ]
        final_k = float(history.k_values[-1][history.probe_points.size // 2])
    else:
        header = ["step", "loss", "k"]
        rows = [
            (int(s), l, kv) for s, l, kv in zip(history.steps, history.losses, history.k_values)
        ]
        final_k = float(history.k_values[-1])
    write_csv(out / "history.csv", header, rows)

    summary = {"final_k": final_k, "theory_k_star": _theory_k_star(cfg, data)}
    if config.k_trainable:
        summary["abs_gap"] = abs(final_k - summary["theory_k_star"])
    write_json(out / "train_summary.json", summary)
    gap = summary.get("abs_gap")
    print(
        f"train: final_k = {final_k:.4f}, theory k_star = {summary['theory_k_star']:.4f}"
        + (f", gap = {gap:.4f}" if gap is not None else " (k frozen)")
    )
    return _EXIT_OK


def cmd_sample(cfg: dict, out: Path, seed: int) -> int:
    """Integrate the sampling ODE and report off-manifold energy diagnostics."""
    data = _data_section(cfg)
    smp = cfg.get("sample", {})
    n_samples = int(smp.get("n_samples", 1000))
    run = sampler.SampleRun(
        steps=int(smp.get("steps", 50)),
        solver=smp.get("solver", "heun"),
        clamp_floor=float(smp.get("clamp_floor", 0.05)),
    )

    basis_rng = derive_rng(int(data.get("seed", seed)), "geometry", "basis")
    basis = geometry.random_orthonormal_basis(int(data["D"]), int(data["d"]), basis_rng)

    net_kind = smp.get("net", "optimal_linear")
    if net_kind == "optimal_linear":
        k = float(smp.get("k", 0.5))
        moments = analytic.compute_moments(
            _build_process(cfg), k_target(k), _build_loss(cfg), _build_measure(cfg)
        )
        net = kdiff.PureLinear(lindyn.equilibrium_weight(basis, moments))
        kparam = k
    elif net_kind == "train":
        config = _train_config(cfg, seed)
        k_bins = cfg.get("train", {}).get("k_bins")
        kparam = kdiff.make_kparam(config, n_bins=None if k_bins is None else int(k_bins))
        net = kdiff.PureLinear.zeros(basis.ambient_dim)
        kdiff.train(net, kparam, basis, config)
    else:
        raise ConfigError(f"unknown sample net {net_kind!r}")

    rng = derive_rng(seed, "sampler", "noise")
    z0 = rng.standard_normal((n_samples, basis.ambient_dim))
    z1 = sampler.integrate(run, net, kparam, z0) if n_samples else z0

    header = [f"x{i}" for i in range(basis.ambient_dim)]
    write_csv(out / "samples.csv", header, (row for row in z1))

    def off_manifold_fraction(z: np.ndarray):
        if len(z) == 0:
            return None
        perp = z - z @ basis.projector()
        return float(np.sum(perp * perp) / np.sum(z * z))

    diagnostics = {
        "n_samples": n_samples,
        "solver": run.solver,
        "steps": run.steps,
        "off_manifold_fraction_t0": off_manifold_fraction(z0),
        "off_manifold_fraction_t1": off_manifold_fraction(z1),
    }
    write_json(out / "diagnostics.json", diagnostics)
    print(
        "sample: off-manifold fraction "
        f"{diagnostics['off_manifold_fraction_t0']} -> {diagnostics['off_manifold_fraction_t1']}"
    )
    return _EXIT_OK


_COMMANDS = {
    "theory": cmd_theory,
    "dynamics": cmd_dynamics,
    "train": cmd_train,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kdiff-lab",
        description="Optimal diffusion prediction-target laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = Path(args.out if args.out is not None else cfg.get("output_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, seed)
    except KDiffLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _EXIT_ERROR


def entry_point() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry_point()
