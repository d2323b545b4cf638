"""Command-line entry point: ``symbreak <subcommand> [--config file.json] [flags]``.

Every subcommand has a flat table of defaults. A JSON config file may
override any of them and command-line flags override both. Unknown keys are
rejected. The resolved configuration is written to ``config.json`` in the
output directory, which defaults to ``$SYMBREAK_OUT/<subcommand>`` (or
``runs/<subcommand>`` when the variable is unset).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import groups, mmdkernels, pvalue, ridgetheory, synthdata, taskdep
from .ridgetheory import EstimatorMode

FORMAT_VERSION = 1
OUT_ENV = "SYMBREAK_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


_TRAIN = {"epochs": 30, "hidden": (128, 128, 128, 128), "lr": 1e-3, "batch_size": 128}

DEFAULTS = {
    "detect": {"data": "clouds:aniso=16", "group": None, "n_train": 2000, "n_test": 2000, "seed": 0, **_TRAIN},
    "taskdep": {
        "ps": (0.0, 0.25, 0.5, 0.75, 1.0),
        "seeds": (0, 1, 2, 3, 4),
        "n": 4000,
        "shift": 1.0,
        "scorer_seed": 0,
        "epochs": 20,
        "aug_settings": True,
        "seed": 0,
    },
    "pvalue": {
        "data": "clouds:aniso=1",
        "group": "so3",
        "n": 200,
        "kernel": "chamfer",
        "sigma": 1.0,
        "n1": 99,
        "n2": 1,
        "subsample": 16,
        "fractions": (0.0,),
        "epochs": 20,
        "hidden": (64, 64),
        "seed": 0,
        "workers": 1,
    },
    "mmd": {"data": "clouds:aniso=1", "group": "so3", "n": 100, "kernel": "chamfer", "sigma": 1.0, "seed": 0},
    "ridge-sim": {
        "n": 100,
        "d": 500,
        "d0": 200,
        "d_c": 50,
        "sigma_c": 1.0,
        "sigma_ws": (0.01, 0.02, 0.05, 0.1, 0.2, 0.5),
        "sigma_noise": 0.5,
        "lam": 1e-8,
        "trials": 200,
        "modes": ("vanilla", "augmented_invariant"),
        "theory": False,
        "check": None,
        "seed": 0,
        "workers": 1,
    },
    "ridge-theory": {
        "sigma_c": 1.0,
        "sigma_w": 0.01,
        "gamma": 5.0,
        "gamma0": 2.0,
        "gamma_c": 0.5,
        "coupling_factor": 1.0,
        "beta_norm": 1.0,
        "seed": 0,
    },
    "synth": {"data": "swiss:p=0.5", "n": 1000, "seed": 0, "name": "dataset"},
}

CHOICES = {
    "kernel": ("naive", "chamfer", "hausdorff", "classifier"),
    "check": ("thm1", "thm2", "equivalence"),
}


# -- config handling ----------------------------------------------------------------


def _parse_list(text, item_type):
    if isinstance(text, (list, tuple)):
        return tuple(item_type(v) for v in text)
    return tuple(item_type(v) for v in str(text).split(",") if v.strip())


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _coerce(key: str, default, value):
    """Convert ``value`` to the type of ``default``."""
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            out = _parse_bool(value)
        elif isinstance(default, tuple):
            item = type(default[0]) if default else str
            if item is bool:
                item = _parse_bool
            out = _parse_list(value, item)
        elif isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            out = int(value)
        elif isinstance(default, float):
            out = float(value)
        else:
            out = str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    if key in CHOICES and out not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {out!r}")
    return out


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    defaults = DEFAULTS[command]
    unknown = sorted(set(file_cfg) - set(defaults) - {"format_version", "out", "command"})
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    if file_cfg.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {file_cfg['format_version']}")
    cfg = dict(defaults)
    for source in (file_cfg, flags):
        for k, v in source.items():
            if k in defaults and v is not None:
                cfg[k] = _coerce(k, defaults[k], v)
    return cfg


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps({k: _jsonable(v) for k, v in doc.items()}, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# -- datasets -------------------------------------------------------------------------


def _options(rest: str) -> dict:
    opts = {}
    for part in filter(None, rest.split(",")):
        k, eq, v = part.partition("=")
        if not eq:
            raise ConfigError(f"bad dataset option {part!r}")
        opts[k.strip()] = v.strip()
    return opts


def make_data(spec: str, n: int, seed) -> synthdata.LabeledDataset:
    """Build a dataset from a short spec such as ``clouds:aniso=16,points=8``.

    Kinds: ``clouds`` (aniso, points), ``swiss`` (p), ``orbit`` (theta =
    onehot | uniform | modes<k>, r), ``csv`` (path).
    """
    kind, _, rest = spec.partition(":")
    if kind == "csv":
        return synthdata.load_dataset(rest.removeprefix("path="))
    opts = _options(rest)
    try:
        if kind == "clouds":
            return synthdata.canonicalized_clouds(n, int(opts.get("points", 8)), float(opts.get("aniso", 1.0)), seed)
        if kind == "swiss":
            return synthdata.swiss_roll(n, float(opts.get("p", 0.0)), seed)
        if kind == "orbit":
            r = int(opts.get("r", 4))
            theta = opts.get("theta", "onehot")
            if theta == "onehot":
                dist = synthdata.OrbitDistribution.one_hot(r)
            elif theta == "uniform":
                dist = synthdata.OrbitDistribution.uniform(r)
            elif theta.startswith("modes"):
                dist = synthdata.OrbitDistribution.modes(r, int(theta[5:]))
            else:
                raise ConfigError(f"unknown orbit law {theta!r}")
            return synthdata.orbit_dataset(groups.cyclic_rotation_2d(r), [1.0, 0.5], dist, n, seed)
    except synthdata.ConfigurationError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown dataset kind {kind!r} in {spec!r}")


def _item_dim(data: synthdata.LabeledDataset) -> int:
    return data.x.shape[-1]


def _group(text, data) -> groups.GroupAction:
    if not text:
        raise ConfigError("a group is required (--group)")
    try:
        return groups.parse_group(text, _item_dim(data))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg, seed) -> clf.TrainConfig:
    return clf.TrainConfig(epochs=cfg["epochs"], lr=cfg.get("lr", 1e-3), batch_size=cfg.get("batch_size", 128), seed=seed)


def _split_seeds(seed, k=2):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


# -- subcommands -------------------------------------------------------------------------


def cmd_detect(cfg, out: Path) -> int:
    s_train, s_test = _split_seeds(cfg["seed"])
    if cfg["data"].startswith("csv"):
        full = make_data(cfg["data"], 0, cfg["seed"])
        perm = np.random.default_rng(cfg["seed"]).permutation(len(full))
        half = len(full) // 2
        raw_train, raw_test = full.subset(perm[:half]), full.subset(perm[half:])
    else:
        raw_train = make_data(cfg["data"], cfg["n_train"], s_train)
        raw_test = make_data(cfg["data"], cfg["n_test"], s_test)
    group = _group(cfg["group"], raw_train)
    spec = clf.MLPSpec(hidden=tuple(cfg["hidden"]))
    res = clf.task_independent_metric(raw_train, raw_test, group, spec, _train_config(cfg, cfg["seed"]), cfg["seed"])
    write_json(out / "metric.json", {"m": res.test_accuracy, "n_train": res.n_train, "n_test": res.n_test, "seed": cfg["seed"]})
    clf.write_curve(res.curve, out / "curve.csv")
    print(f"m = {res.test_accuracy:.4f}")
    return EXIT_OK


def cmd_taskdep(cfg, out: Path) -> int:
    group = groups.vertical_shift(cfg["shift"])
    canon = taskdep.swiss_roll_canonicalizer(group, cfg["scorer_seed"])
    tc = clf.TrainConfig(epochs=cfg["epochs"])
    rows = []
    for p in cfg["ps"]:
        for seed in cfg["seeds"]:
            s_data, s_test = _split_seeds((cfg["seed"], seed))
            data = synthdata.swiss_roll(cfg["n"], p, s_data)
            tcs = clf.TrainConfig(**{**clf.config_dict(tc), "seed": seed})
            res = taskdep.task_dependent_metrics(data, canon, seed=seed, config=tcs)
            row = {"dataset": "swiss", "p": float(p), "m1": res.m1, "m2": res.m2, "seed": seed, "m2_ce": res.m2_cross_entropy}
            if cfg["aug_settings"]:
                test = synthdata.swiss_roll(cfg["n"], p, s_test)
                acc = taskdep.augmentation_accuracies(data, test, group, config=tcs, seed=seed)
                row.update(acc)
            rows.append(row)
            print(f"p={p:g} seed={seed} m1={res.m1:.4f} m2={res.m2:.4f}")
    taskdep.write_rows(rows, out / "taskdep.csv")
    return EXIT_OK


def _pvalue_config(cfg, fraction=0.0) -> pvalue.PValueConfig:
    kernel = cfg["kernel"]
    distance = "classifier" if kernel == "classifier" else "mmd"
    return pvalue.PValueConfig(
        n1=cfg["n1"],
        n2=cfg["n2"],
        subsample=cfg["subsample"] or None,
        distance=distance,
        kernel=mmdkernels.KernelSpec("chamfer" if distance == "classifier" else kernel, cfg["sigma"]),
        mlp=clf.MLPSpec(hidden=tuple(cfg["hidden"])),
        train=clf.TrainConfig(epochs=cfg["epochs"]),
        augmented_fraction=fraction,
    )


def cmd_pvalue(cfg, out: Path) -> int:
    s_train, s_test = _split_seeds(cfg["seed"])
    train = make_data(cfg["data"], cfg["n"], s_train)
    test = make_data(cfg["data"], cfg["n"], s_test)
    group = _group(cfg["group"], train)
    fractions = cfg["fractions"]
    if len(fractions) == 1:
        res = pvalue.compute_pvalue(train, test, group, _pvalue_config(cfg, fractions[0]), cfg["seed"], cfg["workers"])
        pvalue.write_histogram_csv(res, out / "histogram.csv")
        pvalue.write_summary(res, out / "summary.json")
        print(f"p = {res.p:.4f}")
        return EXIT_OK
    sweep = pvalue.distance_sweep(train, test, group, _pvalue_config(cfg), fractions, cfg["seed"], cfg["workers"])
    write_csv(out / "sweep.csv", ["fraction", "mean_distance", "p"], [(r.fraction, r.mean_distance, r.p) for r in sweep.rows])
    pvalue.write_histogram_csv(sweep.rows[0].result, out / "histogram.csv")
    write_json(out / "summary.json", {"spearman": sweep.spearman, "non_increasing": sweep.non_increasing})
    print(f"spearman = {sweep.spearman:.4f}")
    return EXIT_OK


def cmd_mmd(cfg, out: Path) -> int:
    s_a, s_b, s_g = _split_seeds(cfg["seed"], 3)
    a = make_data(cfg["data"], cfg["n"], s_a)
    b = make_data(cfg["data"], cfg["n"], s_b)
    group = _group(cfg["group"], a)
    if cfg["kernel"] == "classifier":
        raise ConfigError("the mmd command needs a kernel, not the classifier distance")
    ref = synthdata.transform_items(b, group, np.random.default_rng(s_g))
    res = mmdkernels.mmd(a.x, ref.x, mmdkernels.KernelSpec(cfg["kernel"], cfg["sigma"]), a.mask, ref.mask)
    write_json(out / "mmd.json", {"mmd": res.value, "xx": res.xx_mean, "yy": res.yy_mean, "xy": res.xy_mean})
    print(f"mmd = {res.value:.6g}")
    return EXIT_OK


def _check_thm1(cfg, out: Path) -> bool:
    group = groups.permute_first(7, 10)
    rng = np.random.default_rng(cfg["seed"])
    A = rng.standard_normal((10, 10))
    sigma = A @ A.T / 10 + 0.5 * np.eye(10)
    beta = synthdata.invariant_beta(group, 10, 1.0, rng)
    rows, ok = [], True
    for label, sig in (("general", sigma), ("invariant", groups.symmetrize_covariance(group, sigma))):
        prob = ridgetheory.RidgeProblem(sig, beta, 1.0, 100, 0.0, group)
        mc = ridgetheory.monte_carlo_risks(prob, ridgetheory.MODES, 2000, cfg["seed"], cfg["workers"])
        for mode in ridgetheory.MODES:
            formula = ridgetheory.expected_risk_underparam(prob, mode)
            rel = abs(mc[mode].mean - formula) / formula
            ok &= rel < 0.05
            rows.append((label, mode.value, mc[mode].mean, formula, rel))
    write_csv(out / "check_thm1.csv", ["covariance", "mode", "mc_risk", "formula", "rel_error"], rows)
    return ok


def _check_thm2(cfg, out: Path) -> bool:
    group = groups.permute_first(101, 300)
    beta = synthdata.invariant_beta(group, 300, 1.0, cfg["seed"])
    prob = ridgetheory.RidgeProblem(np.eye(300), beta, 1.0, 100, 0.0, group)
    mc = ridgetheory.monte_carlo_risk(prob, EstimatorMode.AUGMENTED, 500, cfg["seed"], cfg["workers"])
    det = ridgetheory.dof_and_deterministic_risk(prob, EstimatorMode.AUGMENTED)
    closed = ridgetheory.isotropic_augmented_risk(2.0)
    rel = abs(mc.mean - closed) / closed
    write_csv(out / "check_thm2.csv", ["mc_risk", "deterministic_risk", "closed_form", "rel_error"], [(mc.mean, det.risk, closed, rel)])
    return rel < 0.10


def _check_equivalence(cfg, out: Path) -> bool:
    group = groups.permute_first(3, 3)
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    for _ in range(100):
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        worst = max(worst, ridgetheory.augmentation_equivalence_check(X, y, 0.1, group))
    write_csv(out / "check_equivalence.csv", ["instances", "max_deviation"], [(100, worst)])
    return worst < 1e-8


def cmd_ridge_sim(cfg, out: Path) -> int:
    check = cfg["check"]
    if check:
        ok = {"thm1": _check_thm1, "thm2": _check_thm2, "equivalence": _check_equivalence}[check](cfg, out)
        print(f"{check}: {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_NUMERIC
    modes = [ridgetheory.as_mode(m) for m in cfg["modes"]]
    header = ["sigma_w", "mode", "mean_risk", "std_risk", "trials"]
    if cfg["theory"]:
        header += ["theory_bias", "theory_variance", "theory_risk"]
    rows = []
    for sw in cfg["sigma_ws"]:
        prob, _ = ridgetheory.minimal_model_problem(
            cfg["n"], cfg["d"], cfg["d0"], cfg["d_c"], cfg["sigma_c"], sw, cfg["sigma_noise"], cfg["lam"], cfg["seed"]
        )
        mc = ridgetheory.monte_carlo_risks(prob, modes, cfg["trials"], (cfg["seed"], int(round(sw * 1e9))), cfg["workers"])
        for m in modes:
            row = [sw, m.value, mc[m].mean, mc[m].std, cfg["trials"]]
            if cfg["theory"]:
                t = ridgetheory.dof_and_deterministic_risk(prob, m)
                row += [t.bias, t.variance, t.risk]
            rows.append(row)
            print(f"sigma_w={sw:g} {m.value}: {mc[m].mean:.4f} +- {mc[m].std:.4f}")
    write_csv(out / "ridge_sim.csv", header, rows)
    return EXIT_OK


def cmd_ridge_theory(cfg, out: Path) -> int:
    sc, sw, g, g0, gc = cfg["sigma_c"], cfg["sigma_w"], cfg["gamma"], cfg["gamma0"], cfg["gamma_c"]
    try:
        k, a = ridgetheory.minimal_model_closed_forms(sc, sw, g, gc)
        k_inv, a_inv = ridgetheory.minimal_model_closed_forms((sc + sw) / 2, sw, g0, gc)
        spec = ridgetheory.MinimalModelSpec(sc, sw, 0, None, cfg["coupling_factor"])
        beta = np.zeros(1)
        beta[0] = cfg["beta_norm"]
        rep = ridgetheory.theorem3_limits(spec, g, g0, gc, beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    doc = {
        "kappa": k,
        "alpha": a,
        "kappa_inv": k_inv,
        "alpha_inv": a_inv,
        "variance_factor": a / (1 - a) if a < 1 else float("inf"),
        "variance_factor_inv": a_inv / (1 - a_inv) if a_inv < 1 else float("inf"),
        **{f"limit_{key}": val for key, val in rep.__dict__.items()},
    }
    if g0 > 1:
        doc["isotropic_augmented_risk"] = ridgetheory.isotropic_augmented_risk(g0, cfg["beta_norm"], 1.0)
    write_json(out / "theory.json", doc)
    print(json.dumps({k_: _jsonable(v) for k_, v in doc.items()}, sort_keys=True))
    return EXIT_OK


def cmd_synth(cfg, out: Path) -> int:
    data = make_data(cfg["data"], cfg["n"], cfg["seed"])
    csv_path, _ = synthdata.save_dataset(data, out / cfg["name"], {"spec": cfg["data"], "seed": cfg["seed"]})
    print(csv_path)
    return EXIT_OK


def cmd_ridge(config: dict) -> int:
    """Run the ridge simulation (and optional theory columns or check) from a raw config dict."""
    cfg = resolve_config("ridge-sim", config, {})
    out = _out_dir("ridge-sim", None, config.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {"command": "ridge-sim", "format_version": FORMAT_VERSION, **cfg})
    return cmd_ridge_sim(cfg, out)


COMMANDS = {
    "detect": cmd_detect,
    "taskdep": cmd_taskdep,
    "pvalue": cmd_pvalue,
    "mmd": cmd_mmd,
    "ridge-sim": cmd_ridge_sim,
    "ridge-theory": cmd_ridge_theory,
    "synth": cmd_synth,
}


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symbreak", description="Measure distributional symmetry breaking.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with a flat key-value configuration")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/{name})")
        for key, default in defaults.items():
            kw = {"default": None, "dest": key}
            if key in CHOICES:
                kw["choices"] = CHOICES[key]
            if isinstance(default, bool):
                kw["help"] = f"true/false (default {default})"
            else:
                shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
                kw["help"] = f"default: {shown}"
            p.add_argument("--" + key.replace("_", "-"), **kw)
    return parser


def _out_dir(command: str, cli_out, file_out) -> Path:
    if cli_out:
        return Path(cli_out)
    if file_out:
        return Path(file_out)
    base = os.environ.get(OUT_ENV)
    return Path(base) / command if base else Path("runs") / command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    try:
        file_cfg = _load_config_file(args.config)
        cfg = resolve_config(command, file_cfg, flags)
        if command == "detect" and not cfg["group"]:
            print(f"usage: symbreak {command} --group GROUP [options]", file=sys.stderr)
            raise ConfigError("missing required --group")
        out = _out_dir(command, args.out, file_cfg.get("out"))
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "config.json", {"command": command, "format_version": FORMAT_VERSION, **cfg})
        return COMMANDS[command](cfg, out)
    except (ArithmeticError, np.linalg.LinAlgError, pvalue.DistanceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
