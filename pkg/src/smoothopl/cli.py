"""Command-line experiment harness.

Subcommands: generate, convert, fit-logging, train, evaluate, fig1, sweep,
report. Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
errors. Every emitted table starts with a ``#`` comment line holding the
resolved configuration as JSON.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .bounds import BoundConfig, paper_default_alpha, paper_default_tau
from .data import (
    BlobSpec,
    Fig1Spec,
    convert_to_bandit,
    evaluate_policy_reward,
    generate_blobs,
    generate_fig1_bandit,
    load_logged_csv,
    load_supervised_csv,
    save_logged_csv,
    save_supervised_csv,
)
from .estimators import EstimatorSpec, estimate_risk
from .policies import McConfig, fit_logging_policy, load_params, save_params
from .trainer import OBJECTIVES, TrainConfig, make_prior, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

SWEEP_COLUMNS = ["eta0", "objective", "policy_class", "alpha_or_tau", "seed", "test_reward"]
FIG1_COLUMNS = ["action", "true_reward", "ips_estimate", "ipsmin_estimate", "ips_stderr", "ipsmin_stderr"]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _provenance(config):
    return "# " + json.dumps(config, sort_keys=True, default=str)


def _write_table(path, config, header, rows):
    with Path(path).open("w", newline="") as fh:
        fh.write(_provenance(config) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# ----------------------------------------------------------------------------
# single-context clipping experiment


def run_fig1(n=50_000, M=100.0, seeds=(0,), out=None):
    """IPS and IPS-min reward estimates of every Dirac policy.

    Returns the table as a list of rows (1-indexed actions) and writes it to
    ``out`` when given. Estimates are rewards (negated risks) averaged over
    ``seeds``; stderr columns are zero for a single seed.
    """
    spec = Fig1Spec(n_samples=n)
    seeds = list(seeds)
    K = spec.n_actions
    ips = np.zeros((len(seeds), K))
    ipsmin = np.zeros((len(seeds), K))
    s_ips, s_min = EstimatorSpec.ips(), EstimatorSpec.ips_min(M)
    for j, seed in enumerate(seeds):
        ds = generate_fig1_bandit(spec, seed)
        for a in range(K):
            dirac = (ds.actions == a).astype(np.float64)
            ips[j, a] = -estimate_risk(s_ips, ds, dirac).value
            ipsmin[j, a] = -estimate_risk(s_min, ds, dirac).value

    def stderr(x):
        return x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]) if x.shape[0] > 1 else np.zeros(K)

    rows = []
    true = spec.rewards()
    e_ips, e_min = stderr(ips), stderr(ipsmin)
    for a in range(K):
        rows.append([a + 1, true[a], ips[:, a].mean(), ipsmin[:, a].mean(), e_ips[a], e_min[a]])
    if out is not None:
        cfg = {"command": "fig1", "n": n, "M": M, "seeds": seeds, "n_actions": K, "eps": spec.eps}
        _write_table(out, cfg, FIG1_COLUMNS, [[r[0]] + [_fmt(v) for v in r[1:]] for r in rows])
    return rows


# ----------------------------------------------------------------------------
# Sweep configuration


DEFAULT_SWEEP = {
    "data": {
        "source": "blobs",
        "path": "",
        "test_path": "",
        "K": "10",
        "d": "20",
        "n": "20000",
        "n_test": "10000",
        "class_sep": "1.0",
        "noise_sd": "0.3",
    },
    "sweep": {
        "eta0": "0, 0.25, 0.5, 0.75, 1",
        "objectives": "ours",
        "policy_classes": "gaussian",
        "alphas": "paper-default",
        "taus": "paper-default",
        "seeds": "0, 1, 2, 3, 4",
        "global_seed": "0",
    },
    "train": {
        "lr": "0.1",
        "epochs": "20",
        "batch_size": "",
        "S": "32",
        "delta": "0.05",
        "split_frac": "0.05",
    },
    "output": {"dir": "run"},
}


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def load_config(path=None, overrides=()):
    """Read an INI file and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    cp.read_dict(DEFAULT_SWEEP)
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, opt = key.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, opt, value)
    return resolve_config({s: dict(cp.items(s)) for s in cp.sections()})


def resolve_config(raw):
    """Validate and type a raw section dictionary."""
    try:
        data, sweep, tr, out = raw["data"], raw["sweep"], raw["train"], raw["output"]
        eta0 = [float(v) for v in _split_list(sweep["eta0"])]
        objectives = _split_list(sweep["objectives"])
        classes = _split_list(sweep["policy_classes"])
        alphas = _split_list(sweep["alphas"])
        taus = _split_list(sweep["taus"])
        seeds = [int(v) for v in _split_list(sweep["seeds"])]
        cfg = {
            "data": {
                "source": data["source"],
                "path": data.get("path", ""),
                "test_path": data.get("test_path", ""),
                "K": int(data["K"]),
                "d": int(data["d"]),
                "n": int(data["n"]),
                "n_test": int(data["n_test"]),
                "class_sep": float(data["class_sep"]),
                "noise_sd": float(data["noise_sd"]),
            },
            "sweep": {
                "eta0": eta0,
                "objectives": objectives,
                "policy_classes": classes,
                "alphas": alphas,
                "taus": taus,
                "seeds": seeds,
                "global_seed": int(sweep["global_seed"]),
            },
            "train": {
                "lr": float(tr["lr"]),
                "epochs": int(tr["epochs"]),
                "batch_size": int(tr["batch_size"]) if str(tr.get("batch_size", "")).strip() else None,
                "S": int(tr["S"]),
                "delta": float(tr["delta"]),
                "split_frac": float(tr["split_frac"]),
            },
            "output": {"dir": out["dir"]},
        }
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    if not (eta0 and objectives and classes and seeds):
        raise ConfigError("eta0, objectives, policy_classes and seeds must be nonempty")
    if any(not 0.0 <= e <= 1.0 for e in eta0):
        raise ConfigError("eta0 values must lie in [0, 1]")
    bad = [o for o in objectives if o not in OBJECTIVES or o == "estimate"]
    if bad:
        raise ConfigError(f"unknown objectives {bad}")
    bad = [c for c in classes if c not in ("gaussian", "mixed_logit")]
    if bad:
        raise ConfigError(f"sweep policy classes must be gaussian or mixed_logit, got {bad}")
    for a in alphas:
        if a not in ("paper-default", "adaptive"):
            try:
                if not 0.0 <= float(a) <= 1.0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"alpha setting {a!r} must be in [0, 1], 'paper-default' or 'adaptive'") from None
    for t in taus:
        if t != "paper-default":
            try:
                if not 0.0 < float(t) < 1.0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"tau setting {t!r} must be in (0, 1) or 'paper-default'") from None
    if cfg["data"]["source"] not in ("blobs", "csv"):
        raise ConfigError("data.source must be 'blobs' or 'csv'")
    if cfg["data"]["source"] == "csv" and not (cfg["data"]["path"] and cfg["data"]["test_path"]):
        raise ConfigError("csv source needs data.path and data.test_path")
    if cfg["train"]["epochs"] < 1 or cfg["train"]["lr"] <= 0 or cfg["train"]["S"] < 1:
        raise ConfigError("train.epochs, train.lr and train.S must be positive")
    if not 0.0 < cfg["train"]["delta"] < 1.0:
        raise ConfigError("train.delta must lie in (0, 1)")
    return cfg


def _derived_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def sweep_cells(cfg):
    """Cells of the factorial design (without seeds), in output order."""
    sw = cfg["sweep"]
    cells = []
    for eta in sw["eta0"]:
        cells.append((eta, "logging", "softmax", "-"))
        for obj in sw["objectives"]:
            settings = sw["alphas"] if obj in ("ours", "lp") else sw["taus"]
            for pc in sw["policy_classes"]:
                for s in settings:
                    cells.append((eta, obj, pc, s))
    return cells


def _load_sweep_data(cfg, seed):
    d = cfg["data"]
    if d["source"] == "csv":
        return load_supervised_csv(d["path"]), load_supervised_csv(d["test_path"])
    g = cfg["sweep"]["global_seed"]
    base = dict(K=d["K"], d=d["d"], class_sep=d["class_sep"], noise_sd=d["noise_sd"])
    train_ds = generate_blobs(BlobSpec(n=d["n"], seed=_derived_seed(g, seed, 1), **base))
    test_ds = generate_blobs(BlobSpec(n=d["n_test"], seed=_derived_seed(g, seed, 2), **base))
    return train_ds, test_ds


def run_sweep(cfg, out_dir=None, log=None):
    """Run every cell for every seed; write ``sweep.csv`` and ``config.json``.

    Returns the list of result rows.
    """
    out = Path(out_dir or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1))
    sw, tr = cfg["sweep"], cfg["train"]
    g = sw["global_seed"]
    rows = []
    for seed in sw["seeds"]:
        sup, test = _load_sweep_data(cfg, seed)
        mu0, held = fit_logging_policy(sup, 1.0, split_frac=tr["split_frac"], seed=_derived_seed(g, seed, 3))
        rest = np.setdiff1d(np.arange(sup.n), held)
        test_seed = _derived_seed(g, seed, 5)
        for eta in sw["eta0"]:
            logging = mu0.__class__(mu0.theta, eta)
            logged = convert_to_bandit(sup.subset(rest), logging, _derived_seed(g, seed, 4, int(round(eta * 1e6))))
            n = logged.n
            rows.append([eta, "logging", "softmax", "-", seed, evaluate_policy_reward(test, logging, test_seed)])
            for cell in sweep_cells(cfg):
                if cell[0] != eta or cell[1] == "logging":
                    continue
                _, obj, pc, setting = cell
                cell_id = f"eta0={eta} objective={obj} policy_class={pc} setting={setting} seed={seed}"
                try:
                    adaptive = setting == "adaptive"
                    if obj in ("ours", "lp"):
                        alpha = paper_default_alpha(n) if setting in ("paper-default", "adaptive") else float(setting)
                        tau = None
                    else:
                        alpha = paper_default_alpha(n)
                        tau = paper_default_tau(n) if setting == "paper-default" else float(setting)
                    tcfg = TrainConfig(
                        objective=obj,
                        bound=BoundConfig(delta=tr["delta"], alpha=alpha),
                        tau=tau,
                        policy_class=pc,
                        lr=tr["lr"],
                        epochs=tr["epochs"],
                        batch_size=tr["batch_size"],
                        mc=McConfig(S=tr["S"], seed=_derived_seed(g, seed, 6)),
                        adaptive_alpha=adaptive,
                        seed=_derived_seed(g, seed, 7),
                    )
                    rep = train(logged, tcfg, make_prior(logging, pc), test=test, test_seed=test_seed)
                except Exception as exc:  # identify the failing cell
                    raise RuntimeError(f"cell failed ({cell_id}): {exc}") from exc
                rows.append([eta, obj, pc, setting, seed, rep.test_reward])
                if log:
                    log(f"{cell_id} test_reward={rep.test_reward:.4f}")
    _write_table(
        out / "sweep.csv",
        cfg,
        SWEEP_COLUMNS,
        [[_fmt(float(r[0])), r[1], r[2], r[3], r[4], _fmt(float(r[5]))] for r in rows],
    )
    return rows


# ----------------------------------------------------------------------------
# Report


def emit_report(run_dir):
    """Aggregate ``sweep.csv`` over seeds.

    Writes ``summary.csv`` (mean and standard error per cell), one
    gnuplot-ready ``curve_<objective>_<policy_class>.dat`` per
    (objective, policy_class), and ``missing.txt`` listing missing or
    corrupt cells. Returns ``(summary_rows, problems)``.
    """
    run = Path(run_dir)
    cfg_path = run / "config.json"
    sweep_path = run / "sweep.csv"
    problems = []
    cfg = None
    if cfg_path.exists():
        try:
            cfg = json.loads(cfg_path.read_text())
        except json.JSONDecodeError:
            problems.append("config.json is corrupt")
    else:
        problems.append("config.json is missing")
    values = {}
    if sweep_path.exists():
        with sweep_path.open() as fh:
            lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != SWEEP_COLUMNS:
            problems.append(f"sweep.csv has unexpected header {header}")
        else:
            for lineno, row in enumerate(reader, start=3):
                if len(row) != len(SWEEP_COLUMNS):
                    problems.append(f"sweep.csv line {lineno}: wrong field count")
                    continue
                try:
                    eta, reward = float(row[0]), float(row[5])
                    seed = int(row[4])
                    if not math.isfinite(reward):
                        raise ValueError
                except ValueError:
                    problems.append(f"sweep.csv line {lineno}: corrupt values")
                    continue
                values.setdefault((eta, row[1], row[2], row[3]), {})[seed] = reward
    else:
        problems.append("sweep.csv is missing")
    if cfg is not None:
        try:
            expected = [tuple(c) for c in sweep_cells(cfg)]
            seeds = cfg["sweep"]["seeds"]
        except (KeyError, TypeError):
            problems.append("config.json lacks sweep settings")
            expected, seeds = sorted(values), None
    else:
        expected, seeds = sorted(values), None
    for cell in expected:
        got = values.get(cell, {})
        for s in seeds or []:
            if s not in got:
                problems.append(f"missing cell eta0={cell[0]} objective={cell[1]} policy_class={cell[2]} setting={cell[3]} seed={s}")
    summary = []
    for cell in expected:
        rewards = np.array(list(values.get(cell, {}).values()), dtype=float)
        k = rewards.size
        mean = float(rewards.mean()) if k else float("nan")
        se = float(rewards.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        summary.append([cell[0], cell[1], cell[2], cell[3], k, mean, se])
    meta = {"command": "report", "run_dir": str(run), "config": cfg}
    _write_table(
        run / "summary.csv",
        meta,
        ["eta0", "objective", "policy_class", "alpha_or_tau", "n_seeds", "mean_reward", "stderr"],
        [[_fmt(float(r[0])), r[1], r[2], r[3], r[4], _fmt(r[5]), _fmt(r[6])] for r in summary],
    )
    groups = {}
    for r in summary:
        groups.setdefault((r[1], r[2]), []).append(r)
    for (obj, pc), rs in groups.items():
        with (run / f"curve_{obj}_{pc}.dat").open("w") as fh:
            fh.write(_provenance(meta) + "\n")
            fh.write("# eta0 alpha_or_tau mean_reward stderr n_seeds\n")
            for r in rs:
                fh.write(f"{r[0]!r} {r[3]} {r[5]!r} {r[6]!r} {r[4]}\n")
    (run / "missing.txt").write_text("".join(p + "\n" for p in problems))
    return summary, problems


# ----------------------------------------------------------------------------
# argparse front end


def _parser():
    p = argparse.ArgumentParser(prog="smoothopl", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("kind", choices=["blobs", "fig1"])
    g.add_argument("--out", required=True)
    g.add_argument("--K", type=int, default=10)
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--class-sep", type=float, default=1.0)
    g.add_argument("--noise-sd", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("convert", help="supervised CSV to logged bandit CSV")
    c.add_argument("--data", required=True)
    c.add_argument("--logging", required=True, help="policy parameter file")
    c.add_argument("--exclude", help="file of row indices to drop (one per line)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)

    f = sub.add_parser("fit-logging", help="fit the softmax logging policy")
    f.add_argument("--data", required=True)
    f.add_argument("--eta0", type=float, default=1.0)
    f.add_argument("--split-frac", type=float, default=0.05)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--held-in-out", help="write the indices used for fitting")

    t = sub.add_parser("train", help="optimize a bound objective on logged data")
    t.add_argument("--data", required=True)
    t.add_argument("--prior", required=True, help="softmax logging parameter file")
    t.add_argument("--objective", choices=[o for o in OBJECTIVES if o != "estimate"], default="ours")
    t.add_argument("--policy-class", choices=["gaussian", "mixed_logit"], default="gaussian")
    t.add_argument("--alpha", default="paper-default")
    t.add_argument("--tau", default="paper-default")
    t.add_argument("--delta", type=float, default=0.05)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--S", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--test", help="supervised CSV for the final test reward")
    t.add_argument("--out", required=True, help="JSON report path")
    t.add_argument("--params-out", help="write final parameters here")
    t.add_argument("--curves-out", help="write per-epoch curves (CSV) here")

    e = sub.add_parser("evaluate", help="test reward of a policy on labelled data")
    e.add_argument("--data", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--repeats", type=int, default=1)

    f1 = sub.add_parser("fig1", help="per-action IPS and IPS-min estimates")
    f1.add_argument("--n", type=int, default=50_000)
    f1.add_argument("--M", type=float, default=100.0)
    f1.add_argument("--seeds", default="0")
    f1.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="run a factorial experiment")
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.add_argument("--out")

    r = sub.add_parser("report", help="aggregate a sweep directory")
    r.add_argument("run_dir")
    return p


def _seed_list(text):
    try:
        return [int(v) for v in _split_list(text)]
    except ValueError:
        raise ConfigError(f"seeds must be integers, got {text!r}") from None


def _float_or_default(text, default, name, low, high):
    if text in ("paper-default", None):
        return default
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{name} must be a number or 'paper-default'") from None
    if not low <= v <= high:
        raise ConfigError(f"{name} out of range")
    return v


def _dispatch(args):
    cmd = args.command
    if cmd == "generate":
        if args.kind == "blobs":
            spec = BlobSpec(K=args.K, d=args.d, n=args.n or 1000, class_sep=args.class_sep, noise_sd=args.noise_sd, seed=args.seed)
            save_supervised_csv(generate_blobs(spec), args.out, {"command": "generate blobs", "spec": vars(spec)})
        else:
            spec = Fig1Spec(n_samples=args.n or 50_000)
            save_logged_csv(generate_fig1_bandit(spec, args.seed), args.out, {"command": "generate fig1", "seed": args.seed})
        return
    if cmd == "convert":
        ds = load_supervised_csv(args.data)
        if args.exclude:
            drop = np.loadtxt(args.exclude, dtype=np.int64, ndmin=1)
            ds = ds.subset(np.setdiff1d(np.arange(ds.n), drop))
        logged = convert_to_bandit(ds, load_params(args.logging), args.seed)
        save_logged_csv(logged, args.out, {"command": "convert", "seed": args.seed, "logging": args.logging})
        return
    if cmd == "fit-logging":
        ds = load_supervised_csv(args.data)
        params, held = fit_logging_policy(ds, args.eta0, args.split_frac, args.seed)
        save_params(params, args.out, {"command": "fit-logging", "seed": args.seed, "split_frac": args.split_frac})
        if args.held_in_out:
            np.savetxt(args.held_in_out, held, fmt="%d")
        return
    if cmd == "train":
        ds = load_logged_csv(args.data)
        logging = load_params(args.prior)
        if logging.kind != "softmax":
            raise ConfigError("--prior must be a softmax logging parameter file")
        alpha = _float_or_default(args.alpha if args.alpha != "adaptive" else None, paper_default_alpha(ds.n), "alpha", 0.0, 1.0)
        tau = _float_or_default(args.tau, paper_default_tau(ds.n), "tau", 1e-12, 1 - 1e-12)
        try:
            cfg = TrainConfig(
                objective=args.objective,
                bound=BoundConfig(delta=args.delta, alpha=alpha),
                tau=tau,
                policy_class=args.policy_class,
                lr=args.lr,
                epochs=args.epochs,
                batch_size=args.batch_size,
                mc=McConfig(S=args.S, seed=args.seed),
                adaptive_alpha=args.alpha == "adaptive",
                seed=args.seed,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        test = load_supervised_csv(args.test) if args.test else None
        rep = train(ds, cfg, make_prior(logging, args.policy_class), test=test, test_seed=args.seed)
        Path(args.out).write_text(rep.to_json())
        if args.params_out:
            save_params(rep.final_params, args.params_out, {"command": "train"})
        if args.curves_out:
            Path(args.curves_out).write_text(_provenance(rep.config) + "\n" + rep.curves_csv())
        print(json.dumps({"final_objective": rep.objective[-1], "test_reward": rep.test_reward}))
        return
    if cmd == "evaluate":
        ds = load_supervised_csv(args.data)
        print(repr(evaluate_policy_reward(ds, load_params(args.policy), args.seed, args.repeats)))
        return
    if cmd == "fig1":
        run_fig1(args.n, args.M, _seed_list(args.seeds), args.out)
        return
    if cmd == "sweep":
        cfg = load_config(args.config, args.set)
        run_sweep(cfg, args.out, log=lambda m: print(m, file=sys.stderr))
        return
    if cmd == "report":
        _, problems = emit_report(args.run_dir)
        for p in problems:
            print(p, file=sys.stderr)
        return


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported via exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
