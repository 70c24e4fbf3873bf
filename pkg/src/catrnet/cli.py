"""Command-line interface: estimate, simulate, bandwidth.

Runs are driven by a JSON config with flag overrides; every output file
carries a provenance line (config hash + version) and floats are printed
with 17 significant digits so reruns of the same config are byte-identical.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    build_knn_network,
    build_ring_network,
    load_dataset,
    load_edgelist_network,
)
from .errors import CatrnetError, ConfigError
from .pipeline import StageConfig, bandwidth_table, catr_over_grid, run_stages
from .simulation import DEFAULT_ESTIMATORS, EvalSpec, Scenario, run_monte_carlo


def fmt(v):
    """17-significant-digit float formatting (round-trip stable)."""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _provenance_line(config):
    return f"# catrnet v{__version__} config_sha256={config_hash(config)}"


def write_csv(path, config, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_provenance_line(config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, config, payload):
    payload = dict(payload)
    payload["provenance"] = {
        "version": __version__,
        "config_sha256": config_hash(config),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def load_config(args):
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {args.config}: {exc}") from None
    for key in ("seed", "grid_L", "reps", "out", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            config[key] = val
    if getattr(args, "tau", None) is not None:
        config["tau"] = args.tau
    if getattr(args, "dump_intermediate", False):
        config["dump_intermediate"] = True
    return config


def parse_tau(raw, n):
    """Accept a real penalty level or an 'a/n' literal resolved at run time."""
    if raw is None:
        return 5.0 / n
    if isinstance(raw, (int, float)):
        return float(raw)
    raw = str(raw).strip()
    if raw.endswith("/n"):
        try:
            return float(raw[:-2]) / n
        except ValueError:
            raise ConfigError(f"cannot parse tau {raw!r}") from None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse tau {raw!r}") from None


def _require(config, key):
    if key not in config:
        raise ConfigError(f"config is missing {key!r}")
    return config[key]


def build_network(config, ds):
    net_cfg = _require(config, "network")
    kind = _require(net_cfg, "kind")
    if kind == "ring":
        return build_ring_network(ds.n, int(_require(net_cfg, "k")))
    if kind == "knn":
        cols = _require(net_cfg, "coords")
        coords = _read_columns(_require(config, "data")["path"], cols)
        restrict = None
        if net_cfg.get("restrict_path"):
            rel = load_edgelist_network(net_cfg["restrict_path"], ds.n)
            restrict = [rel.peers(i) for i in range(ds.n)]
        return build_knn_network(coords, int(_require(net_cfg, "k")), restrict_to=restrict)
    if kind == "edgelist":
        return load_edgelist_network(_require(net_cfg, "path"), ds.n)
    raise ConfigError(f"unknown network kind {kind!r}")


def _read_columns(path, cols):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in cols if c not in header]
        if missing:
            raise ConfigError(f"coordinate columns {missing} not in {path}")
        pos = [header.index(c) for c in cols]
        rows = [[float(r[p]) for p in pos] for r in reader if any(c.strip() for c in r)]
    return np.asarray(rows)


def resolve_eval_points(config, ds, stages):
    """Evaluation grid from value lists or quantile specs in the config."""
    ev = config.get("eval", {})
    t_sub = stages.t_sub
    s_sub = stages.s_sub

    t_spec = ev.get("t", {"quantiles": [round(0.1 * i, 2) for i in range(1, 10)]})
    if "values" in t_spec:
        t_vals = [float(v) for v in t_spec["values"]]
    elif "quantiles" in t_spec:
        t_vals = [float(np.quantile(t_sub, q)) for q in t_spec["quantiles"]]
    else:
        raise ConfigError("eval.t needs 'values' or 'quantiles'")

    s_spec = ev.get("s", {"quantiles": [0.2]})
    if "values" in s_spec:
        s_vals = [float(v) for v in s_spec["values"]]
    elif "quantiles" in s_spec:
        s_vals = [float(np.quantile(s_sub, q)) for q in s_spec["quantiles"]]
    else:
        raise ConfigError("eval.s needs 'values' or 'quantiles'")

    x_spec = ev.get("x", {"median": True})
    x_rows = []
    if x_spec.get("median"):
        med = np.median(stages.x_sub, axis=0)
        med[0] = 1.0
        x_rows.append(("median", med))
    for j, row in enumerate(x_spec.get("values", [])):
        vec = np.asarray(row, dtype=np.float64)
        if vec.shape[0] == ds.dx - 1:
            vec = np.concatenate([[1.0], vec])
        if vec.shape[0] != ds.dx:
            raise ConfigError(f"x vector {row} does not match dx={ds.dx}")
        x_rows.append((f"x{j}", vec))

    return [
        (t0, s0, x_vec, x_id) for x_id, x_vec in x_rows for s0 in s_vals for t0 in t_vals
    ]


def cmd_estimate(config):
    data_cfg = _require(config, "data")
    ds = load_dataset(_require(data_cfg, "path"), _require(data_cfg, "schema"))
    net = build_network(config, ds)
    group_size = int(_require(config, "group_size"))
    tau = parse_tau(config.get("tau"), max(1, int(np.sum(net.degrees == group_size))))
    spline = config.get("spline", {})
    quad = config.get("quadrature", {})
    stage_cfg = StageConfig(
        grid_L=int(config.get("grid_L", 199)),
        taus=(tau,),
        n_internal=int(spline.get("internal_knots", 2)),
        degree=int(spline.get("degree", 3)),
        quad_kind=quad.get("kind", "halton"),
        quad_points=int(quad.get("points", 10_000)),
    )
    stages = run_stages(ds, net, group_size, stage_cfg)

    labeled = resolve_eval_points(config, ds, stages)
    points = [(t0, s0, x_vec) for t0, s0, x_vec, _ in labeled]
    bws = bandwidth_table(stages, points)
    ests = catr_over_grid(stages, points, "fitted", tau=tau, bandwidths=bws, with_ci=True)

    out_dir = Path(config.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["t", "s", "x_id", "estimate", "std_err", "ci_lo", "ci_hi", "h_t", "h_s", "n_effective"]
    rows = [
        [t0, s0, x_id, e.value, e.std_err, e.ci[0], e.ci[1], e.bandwidths.h_t,
         e.bandwidths.h_s, e.n_effective]
        for (t0, s0, _, x_id), e in zip(labeled, ests)
    ]
    write_csv(out_dir / "catr.csv", config, header, rows)
    write_json(
        out_dir / "catr.json",
        config,
        {
            "rows": [dict(zip(header, r)) for r in rows],
            "cqr": {
                "gamma": stages.cqr_fit.gamma,
                "loss": stages.cqr_fit.loss,
                "iterations": stages.cqr_fit.iterations,
            },
        },
    )
    if config.get("dump_intermediate"):
        dump = {
            "series": stages.fits[tau].to_jsonable(),
            "glambda": stages.gl[tau].to_jsonable(),
        }
        if stages.unpen is not None:
            dump["series_unpenalized"] = stages.unpen.to_jsonable()
        write_json(out_dir / "intermediate.json", config, dump)
    return 0


def cmd_bandwidth(config):
    data_cfg = _require(config, "data")
    ds = load_dataset(_require(data_cfg, "path"), _require(data_cfg, "schema"))
    net = build_network(config, ds)
    group_size = int(_require(config, "group_size"))
    tau = parse_tau(config.get("tau"), max(1, int(np.sum(net.degrees == group_size))))
    stage_cfg = StageConfig(grid_L=int(config.get("grid_L", 199)), taus=(tau,))
    stages = run_stages(ds, net, group_size, stage_cfg)
    labeled = resolve_eval_points(config, ds, stages)
    points = [(t0, s0, x_vec) for t0, s0, x_vec, _ in labeled]
    bws = bandwidth_table(stages, points)
    out_dir = Path(config.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["t", "s", "x_id", "C", "h_t", "h_s", "clamped"]
    rows = [
        [t0, s0, x_id, bw.c_const, bw.h_t, bw.h_s, bw.clamped]
        for (t0, s0, _, x_id), bw in zip(labeled, bws)
    ]
    write_csv(out_dir / "bandwidths.csv", config, header, rows)
    return 0


def cmd_simulate(config):
    sim = _require(config, "simulate")
    scenarios = [
        Scenario(k=int(sc["k"]), n=int(sc["n"]), rho=float(sc["rho"]))
        for sc in _require(sim, "scenarios")
    ]
    eval_cfg = sim.get("eval", {})
    eval_spec = EvalSpec(
        t_min=float(eval_cfg.get("t_min", 0.47)),
        t_max=float(eval_cfg.get("t_max", 2.90)),
        t_count=int(eval_cfg.get("t_count", 50)),
        s_levels=tuple(eval_cfg["s_levels"]) if "s_levels" in eval_cfg else None,
        x_value=float(eval_cfg.get("x_value", 1.0)),
    )
    report = run_monte_carlo(
        scenarios,
        reps=int(config.get("reps", sim.get("reps", 200))),
        estimators=tuple(sim.get("estimators", DEFAULT_ESTIMATORS)),
        eval_spec=eval_spec,
        master_seed=int(config.get("seed", 0)),
        grid_L=int(config.get("grid_L", 199)),
        threads=int(config.get("threads", 1)),
    )
    out_dir = Path(config.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["metric", "k", "n", "rho", "s", "reps", "unreliable", *report.estimators]
    rows = [[row[h] for h in header] for row in report.rows()]
    write_csv(out_dir / "mc_report.csv", config, header, rows)
    write_json(out_dir / "mc_report.json", config, report.to_jsonable())
    unreliable = [r for r in report.scenarios if r.unreliable]
    if unreliable:
        print(f"warning: {len(unreliable)} scenario(s) unreliable (>10% failures)", file=sys.stderr)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="catrnet",
        description="Treatment-response estimation with network spillovers",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("estimate", cmd_estimate), ("simulate", cmd_simulate), ("bandwidth", cmd_bandwidth)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--tau", help="penalty level: real number or 'a/n' literal")
        p.add_argument("--grid-L", dest="grid_L", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        p.add_argument("--dump-intermediate", dest="dump_intermediate", action="store_true")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        return args.func(config)
    except CatrnetError as exc:
        print(f"catrnet {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
