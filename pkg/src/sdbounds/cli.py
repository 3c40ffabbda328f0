"""Command-line interface: ``sdbounds <command> [options]``.

Commands
--------
bounds      construct lower/upper bound matrices for a transition matrix
simulate    draw a state and observation path from a model file
filter      run the exact filter (and optionally a bound filter) on observations
sample      run the constrained importance-sampling filter
analyze     emit the recursive sample-path bound trace
kron        build a Kronecker-structured model
experiment  run one of the experiment studies

Indices in files are 1-based.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bound_trace, row_l1_epsilon
from .construct import (LOWER, UPPER, SolverConfig, lp_bounds, mlr_envelope_bounds,
                        nuclear_norm_bound, rank1_bounds)
from .errors import SDBoundsError
from .experiments import EXPERIMENTS, PRESETS, ExperimentConfig, run_experiment
from .hmm import (HmmModel, TransitionMatrix, bayes_update, conditional_mean, map_estimate,
                  predict, simulate)
from .io import (load_model, read_matrix, read_observations, save_certificate, save_json,
                 save_model, write_matrix, write_observations, write_rows)
from .kron import BENCHMARK_Q, kron_transition, sum_gaussian_obs, tp2_generator
from .sampler import Q_CHOICES, DominanceFilter, SamplerConfig

log = logging.getLogger("sdbounds")


def _out(args, name):
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _load_config(args):
    if not args.config:
        return {}
    return json.loads(Path(args.config).read_text(encoding="utf-8"))


# -- bounds -----------------------------------------------------------------

def cmd_bounds(args):
    P = read_matrix(args.matrix)
    sides = [LOWER, UPPER] if args.side == "both" else [args.side]
    report = {"method": args.method, "epsilon": args.epsilon}
    if args.method in ("rank1", "envelope", "lp"):
        fn = {"rank1": rank1_bounds, "envelope": mlr_envelope_bounds, "lp": lp_bounds}[args.method]
        bp = fn(P)
        mats = {LOWER: bp.lower, UPPER: bp.upper}
        certs = bp.certificates
        report["ranks"] = list(bp.ranks)
        report["epsilon"] = bp.epsilon
    else:
        conf = {**_load_config(args).get("solver", {}), "epsilon": args.epsilon}
        for k in ("delta", "feas_tol", "obj_rtol", "max_inner_iters", "reweight_iters"):
            v = getattr(args, k)
            if v is not None:
                conf[k] = v
        cfg = SolverConfig(**conf)
        mats, certs = {}, {}
        for side in sides:
            res = nuclear_norm_bound(P, side, cfg)
            mats[side], certs[side] = res.matrix, res.certificate
            report[side] = {"rank": res.rank, "certified": res.certified,
                            "singular_values": res.singular_values, "history": res.history,
                            **res.report}
    for side in sides:
        write_matrix(_out(args, f"{args.prefix}_{side}.csv"), mats[side].entries)
        if certs.get(side) is not None:
            save_certificate(_out(args, f"{args.prefix}_{side}_certificate.json"), certs[side],
                             extra={"side": side, "method": args.method})
    save_json(_out(args, f"{args.prefix}_report.json"), report)
    for side in sides:
        status = certs[side].status if certs.get(side) is not None else "none"
        print(f"{side}: rank {mats[side].rank}, certificate {status}")
    return 0


# -- simulate / filter --------------------------------------------------------

def cmd_simulate(args):
    model = load_model(args.model)
    states, ys = simulate(model, args.horizon, seed=args.seed)
    discrete = model.obs.is_discrete
    write_observations(_out(args, args.obs_out), ys, discrete)
    write_observations(_out(args, args.states_out), states, True)
    print(f"wrote {args.horizon} steps")
    return 0


def cmd_filter(args):
    model = load_model(args.model)
    ys = read_observations(args.obs, model.obs.is_discrete)
    X = model.n_states
    pi = np.full(X, 1.0 / X)
    bound = TransitionMatrix(read_matrix(args.bound)).factorize(rtol=1e-9) if args.bound else None
    pb = pi.copy()
    rows = []
    for k, y in enumerate(ys, start=1):
        pi = bayes_update(predict(pi, model.P), y, model.obs)
        row = [k, y + 1 if model.obs.is_discrete else y, conditional_mean(pi, model.g),
               map_estimate(pi) + 1]
        if bound is not None:
            pb = bayes_update(predict(pb, bound), y, model.obs)
            row += [conditional_mean(pb, model.g), map_estimate(pb) + 1]
        rows.append(row)
    header = ["k", "y", "mean", "map"] + (["bound_mean", "bound_map"] if bound is not None else [])
    write_rows(_out(args, args.output), header, rows)
    print(f"filtered {len(ys)} observations")
    return 0


# -- sample -------------------------------------------------------------------

def cmd_sample(args):
    model = load_model(args.model)
    ys = read_observations(args.obs, model.obs.is_discrete)
    lo = TransitionMatrix(read_matrix(args.lower)).factorize(rtol=1e-9)
    hi = TransitionMatrix(read_matrix(args.upper)).factorize(rtol=1e-9)
    cfg = SamplerConfig(L=args.L, q_choice=args.q_choice, seed=args.seed)
    X = model.n_states
    out = DominanceFilter(model, lo, hi, cfg).run(ys, np.full(X, 1.0 / X))
    g = model.g
    rows = []
    for k, y in enumerate(ys):
        rows.append([k + 1, y + 1 if model.obs.is_discrete else y,
                     float(g @ out["estimate"][k]), map_estimate(out["estimate"][k]) + 1,
                     float(g @ out["lower"][k]), float(g @ out["upper"][k]),
                     int(out["min_accepted"][k]), int(out["fallbacks"][k])])
    write_rows(_out(args, args.output),
               ["k", "y", "mean", "map", "lower_mean", "upper_mean", "min_accepted",
                "fallbacks"], rows)
    print(f"sampled {len(ys)} steps")
    return 0


# -- analyze ------------------------------------------------------------------

def cmd_analyze(args):
    model = load_model(args.model)
    if not model.obs.is_discrete:
        raise SDBoundsError("analyze needs a discrete observation model")
    ys = read_observations(args.obs, True)
    lo = TransitionMatrix(read_matrix(args.lower))
    eps = args.epsilon if args.epsilon is not None else row_l1_epsilon(model.P, lo)
    X = model.n_states
    tr = bound_trace(ys, lo, model.obs, eps, np.full(X, 1.0 / X),
                     P=model.P if args.mode == "oracle" or args.with_distance else None,
                     mode=args.mode)
    write_rows(_out(args, args.output), ["k", "distance", "bound", "F", "mu"],
               [[int(r[0])] + r[1:] for r in tr.as_array().tolist()])
    print(f"epsilon {eps:.6g}; violations {tr.violations}")
    return 0


# -- kron ---------------------------------------------------------------------

def cmd_kron(args):
    if args.paper_q:
        Q = BENCHMARK_Q
    elif args.generator:
        Q = read_matrix(args.generator)
    else:
        Q = None
    if Q is not None:
        factors = [tp2_generator(Q, args.t)] * args.L
    elif args.factor:
        factors = [TransitionMatrix(read_matrix(f)) for f in args.factor]
    else:
        raise SDBoundsError("give --paper-q, --generator or --factor")
    shape = tuple(f.n_states for f in factors)
    P = kron_transition(factors, lazy=False, cap=args.cap)
    obs = sum_gaussian_obs(shape, args.sigma)
    model = HmmModel(P, obs)
    path = save_model(_out(args, args.model_out), model)
    for i, f in enumerate(factors):
        write_matrix(_out(args, f"factor_{i + 1}.csv"), f.entries)
    print(f"wrote {path} with {P.n_states} states")
    return 0


# -- experiment ---------------------------------------------------------------

def cmd_experiment(args):
    base = _load_config(args)
    base["experiment"] = args.id
    for k in ("preset", "horizon", "replications", "n_beliefs"):
        v = getattr(args, k)
        if v is not None:
            base[k] = v
    if args.seed is not None:
        base["seed"] = args.seed
    base["out_dir"] = args.out_dir
    cfg = ExperimentConfig(**base)
    man = run_experiment(cfg)
    print(f"{args.id}: done in {man['seconds']:.1f} s, manifest in {cfg.out_dir}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sdbounds", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="construct bound matrices")
    b.add_argument("matrix", help="transition matrix CSV")
    b.add_argument("--method", choices=["rank1", "envelope", "lp", "nuclear"], default="nuclear")
    b.add_argument("--side", choices=[LOWER, UPPER, "both"], default="both")
    b.add_argument("--epsilon", type=float, default=1.0)
    b.add_argument("--delta", type=float)
    b.add_argument("--feas-tol", type=float)
    b.add_argument("--obj-rtol", type=float)
    b.add_argument("--max-inner-iters", type=int)
    b.add_argument("--reweight-iters", type=int)
    b.add_argument("--prefix", default="bound")
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", help="simulate a model")
    s.add_argument("model")
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--obs-out", default="observations.csv")
    s.add_argument("--states-out", default="states.csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("filter", help="run the exact filter")
    f.add_argument("model")
    f.add_argument("obs", help="observation CSV")
    f.add_argument("--bound", help="bound matrix CSV; its filter runs alongside")
    f.add_argument("--output", default="filter.csv")
    f.set_defaults(func=cmd_filter)

    sa = sub.add_parser("sample", help="constrained importance-sampling filter")
    sa.add_argument("model")
    sa.add_argument("obs")
    sa.add_argument("--lower", required=True)
    sa.add_argument("--upper", required=True)
    sa.add_argument("--L", type=int, default=10)
    sa.add_argument("--q-choice", choices=Q_CHOICES, default="posterior")
    sa.add_argument("--output", default="sample.csv")
    sa.set_defaults(func=cmd_sample)

    a = sub.add_parser("analyze", help="sample-path bound trace")
    a.add_argument("model")
    a.add_argument("obs")
    a.add_argument("--lower", required=True)
    a.add_argument("--epsilon", type=float, help="defaults to the largest row l1 distance")
    a.add_argument("--mode", choices=["self", "oracle"], default="self")
    a.add_argument("--with-distance", action="store_true",
                   help="also run the exact filter and record the true distance")
    a.add_argument("--output", default="bound_trace.csv")
    a.set_defaults(func=cmd_analyze)

    k = sub.add_parser("kron", help="build a Kronecker model")
    k.add_argument("--paper-q", action="store_true", help="use the built-in 5-state generator")
    k.add_argument("--generator", help="generator CSV")
    k.add_argument("--factor", action="append", help="factor CSV (repeatable)")
    k.add_argument("--t", type=float, default=2.0)
    k.add_argument("--L", type=int, default=2)
    k.add_argument("--sigma", type=float, default=1.0)
    k.add_argument("--cap", type=int, default=4096)
    k.add_argument("--model-out", default="model.json")
    k.set_defaults(func=cmd_kron)

    e = sub.add_parser("experiment", help="run an experiment study")
    e.add_argument("id", choices=EXPERIMENTS)
    e.add_argument("--preset", choices=sorted(PRESETS))
    e.add_argument("--horizon", type=int)
    e.add_argument("--replications", type=int)
    e.add_argument("--n-beliefs", type=int)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SDBoundsError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
