"""Command-line interface.

Subcommands: simulate, embed, fit, predict, benchmark. Every command accepts
--config <json> whose keys mirror the flag names (underscored); explicit
flags win over the config file, which wins over built-in defaults. Every
stochastic command takes --seed (default 0) and records it in its outputs, so
rerunning a command from the recorded configuration reproduces its outputs
byte for byte. Floats are written with repr (shortest round-trip form) and no
output embeds timestamps or absolute paths.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure,
3 benchmark finished with some failed cells.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import gp, network, pipeline, sim
from ._linalg import FactorizationError
from .embed import EmConfig, Embedding, EmbeddingError


def _fmt(value):
    return repr(float(value))


def _int_list(text):
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def _float_list(text):
    return [float(tok) for tok in str(text).split(",") if tok != ""]


def _str_list(text):
    return [tok.strip() for tok in str(text).split(",") if tok.strip()]


def _load_config(path):
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError("config file must hold a JSON object")
    return payload


def _settings(ns, defaults):
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(ns, "config", None):
        cfg = _load_config(ns.config)
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        merged.update(cfg)
    for key in defaults:
        value = getattr(ns, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(settings, *keys):
    for key in keys:
        if settings.get(key) in (None, ""):
            raise ValueError("missing required setting --%s" % key.replace("_", "-"))


def _read_table(path):
    """CSV with a header; returns (columns, list of row dicts as strings)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("%s is empty" % path)
    cols = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise ValueError("malformed row in %s: %r" % (path, ln))
        rows.append(dict(zip(cols, parts)))
    return cols, rows


def _read_responses(path):
    cols, rows = _read_table(path)
    if "subject_id" not in cols or "y" not in cols:
        raise ValueError("responses file needs subject_id and y columns")
    has_split = "split" in cols
    out = []
    for row in rows:
        out.append((row["subject_id"], float(row["y"]),
                    row["split"] if has_split else None))
    return out, has_split


def _load_embedding(directory, subject_id):
    path = os.path.join(directory, "%s.json" % subject_id)
    if not os.path.exists(path):
        raise ValueError("no embedding for subject %r in %s" % (subject_id, directory))
    with open(path) as fh:
        payload = json.load(fh)
    return Embedding.from_dict(payload)


# ---------------------------------------------------------------------------
# simulate

_SIMULATE_DEFAULTS = {
    "nodes": None, "d0": None, "sparsity": None, "seed": 0,
    "train": 50, "test": 50, "out": None,
}


def cmd_simulate(ns):
    s = _settings(ns, _SIMULATE_DEFAULTS)
    _require(s, "nodes", "d0", "sparsity", "out")
    cfg = sim.SimConfig(p=int(s["nodes"]), d0=int(s["d0"]),
                        s_p=float(s["sparsity"]), seed=int(s["seed"]),
                        n_train=int(s["train"]), n_test=int(s["test"]))
    dataset = sim.generate_scenario1(cfg)
    out = s["out"]
    net_dir = os.path.join(out, "networks")
    os.makedirs(net_dir, exist_ok=True)
    ids = ["subject_%04d" % i for i in range(dataset.n)]
    density = []
    for sid, adj in zip(ids, dataset.networks):
        np.savetxt(os.path.join(net_dir, "%s.csv" % sid), adj, fmt="%d", delimiter=",")
        density.append(network.edge_vector(adj).mean())
    with open(os.path.join(out, "responses.csv"), "w") as fh:
        fh.write("subject_id,y,split\n")
        for sid, y_i, split in zip(ids, dataset.y, dataset.split):
            fh.write("%s,%s,%s\n" % (sid, _fmt(y_i), split))
    meta = {
        "command": "simulate",
        "config": cfg.to_dict(),
        "active_nodes": [int(v) for v in dataset.active_nodes],
        "train_mean": dataset.train_mean,
        "train_sd": dataset.train_sd,
        "mean_edge_density": float(np.mean(density)),
    }
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    print("wrote %d subjects (%d train / %d test) to %s" %
          (dataset.n, cfg.n_train, cfg.n_test, out))
    print("active nodes: %d of %d; mean edge density %.3f" %
          (dataset.active_nodes.size, cfg.p, float(np.mean(density))))
    return 0


# ---------------------------------------------------------------------------
# embed

_EMBED_DEFAULTS = {
    "input": None, "out": None, "format": "adjacency-csv", "nodes": None,
    "dim": 10, "sigma_u_sq": 0.2, "pin": 0.5, "max_iters": 500,
    "rel_tol": 1e-6, "prior_mode": "verbatim", "seed": 0, "backend": None,
    "export_u": False,
}


def _network_files(input_path):
    if os.path.isdir(input_path):
        bundle = os.path.join(input_path, "networks")
        root = bundle if os.path.isdir(bundle) else input_path
        files = sorted(
            os.path.join(root, f) for f in os.listdir(root) if f.endswith(".csv")
        )
        if not files:
            raise ValueError("no .csv networks under %s" % root)
        return files
    if not os.path.exists(input_path):
        raise ValueError("input %s does not exist" % input_path)
    return [input_path]


def cmd_embed(ns):
    s = _settings(ns, _EMBED_DEFAULTS)
    _require(s, "input", "out")
    cfg = EmConfig(d=int(s["dim"]), sigma_u_sq=float(s["sigma_u_sq"]),
                   b=float(s["pin"]), max_iters=int(s["max_iters"]),
                   rel_tol=float(s["rel_tol"]),
                   prior_term_mode=str(s["prior_mode"]))
    files = _network_files(s["input"])
    networks, ids = [], []
    for path in files:
        kwargs = {"format": s["format"]}
        if s["format"] == "edge-list-csv":
            if s["nodes"] is None:
                raise ValueError("edge-list-csv input needs --nodes")
            kwargs["n_nodes"] = int(s["nodes"])
        networks.append(network.load_network(path, **kwargs))
        ids.append(os.path.splitext(os.path.basename(path))[0])
    os.makedirs(s["out"], exist_ok=True)
    seed = int(s["seed"])
    embeddings, records = pipeline.embed_dataset(
        networks, cfg, seed=seed, backend=s["backend"], subject_ids=ids)
    run_cfg = dict(cfg.to_dict(), seed=seed, backend=s["backend"] or "auto")
    n_bad = 0
    with open(os.path.join(s["out"], "manifest.csv"), "w") as mf:
        mf.write("subject_id,iterations,converged,final_log_posterior,status\n")
        for emb, rec in zip(embeddings, records):
            sid = rec["subject_id"]
            if emb is None:
                n_bad += 1
                mf.write("%s,,False,,%s\n" % (sid, rec["status"]))
                continue
            mf.write("%s,%d,%s,%s,ok\n" % (sid, rec["iterations"],
                                           rec["converged"],
                                           _fmt(rec["final_log_posterior"])))
            payload = dict(subject_id=sid, **emb.to_dict())
            payload.update(iterations=rec["iterations"], converged=rec["converged"],
                           final_log_posterior=rec["final_log_posterior"],
                           config=run_cfg)
            with open(os.path.join(s["out"], "%s.json" % sid), "w") as fh:
                json.dump(payload, fh, indent=1)
                fh.write("\n")
            if s["export_u"]:
                np.savetxt(os.path.join(s["out"], "%s_U.csv" % sid),
                           emb.U, fmt="%.17g", delimiter=",")
    msg = "embedded %d/%d subjects" % (len(files) - n_bad, len(files))
    if n_bad:
        msg += " (%d failed; see manifest)" % n_bad
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# fit

_FIT_DEFAULTS = {
    "embeddings": None, "responses": None, "covariates": None, "out": None,
    "mode": "mle", "select_nodes": False, "seed": 0,
    "iters": 2000, "burnin": 500, "proposal_sd": 0.01, "thin": 1,
    "a_tau": 1.0, "b_tau": 1.0, "a_psi1": 1.0, "b_psi1": 1.0,
    "a_pi": 1.0, "b_pi": 1.0, "maxiter": 1000, "tol": 1e-8,
}


def _read_covariates(path, ids):
    cols, rows = _read_table(path)
    if "subject_id" not in cols:
        raise ValueError("covariates file needs a subject_id column")
    feat = [c for c in cols if c != "subject_id"]
    table = {r["subject_id"]: [float(r[c]) for c in feat] for r in rows}
    missing = [sid for sid in ids if sid not in table]
    if missing:
        raise ValueError("covariates missing for subjects: %s" % ", ".join(missing))
    return np.asarray([table[sid] for sid in ids], dtype=np.float64)


def cmd_fit(ns):
    s = _settings(ns, _FIT_DEFAULTS)
    _require(s, "embeddings", "responses", "out")
    rows, has_split = _read_responses(s["responses"])
    if has_split:
        rows = [r for r in rows if r[2] == "train"]
    if not rows:
        raise ValueError("no training rows in %s" % s["responses"])
    ids = [r[0] for r in rows]
    y = np.asarray([r[1] for r in rows])
    embeddings = [_load_embedding(s["embeddings"], sid) for sid in ids]
    z = _read_covariates(s["covariates"], ids) if s["covariates"] else None
    training = gp.TrainingSet(embeddings, y, z=z, subject_ids=ids)

    seed = int(s["seed"])
    mode = str(s["mode"])
    mle = gp.fit_mle(training.y, training.E_u, training.E_a, training.E_z,
                     maxiter=int(s["maxiter"]), tol=float(s["tol"]))
    priors = sampler = chains = None
    if mode == "mcmc":
        priors = gp.GpPriors(a_tau=float(s["a_tau"]), b_tau=float(s["b_tau"]),
                             a_psi1=float(s["a_psi1"]), b_psi1=float(s["b_psi1"]),
                             a_pi=float(s["a_pi"]), b_pi=float(s["b_pi"]))
        sampler = gp.GibbsConfig(iterations=int(s["iters"]), burnin=int(s["burnin"]),
                                 proposal_sd=float(s["proposal_sd"]),
                                 thin=int(s["thin"]))
        rng = np.random.default_rng(seed)
        if s["select_nodes"]:
            chains = gp.node_selection_sample(training.y, embeddings, z=z,
                                              priors=priors, config=sampler,
                                              init=mle.hyperparams, rng=rng)
        else:
            chains = gp.gibbs_sample(training.y, training.E_u, training.E_a,
                                     training.E_z, priors=priors, config=sampler,
                                     init=mle.hyperparams, rng=rng)
    model = gp.GpModel(training, mode, mle, priors=priors, sampler=sampler,
                       chains=chains, seed=seed)
    extra = {"command": "fit", "mode": mode, "seed": seed,
             "select_nodes": bool(s["select_nodes"]),
             "em": {"d": training.d, "b": training.b}}
    gp.save_model(model, s["out"], extra=extra)
    print("mle objective %.6f after %d accepted steps (%s)" %
          (mle.objective, mle.iterations, mle.status))
    if chains is not None:
        print("retained %d draws; acceptance rates %s" % (
            chains.n_draws,
            {k: round(v, 3) for k, v in chains.accept_rates.items()}))
    print("model written to %s" % s["out"])
    return 0


# ---------------------------------------------------------------------------
# predict

_PREDICT_DEFAULTS = {
    "model": None, "embeddings": None, "out": None, "truth": None,
    "split": "test", "seed": 0, "eval_append": None,
}


def cmd_predict(ns):
    s = _settings(ns, _PREDICT_DEFAULTS)
    _require(s, "model", "embeddings", "out")
    model = gp.load_model(s["model"])
    truth_map = None
    if s["truth"]:
        rows, has_split = _read_responses(s["truth"])
        if has_split and s["split"] != "all":
            rows = [r for r in rows if r[2] == s["split"]]
        ids = [r[0] for r in rows]
        truth_map = {r[0]: r[1] for r in rows}
    else:
        ids = sorted(
            os.path.splitext(f)[0] for f in os.listdir(s["embeddings"])
            if f.endswith(".json") and f != "manifest.csv"
        )
    embeddings = [_load_embedding(s["embeddings"], sid) for sid in ids]
    rng = np.random.default_rng(int(s["seed"]))
    mean, lower, upper = gp.predict(model, embeddings, rng=rng)
    with open(s["out"], "w") as fh:
        fh.write("subject_id,mean,lower95,upper95\n")
        for i, sid in enumerate(ids):
            fh.write("%s,%s,%s,%s\n" % (sid, _fmt(mean[i]), _fmt(lower[i]),
                                        _fmt(upper[i])))
    meta = {"command": "predict", "model": os.path.basename(str(s["model"])),
            "train_hash": gp.training_hash(model.training),
            "seed": int(s["seed"]), "split": s["split"], "subjects": len(ids)}
    with open(s["out"] + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    print("wrote %d predictions to %s" % (len(ids), s["out"]))
    if truth_map is not None and ids:
        truth = np.asarray([truth_map[sid] for sid in ids])
        report = sim.evaluate(mean, (lower, upper), truth)
        with open(s["out"] + ".eval.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
            fh.write("\n")
        if s["eval_append"]:
            line = "%s,%s,%s" % (_fmt(report.mse), _fmt(report.coverage),
                                 _fmt(report.width))
            fresh = not os.path.exists(s["eval_append"])
            with open(s["eval_append"], "a") as fh:
                if fresh:
                    fh.write("mse,coverage,width\n")
                fh.write(line + "\n")
        print("eval: mse %.4f coverage %.3f width %.3f" %
              (report.mse, report.coverage, report.width))
    return 0


# ---------------------------------------------------------------------------
# benchmark

_BENCH_DEFAULTS = {
    "nodes": 40, "d0": [5], "sparsity": [0.5], "replicates": 10,
    "methods": list(pipeline.METHODS), "seed": 0, "out": None,
    "dim": 10, "prior_mode": "verbatim", "train": 50, "test": 50,
    "iters": 2000, "burnin": 500,
    "a_tau": 1.0, "b_tau": 1.0, "a_psi1": 1.0, "b_psi1": 1.0,
    "a_pi": 1.0, "b_pi": 1.0, "backend": None,
}

_RESULT_COLS = ("d0", "sparsity", "replicate", "method", "seed", "status",
                "mse", "coverage", "width", "response_range")


def cmd_benchmark(ns):
    s = _settings(ns, _BENCH_DEFAULTS)
    _require(s, "out")
    d0s = s["d0"] if isinstance(s["d0"], list) else _int_list(s["d0"])
    sps = s["sparsity"] if isinstance(s["sparsity"], list) else _float_list(s["sparsity"])
    methods = s["methods"] if isinstance(s["methods"], list) else _str_list(s["methods"])
    cells = [(int(d0), float(sp)) for d0 in d0s for sp in sps]
    em_cfg = EmConfig(d=int(s["dim"]), prior_term_mode=str(s["prior_mode"]))
    gibbs_cfg = gp.GibbsConfig(iterations=int(s["iters"]), burnin=int(s["burnin"]))
    priors = gp.GpPriors(a_tau=float(s["a_tau"]), b_tau=float(s["b_tau"]),
                         a_psi1=float(s["a_psi1"]), b_psi1=float(s["b_psi1"]),
                         a_pi=float(s["a_pi"]), b_pi=float(s["b_pi"]))
    rows = pipeline.run_benchmark(
        cells, int(s["replicates"]), methods, int(s["seed"]), p=int(s["nodes"]),
        n_train=int(s["train"]), n_test=int(s["test"]), em_config=em_cfg,
        gibbs_config=gibbs_cfg, priors=priors, backend=s["backend"])
    os.makedirs(s["out"], exist_ok=True)
    with open(os.path.join(s["out"], "results.csv"), "w") as fh:
        fh.write(",".join(_RESULT_COLS) + "\n")
        for row in rows:
            rec = []
            for col in _RESULT_COLS:
                v = row[col]
                rec.append(_fmt(v) if isinstance(v, float) else str(v))
            fh.write(",".join(rec) + "\n")
    summary = pipeline.summarize_benchmark(rows)
    sum_cols = ("d0", "sparsity", "method", "n_ok", "mse_mean", "mse_sd",
                "coverage_mean", "coverage_sd", "width_mean", "width_sd")
    with open(os.path.join(s["out"], "summary.csv"), "w") as fh:
        fh.write(",".join(sum_cols) + "\n")
        for rec in summary:
            vals = [_fmt(rec[c]) if isinstance(rec[c], float) else str(rec[c])
                    for c in sum_cols]
            fh.write(",".join(vals) + "\n")
    meta = {"command": "benchmark",
            "cells": [{"d0": c[0], "sparsity": c[1]} for c in cells],
            "replicates": int(s["replicates"]), "methods": methods,
            "seed": int(s["seed"]), "nodes": int(s["nodes"]),
            "dim": int(s["dim"]), "prior_mode": str(s["prior_mode"]),
            "train": int(s["train"]), "test": int(s["test"]),
            "iters": int(s["iters"]), "burnin": int(s["burnin"]),
            "priors": {k: float(s[k]) for k in ("a_tau", "b_tau", "a_psi1",
                                                "b_psi1", "a_pi", "b_pi")}}
    with open(os.path.join(s["out"], "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    for rec in summary:
        print("d0=%d sparsity=%.2f %-8s n=%d mse %.4f (sd %.4f) coverage %s" % (
            rec["d0"], rec["sparsity"], rec["method"], rec["n_ok"],
            rec["mse_mean"], rec["mse_sd"] if np.isfinite(rec["mse_sd"]) else float("nan"),
            "%.3f" % rec["coverage_mean"] if np.isfinite(rec["coverage_mean"]) else "-"))
    failed = sum(1 for r in rows if r["status"] != "ok")
    if failed:
        print("%d of %d runs failed; see results.csv" % (failed, len(rows)),
              file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lsgpr",
        description="Two-stage regression on binary networks: latent-scale "
                    "embedding plus Gaussian process regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic dataset bundle")
    ps.add_argument("--nodes", type=int)
    ps.add_argument("--d0", type=int)
    ps.add_argument("--sparsity", type=float)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--train", type=int)
    ps.add_argument("--test", type=int)
    ps.add_argument("--out")
    ps.add_argument("--config")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("embed", help="embed networks into latent scales")
    pe.add_argument("--input")
    pe.add_argument("--out")
    pe.add_argument("--format", choices=("adjacency-csv", "edge-list-csv"))
    pe.add_argument("--nodes", type=int)
    pe.add_argument("--dim", type=int)
    pe.add_argument("--sigma-u-sq", dest="sigma_u_sq", type=float)
    pe.add_argument("--pin", type=float)
    pe.add_argument("--max-iters", dest="max_iters", type=int)
    pe.add_argument("--rel-tol", dest="rel_tol", type=float)
    pe.add_argument("--prior-mode", dest="prior_mode",
                    choices=("verbatim", "single-copy"))
    pe.add_argument("--seed", type=int)
    pe.add_argument("--backend", choices=("cython", "numpy"))
    pe.add_argument("--export-u", dest="export_u", action="store_const", const=True)
    pe.add_argument("--config")
    pe.set_defaults(func=cmd_embed)

    pf = sub.add_parser("fit", help="fit the stage-2 GP model")
    pf.add_argument("--embeddings")
    pf.add_argument("--responses")
    pf.add_argument("--covariates")
    pf.add_argument("--out")
    pf.add_argument("--mode", choices=("mle", "mcmc"))
    pf.add_argument("--select-nodes", dest="select_nodes",
                    action="store_const", const=True)
    pf.add_argument("--seed", type=int)
    pf.add_argument("--iters", type=int)
    pf.add_argument("--burnin", type=int)
    pf.add_argument("--proposal-sd", dest="proposal_sd", type=float)
    pf.add_argument("--thin", type=int)
    for prior in ("a-tau", "b-tau", "a-psi1", "b-psi1", "a-pi", "b-pi"):
        pf.add_argument("--" + prior, dest=prior.replace("-", "_"), type=float)
    pf.add_argument("--maxiter", type=int)
    pf.add_argument("--tol", type=float)
    pf.add_argument("--config")
    pf.set_defaults(func=cmd_fit)

    pp = sub.add_parser("predict", help="predict responses from a fitted model")
    pp.add_argument("--model")
    pp.add_argument("--embeddings")
    pp.add_argument("--out")
    pp.add_argument("--truth")
    pp.add_argument("--split", choices=("train", "test", "all"))
    pp.add_argument("--seed", type=int)
    pp.add_argument("--eval-append", dest="eval_append")
    pp.add_argument("--config")
    pp.set_defaults(func=cmd_predict)

    pb = sub.add_parser("benchmark", help="run the simulation benchmark grid")
    pb.add_argument("--nodes", type=int)
    pb.add_argument("--d0", type=_int_list)
    pb.add_argument("--sparsity", type=_float_list)
    pb.add_argument("--replicates", type=int)
    pb.add_argument("--methods", type=_str_list)
    pb.add_argument("--seed", type=int)
    pb.add_argument("--out")
    pb.add_argument("--dim", type=int)
    pb.add_argument("--prior-mode", dest="prior_mode",
                    choices=("verbatim", "single-copy"))
    pb.add_argument("--train", type=int)
    pb.add_argument("--test", type=int)
    pb.add_argument("--iters", type=int)
    pb.add_argument("--burnin", type=int)
    for prior in ("a-tau", "b-tau", "a-psi1", "b-psi1", "a-pi", "b-pi"):
        pb.add_argument("--" + prior, dest=prior.replace("-", "_"), type=float)
    pb.add_argument("--backend", choices=("cython", "numpy"))
    pb.add_argument("--config")
    pb.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return ns.func(ns) or 0
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (FactorizationError, EmbeddingError, np.linalg.LinAlgError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
