"""End-to-end orchestration: embed datasets, run methods, drive benchmarks.

Seeding scheme: every stochastic stage derives an independent stream from a
master seed with np.random.SeedSequence spawn keys — (subject_index,) for
per-subject embedding, (cell_index, replicate) for benchmark cells. Reruns
with the same master seed are bit-identical; subjects and cells are
independent, so they could be dispatched concurrently without changing
results.
"""

from dataclasses import dataclass

import numpy as np

from . import gp, sim
from .embed import EmConfig, EmbeddingError, embed_subject
from .network import edge_vector

METHODS = ("ls-gpr1", "ls-gpr2", "ridge", "pca-gpr")


def subject_rng(master_seed, subject_index):
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(subject_index,))
    )


def cell_seed(master_seed, cell_index, replicate):
    seq = np.random.SeedSequence(master_seed, spawn_key=(cell_index, replicate))
    return int(seq.generate_state(1)[0])


def embed_dataset(networks, cfg=None, seed=0, backend=None, subject_ids=None):
    """Embed every network; per-subject failures are recorded, not raised.

    Returns (embeddings, records): embeddings[i] is None when subject i blew
    up; records[i] carries iterations, convergence, final log-posterior, and
    a status string for the manifest.
    """
    if cfg is None:
        cfg = EmConfig()
    if subject_ids is None:
        subject_ids = list(range(len(networks)))
    embeddings, records = [], []
    for i, adj in enumerate(networks):
        rng = subject_rng(seed, i)
        rec = {"subject_id": subject_ids[i]}
        try:
            emb, trace = embed_subject(adj, cfg, rng=rng, backend=backend)
        except EmbeddingError as exc:
            embeddings.append(None)
            rec.update(iterations=None, converged=False,
                       final_log_posterior=None, status="error: %s" % exc)
            records.append(rec)
            continue
        iters = trace.shape[0] - 1
        if iters < cfg.max_iters:
            converged = True
        else:
            last_rel = abs(trace[-1] - trace[-2]) / (abs(trace[-2]) + 1.0)
            converged = bool(last_rel < cfg.rel_tol)
        embeddings.append(emb)
        rec.update(iterations=iters, converged=converged,
                   final_log_posterior=float(trace[-1]), status="ok")
        records.append(rec)
    return embeddings, records


@dataclass
class MethodResult:
    predictions: np.ndarray
    intervals: tuple  # (lower, upper) or None


def run_method(method, dataset, embeddings, seed, gibbs_config=None,
               priors=None, select_nodes=False):
    """Fit one method on a dataset's training half and predict its test half.

    ls-gpr1/ls-gpr2 consume the embeddings; ridge and pca-gpr work on raw
    edge vectors and ignore them.
    """
    tr = dataset.train_indices()
    te = dataset.test_indices()
    y_train = dataset.y[tr]

    if method in ("ls-gpr1", "ls-gpr2"):
        train_emb = [embeddings[i] for i in tr]
        test_emb = [embeddings[i] for i in te]
        if any(e is None for e in train_emb) or any(e is None for e in test_emb):
            raise EmbeddingError("cannot fit: some subjects failed to embed")
        training = gp.TrainingSet(train_emb, y_train,
                                  subject_ids=[str(i) for i in tr])
        mle = gp.fit_mle(training.y, training.E_u, training.E_a, training.E_z)
        if method == "ls-gpr1":
            model = gp.GpModel(training, "mle", mle)
            mean, lo, hi = gp.predict(model, test_emb)
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(101,))
            )
            if select_nodes:
                chains = gp.node_selection_sample(
                    training.y, train_emb, priors=priors, config=gibbs_config,
                    init=mle.hyperparams, rng=rng)
            else:
                chains = gp.gibbs_sample(
                    training.y, training.E_u, training.E_a, training.E_z,
                    priors=priors, config=gibbs_config,
                    init=mle.hyperparams, rng=rng)
            model = gp.GpModel(training, "mcmc", mle, priors=priors,
                               sampler=gibbs_config, chains=chains)
            pred_rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(102,))
            )
            mean, lo, hi = gp.predict(model, test_emb, rng=pred_rng)
        return MethodResult(mean, (lo, hi))

    X_train = np.stack([edge_vector(dataset.networks[i]) for i in tr])
    X_test = np.stack([edge_vector(dataset.networks[i]) for i in te])
    if method == "ridge":
        pred = sim.ridge_baseline(X_train, y_train, X_test)
        return MethodResult(pred, None)
    if method == "pca-gpr":
        pred, intervals = sim.pca_gpr_baseline(X_train, y_train, X_test)
        return MethodResult(pred, intervals)
    raise ValueError("unknown method %r (expected one of %s)" % (method, METHODS))


def run_benchmark(cells, replicates, methods, master_seed, p, n_train=50,
                  n_test=50, em_config=None, gibbs_config=None, priors=None,
                  backend=None, progress=None):
    """Run the simulate -> embed -> fit -> predict grid.

    ``cells`` is a list of (d0, s_p) pairs. Returns a list of row dicts, one
    per (cell, replicate, method), with evaluation metrics or an error
    status; a method failure never aborts the grid.
    """
    if em_config is None:
        em_config = EmConfig()
    for m in methods:
        if m not in METHODS:
            raise ValueError("unknown method %r (expected one of %s)" % (m, METHODS))
    rows = []
    for cell_index, (d0, s_p) in enumerate(cells):
        for rep in range(replicates):
            seed = cell_seed(master_seed, cell_index, rep)
            cfg = sim.SimConfig(p=p, d0=d0, s_p=s_p, seed=seed,
                                n_train=n_train, n_test=n_test)
            dataset = sim.generate_scenario1(cfg)
            needs_embed = any(m in ("ls-gpr1", "ls-gpr2") for m in methods)
            embeddings = None
            if needs_embed:
                embeddings, _ = embed_dataset(dataset.networks, em_config,
                                              seed=seed, backend=backend)
            truth = dataset.y[dataset.test_indices()]
            y_range = float(dataset.y.max() - dataset.y.min())
            for method in methods:
                row = {"d0": d0, "sparsity": s_p, "replicate": rep,
                       "method": method, "seed": seed, "response_range": y_range}
                try:
                    result = run_method(method, dataset, embeddings, seed,
                                        gibbs_config=gibbs_config, priors=priors)
                    report = sim.evaluate(result.predictions, result.intervals, truth)
                except Exception as exc:  # record and continue the grid
                    row.update(status="error: %s" % exc, mse=float("nan"),
                               coverage=float("nan"), width=float("nan"))
                    rows.append(row)
                    continue
                row.update(status="ok", mse=report.mse, coverage=report.coverage,
                           width=report.width)
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def summarize_benchmark(rows):
    """Per (cell, method) means and standard deviations over replicates."""
    keys = sorted({(r["d0"], r["sparsity"], r["method"]) for r in rows},
                  key=lambda k: (k[0], k[1], k[2]))
    out = []
    for d0, s_p, method in keys:
        ok = [r for r in rows
              if (r["d0"], r["sparsity"], r["method"]) == (d0, s_p, method)
              and r["status"] == "ok"]
        rec = {"d0": d0, "sparsity": s_p, "method": method, "n_ok": len(ok)}
        for metric in ("mse", "coverage", "width"):
            vals = np.asarray([r[metric] for r in ok], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            rec[metric + "_mean"] = float(vals.mean()) if vals.size else float("nan")
            rec[metric + "_sd"] = (
                float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
            )
        out.append(rec)
    return out
