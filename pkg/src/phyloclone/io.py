"""Reading and writing count tables, estimates and traces.

Matrices are tab-separated with a header row of sample (or clone) labels and
mutation labels in the first column.  Trees are written 1-based with 0 as the
root's parent, e.g. ``[0, 1, 1, 2]``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluate import f_error, z_error
from .model import ObservedData, Phylogeny
from .sampler import MOVE_NAMES, MapEstimate, Trace
from .simulate import GroundTruth


class FormatError(ValueError):
    pass


def _read_table(path):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r]
    if len(rows) < 2:
        raise FormatError(f"{path}: need a header and at least one data row")
    header = rows[0][1:]
    row_ids, values = [], []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header) + 1:
            raise FormatError(f"{path}: line {i} has {len(r) - 1} values, header has {len(header)}")
        row_ids.append(r[0])
        values.append(r[1:])
    return header, row_ids, values


def _read_int_table(path):
    header, row_ids, values = _read_table(path)
    out = np.empty((len(row_ids), len(header)), dtype=np.int64)
    for i, vals in enumerate(values):
        for t, v in enumerate(vals):
            try:
                out[i, t] = int(v)
            except ValueError:
                raise FormatError(f"{path}: non-integer {v!r} at row {row_ids[i]!r}, "
                                  f"column {header[t]!r}") from None
            if out[i, t] < 0:
                raise FormatError(f"{path}: negative value at row {row_ids[i]!r}, "
                                  f"column {header[t]!r}")
    return header, row_ids, out


def load_counts(counts_path, depths_path) -> ObservedData:
    """Load mutant counts and depths from two aligned TSV files."""
    samples_x, muts_x, X = _read_int_table(counts_path)
    samples_d, muts_d, D = _read_int_table(depths_path)
    if samples_x != samples_d:
        raise FormatError(f"sample identifiers differ between {counts_path} and {depths_path}")
    if muts_x != muts_d:
        raise FormatError(f"mutation identifiers differ between {counts_path} and {depths_path}")
    bad = np.argwhere(X > D)
    if bad.size:
        j, t = bad[0]
        raise FormatError(f"count {X[j, t]} exceeds depth {D[j, t]} at mutation "
                          f"{muts_x[j]!r}, sample {samples_x[t]!r}")
    return ObservedData(X, D, tuple(muts_x), tuple(samples_x))


def _write_table(path, corner, header, row_ids, matrix, fmt=str):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow([corner, *header])
        for rid, row in zip(row_ids, matrix):
            w.writerow([rid, *(fmt(v) for v in row)])


def save_dataset(data: ObservedData, counts_path, depths_path) -> None:
    _write_table(counts_path, "mutation", data.sample_ids, data.mutation_ids, data.X, int)
    _write_table(depths_path, "mutation", data.sample_ids, data.mutation_ids, data.D, int)


def _clone_labels(K):
    return [f"clone{k + 1}" for k in range(K)]


def truth_to_dict(truth: GroundTruth) -> dict:
    return {"tree": truth.tree.to_one_based(), "Z": truth.Z.astype(int).tolist(),
            "F": truth.F.tolist()}


def save_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(json.dumps(truth_to_dict(truth), indent=1) + "\n")


def load_truth(path) -> GroundTruth:
    doc = json.loads(Path(path).read_text())
    return GroundTruth(Phylogeny.from_one_based(doc["tree"]),
                       np.array(doc["Z"], dtype=np.int8), np.array(doc["F"], dtype=np.float64))


def map_to_dict(est: MapEstimate) -> dict:
    return {
        "K": est.K,
        "tree": est.tree.to_one_based(),
        "Z": est.Z.astype(int).tolist(),
        "F": est.F.tolist(),
        "s": est.s,
        "gamma": est.gamma.tolist(),
        "log_posterior": est.log_posterior,
        "log_likelihood": est.log_likelihood,
        "sweep": est.sweep_index,
    }


def load_map(path) -> MapEstimate:
    doc = json.loads(Path(path).read_text())
    return MapEstimate(
        tree=Phylogeny.from_one_based(doc["tree"]), Z=np.array(doc["Z"], dtype=np.int8),
        F=np.array(doc["F"], dtype=np.float64), s=float(doc["s"]),
        gamma=np.array(doc["gamma"], dtype=np.float64),
        log_posterior=float(doc["log_posterior"]), log_likelihood=float(doc["log_likelihood"]),
        sweep_index=int(doc["sweep"]),
    )


def score(est: MapEstimate, truth: GroundTruth) -> dict:
    zerr, sigma = z_error(est.Z, truth.Z)
    ferr = f_error(est.F, truth.F, sigma, J=truth.Z.shape[0])
    return {"Z_err": float(zerr), "F_err": ferr, "permutation": [int(v) + 1 for v in sigma]}


def write_trace(trace: Trace, path) -> None:
    T = trace.gamma.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["sweep", "log_posterior", "log_likelihood", "s",
                    *(f"gamma{t + 1}" for t in range(T))])
        for i in range(len(trace)):
            w.writerow([int(trace.sweeps[i]), repr(float(trace.log_posterior[i])),
                        repr(float(trace.log_likelihood[i])), repr(float(trace.s[i])),
                        *(repr(float(g)) for g in trace.gamma[i])])


def read_trace(path) -> dict:
    """Columns of a trace file as float arrays keyed by header name."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    header = rows[0]
    data = np.array(rows[1:], dtype=np.float64).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def save_outputs(trace: Trace, est: MapEstimate, outdir, data: Optional[ObservedData] = None,
                 truth: Optional[GroundTruth] = None) -> dict:
    """Write the standard per-run files into ``outdir``; returns their paths."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {outdir}: {exc}") from exc
    paths = {name: outdir / name for name in
             ("map.json", "trace.tsv", "genotypes.tsv", "fractions.tsv", "acceptance.json")}

    def dump(name, doc):
        paths[name] = outdir / name
        paths[name].write_text(json.dumps(doc, indent=1) + "\n")

    dump("map.json", map_to_dict(est))
    write_trace(trace, paths["trace.tsv"])
    J = est.Z.shape[0]
    mut_ids = data.mutation_ids if data is not None else [f"m{j + 1}" for j in range(J)]
    samples = (data.sample_ids if data is not None
               else [f"s{t + 1}" for t in range(est.F.shape[1])])
    _write_table(paths["genotypes.tsv"], "mutation", _clone_labels(est.K), mut_ids, est.Z, int)
    _write_table(paths["fractions.tsv"], "clone", samples, _clone_labels(est.K), est.F,
                 lambda v: repr(float(v)))
    dump("acceptance.json", {
        "moves": {f"chain{m + 1}": trace.acceptance_rates(m)
                  for m in range(trace.move_counts.shape[0])},
        "counts": {f"chain{m + 1}": {n: trace.move_counts[m, i].tolist()
                                     for i, n in enumerate(MOVE_NAMES)}
                   for m in range(trace.move_counts.shape[0])},
        "chain_swap": trace.swap_rate,
        "chain_swap_counts": trace.swap_counts.tolist(),
    })
    if truth is not None:
        dump("scores.json", score(est, truth))
    return paths
