# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""TSV and JSON writers for selection, tuning, knockoff and experiment results.

Every file is written to a temporary sibling first and renamed into place.
"""

from typing import Any, Dict, List, Optional
import json
import os
import tempfile

import numpy as np
import pandas as pd

from kobt.bayes_opt import TuneResult
from kobt.knockoff_filter import KnockoffStats, SelectionResult
from kobt.knockoff_gen import KnockoffSet
from kobt.sim_harness import ExperimentResult

FLOAT_FORMAT = "%.17g"


def atomic_write_text(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as fp:
            fp.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _json_float(value: float):
    if np.isposinf(value):
        return "inf"
    if np.isneginf(value):
        return "-inf"
    if np.isnan(value):
        return "nan"
    return float(value)


def write_json(path: str, payload: Any) -> str:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_tsv(path: str, frame: pd.DataFrame) -> str:
    text = frame.to_csv(sep="\t", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, text)


def _feature_frame(stats: KnockoffStats, indices) -> pd.DataFrame:
    names = stats.feature_names or tuple(str(j) for j in range(stats.p))
    indices = list(indices)
    return pd.DataFrame({
        "feature": [names[j] for j in indices],
        "index": pd.Series(indices, dtype="int64"),
        "mean_abs_orig": stats.mean_abs_orig[indices],
        "mean_abs_knock": stats.mean_abs_knock[indices],
        "T": stats.t[indices],
    })


def selection_to_dict(result: SelectionResult, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    stats = result.stats
    names = stats.feature_names or tuple(str(j) for j in range(stats.p))
    return {
        "config": config or {},
        "delta": result.delta,
        "tau": _json_float(result.tau),
        "selected": result.selected_names,
        "selected_indices": list(result.selected),
        "replicates_used": stats.replicates_used,
        "features": [
            {
                "name": names[j],
                "mean_abs_orig": float(stats.mean_abs_orig[j]),
                "mean_abs_knock": float(stats.mean_abs_knock[j]),
                "T": float(stats.t[j]),
            }
            for j in range(stats.p)
        ],
        "fdp_path": [[t, fdp] for t, fdp in result.fdp_path],
        "fit_info": stats.fit_info,
        "provenance": result.provenance,
    }


def write_selection(result: SelectionResult, out_dir: str, config: Optional[Dict[str, Any]] = None) -> List[str]:
    t_values = result.stats.t
    ordered = sorted(result.selected, key=lambda j: (-t_values[j], j))
    return [
        write_json(os.path.join(out_dir, "selection.json"), selection_to_dict(result, config)),
        write_tsv(os.path.join(out_dir, "selected.tsv"), _feature_frame(result.stats, ordered)),
        write_tsv(os.path.join(out_dir, "features.tsv"), _feature_frame(result.stats, range(result.stats.p))),
    ]


def read_selection_json(path: str) -> SelectionResult:
    with open(path, "r", encoding="utf-8") as fp:
        record = json.load(fp)
    features = record["features"]
    stats = KnockoffStats(
        np.array([f["mean_abs_orig"] for f in features], dtype=np.float64),
        np.array([f["mean_abs_knock"] for f in features], dtype=np.float64),
        int(record["replicates_used"]),
        tuple(f["name"] for f in features),
        dict(record.get("fit_info", {})),
    )
    return SelectionResult(
        tau=float(record["tau"]),
        selected=tuple(int(j) for j in record["selected_indices"]),
        fdp_path=tuple((float(t), float(fdp)) for t, fdp in record["fdp_path"]),
        stats=stats,
        delta=float(record["delta"]),
        provenance=dict(record.get("provenance", {})),
    )


def write_statistics(stats: KnockoffStats, out_dir: str) -> List[str]:
    return [write_tsv(os.path.join(out_dir, "features.tsv"), _feature_frame(stats, range(stats.p)))]


def write_tuning(result: TuneResult, out_dir: str) -> List[str]:
    best = {
        "gamma": result.best.gamma,
        "lambda": result.best.reg_lambda,
        "alpha": result.best.reg_alpha,
        "cvte": result.cvte,
        "best_num_trees": result.best_num_trees,
    }
    return [
        write_json(os.path.join(out_dir, "tuned.json"), best),
        write_json(os.path.join(out_dir, "history.json"), result.history_records()),
    ]


def write_knockoffs(knockoffs: KnockoffSet, out_dir: str) -> List[str]:
    text = knockoffs.z.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return [
        atomic_write_text(os.path.join(out_dir, "knockoffs.csv"), text),
        write_json(os.path.join(out_dir, "knockoffs.json"), knockoffs.sidecar()),
    ]


def write_experiment(result: ExperimentResult, out_dir: str) -> List[str]:
    table = pd.DataFrame(
        [(row.cell, row.metric, row.mean, row.se, row.reps) for row in result.rows],
        columns=["cell", "metric", "mean", "se", "reps"],
    )
    paths = [
        write_tsv(os.path.join(out_dir, "table.tsv"), table),
        write_json(os.path.join(out_dir, "table.json"), {
            "spec": result.spec.model_dump(mode="json", by_alias=True),
            "rows": [{"cell": r.cell, "metric": r.metric, "mean": _json_float(r.mean),
                      "se": _json_float(r.se), "reps": r.reps} for r in result.rows],
            "provenance": result.provenance,
        }),
    ]
    if result.long_rows:
        paths.append(write_tsv(os.path.join(out_dir, "long.tsv"), pd.DataFrame(list(result.long_rows))))
    return paths


def write_report(result, out_dir: str, config: Optional[Dict[str, Any]] = None) -> List[str]:
    """Write the files for any pipeline result; returns the paths written."""
    if isinstance(result, SelectionResult):
        return write_selection(result, out_dir, config)
    if isinstance(result, KnockoffStats):
        return write_statistics(result, out_dir)
    if isinstance(result, TuneResult):
        return write_tuning(result, out_dir)
    if isinstance(result, KnockoffSet):
        return write_knockoffs(result, out_dir)
    if isinstance(result, ExperimentResult):
        return write_experiment(result, out_dir)
    raise TypeError(f"no report writer for {type(result).__name__}")
