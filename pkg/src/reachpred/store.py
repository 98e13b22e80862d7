"""Persistence for trained model bundles, tuning frontiers, and run configs.

A bundle is one human-readable JSON document with canonical key order, so
identical models serialize to identical bytes.  Matrices are stored as
nested arrays and densities as plain parameters.  All writes go through a
temporary file and an atomic rename, so readers never observe a partial
artifact.

Dataset files have their own CSV format; see `data` for the header line
and the ground-truth sidecar schema.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .accumulate import StoppingConfig
from .data import load_dataset, save_dataset  # noqa: F401  (re-exported)
from .fsm import FsmConfig
from .intention import HmmModel
from .mixture import DirectionModel, GaussianComponent, Mixture
from .reduce import ReducerMap

FORMAT_VERSION = 1

FRONTIER_COLUMNS = ("th_r", "th_s", "mean_acc", "std_acc",
                    "mean_time_s", "mean_pct_trajectory")


@dataclass(frozen=True)
class ModelBundle:
    """Everything the live engine needs, as one consistent artifact."""

    hmm: HmmModel
    reducer: ReducerMap
    direction: DirectionModel
    stopping: StoppingConfig
    fsm: FsmConfig
    provenance: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise ValueError("unsupported bundle version %r" % (self.version,))
        if self.reducer.n_features != self.direction.n_features:
            raise ValueError(
                "reducer emits %d features but the direction model expects %d"
                % (self.reducer.n_features, self.direction.n_features))

    @property
    def n_classes(self):
        return self.direction.n_classes


def dataset_hash(path):
    """Hex SHA-256 of a file's bytes, recorded in bundle provenance."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _array(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _hmm_doc(m):
    return {"pi0": _array(m.pi0), "transition": _array(m.A),
            "means": _array(m.means), "variances": _array(m.variances)}


def _hmm_from(doc):
    return HmmModel(pi0=np.array(doc["pi0"]), A=np.array(doc["transition"]),
                    means=np.array(doc["means"]),
                    variances=np.array(doc["variances"]))


def _reducer_doc(r):
    return {
        "variant": r.variant, "selector": r.selector,
        "weights": _array(r.weights), "offset": _array(r.offset),
        "n_features": r.n_features, "input_dim": r.input_dim,
        "seed": r.seed, "synergies": _array(r.synergies),
        "explained": _array(r.explained),
    }


def _reducer_from(doc):
    def arr(key):
        return None if doc[key] is None else np.array(doc[key], dtype=float)

    return ReducerMap(
        variant=doc["variant"], selector=doc["selector"],
        weights=np.array(doc["weights"], dtype=float), offset=arr("offset"),
        n_features=int(doc["n_features"]), input_dim=int(doc["input_dim"]),
        seed=int(doc["seed"]), synergies=arr("synergies"),
        explained=arr("explained"),
    )


def _mixture_doc(mix):
    return {
        "components": [
            {"prior": float(c.prior), "mean": _array(c.mean),
             "cov": _array(c.cov)}
            for c in mix.components
        ],
        "log_likelihood": float(mix.log_likelihood),
        "n_iter": int(mix.n_iter),
    }


def _mixture_from(doc):
    comps = tuple(
        GaussianComponent(prior=c["prior"], mean=np.array(c["mean"]),
                          cov=np.array(c["cov"]))
        for c in doc["components"]
    )
    return Mixture(components=comps, log_likelihood=doc["log_likelihood"],
                   n_iter=doc["n_iter"])


def _jsonable_metadata(metadata):
    """Deep-convert numpy scalars/arrays and int keys for JSON storage."""
    def conv(v):
        if isinstance(v, dict):
            return {str(k): conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating,)):
            return float(v)
        return v

    return conv(metadata)


def _direction_doc(d):
    return {
        "mixtures": [_mixture_doc(m) for m in d.mixtures],
        "reducer": None if d.reducer is None else _reducer_doc(d.reducer),
        "th_r": d.th_r, "th_s": d.th_s,
        "metadata": _jsonable_metadata(d.metadata),
    }


def _direction_from(doc):
    return DirectionModel(
        mixtures=tuple(_mixture_from(m) for m in doc["mixtures"]),
        reducer=None if doc["reducer"] is None else _reducer_from(doc["reducer"]),
        th_r=doc["th_r"], th_s=doc["th_s"], metadata=doc["metadata"],
    )


def _stopping_doc(s):
    return {
        "th_r": float(s.th_r), "th_s": float(s.th_s),
        "timeout": None if math.isinf(s.timeout) else float(s.timeout),
        "target_accuracy": float(s.target_accuracy),
        "target_met": bool(s.target_met),
    }


def _stopping_from(doc):
    timeout = math.inf if doc["timeout"] is None else doc["timeout"]
    return StoppingConfig(th_r=doc["th_r"], th_s=doc["th_s"], timeout=timeout,
                          target_accuracy=doc["target_accuracy"],
                          target_met=doc["target_met"])


def bundle_to_doc(bundle):
    """Plain-JSON document for a bundle; the canonical on-disk mapping."""
    return {
        "format": "reachpred-bundle",
        "version": bundle.version,
        "hmm": _hmm_doc(bundle.hmm),
        "reducer": _reducer_doc(bundle.reducer),
        "direction": _direction_doc(bundle.direction),
        "stopping": _stopping_doc(bundle.stopping),
        "fsm": {"x_debounce": bundle.fsm.x_debounce,
                "y_timeout": bundle.fsm.y_timeout},
        "provenance": _jsonable_metadata(bundle.provenance),
    }


def doc_to_bundle(doc):
    if doc.get("format") != "reachpred-bundle":
        raise ValueError("not a model bundle document")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(
            "unsupported bundle version %r (this build reads version %d)"
            % (version, FORMAT_VERSION))
    return ModelBundle(
        hmm=_hmm_from(doc["hmm"]),
        reducer=_reducer_from(doc["reducer"]),
        direction=_direction_from(doc["direction"]),
        stopping=_stopping_from(doc["stopping"]),
        fsm=FsmConfig(x_debounce=doc["fsm"]["x_debounce"],
                      y_timeout=doc["fsm"]["y_timeout"]),
        provenance=doc.get("provenance", {}),
        version=version,
    )


def _atomic_write_text(text, path):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_bundle(bundle, path):
    """Write a bundle as canonical JSON (sorted keys, atomic replace)."""
    doc = bundle_to_doc(bundle)
    _atomic_write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", path)


def load_bundle(path):
    with open(path) as fh:
        doc = json.load(fh)
    return doc_to_bundle(doc)


def bundles_equal(a, b):
    """Structural equality via the canonical document mapping."""
    return bundle_to_doc(a) == bundle_to_doc(b)


def save_frontier(frontier, path):
    """Grid-search frontier rows as a CSV table."""
    lines = [",".join(FRONTIER_COLUMNS)]
    for row in frontier:
        values = (row["th_r"], row["th_s"], row["mean_accuracy"],
                  row["std_accuracy"], row["mean_time_s"],
                  row["mean_pct_trajectory"])
        lines.append(",".join(repr(float(v)) for v in values))
    _atomic_write_text("\n".join(lines) + "\n", path)


def load_frontier(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != list(FRONTIER_COLUMNS):
            raise ValueError("unexpected frontier header in %s" % (path,))
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != len(FRONTIER_COLUMNS):
                raise ValueError("malformed frontier row at line %d" % lineno)
            rows.append(dict(zip(FRONTIER_COLUMNS, map(float, parts))))
    return rows


def save_run_config(config, path):
    """Record the arguments a pipeline run was invoked with."""
    _atomic_write_text(
        json.dumps(_jsonable_metadata(config), sort_keys=True, indent=1) + "\n",
        path)


def load_run_config(path):
    with open(path) as fh:
        return json.load(fh)
