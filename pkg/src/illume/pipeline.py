"""Data ingestion, persistence and the train / explain / bench / eval runs.

File formats
------------
* dataset CSV: header row; an optional ``row_id`` column, then feature
  columns named in the schema.
* schema JSON: ``{"columns": [{"name": ..., "kind": "continuous"|"categorical"}, ...]}``.
* predictions CSV: ``row_id`` then one probability column per class.
* synthetic manifest JSON: ``{"m", "t", "u", "family", "seed", "classifier_index"}``
  plus optional ``n_instances``.
* model JSON: versioned, see :class:`PipelineModel`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evalmetrics as em
from . import geometry as geo
from . import synthbench as sb
from .baselines import InputLogistic, InputTree
from .explain import Explainer, Explanation, LatentStore
from .metaenc import MetaEncoder, TrainingConfig, train
from .surrogate import LogisticSurrogate, TreeSurrogate, fit_logistic, fit_tree_tuned, surrogate_from_dict

log = logging.getLogger(__name__)

MODEL_FORMAT = "illume-model"
MODEL_VERSION = 1
ROW_ID = "row_id"
METRICS = ("knn-gain", "triplet-feature", "triplet-decision", "robustness", "faithfulness",
           "global-robustness")


class DataError(ValueError):
    pass


# ----------------------------------------------------------------------
# preprocessing
# ----------------------------------------------------------------------
@dataclass
class Preprocessor:
    """Standardization and one-hot layout learned from training rows."""

    columns: list[dict]  # [{"name", "kind"}]
    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    categories: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, columns: list[dict], raw: dict[str, list[str]]) -> "Preprocessor":
        pre = cls(columns)
        for col in columns:
            name = col["name"]
            if col["kind"] == "continuous":
                v = _as_float(name, raw[name])
                mu = float(np.mean(v)) if v.size else 0.0
                sd = float(np.std(v)) if v.size else 1.0
                pre.means[name] = mu
                pre.stds[name] = sd if sd > 0 else 1.0
            else:
                pre.categories[name] = sorted(set(raw[name]))
        return pre

    def schema(self) -> geo.FeatureSchema:
        cont, groups, names = [], [], []
        for col in self.columns:
            name = col["name"]
            if col["kind"] == "continuous":
                cont.append(len(names))
                names.append(name)
            else:
                g = []
                for c in self.categories[name]:
                    g.append(len(names))
                    names.append(f"{name}={c}")
                groups.append(tuple(g))
        return geo.FeatureSchema(len(names), tuple(cont), tuple(groups), tuple(names))

    def transform(self, raw: dict[str, list[str]], n: int) -> np.ndarray:
        blocks = []
        for col in self.columns:
            name = col["name"]
            if col["kind"] == "continuous":
                v = _as_float(name, raw[name])
                blocks.append(((v - self.means[name]) / self.stds[name])[:, None])
            else:
                cats = self.categories[name]
                pos = {c: i for i, c in enumerate(cats)}
                B = np.zeros((n, len(cats)))
                unseen = set()
                for r, val in enumerate(raw[name]):
                    if val in pos:
                        B[r, pos[val]] = 1.0
                    else:
                        unseen.add(val)
                if unseen:
                    warnings.warn(f"column {name!r}: unseen categories {sorted(unseen)} mapped to zeros",
                                  stacklevel=2)
                blocks.append(B)
        if not blocks:
            return np.zeros((n, 0))
        return np.hstack(blocks) if n else np.zeros((0, sum(b.shape[1] for b in blocks)))

    def to_dict(self) -> dict:
        return {"columns": self.columns, "means": self.means, "stds": self.stds, "categories": self.categories}

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(list(d["columns"]), dict(d["means"]), dict(d["stds"]), dict(d["categories"]))


def _as_float(name: str, values: list[str]) -> np.ndarray:
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"column {name!r} holds a non-numeric value: {exc}") from None


# ----------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------
@dataclass
class Dataset:
    X_train: np.ndarray
    X_test: np.ndarray
    ids_train: list[str]
    ids_test: list[str]
    schema: geo.FeatureSchema
    preprocessor: Preprocessor | None = None
    split_seed: int = 0

    def split(self, which: str) -> tuple[np.ndarray, list[str]]:
        if which == "train":
            return self.X_train, self.ids_train
        if which == "test":
            return self.X_test, self.ids_test
        if which == "all":
            return np.vstack([self.X_train, self.X_test]), self.ids_train + self.ids_test
        raise ValueError(f"unknown split {which!r}")


def read_schema(path) -> list[dict]:
    d = json.loads(Path(path).read_text())
    cols = d["columns"] if isinstance(d, dict) else d
    out = []
    for c in cols:
        if c.get("kind") not in ("continuous", "categorical"):
            raise DataError(f"column {c.get('name')!r} has unknown kind {c.get('kind')!r}")
        out.append({"name": str(c["name"]), "kind": c["kind"]})
    return out


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: missing header")
    return [h.strip() for h in rows[0]], [r for r in rows[1:] if r]


def _read_raw(csv_path, columns: list[dict]) -> tuple[dict[str, list[str]], list[str]]:
    header, rows = _read_csv(csv_path)
    known = {c["name"] for c in columns} | {ROW_ID}
    extra = [h for h in header if h not in known]
    if extra:
        raise DataError(f"unknown column(s) {extra} not in the schema")
    missing = [c["name"] for c in columns if c["name"] not in header]
    if missing:
        raise DataError(f"schema column(s) {missing} missing from the data")
    pos = {h: i for i, h in enumerate(header)}
    raw = {c["name"]: [r[pos[c["name"]]].strip() for r in rows] for c in columns}
    ids = [r[pos[ROW_ID]].strip() for r in rows] if ROW_ID in pos else [str(i) for i in range(len(rows))]
    return raw, ids


def split_indices(n: int, seed: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def load_dataset(csv_path, schema_path, split_seed: int = 0, preprocessor: Preprocessor | None = None) -> Dataset:
    """Read, split 80/20 and preprocess; statistics come from the training split only."""
    columns = read_schema(schema_path)
    raw, ids = _read_raw(csv_path, columns)
    n = len(ids)
    tr, te = split_indices(n, split_seed)
    sub = lambda idx: {k: [v[i] for i in idx] for k, v in raw.items()}  # noqa: E731
    raw_tr, raw_te = sub(tr), sub(te)
    pre = preprocessor or Preprocessor.fit(columns, raw_tr)
    return Dataset(
        pre.transform(raw_tr, len(tr)),
        pre.transform(raw_te, len(te)),
        [ids[i] for i in tr],
        [ids[i] for i in te],
        pre.schema(),
        pre,
        split_seed,
    )


def synthetic_dataset(manifest: sb.Manifest, n_instances: int = 2048) -> Dataset:
    """Training rows from stream 0, held-out rows from stream 1."""
    cfg = manifest.config(n_instances)
    X_tr, X_te = sb.gen_dataset(cfg, 0), sb.gen_dataset(cfg, 1)
    return Dataset(X_tr, X_te, [f"train-{i}" for i in range(len(X_tr))], [f"test-{i}" for i in range(len(X_te))],
                   geo.FeatureSchema.all_continuous(manifest.m))


def read_manifest(path) -> tuple[sb.Manifest, int]:
    d = json.loads(Path(path).read_text())
    n = int(d.pop("n_instances", 2048))
    return sb.Manifest.from_dict(d), n


# ----------------------------------------------------------------------
# black-box outputs
# ----------------------------------------------------------------------
@dataclass
class BlackBoxOutputs:
    ids: list[str]
    proba: np.ndarray  # (n, c)
    class_names: list[str]

    def __post_init__(self):
        P = self.proba
        if P.ndim != 2 or len(P) != len(self.ids):
            raise DataError("probability table is not row-aligned")
        if len(P) and (np.any(P < 0) | np.any(P > 1) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6)):
            bad = np.nonzero((np.abs(P.sum(axis=1) - 1.0) > 1e-6) | np.any((P < 0) | (P > 1), axis=1))[0]
            raise DataError(f"invalid probability rows at positions {bad[:10].tolist()}")
        self._pos = {r: i for i, r in enumerate(self.ids)}

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.proba, axis=1)

    def align(self, ids: list[str]) -> np.ndarray:
        missing = [r for r in ids if r not in self._pos]
        if missing:
            raise DataError(f"no black-box output for row ids {missing[:10]}")
        return self.proba[[self._pos[r] for r in ids]]


def load_blackbox(preds_csv) -> BlackBoxOutputs:
    header, rows = _read_csv(preds_csv)
    if not header or header[0] != ROW_ID:
        raise DataError("predictions file must start with a row_id column")
    try:
        P = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 1)
    except ValueError as exc:
        raise DataError(f"non-numeric probability: {exc}") from None
    return BlackBoxOutputs([r[0].strip() for r in rows], P, header[1:])


def synthetic_blackbox(manifest: sb.Manifest, data: Dataset) -> BlackBoxOutputs:
    clf = manifest.classifier()
    X, ids = data.split("all")
    return BlackBoxOutputs(ids, clf.predict_proba(X), ["0", "1"])


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------
def _digest(A: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(A, dtype=np.float64).tobytes()).hexdigest()


@dataclass
class PipelineModel:
    encoder: MetaEncoder
    surrogate: LogisticSurrogate | TreeSurrogate
    X_train: np.ndarray
    bb_labels: np.ndarray
    schema: geo.FeatureSchema
    target_class: int
    split_seed: int = 0
    class_names: list[str] = field(default_factory=list)
    preprocessor: Preprocessor | None = None
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Z_train = self.encoder.encode(self.X_train)
        self.store = LatentStore(self.X_train, self.Z_train, self.bb_labels, self.surrogate.predict(self.Z_train),
                                 self.encoder.sparse_transforms)

    def explainer(self, grid: int = 20) -> Explainer:
        return Explainer(self.encoder, self.surrogate, self.store, self.target_class, grid)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_VERSION,
            "encoder": self.encoder.to_dict(),
            "surrogate": self.surrogate.to_dict(),
            "store": {
                "X": self.X_train.tolist(),
                "bb_labels": self.bb_labels.tolist(),
                "z_digest": _digest(self.Z_train),
                "agreement": float(np.mean(self.store.agree)) if len(self.bb_labels) else 1.0,
            },
            "schema": self.schema.to_dict(),
            "target_class": int(self.target_class),
            "split_seed": self.split_seed,
            "class_names": list(self.class_names),
            "preprocessor": None if self.preprocessor is None else self.preprocessor.to_dict(),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineModel":
        if d.get("format") != MODEL_FORMAT or d.get("format_version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file (format {d.get('format')!r}, version {d.get('format_version')!r})")
        st = d["store"]
        model = cls(
            MetaEncoder.from_dict(d["encoder"]),
            surrogate_from_dict(d["surrogate"]),
            np.array(st["X"], dtype=np.float64).reshape(len(st["X"]), -1),
            np.array(st["bb_labels"], dtype=np.int64),
            geo.FeatureSchema.from_dict(d["schema"]),
            d["target_class"],
            d["split_seed"],
            list(d.get("class_names", [])),
            None if d.get("preprocessor") is None else Preprocessor.from_dict(d["preprocessor"]),
            d.get("source", {}),
        )
        if _digest(model.Z_train) != st["z_digest"]:
            warnings.warn("regenerated latent store differs bitwise from the one saved at training time",
                          stacklevel=2)
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "PipelineModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_target(labels: np.ndarray, n_classes: int) -> int:
    """Class 1 for binary problems, the majority class otherwise."""
    if n_classes == 2:
        return 1
    return int(np.argmax(np.bincount(labels, minlength=n_classes)))


def fit_pipeline(X, Y, config: TrainingConfig, schema: geo.FeatureSchema, surrogate: str = "lr",
                 target_class: int | None = None, history: list | None = None, **extra) -> PipelineModel:
    """Train the encoder on (X, Y), then the surrogate on latent codes and black-box labels."""
    Y = np.asarray(Y, dtype=np.float64)
    labels = np.argmax(Y, axis=1)
    encoder = train(X, Y, config, schema, history)
    Z = encoder.encode(X)
    if surrogate == "lr":
        sur = fit_logistic(Z, labels)
    elif surrogate == "dt":
        sur = fit_tree_tuned(Z, labels, seed=config.seed)
    else:
        raise ValueError(f"unknown surrogate {surrogate!r}")
    tgt = default_target(labels, Y.shape[1]) if target_class is None else int(target_class)
    return PipelineModel(encoder, sur, np.asarray(X, dtype=np.float64), labels, schema, tgt, **extra)


# ----------------------------------------------------------------------
# argument plumbing shared by the runs
# ----------------------------------------------------------------------
def training_config(args) -> TrainingConfig:
    kw = {}
    for flag, name in (("k", "k"), ("alpha", "alpha"), ("lambda_y", "lambda_y"), ("lambda_st", "lambda_st"),
                       ("lambda_so", "lambda_so"), ("lambda_co", "lambda_co"), ("stability_mode", "stability_mode"),
                       ("seed", "seed"), ("epochs", "finetune_epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return TrainingConfig(**kw)


def _inputs(args, split_seed: int, preprocessor: Preprocessor | None = None):
    """Dataset and aligned black-box outputs from CSV files or a synthetic manifest."""
    manifest = getattr(args, "synthetic_manifest", None)
    if manifest:
        man, n = read_manifest(manifest)
        data = synthetic_dataset(man, n)
        return data, synthetic_blackbox(man, data), {"synthetic_manifest": man.to_dict(), "n_instances": n}
    if not getattr(args, "data", None):
        raise DataError("need --data (with --schema and --preds) or --synthetic-manifest")
    if preprocessor is None and not getattr(args, "schema", None):
        raise DataError("--data needs --schema")
    if preprocessor is not None:
        columns = preprocessor.columns
        raw, ids = _read_raw(args.data, columns)
        tr, te = split_indices(len(ids), split_seed)
        sub = lambda idx: {k: [v[i] for i in idx] for k, v in raw.items()}  # noqa: E731
        data = Dataset(preprocessor.transform(sub(tr), len(tr)), preprocessor.transform(sub(te), len(te)),
                       [ids[i] for i in tr], [ids[i] for i in te], preprocessor.schema(), preprocessor, split_seed)
    else:
        data = load_dataset(args.data, args.schema, split_seed)
    if not getattr(args, "preds", None):
        return data, None, {"data": str(args.data)}
    return data, load_blackbox(args.preds), {"data": str(args.data)}


# ----------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------
def run_train(args) -> PipelineModel:
    split_seed = getattr(args, "split_seed", None) or 0
    data, bb, source = _inputs(args, split_seed)
    if bb is None:
        raise DataError("training needs black-box outputs (--preds or --synthetic-manifest)")
    Y = bb.align(data.ids_train)
    config = training_config(args)
    model = fit_pipeline(data.X_train, Y, config, data.schema, getattr(args, "surrogate", "lr") or "lr",
                         getattr(args, "target_class", None), split_seed=split_seed,
                         class_names=list(bb.class_names), preprocessor=data.preprocessor, source=source)
    if getattr(args, "model", None):
        model.save(args.model)
    return model


def _explain_rows(model: PipelineModel, X, labels, ids, kind: str) -> list[Explanation]:
    if kind not in ("importance", "rule", "counterfactual"):
        raise ValueError(f"unknown explanation kind {kind!r}")
    ex = model.explainer()
    try:
        return ex.explain_many(X, labels, kind, ids)
    except Exception:  # noqa: BLE001 - retry row by row so one failure does not abort the run
        log.exception("batch explanation failed; retrying row by row")
    out = []
    for i in range(len(X)):
        try:
            out.append(ex.explain(X[i], None if labels is None else labels[i], kind, ids[i]))
        except Exception as exc:  # noqa: BLE001
            out.append(Explanation(ids[i], kind, None, False, error=f"{type(exc).__name__}: {exc}"))
    return out


def run_explain(args) -> list[dict]:
    model = PipelineModel.load(args.model)
    data, bb, _ = _inputs(args, model.split_seed, model.preprocessor)
    X, ids = data.split(getattr(args, "split", None) or "test")
    labels = None if bb is None else np.argmax(bb.align(ids), axis=1)
    kind = getattr(args, "kind", None) or "importance"
    t0 = time.perf_counter()
    exps = _explain_rows(model, X, labels, ids, kind)
    elapsed = time.perf_counter() - t0
    records = [e.to_json() for e in exps]
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            for r in records:
                fh.write(json.dumps(r, separators=(",", ":")) + "\n")
        # timing varies run to run, so it lives beside the report
        Path(str(args.out) + ".timing.json").write_text(json.dumps(
            {"n_instances": len(X), "seconds": elapsed,
             "seconds_per_instance": elapsed / len(X) if len(X) else None}) + "\n")
    log.info("explained %d instances in %.3fs", len(X), elapsed)
    return records


# -- benchmark ------------------------------------------------------------
@dataclass
class ClassifierBench:
    manifest: sb.Manifest
    model: PipelineModel
    X_test: np.ndarray
    b_test: np.ndarray
    explanations: list[Explanation]
    scores: np.ndarray
    baseline_scores: np.ndarray

    def row(self) -> dict:
        n_invalid = sum(1 for e in self.explanations if e.valid is False)
        return {
            "family": self.manifest.family,
            "classifier_index": self.manifest.classifier_index,
            "m": self.manifest.m,
            "illume": {"mean": float(np.mean(self.scores)), "mad": em.median_absolute_deviation(self.scores)},
            "baseline": {"mean": float(np.mean(self.baseline_scores)),
                         "mad": em.median_absolute_deviation(self.baseline_scores)},
            "surrogate_agreement": float(np.mean(self.model.store.agree)),
            "n_invalid": n_invalid,
        }


def bench_classifier(manifest: sb.Manifest, config: TrainingConfig, n_instances: int = 2048) -> ClassifierBench:
    """Train on fresh rows, explain held-out rows, score against the reference explanations."""
    data = synthetic_dataset(manifest, n_instances)
    clf = manifest.classifier()
    Y = clf.predict_proba(data.X_train)
    b_tr = clf.predict(data.X_train)
    b_te = clf.predict(data.X_test)
    if manifest.family == "linear":
        model = fit_pipeline(data.X_train, Y, config, data.schema, "lr")
        exps = model.explainer().explain_many(data.X_test, b_te, "importance")
        ref = sb.gt_importance(clf)
        scores = np.array([em.cs_score(e.psi, ref) for e in exps])
        psi_b = InputLogistic.fit(data.X_train, b_tr, data.schema).importance(data.X_test, b_te, 1)
        base = np.array([em.cs_score(p, ref) for p in psi_b])
    else:
        model = fit_pipeline(data.X_train, Y, config, data.schema, "dt")
        exps = model.explainer().explain_many(data.X_test, b_te, "rule")
        refs = [sb.gt_rule(clf, x) for x in data.X_test]
        scores = np.array([em.cplt_score(r, e.rule) for r, e in zip(refs, exps)])
        rules_b = InputTree.fit(data.X_train, b_tr, data.schema, seed=config.seed).rules(data.X_test, b_te)
        base = np.array([em.cplt_score(r, rb) for r, rb in zip(refs, rules_b)])
    return ClassifierBench(manifest, model, data.X_test, b_te, exps, scores, base)


def run_bench(args) -> dict:
    m = getattr(args, "m", None) or 4
    cfg_syn = sb.SyntheticConfig.standard(m, n_instances=getattr(args, "n_instances", None) or 2048,
                                          n_classifiers=getattr(args, "n_classifiers", None) or 5,
                                          seed=getattr(args, "seed", None) or 0)
    families = [args.family] if getattr(args, "family", None) else list(sb.FAMILIES)
    config = training_config(args)
    rows, agg = [], {}
    for fam in families:
        all_s, all_b = [], []
        for idx in range(cfg_syn.n_classifiers):
            man = sb.Manifest(cfg_syn.m, cfg_syn.t, cfg_syn.u, fam, cfg_syn.seed, idx, cfg_syn.n_classifiers)
            res = bench_classifier(man, replace(config, seed=config.seed + idx), cfg_syn.n_instances)
            rows.append(res.row())
            all_s.append(res.scores)
            all_b.append(res.baseline_scores)
            log.info("bench %s #%d: %.3f vs baseline %.3f", fam, idx, rows[-1]["illume"]["mean"],
                     rows[-1]["baseline"]["mean"])
        s, b = np.concatenate(all_s), np.concatenate(all_b)
        agg[fam] = {
            "score": "cs" if fam == "linear" else "cplt",
            "illume": {"mean": float(s.mean()), "mad": em.median_absolute_deviation(s)},
            "baseline": {"mean": float(b.mean()), "mad": em.median_absolute_deviation(b)},
        }
    report = {"config": {"synthetic": {"m": cfg_syn.m, "t": cfg_syn.t, "u": cfg_syn.u,
                                       "n_instances": cfg_syn.n_instances,
                                       "n_classifiers": cfg_syn.n_classifiers, "seed": cfg_syn.seed},
                         "training": config.to_dict()},
              "classifiers": rows, "aggregate": agg}
    if getattr(args, "out", None):
        Path(args.out).write_text(json.dumps(report, indent=1) + "\n")
    return report


# -- evaluation -------------------------------------------------------------
def _explanation_sim(model: PipelineModel, X, labels, kind: str):
    exps = model.explainer().explain_many(X, labels, kind)
    if kind == "importance":
        return em.importance_pairs(np.array([e.psi for e in exps]))
    return em.rule_pairs(np.array([e.rule.lower for e in exps]), np.array([e.rule.upper for e in exps]))


def evaluate(model: PipelineModel, X, Y, metric: str, kind: str | None = None, seed: int = 0,
             n_triplets: int = 20000, K: int = 5, K_max: int = 20) -> em.MetricReport:
    """One metric on rows ``X`` with black-box probability rows ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    labels = np.argmax(Y, axis=1)
    Z = model.encoder.encode(X)
    kind = kind or ("importance" if isinstance(model.surrogate, LogisticSurrogate) else "rule")
    conf = {"metric": metric, "n": int(len(X)), "seed": seed}
    flags: dict = {}
    if metric == "knn-gain":
        conf["K"] = K
        vals = [em.knn_gain(X, Z, labels, K, model.schema)]
    elif metric == "triplet-feature":
        conf["n_triplets"] = n_triplets
        vals = [em.triplet_accuracy(em.pairwise_euclidean, em.pairwise_euclidean, X, Z, n_triplets, seed)]
    elif metric == "triplet-decision":
        conf["n_triplets"] = n_triplets
        vals = [em.triplet_accuracy(em.pairwise_euclidean, em.pairwise_euclidean, Z, Y, n_triplets, seed)]
    elif metric == "robustness":
        conf.update(kind=kind, K_max=K_max)
        sim = _explanation_sim(model, X, labels, kind)
        res = em.robustness_max_sensitivity(sim, geo.pairwise_cosine(Z), labels, K_max)
        vals = res.scores
        flags = {"truncated": np.nonzero(res.truncated)[0].tolist(), "excluded": np.nonzero(res.excluded)[0].tolist()}
    elif metric == "faithfulness":
        conf["kind"] = kind
        rho, deg = em.faithfulness(_explanation_sim(model, X, labels, kind), Y)
        vals, flags = [rho], {"degenerate": deg}
    elif metric == "global-robustness":
        conf["kind"] = kind
        rho, deg = em.global_robustness(_explanation_sim(model, X, labels, kind),
                                        geo.pairwise_input_distance(X, model.schema), labels)
        vals, flags = [rho], {"degenerate": deg}
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    return em.MetricReport(metric, np.asarray(vals, dtype=np.float64), conf, flags)


def run_eval(args) -> dict:
    model = PipelineModel.load(args.model)
    data, bb, _ = _inputs(args, model.split_seed, model.preprocessor)
    if bb is None:
        raise DataError("evaluation needs black-box outputs (--preds or --synthetic-manifest)")
    X, ids = data.split(getattr(args, "split", None) or "test")
    rep = evaluate(model, X, bb.align(ids), args.metric, getattr(args, "kind", None),
                   getattr(args, "seed", None) or 0).to_dict()
    if getattr(args, "out", None):
        Path(args.out).write_text(json.dumps(rep, indent=1) + "\n")
    return rep


def inspect_model(path) -> dict:
    model = PipelineModel.load(path)
    enc = model.encoder
    return {
        "m": enc.m,
        "k": enc.k,
        "alpha": enc.alpha,
        "surrogate": model.surrogate.kind,
        "n_train": int(len(model.X_train)),
        "target_class": model.target_class,
        "class_names": model.class_names,
        "surrogate_agreement": float(np.mean(model.store.agree)) if len(model.X_train) else math.nan,
        "training_config": None if enc.config is None else enc.config.to_dict(),
        "feature_names": list(model.schema.names),
    }
