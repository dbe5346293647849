"""Command-line interface.

Settings come from three places, later ones winning: built-in defaults, a
YAML or JSON file given with ``--config``, and command-line flags.  Relative
input paths are resolved against the data directory (``--data-dir``, else
``$KGACTION_DATA_DIR``, else the working directory), falling back to the
working directory for files that only exist there.  Outputs are staged in
memory and only written, via temp file and rename, once a command succeeds.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import NumericError, ValidationError
from .gcn import DEFAULT_HIDDEN, TrainConfig, loss_csv_text
from .graph import GraphMode, NodeRole, edge_list_text
from .lexicon import (
    EmbeddingKind,
    SHIPPED_DATASETS,
    generate_random_splits,
    load_embeddings,
    load_split_manifest,
    manifest_text,
    parse_action_phrase,
    shipped_manifest,
)
from .pipeline import (
    ExperimentConfig,
    ExperimentInputs,
    LossConfig,
    MetricKind,
    bank_text,
    build_kg1,
    build_kg2,
    build_kg3,
    derive_seed,
    evaluate_weights,
    fit,
    manifest_fingerprint,
    read_bank,
    read_features_text,
    run_experiment,
)
from .pipeline.graphs import aux_label

log = logging.getLogger("kgaction")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3
DATA_DIR_ENV = "KGACTION_DATA_DIR"
FEW_SHOT_UCF_LR = 0.00005
ABLATION_AXES = (
    "embedding",
    "graph-config",
    "fc-bipartite",
    "linear-combination",
    "encoder-decoder",
    "gamma",
    "splits",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_list(cast):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return [cast(v) for v in text]
        return [cast(v) for v in str(text).split(",") if v.strip()]

    parse.__name__ = f"list of {cast.__name__}"
    return parse


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class Opt:
    cast: object
    default: object
    help: str
    choices: tuple | None = None
    path: bool = False
    flag: bool = False


OPTIONS = {
    "dataset": Opt(str, None, "shipped dataset name", SHIPPED_DATASETS),
    "manifest": Opt(str, None, "split manifest file (overrides --dataset)", path=True),
    "embeddings": Opt(str, None, "label embedding table", path=True),
    "embedding_kind": Opt(str, "phrase", "embedding table kind", ("phrase", "word")),
    "word_embeddings": Opt(str, None, "word-level table for the embedding ablation", path=True),
    "kg2_pairs": Opt(str, None, "TSV action/noun/verb table overriding label parsing", path=True),
    "bank": Opt(str, None, "classifier bank for dataset training classes", path=True),
    "auxiliary_bank": Opt(str, None, "classifier bank for auxiliary classes", path=True),
    "train_features": Opt(str, None, "training-sample features", path=True),
    "test_features": Opt(str, None, "test-sample features", path=True),
    "support_features": Opt(str, None, "few-shot support pool (default: test features)", path=True),
    "auxiliary_features": Opt(str, None, "features of auxiliary-class samples (kg3)", path=True),
    "weights": Opt(str, None, "test-class weights written by train", path=True),
    "out": Opt(str, "kgaction_out", "output directory"),
    "kind": Opt(str, "kg1", "graph to build", ("kg1", "kg2", "kg3")),
    "kgs": Opt(_csv_list(str), ["kg1"], "comma-separated graphs: kg1,kg2verb,kg2noun,kg3"),
    "fusion": Opt(str, "concat", "how several graphs are combined", ("concat", "weighted_sum")),
    "fusion_weights": Opt(_csv_list(float), [], "weights for weighted_sum fusion"),
    "top_n": Opt(int, None, "neighbours per node (default: manifest value)"),
    "loss_config": Opt(str, "both_nodes_loss", "nodes in graph and loss", tuple(c.value for c in LossConfig)),
    "graph_mode": Opt(str, "fc", "adjacency structure", ("fc", "bipartite")),
    "include_auxiliary": Opt(_bool, True, "add auxiliary nodes", flag=True),
    "auxiliary_labels": Opt(_bool, False, "also list auxiliary labels", flag=True),
    "few_shot": Opt(_bool, False, "few-shot mode", flag=True),
    "few_shot_k": Opt(int, 5, "support samples per test class"),
    "seed": Opt(int, 0, "master seed"),
    "lr": Opt(float, None, "initial learning rate (default 0.001; 0.00005 for ucf101 few-shot)"),
    "decay": Opt(float, 0.999, "learning-rate decay factor"),
    "decay_every": Opt(int, 100, "epochs between decays"),
    "epochs": Opt(int, 3000, "training epochs"),
    "hidden": Opt(_csv_list(int), list(DEFAULT_HIDDEN), "hidden layer widths"),
    "encoder_decoder": Opt(_bool, False, "prepend an encoder-decoder to the input", flag=True),
    "normalize_outputs": Opt(_bool, False, "L2-normalize predicted weights", flag=True),
    "target_source": Opt(str, "ingested", "where regression targets come from", ("ingested", "closed_form")),
    "gamma": Opt(float, 1.0, "ridge regularizer for closed-form targets"),
    "gammas": Opt(_csv_list(float), [0.1, 1.0, 10.0], "regularizers swept by the gamma ablation"),
    "method": Opt(str, "gcn", "how test weights are produced", ("gcn", "linear_combination", "nearest_neighbor")),
    "metric": Opt(str, "auto", "evaluation metric", ("auto", "accuracy", "map")),
    "linear_k": Opt(int, 4, "neighbours in the linear-combination baseline"),
    "axis": Opt(str, None, "ablation axis", ABLATION_AXES),
    "n_test": Opt(int, 10, "test classes per random split"),
    "n_splits": Opt(int, 5, "number of random splits"),
}

_EXPERIMENT = [
    "dataset", "manifest", "embeddings", "embedding_kind", "kg2_pairs", "bank", "auxiliary_bank",
    "train_features", "support_features", "auxiliary_features", "kgs", "fusion", "fusion_weights",
    "top_n", "loss_config", "graph_mode", "few_shot", "few_shot_k", "seed", "lr", "decay",
    "decay_every", "epochs", "hidden", "encoder_decoder", "normalize_outputs", "target_source",
    "gamma", "method", "linear_k", "out",
]

COMMANDS = {
    "build-kg": (
        "write knowledge-graph edge lists and a summary",
        ["dataset", "manifest", "kind", "embeddings", "embedding_kind", "kg2_pairs", "top_n",
         "graph_mode", "include_auxiliary", "train_features", "support_features", "test_features",
         "auxiliary_features", "few_shot_k", "seed", "out"],
    ),
    "train": ("train and write a checkpoint, loss curve and test-class weights", _EXPERIMENT + ["test_features"]),
    "evaluate": (
        "score test features against trained test-class weights",
        ["dataset", "manifest", "weights", "test_features", "metric", "out"],
    ),
    "ablate": (
        "run one ablation sweep and write a comparison table",
        _EXPERIMENT + ["test_features", "metric", "axis", "word_embeddings", "gammas", "n_test", "n_splits"],
    ),
    "selfcheck": ("run the numerical self-checks", ["out"]),
    "parse-labels": (
        "write the verb/noun decomposition of every label as TSV",
        ["dataset", "manifest", "auxiliary_labels", "out"],
    ),
    "make-splits": (
        "write random train/test split manifests",
        ["dataset", "manifest", "n_test", "n_splits", "seed", "out"],
    ),
}


def build_parser():
    parser = _Parser(prog="kgaction", description="Knowledge-graph zero-shot action recognition.")
    parser.add_argument("--version", action="version", version=f"kgaction {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (help_text, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="YAML or JSON settings file")
        p.add_argument("--data-dir", help=f"base for relative input paths (default ${DATA_DIR_ENV} or cwd)")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in keys:
            opt = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            default_note = "" if opt.default is None else f" (default: {opt.default})"
            if opt.flag:
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None,
                               help=opt.help + default_note)
            else:
                p.add_argument(flag, dest=key, type=opt.cast, choices=opt.choices, default=None,
                               help=opt.help + default_note)
        if name == "selfcheck":
            p.add_argument("--corrupt-gradient", dest="corrupt_gradient", type=int, default=None,
                           help=argparse.SUPPRESS)
    return parser


# --------------------------------------------------------------------------
# settings resolution

def load_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: the config document must be a mapping")
    out = {}
    for raw_key, value in doc.items():
        key = str(raw_key).replace("-", "_")
        if key not in OPTIONS:
            raise ValidationError(f"{path}: unknown key {raw_key!r}; valid keys: {', '.join(sorted(OPTIONS))}")
        opt = OPTIONS[key]
        if value is not None:
            value = opt.cast(value)
            if opt.choices and value not in opt.choices:
                raise ValidationError(f"{path}: {raw_key} must be one of {opt.choices}, got {value!r}")
        out[key] = value
    return out


@dataclass
class Settings:
    values: dict
    sources: dict
    data_dir: Path

    def __getitem__(self, key):
        return self.values.get(key)

    def path(self, key, required=False):
        value = self.values.get(key)
        if value is None:
            if required:
                raise ValidationError(f"--{key.replace('_', '-')} is required")
            return None
        p = Path(value)
        if p.is_absolute():
            return p
        # outputs of an earlier command usually sit under the working directory
        under_data = self.data_dir / p
        return p if not under_data.exists() and p.exists() else under_data

    def echo(self):
        return {k: {"value": self.values[k], "source": self.sources[k]} for k in sorted(self.values)}


def resolve_settings(args, keys) -> Settings:
    values = {k: OPTIONS[k].default for k in keys}
    sources = dict.fromkeys(keys, "default")
    if args.config:
        for k, v in load_config_file(args.config).items():
            if k in values:
                values[k] = v
                sources[k] = "config"
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
            sources[k] = "flag"
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV) or "."
    return Settings(values, sources, Path(data_dir))


# --------------------------------------------------------------------------
# staged, atomic outputs

class StagedOutputs:
    """Collects output files and writes them only on :meth:`commit`."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.files = {}

    def add(self, name, content):
        self.files[name] = content.encode("utf-8") if isinstance(content, str) else bytes(content)

    def commit(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        for name, data in self.files.items():
            target = self.directory / name
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return [self.directory / n for n in self.files]


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# input loading

def load_manifest(s: Settings):
    path = s.path("manifest")
    if path is not None:
        return load_split_manifest(path)
    if s["dataset"] is None:
        raise ValidationError("give --dataset or --manifest")
    return shipped_manifest(s["dataset"])


def _existing(path, what):
    if not Path(path).is_file():
        raise ValidationError(f"{what} not found: {path}")
    return path


def load_pairs_table(path):
    """Read an ``action<TAB>noun<TAB>verb`` table into ``{action: (verb, noun)}``."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#") or (lineno == 1 and line.lower().startswith("action\t")):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValidationError(f"{path}:{lineno}: expected action<TAB>noun<TAB>verb")
        out[parts[0].strip()] = (parts[2].strip(), parts[1].strip())
    return out


class InputLoader:
    def __init__(self, settings: Settings):
        self.s = settings
        self.digests = {}

    def _track(self, key, path):
        self.digests[key] = {"file": Path(path).name, "sha256": _digest(path)}

    def optional(self, key, reader, what):
        path = self.s.path(key)
        if path is None:
            return None
        _existing(path, what)
        self._track(key, path)
        return reader(path)

    def embeddings(self, key="embeddings", kind=None):
        kind = EmbeddingKind(kind or self.s["embedding_kind"] or "phrase")
        return self.optional(key, lambda p: load_embeddings(p, kind), "embedding table")

    def experiment_inputs(self, manifest, need_test=True):
        pairs = self.optional("kg2_pairs", load_pairs_table, "verb/noun table")
        test = self.optional("test_features", read_features_text, "test features")
        if test is None and need_test:
            raise ValidationError("--test-features is required")
        return ExperimentInputs(
            manifest=manifest,
            test_features=test,
            embeddings=self.embeddings(),
            bank=self.optional("bank", read_bank, "classifier bank"),
            auxiliary_bank=self.optional("auxiliary_bank", read_bank, "auxiliary classifier bank"),
            train_features=self.optional("train_features", read_features_text, "training features"),
            support_features=self.optional("support_features", read_features_text, "support features"),
            auxiliary_features=self.optional("auxiliary_features", read_features_text, "auxiliary features"),
            kg2_overrides=pairs,
            digests=self.digests,
        )


def experiment_config(s: Settings, manifest) -> ExperimentConfig:
    lr = s["lr"]
    if lr is None:
        lr = FEW_SHOT_UCF_LR if s["few_shot"] and manifest.name.lower() == "ucf101" else 0.001
    metric = s["metric"]
    train_cfg = TrainConfig(
        lr0=lr, decay=s["decay"], decay_every=s["decay_every"], epochs=s["epochs"], seed=s["seed"]
    )
    return ExperimentConfig(
        dataset=manifest.name,
        kgs=tuple(s["kgs"]),
        fusion=s["fusion"],
        fusion_weights=tuple(s["fusion_weights"]),
        top_n=s["top_n"],
        loss_config=LossConfig(s["loss_config"]),
        graph_mode=GraphMode(s["graph_mode"]),
        few_shot=bool(s["few_shot"]),
        few_shot_k=s["few_shot_k"],
        seed=s["seed"],
        train=train_cfg,
        hidden=tuple(s["hidden"]),
        encoder_decoder=bool(s["encoder_decoder"]),
        normalize_outputs=bool(s["normalize_outputs"]),
        target_source=s["target_source"],
        gamma=s["gamma"],
        method=s["method"],
        metric=None if metric in (None, "auto") else MetricKind(metric),
        linear_k=s["linear_k"],
    )


# --------------------------------------------------------------------------
# commands

def graph_summary(name, g) -> str:
    lines = [f"graph {name}: {g.node_count} nodes, {g.adjacency.nnz // 2} undirected edges, top_n={g.top_n}, mode={g.mode.value}"]
    for role in NodeRole:
        lines.append(f"  {role.value:<10} {len(g.indices(role))}")
    degrees = g.degrees()
    lines.append("  degree histogram:")
    values, counts = np.unique(degrees, return_counts=True)
    for v, c in zip(values.tolist(), counts.tolist()):
        lines.append(f"    {v:>4}  {c}")
    return "\n".join(lines) + "\n"


def cmd_build_kg(s: Settings, args):
    manifest = load_manifest(s)
    loader = InputLoader(s)
    out = StagedOutputs(s["out"])
    kind = s["kind"]
    mode = GraphMode(s["graph_mode"])
    aux = bool(s["include_auxiliary"])
    if kind in ("kg1", "kg2"):
        table = loader.embeddings()
        if table is None:
            raise ValidationError("--embeddings is required for kg1 and kg2")
        if kind == "kg1":
            graphs = {"kg1": build_kg1(manifest, table, s["top_n"], mode, aux)}
        else:
            pairs = loader.optional("kg2_pairs", load_pairs_table, "verb/noun table")
            kg2 = build_kg2(manifest, None, table, s["top_n"], mode, aux, pairs)
            graphs = {"kg2verb": kg2["verb"], "kg2noun": kg2["noun"]}
    else:
        train = loader.optional("train_features", read_features_text, "training features")
        support = loader.optional("support_features", read_features_text, "support features")
        support = support or loader.optional("test_features", read_features_text, "test features")
        if train is None or support is None:
            raise ValidationError("kg3 needs --train-features and --support-features (or --test-features)")
        auxf = loader.optional("auxiliary_features", read_features_text, "auxiliary features") if aux else None
        g, _ = build_kg3(manifest, train, support, s["few_shot_k"], derive_seed(s["seed"], "support"),
                         s["top_n"], None, auxf)
        graphs = {"kg3": g}
    summary = ""
    for name, g in graphs.items():
        out.add(f"{manifest.name}_{name}.edges", edge_list_text(g))
        summary += graph_summary(name, g)
    out.add(f"{manifest.name}_{kind}_summary.txt", summary)
    out.add(f"{manifest.name}_{kind}_provenance.json", _json({"settings": s.echo(), "inputs": loader.digests}))
    out.commit()
    sys.stdout.write(summary)


def cmd_train(s: Settings, args):
    manifest = load_manifest(s)
    config = experiment_config(s, manifest)
    loader = InputLoader(s)
    inputs = loader.experiment_inputs(manifest, need_test=False)
    result = fit(config, inputs)
    out = StagedOutputs(s["out"])
    if result.checkpoint:
        out.add("model.kgcn", result.checkpoint)
        out.add("loss.csv", loss_csv_text(result.loss_history, result.lr_history))
    out.add("w_test.bank", bank_text(result.w_test))
    provenance = {
        "version": __version__,
        "settings": s.echo(),
        "config": config.to_dict(),
        "config_hash": config.fingerprint(),
        "manifest_fingerprint": manifest_fingerprint(manifest),
        "seeds": result.seeds,
        "inputs": dict(sorted(loader.digests.items())),
        "support_ids": list(result.support_ids),
        "checkpoint_sha256": hashlib.sha256(result.checkpoint).hexdigest(),
        "final_loss": result.loss_history[-1] if result.loss_history else None,
        "graphs": {k: {"nodes": g.node_count, "fingerprint": g.fingerprint()} for k, g in result.graphs.items()},
    }
    out.add("w_test.bank.provenance.json", _json(provenance))
    out.commit()
    if result.loss_history:
        print(f"trained {len(result.loss_history)} epochs: loss {result.loss_history[0]:.6g} -> {result.loss_history[-1]:.6g}")
    print(f"wrote {out.directory}")


def _report_outputs(out, stem, report, provenance):
    out.add(f"{stem}.csv", report.to_csv())
    out.add(f"{stem}.txt", report.to_table())
    out.add(f"{stem}.provenance.json", _json(provenance))


def cmd_evaluate(s: Settings, args):
    manifest = load_manifest(s)
    loader = InputLoader(s)
    weights_path = s.path("weights", required=True)
    bank = loader.optional("weights", read_bank, "test-class weights")
    test = loader.optional("test_features", read_features_text, "test features")
    if test is None:
        raise ValidationError("--test-features is required")
    sidecar = Path(str(weights_path) + ".provenance.json")
    exclude, trained = (), {}
    if sidecar.is_file():
        trained = json.loads(sidecar.read_text(encoding="utf-8"))
        want = manifest_fingerprint(manifest)
        if trained.get("manifest_fingerprint") != want:
            raise ValidationError(
                f"weights were trained for a different manifest (fingerprint {trained.get('manifest_fingerprint')}, "
                f"this manifest is {want}); evaluate with the manifest used for training"
            )
        exclude = tuple(trained.get("support_ids", ()))
    else:
        log.warning("no provenance sidecar next to %s; manifest consistency not checked", weights_path)
    metric = None if s["metric"] in (None, "auto") else s["metric"]
    report = evaluate_weights(manifest, test, bank, metric, exclude)
    report.config_fingerprint = trained.get("config_hash", "")
    provenance = {
        "version": __version__,
        "settings": s.echo(),
        "metric": report.metric.value,
        "config_hash": report.config_fingerprint,
        "manifest_fingerprint": manifest_fingerprint(manifest),
        "inputs": dict(sorted(loader.digests.items())),
        "warnings": report.warnings,
    }
    out = StagedOutputs(s["out"])
    _report_outputs(out, "report", report, provenance)
    out.commit()
    sys.stdout.write(report.to_table())


def _ablation_variants(axis, s: Settings, base: ExperimentConfig, inputs: ExperimentInputs, loader):
    """Yield ``(row name, config, inputs)`` for one sweep axis."""
    from dataclasses import replace

    if axis == "embedding":
        word = loader.embeddings("word_embeddings", "word")
        if inputs.embeddings is None or word is None:
            raise ValidationError("the embedding axis needs --embeddings and --word-embeddings")
        yield "phrase", base, inputs
        yield "word", base, replace(inputs, embeddings=word)
    elif axis == "graph-config":
        for lc in LossConfig:
            yield lc.value, replace(base, loss_config=lc), inputs
    elif axis == "fc-bipartite":
        yield "fc", replace(base, graph_mode=GraphMode.FULLY_CONNECTED), inputs
        yield "bipartite", replace(base, graph_mode=GraphMode.BIPARTITE), inputs
    elif axis == "linear-combination":
        yield "gcn", replace(base, method="gcn"), inputs
        yield "linear_combination", replace(base, method="linear_combination"), inputs
    elif axis == "encoder-decoder":
        yield "plain", replace(base, encoder_decoder=False), inputs
        yield "encoder_decoder", replace(base, encoder_decoder=True), inputs
    elif axis == "gamma":
        for g in s["gammas"]:
            yield f"gamma={g!r}", replace(base, target_source="closed_form", gamma=float(g)), inputs
    elif axis == "splits":
        splits = generate_random_splits(inputs.manifest, s["n_test"], s["n_splits"], derive_seed(base.seed, "splits"))
        for m in splits:
            if base.target_source == "ingested" and inputs.bank is not None:
                missing = [c for c in m.train_classes if c not in inputs.bank]
                if missing:
                    raise ValidationError(
                        f"split {m.name} trains on classes the bank does not cover: {missing[:5]}; "
                        "random splits need a bank with rows for every dataset class"
                    )
            yield m.name, replace(base, dataset=m.name), replace(inputs, manifest=m)


def cmd_ablate(s: Settings, args):
    axis = s["axis"]
    if axis is None:
        raise UsageError(f"--axis is required; valid axes: {', '.join(ABLATION_AXES)}")
    manifest = load_manifest(s)
    base = experiment_config(s, manifest)
    loader = InputLoader(s)
    inputs = loader.experiment_inputs(manifest)
    rows, provenance_rows = [], []
    for name, config, variant_inputs in _ablation_variants(axis, s, base, inputs, loader):
        log.info("ablation %s: running %s", axis, name)
        result = run_experiment(config, variant_inputs)
        rows.append((name, result.report.metric.value, result.report.overall))
        provenance_rows.append({"row": name, **result.provenance})
    scores = np.array([r[2] for r in rows])
    csv_lines = ["variant,metric,score"] + [f"{n},{m},{v!r}" for n, m, v in rows]
    width = max(len("variant"), *(len(r[0]) for r in rows))
    table = [f"ablation: {axis}", f"{'variant':<{width}}  score"]
    table += [f"{n:<{width}}  {100 * v:6.2f}" for n, _, v in rows]
    if axis == "splits":
        mean, std = float(scores.mean()), float(scores.std())
        csv_lines += [f"MEAN,{rows[0][1]},{mean!r}", f"STD,{rows[0][1]},{std!r}"]
        table.append(f"{'mean +- std':<{width}}  {100 * mean:6.2f} +- {100 * std:.2f}")
    out = StagedOutputs(s["out"])
    stem = f"ablation_{axis}"
    out.add(f"{stem}.csv", "\n".join(csv_lines) + "\n")
    out.add(f"{stem}.txt", "\n".join(table) + "\n")
    out.add(f"{stem}.provenance.json", _json({"settings": s.echo(), "rows": provenance_rows}))
    out.commit()
    print("\n".join(table))


def cmd_selfcheck(s: Settings, args):
    from .selfcheck import run_all

    results = run_all(corrupt_layer=args.corrupt_gradient)
    text = "".join(r.line() + "\n" for r in results)
    failed = [r.name for r in results if not r.passed]
    text += f"{len(results) - len(failed)}/{len(results)} checks passed\n"
    # a failing run reports on stdout only, like every other failed command
    if not failed and s.sources.get("out") != "default":
        out = StagedOutputs(s["out"])
        out.add("selfcheck.txt", text)
        out.commit()
    sys.stdout.write(text)
    if failed:
        raise NumericError(f"self-check failed: {', '.join(failed)}")


def cmd_parse_labels(s: Settings, args):
    manifest = load_manifest(s)
    labels = [(lab, manifest.embedding_key(lab)) for lab in manifest.dataset_classes]
    if s["auxiliary_labels"]:
        labels += [(aux_label(c), c) for c in manifest.auxiliary_classes]
    lines = ["action\tnoun\tverb\tverb_source\tnoun_source"]
    for lab, phrase in labels:
        p = parse_action_phrase(phrase)
        lines.append(f"{lab}\t{p.noun}\t{p.verb}\t{p.verb_source.value}\t{p.noun_source.value}")
    text = "\n".join(lines) + "\n"
    out = StagedOutputs(s["out"])
    out.add(f"{manifest.name}_labels.tsv", text)
    out.commit()
    sys.stdout.write(text)


def cmd_make_splits(s: Settings, args):
    manifest = load_manifest(s)
    splits = generate_random_splits(manifest, s["n_test"], s["n_splits"], derive_seed(s["seed"], "splits"))
    out = StagedOutputs(s["out"])
    for m in splits:
        out.add(f"{m.name}.manifest", manifest_text(m))
        print(f"{m.name}: {len(m.train_classes)} train / {len(m.test_classes)} test")
    out.commit()


HANDLERS = {
    "build-kg": cmd_build_kg,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "selfcheck": cmd_selfcheck,
    "parse-labels": cmd_parse_labels,
    "make-splits": cmd_make_splits,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
        )
        settings = resolve_settings(args, COMMANDS[args.command][1])
        HANDLERS[args.command](settings, args)
        return EXIT_OK
    except UsageError as exc:
        print(f"kgaction: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"kgaction: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as exc:
        print(f"kgaction: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"kgaction: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
