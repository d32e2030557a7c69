"""Command-line pipeline: convert, mine, fit, train, predict, eval, synth.

Each stage reads its predecessors' artifacts from the output directory,
verifies them against the hashes recorded in the run manifest, and writes
versioned outputs of its own. Configuration is flat INI-style key-value text;
any key can be overridden on the command line as ``--section.key value``.

Exit codes: 0 success, 1 usage or configuration problem, 2 data error,
3 missing or inconsistent upstream artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from configparser import ConfigParser, Error as ConfigParserError
from pathlib import Path
from typing import Callable, Optional, Sequence

from joblib import Parallel, delayed

from .errors import (
    ChronomineError,
    ConfigError,
    DatasetFormatError,
    DependencyError,
)
from .eventgraph import build_event_graph
from .learner import (
    MODE_EVENT,
    MODE_RULE,
    TrainConfig,
    active_targets,
    artifact_from_training,
    build_grids,
    load_model,
    save_model,
    train,
)
from .metrics import evaluate_dataset, format_report, write_report_tsv
from .mining import (
    TRANSITION_EXPONENTIAL,
    TRANSITION_UNIFORM,
    MinerConfig,
    read_rule_file,
    write_rule_file,
)
from .pipeline import fallback_statistics, fit_densities, mine_rules
from .predict import Prediction, Predictor, read_predictions, write_predictions
from .density import load_density_table, save_density_table
from .synth import (
    TRUTH_FILE_VERSION,
    HeterogeneousSpec,
    PlantSpec,
    generate_heterogeneous_tkg,
    generate_planted_tkg,
    read_truth_table,
)
from .tkg import (
    SCHEMA_INTERVAL,
    SCHEMA_TIMESTAMP,
    Interval,
    Tkg,
    add_inverse_facts,
    format_time,
    parse_quadruple_file,
    serialize_tkg,
)

DATASET_FILE_VERSION = "# dataset v1"
MANIFEST_FILE_VERSION = "# manifest v1"

# artifact -> the stage that writes it, in pipeline order
ARTIFACT_CHAIN = (
    ("dataset.tsv", "convert"),
    ("rules.tsv", "mine"),
    ("densities.tsv", "fit"),
    ("model.tsv", "train"),
    ("predictions.tsv", "predict"),
)

STAGE_ORDER = ("synth", "convert", "mine", "fit", "train", "predict", "eval")

DEFAULT_CONFIG: dict[str, dict[str, str]] = {
    "data": {
        "train": "",
        "queries": "",
        "schema": SCHEMA_INTERVAL,
        "granularity": "year",
    },
    "grid": {"step": "1"},
    "mine": {
        "max_length": "3",
        "walks_per_query": "10",
        "walks_per_predicate": "200",
        "transition": "",
        "exponential_rate": "",
        "min_support": "2",
        "max_groundings": "64",
        "pattern_free_exploration": "true",
        "exploration_budget": "2000",
    },
    "fit": {"n_min": "10", "sigma_min": "0.5"},
    "train": {
        "learning_rate": "0.01",
        "epochs": "10",
        "batch_size": "32",
        "per_predicate_cap": "100",
        "validation_fraction": "0.2",
        "controller": "false",
        "hidden_dim": "64",
        "embed_dim": "32",
        "epsilon": "1e-8",
    },
    "synth": {
        "kind": "planted",
        "entities": "60",
        "gap_kind": "gaussian",
        "gap_params": "10,1",
        "noise_rate": "0.0",
        "t_lo": "1900",
        "t_hi": "1980",
        "holdout_fraction": "0.2",
        "n_per_pair": "120",
    },
    "run": {
        "seed": "0",
        "jobs": "1",
        "mode": MODE_EVENT,
        "duration": "false",
        "forecast": "false",
        "out": "out",
    },
}

_TRUE_WORDS = frozenset({"true", "yes", "1", "on"})
_FALSE_WORDS = frozenset({"false", "no", "0", "off"})


class UsageError(Exception):
    """Malformed command line; maps to exit code 1."""


# -- configuration -----------------------------------------------------------


def load_config(path: Optional[str]) -> dict[str, dict[str, str]]:
    """Defaults overlaid with the INI file at path; unknown keys rejected."""
    config = {section: dict(keys) for section, keys in DEFAULT_CONFIG.items()}
    if path is None:
        return config
    parser = ConfigParser(interpolation=None)
    try:
        read = parser.read(path)
    except ConfigParserError as exc:
        raise ConfigError(f"cannot parse config file {path!r}: {exc}") from None
    if not read:
        raise ConfigError(f"config file {path!r} not found")
    for section in parser.sections():
        if section not in config:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in config[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            config[section][key] = value
    return config


def apply_override(config: dict[str, dict[str, str]], dotted: str, value: str) -> None:
    section, _, key = dotted.partition(".")
    if section not in config or key not in config[section]:
        raise ConfigError(f"unknown config key {dotted!r}")
    config[section][key] = value


def validate_config(config: dict[str, dict[str, str]]) -> None:
    for key in ("train", "queries"):
        value = config["data"][key]
        if value and not Path(value).exists():
            raise ConfigError(f"data.{key} file {value!r} does not exist")
    if config["data"]["schema"] not in (SCHEMA_INTERVAL, SCHEMA_TIMESTAMP):
        raise ConfigError(f"unsupported data.schema {config['data']['schema']!r}")
    if config["run"]["mode"] not in (MODE_EVENT, MODE_RULE):
        raise ConfigError(f"run.mode must be event or rule, not {config['run']['mode']!r}")
    transition = config["mine"]["transition"]
    if transition and transition not in (TRANSITION_UNIFORM, TRANSITION_EXPONENTIAL):
        raise ConfigError(f"unsupported mine.transition {transition!r}")


def _as_int(config: dict[str, dict[str, str]], section: str, key: str) -> int:
    try:
        return int(config[section][key])
    except ValueError:
        raise ConfigError(
            f"{section}.{key} must be an integer, not {config[section][key]!r}"
        ) from None


def _as_float(config: dict[str, dict[str, str]], section: str, key: str) -> float:
    try:
        return float(config[section][key])
    except ValueError:
        raise ConfigError(
            f"{section}.{key} must be a number, not {config[section][key]!r}"
        ) from None


def _as_bool(config: dict[str, dict[str, str]], section: str, key: str) -> bool:
    word = config[section][key].strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ConfigError(f"{section}.{key} must be a boolean, not {config[section][key]!r}")


def miner_config_from(config: dict[str, dict[str, str]], schema: str) -> MinerConfig:
    transition = config["mine"]["transition"] or (
        TRANSITION_UNIFORM if schema == SCHEMA_INTERVAL else TRANSITION_EXPONENTIAL
    )
    rate = config["mine"]["exponential_rate"]
    return MinerConfig(
        max_length=_as_int(config, "mine", "max_length"),
        walks_per_query=_as_int(config, "mine", "walks_per_query"),
        walks_per_predicate=_as_int(config, "mine", "walks_per_predicate"),
        transition=transition,
        exponential_rate=_as_float(config, "mine", "exponential_rate") if rate else None,
        min_support=_as_int(config, "mine", "min_support"),
        max_groundings=_as_int(config, "mine", "max_groundings"),
        pattern_free_exploration=_as_bool(config, "mine", "pattern_free_exploration"),
        exploration_budget=_as_int(config, "mine", "exploration_budget"),
    )


# -- manifest and artifact plumbing ------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_manifest(out: Path) -> dict[str, list[tuple[str, ...]]]:
    rows: dict[str, list[tuple[str, ...]]] = {}
    path = out / "manifest.tsv"
    if not path.exists():
        return rows
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        stage, *rest = line.split("\t")
        rows.setdefault(stage, []).append(tuple(rest))
    return rows


def record_stage(
    out: Path,
    stage: str,
    config: dict[str, dict[str, str]],
    seed: int,
    inputs: dict[str, str],
    outputs: dict[str, str],
) -> None:
    """Replace the stage's manifest rows: full config, seed, artifact hashes."""
    rows = read_manifest(out)
    fresh: list[tuple[str, ...]] = []
    for section in sorted(config):
        for key in sorted(config[section]):
            fresh.append(("config", f"{section}.{key}", config[section][key]))
    fresh.append(("seed", str(seed)))
    for name in sorted(inputs):
        fresh.append(("input", name, inputs[name]))
    for name in sorted(outputs):
        fresh.append(("output", name, outputs[name]))
    rows[stage] = fresh
    with (out / "manifest.tsv").open("w") as fh:
        fh.write(MANIFEST_FILE_VERSION + "\n")
        for name in STAGE_ORDER:
            for row in rows.get(name, []):
                fh.write("\t".join((name,) + row) + "\n")


def _recorded_output(rows: dict[str, list[tuple[str, ...]]], name: str) -> Optional[str]:
    for stage_rows in rows.values():
        for row in stage_rows:
            if len(row) == 3 and row[0] == "output" and row[1] == name:
                return row[2]
    return None


def require_artifacts(out: Path, upto: str) -> dict[str, str]:
    """Verify the upstream artifact chain through `upto`; return their hashes.

    A missing file names the stage that writes it; a file whose bytes differ
    from the hash its producer recorded is reported as tampered/stale.
    """
    rows = read_manifest(out)
    hashes: dict[str, str] = {}
    for name, producer in ARTIFACT_CHAIN:
        path = out / name
        if not path.exists():
            hint = " (or synth)" if producer == "convert" else ""
            raise DependencyError(
                f"missing artifact {name}: run the {producer} stage{hint} first"
            )
        actual = _sha256(path)
        recorded = _recorded_output(rows, name)
        if recorded is not None and recorded != actual:
            raise DependencyError(
                f"artifact {name} does not match the hash recorded by the "
                f"{producer} stage; regenerate it before continuing"
            )
        hashes[name] = actual
        if name == upto:
            break
    return hashes


def write_dataset_artifact(tkg: Tkg, path: Path) -> None:
    with path.open("w") as fh:
        fh.write(DATASET_FILE_VERSION + "\n")
        fh.write(f"# schema={tkg.schema}\n")
        fh.write(f"# granularity={tkg.granularity}\n")
        serialize_tkg(tkg, fh, base_only=True)


def read_dataset_artifact(path: Path) -> Tkg:
    meta: dict[str, str] = {}
    body: list[str] = []
    saw_version = False
    with path.open() as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                if line == DATASET_FILE_VERSION:
                    saw_version = True
                elif "=" in line:
                    key, _, value = line[1:].strip().partition("=")
                    meta[key.strip()] = value
                continue
            if line.strip():
                body.append(line)
    if not saw_version:
        raise DatasetFormatError(f"{path.name} is missing its version header")
    return parse_quadruple_file(
        body,
        meta.get("schema", SCHEMA_INTERVAL),
        meta.get("granularity", "year"),
    )


def write_truth_artifact(
    rows: Sequence[tuple[str, str, str, Interval]], path: Path, granularity: str
) -> None:
    with path.open("w") as fh:
        fh.write(TRUTH_FILE_VERSION + "\n")
        for s, p, o, when in rows:
            start = format_time(when.start, granularity)
            end = format_time(when.end, granularity)
            fh.write(f"{s}\t{p}\t{o}\t{start}\t{end}\n")


def _read_queries(config: dict[str, dict[str, str]], out: Path, granularity: str):
    """The labeled query rows: data.queries if set, else the synth artifact."""
    configured = config["data"]["queries"]
    path = Path(configured) if configured else out / "queries.tsv"
    if not path.exists():
        raise DependencyError(
            "missing queries file: set data.queries or run the synth stage first"
        )
    with path.open() as fh:
        try:
            rows = read_truth_table(fh, granularity)
        except ValueError as exc:
            raise DatasetFormatError(f"{path.name}: {exc}") from None
    return rows, path


def _load_pipeline_state(out: Path):
    """Dataset, its augmented graph, and the mined patterns, from artifacts."""
    base = read_dataset_artifact(out / "dataset.tsv")
    aug = add_inverse_facts(base)
    g = build_event_graph(aug)
    with (out / "rules.tsv").open() as fh:
        ranked = read_rule_file(fh, aug.predicates)
    return base, aug, g, ranked


# -- stages -------------------------------------------------------------------


def stage_convert(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    source = config["data"]["train"]
    if not source:
        raise ConfigError("convert needs data.train to point at a dataset file")
    schema = config["data"]["schema"]
    granularity = config["data"]["granularity"]
    with open(source) as fh:
        tkg = parse_quadruple_file(fh, schema, granularity)
    write_dataset_artifact(tkg, out / "dataset.tsv")
    outputs = {"dataset.tsv": _sha256(out / "dataset.tsv")}
    if config["data"]["queries"]:
        with open(config["data"]["queries"]) as fh:
            try:
                rows = read_truth_table(fh, tkg.granularity)
            except ValueError as exc:
                raise DatasetFormatError(str(exc)) from None
        write_truth_artifact(rows, out / "queries.tsv", tkg.granularity)
        outputs["queries.tsv"] = _sha256(out / "queries.tsv")
    record_stage(out, "convert", config, seed, {}, outputs)
    print(
        f"convert: {tkg.num_facts} facts, {len(tkg.entities)} entities, "
        f"{len(tkg.predicates)} predicates -> {out / 'dataset.tsv'}"
    )


def stage_mine(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    inputs = require_artifacts(out, "dataset.tsv")
    base = read_dataset_artifact(out / "dataset.tsv")
    aug = add_inverse_facts(base)
    g = build_event_graph(aug)
    miner_cfg = miner_config_from(config, base.schema)
    ranked = mine_rules(g, miner_cfg, seed)
    with (out / "rules.tsv").open("w") as fh:
        write_rule_file(fh, ranked, aug.predicates)
    record_stage(
        out, "mine", config, seed, inputs, {"rules.tsv": _sha256(out / "rules.tsv")}
    )
    print(f"mine: {len(ranked)} patterns -> {out / 'rules.tsv'}")


def stage_fit(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    inputs = require_artifacts(out, "rules.tsv")
    base, aug, g, ranked = _load_pipeline_state(out)
    if not ranked:
        raise DatasetFormatError("rules.tsv holds no patterns; nothing to fit")
    targets = active_targets(base.schema, _as_bool(config, "run", "duration"))
    table = fit_densities(
        g,
        [pattern for pattern, _ in ranked],
        miner_config_from(config, base.schema),
        targets,
        n_min=_as_int(config, "fit", "n_min"),
        sigma_min=_as_float(config, "fit", "sigma_min"),
    )
    with (out / "densities.tsv").open("w") as fh:
        save_density_table(table, fh, meta={"targets": ",".join(targets)})
    record_stage(
        out, "fit", config, seed, inputs, {"densities.tsv": _sha256(out / "densities.tsv")}
    )
    components = len(table.components) + len(table.pooled)
    print(f"fit: {components} pattern-level components -> {out / 'densities.tsv'}")


def stage_train(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    inputs = require_artifacts(out, "densities.tsv")
    base, aug, g, ranked = _load_pipeline_state(out)
    with (out / "densities.tsv").open() as fh:
        table, _ = load_density_table(fh)
    try:
        train_cfg = TrainConfig(
            learning_rate=_as_float(config, "train", "learning_rate"),
            epochs=_as_int(config, "train", "epochs"),
            batch_size=_as_int(config, "train", "batch_size"),
            per_predicate_cap=_as_int(config, "train", "per_predicate_cap"),
            epsilon=_as_float(config, "train", "epsilon"),
            duration=_as_bool(config, "run", "duration"),
            validation_fraction=_as_float(config, "train", "validation_fraction"),
            mode=config["run"]["mode"],
            controller=_as_bool(config, "train", "controller"),
            hidden_dim=_as_int(config, "train", "hidden_dim"),
            embed_dim=_as_int(config, "train", "embed_dim"),
            max_length=_as_int(config, "mine", "max_length"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    grids = build_grids(aug, step=_as_int(config, "grid", "step"))
    try:
        result = train(
            g,
            [pattern for pattern, _ in ranked],
            table,
            miner_config_from(config, base.schema),
            train_cfg,
            seed=seed,
            grids=grids,
        )
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
    artifact = artifact_from_training(
        result, aug, fallback_statistics(base), meta={"train_seed": str(seed)}
    )
    with (out / "model.tsv").open("w") as fh:
        save_model(artifact, fh)
    record_stage(
        out, "train", config, seed, inputs, {"model.tsv": _sha256(out / "model.tsv")}
    )
    best = min(validation for _, validation in result.history)
    print(
        f"train: {len(result.history)} epochs, best validation loss {best:.4f} "
        f"-> {out / 'model.tsv'}"
    )


def stage_predict(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    inputs = require_artifacts(out, "model.tsv")
    base, aug, g, ranked = _load_pipeline_state(out)
    with (out / "densities.tsv").open() as fh:
        table, _ = load_density_table(fh)
    with (out / "model.tsv").open() as fh:
        artifact = load_model(fh)
    rows, queries_path = _read_queries(config, out, base.granularity)
    inputs[queries_path.name] = _sha256(queries_path)
    try:
        predictor = Predictor.from_artifact(
            artifact,
            base,
            [pattern for pattern, _ in ranked],
            table,
            miner_config_from(config, base.schema),
        )
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
    forecast = _as_bool(config, "run", "forecast")
    jobs = _as_int(config, "run", "jobs")

    def run_one(row: tuple[str, str, str, Interval]) -> Prediction:
        s, p, o, when = row
        if not forecast:
            return predictor.predict_interval(s, p, o)
        # an unknown query start admits no provably-earlier facts, so the
        # restriction collapses to nothing and the marginal fallback answers
        cutoff = when.start if when.start is not None else -(2**62)
        return predictor.predict_interval(s, p, o, forecast_cutoff=cutoff)

    if jobs > 1:
        predictions = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(run_one)(row) for row in rows
        )
    else:
        predictions = [run_one(row) for row in rows]
    with (out / "predictions.tsv").open("w") as fh:
        write_predictions(predictions, fh, base.granularity)
    record_stage(
        out,
        "predict",
        config,
        seed,
        inputs,
        {"predictions.tsv": _sha256(out / "predictions.tsv")},
    )
    fallbacks = sum(1 for p in predictions if p.fallback)
    print(
        f"predict: {len(predictions)} queries, {fallbacks} fallbacks "
        f"-> {out / 'predictions.tsv'}"
    )


def stage_eval(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    inputs = require_artifacts(out, "predictions.tsv")
    base = read_dataset_artifact(out / "dataset.tsv")
    rows, queries_path = _read_queries(config, out, base.granularity)
    inputs[queries_path.name] = _sha256(queries_path)
    with (out / "predictions.tsv").open() as fh:
        predicted = read_predictions(fh, base.granularity)
    if len(predicted) != len(rows) or any(
        triple != (s, p, o) for (triple, *_), (s, p, o, _) in zip(predicted, rows)
    ):
        raise DatasetFormatError(
            "predictions.tsv does not line up with the queries file; re-run predict"
        )
    # queries carry their row index so the scorer can look predictions up
    queries = [(s, p, o, idx) for idx, (s, p, o, _) in enumerate(rows)]
    report = evaluate_dataset(
        lambda query: predicted[query[3]][1],
        queries,
        [when for *_, when in rows],
        fallback_flags=[flag for _, _, flag, _ in predicted],
    )
    with (out / "report.tsv").open("w") as fh:
        write_report_tsv(report, fh)
    record_stage(
        out, "eval", config, seed, inputs, {"report.tsv": _sha256(out / "report.tsv")}
    )
    print(format_report(report))
    if report.count == 0:
        raise DatasetFormatError("no queries were evaluated")


def stage_synth(config: dict[str, dict[str, str]], out: Path, seed: int) -> None:
    kind = config["synth"]["kind"]
    if kind == "planted":
        try:
            spec = PlantSpec(
                n_entities=_as_int(config, "synth", "entities"),
                gap_kind=config["synth"]["gap_kind"],
                gap_params=tuple(
                    float(x) for x in config["synth"]["gap_params"].split(",")
                ),
                noise_rate=_as_float(config, "synth", "noise_rate"),
                seed=seed,
                t_lo=_as_int(config, "synth", "t_lo"),
                t_hi=_as_int(config, "synth", "t_hi"),
                holdout_fraction=_as_float(config, "synth", "holdout_fraction"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        dataset = generate_planted_tkg(spec)
    elif kind == "heterogeneous":
        dataset = generate_heterogeneous_tkg(
            HeterogeneousSpec.default(
                n_per_pair=_as_int(config, "synth", "n_per_pair"), seed=seed
            )
        )
    else:
        raise ConfigError(f"synth.kind must be planted or heterogeneous, not {kind!r}")
    base = parse_quadruple_file(
        dataset.training_lines(), SCHEMA_INTERVAL, dataset.granularity
    )
    write_dataset_artifact(base, out / "dataset.tsv")
    write_truth_artifact(dataset.truth_rows, out / "queries.tsv", dataset.granularity)
    record_stage(
        out,
        "synth",
        config,
        seed,
        {},
        {
            "dataset.tsv": _sha256(out / "dataset.tsv"),
            "queries.tsv": _sha256(out / "queries.tsv"),
        },
    )
    print(
        f"synth: {len(dataset.train_rows)} training facts, "
        f"{len(dataset.truth_rows)} held-out queries -> {out}"
    )


STAGE_FUNCS: dict[str, Callable[[dict[str, dict[str, str]], Path, int], None]] = {
    "convert": stage_convert,
    "mine": stage_mine,
    "fit": stage_fit,
    "train": stage_train,
    "predict": stage_predict,
    "eval": stage_eval,
    "synth": stage_synth,
}


# -- command line -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="chronomine",
        description="Mine temporal rules from a knowledge graph and predict event times.",
    )
    subparsers = parser.add_subparsers(
        dest="stage", required=True, parser_class=_Parser
    )
    briefs = {
        "convert": "validate a raw dataset and write the canonical artifact",
        "mine": "sample cyclic walks and extract rule patterns",
        "fit": "fit time-gap densities for the mined patterns",
        "train": "learn soft rule selection by gradient descent",
        "predict": "apply the trained model to labeled queries",
        "eval": "score predictions and print the evaluation report",
        "synth": "generate a synthetic dataset with a planted rule",
    }
    for name in ("convert", "mine", "fit", "train", "predict", "eval", "synth"):
        sub = subparsers.add_parser(name, help=briefs[name])
        sub.add_argument("--config", default=None, help="INI-style configuration file")
        sub.add_argument("--seed", type=int, default=None, help="pipeline RNG seed")
        sub.add_argument("--jobs", type=int, default=None, help="intra-stage workers")
        sub.add_argument(
            "--mode",
            choices=(MODE_EVENT, MODE_RULE),
            default=None,
            help="scoring decomposition",
        )
        sub.add_argument(
            "--duration",
            action="store_const",
            const=True,
            default=None,
            help="model interval length instead of the end time",
        )
        sub.add_argument(
            "--forecast",
            action="store_const",
            const=True,
            default=None,
            help="ground each query only in facts starting strictly before it",
        )
        sub.add_argument("--out", default=None, metavar="DIR", help="artifact directory")
    return parser


def parse_overrides(extras: Sequence[str]) -> list[tuple[str, str]]:
    overrides: list[tuple[str, str]] = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token:
            raise UsageError(f"unrecognized argument {token!r}")
        if "=" in token:
            dotted, _, value = token[2:].partition("=")
            i += 1
        else:
            if i + 1 >= len(extras):
                raise UsageError(f"override {token!r} needs a value")
            dotted, value = token[2:], extras[i + 1]
            i += 2
        overrides.append((dotted, value))
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args, extras = build_parser().parse_known_args(argv)
        config = load_config(args.config)
        for dotted, value in parse_overrides(extras):
            apply_override(config, dotted, value)
        for flag, dotted in (
            ("seed", "run.seed"),
            ("jobs", "run.jobs"),
            ("mode", "run.mode"),
            ("out", "run.out"),
        ):
            value = getattr(args, flag)
            if value is not None:
                apply_override(config, dotted, str(value))
        if args.duration:
            apply_override(config, "run.duration", "true")
        if args.forecast:
            apply_override(config, "run.forecast", "true")
        validate_config(config)
        out = Path(config["run"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        seed = _as_int(config, "run", "seed")
        STAGE_FUNCS[args.stage](config, out, seed)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except ChronomineError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
