"""Command-line driver for the mining pipeline.

Each subcommand is one phase; it reads the artifacts of earlier phases from
the output directory, writes its own, and records both in ``manifest.json``::

    load -> embed -> seeds -> train-agent -> mine -> predict -> evaluate -> report

``run`` executes every phase in order.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from .agent import Agent, ValueNetwork, sample_seed_rules, train_agent
from .agent.training import TrainingLog, embedding_reward
from .config import ConfigValidationError, RunConfig
from .embedding import load_model, save_model, train_transe
from .inference import (apply_rules, link_prediction, make_split, precision_curve,
                        predictive_power, write_metrics, write_predictions, EvalSplit)
from .kg import KnowledgeGraph, dump_symbols, dump_triples, load_triples, load_triples_like
from .rules import Rule, format_rule, parse_rule
from .search import mine_all, write_rules, write_sidecar

log = logging.getLogger("rlminer")

OUT_ENV = "RLMINER_OUT"
PHASES = ("load", "embed", "seeds", "train-agent", "mine", "predict", "evaluate", "report")

GRAPH, HELDOUT, SYMBOLS = "graph.tsv", "heldout.tsv", "symbols.json"
EMBEDDING, SEEDS = "embedding.bin", "seeds.txt"
AGENT, TRAINING_LOG = "agent.bin", "training.jsonl"
RULES_DIR, RULES, RULES_SIDECAR = "rules", "rules.txt", "rules.jsonl"
PREDICTIONS, METRICS, METRICS_JSON = "predictions.tsv", "metrics.txt", "metrics.json"
REPORT_DIR = "report"

# artifact -> phase that writes it
PRODUCER = {GRAPH: "load", HELDOUT: "load", SYMBOLS: "load", EMBEDDING: "embed", SEEDS: "seeds",
            AGENT: "train-agent", TRAINING_LOG: "train-agent", RULES: "mine",
            RULES_SIDECAR: "mine", PREDICTIONS: "predict"}

REQUIRES = {
    "load": (),
    "embed": (GRAPH, SYMBOLS),
    "seeds": (GRAPH, SYMBOLS, EMBEDDING),
    "train-agent": (GRAPH, SYMBOLS, EMBEDDING, SEEDS),
    "mine": (GRAPH, SYMBOLS, EMBEDDING, AGENT),
    "predict": (GRAPH, SYMBOLS, RULES_SIDECAR),
    "evaluate": (GRAPH, SYMBOLS, HELDOUT, RULES_SIDECAR),
    "report": (GRAPH, SYMBOLS, RULES_SIDECAR, TRAINING_LOG),
}


class MissingPrerequisite(RuntimeError):
    def __init__(self, phase: str, artifact: str, producer: str):
        super().__init__(f"{phase} needs {artifact}; run `{producer}` first")
        self.producer = producer


class UsageError(RuntimeError):
    pass


# -- helpers -------------------------------------------------------------------

def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def bundled_toy_path() -> Path:
    return Path(str(resources.files("rlminer") / "data" / "toy.tsv"))


def _files_under(out: Path, rel: str) -> list[str]:
    p = out / rel
    if p.is_dir():
        return sorted(str(f.relative_to(out)) for f in p.rglob("*") if f.is_file())
    return [rel] if p.exists() else []


class Run:
    """One invocation: resolved config, output directory and manifest."""

    def __init__(self, cfg: RunConfig, out: Path, jobs: int = 1):
        self.cfg = cfg
        self.out = out
        self.jobs = jobs
        self.out.mkdir(parents=True, exist_ok=True)
        self._kg: KnowledgeGraph | None = None

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, phase: str):
        for artifact in REQUIRES[phase]:
            if not self.path(artifact).exists():
                raise MissingPrerequisite(phase, artifact, PRODUCER[artifact])

    def graph(self) -> KnowledgeGraph:
        if self._kg is None:
            symbols = json.loads(self.path(SYMBOLS).read_text(encoding="utf-8"))
            empty = KnowledgeGraph(symbols["entities"], symbols["predicates"], ())
            self._kg = load_triples_like(empty, self.path(GRAPH))
        return self._kg

    def heads(self, kg: KnowledgeGraph) -> list[int]:
        names = [n.strip() for n in self.cfg.search.predicates.split(",") if n.strip()]
        if not names:
            return kg.original_predicates()
        heads = []
        for n in names:
            try:
                p = kg.predicate_id(n)
            except KeyError:
                raise UsageError(f"unknown predicate {n!r}") from None
            if p % 2:
                raise UsageError(f"head predicates must be original predicates, got {n!r}")
            heads.append(p)
        return heads

    def record(self, phase: str, elapsed: float, inputs, outputs, **extra):
        """Update the manifest entry for ``phase`` (written atomically)."""
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
        manifest.update({"code_version": code_version(),
                         "config_fingerprint": self.cfg.fingerprint(),
                         "config": self.cfg.as_dict()})

        def digests(names):
            files = [f for n in names for f in _files_under(self.out, n)]
            return {f: sha256(self.out / f) for f in files}

        manifest.setdefault("phases", {})[phase] = {
            "wall_clock": round(elapsed, 3), "seed": self.cfg.run.seed,
            "config_fingerprint": self.cfg.fingerprint(),
            "inputs": digests(inputs), "outputs": digests(outputs), **extra}
        atomic_write_text(mpath, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("phase=%s status=done elapsed=%.2f", phase, elapsed)


# -- phases ---------------------------------------------------------------------

def phase_load(run: Run):
    src = run.cfg.paths.kg
    path = bundled_toy_path() if src == "toy" else Path(src)
    if not path.exists():
        raise UsageError(f"knowledge graph file {path} not found")
    kg = load_triples(path)
    atomic_write_text(run.path(SYMBOLS), json.dumps(dump_symbols(kg), indent=1) + "\n")
    run._kg = None
    ratio = run.cfg.eval.holdout
    if ratio > 0:
        split = make_split(kg, ratio, run.cfg.run.seed, run.heads(kg))
        train, held = split.train, sorted(split.held_out)
    else:
        train, held = kg, []
    dump_triples(train, run.path(GRAPH))
    with open(run.path(HELDOUT), "w", encoding="utf-8") as fh:
        for s, p, o in held:
            fh.write(f"{kg.entities[s]}\t{kg.predicate_name(p)}\t{kg.entities[o]}\n")
    log.info("phase=load facts=%d held_out=%d entities=%d predicates=%d",
             len(train), len(held), kg.num_entities, len(kg.predicates))
    return [str(path)], [GRAPH, HELDOUT, SYMBOLS], {}


def phase_embed(run: Run):
    kg = run.graph()
    started = time.perf_counter()

    def progress(epoch, loss):
        if (epoch + 1) % 50 == 0:
            log.info("phase=embed step=%d loss=%.5f", epoch + 1, loss)

    model = train_transe(kg, run.cfg.embedding, callback=progress)
    save_model(model, run.path(EMBEDDING))
    log.debug("phase=embed trained in %.2fs", time.perf_counter() - started)
    return [GRAPH, SYMBOLS], [EMBEDDING], {}


def _read_seeds(run: Run, kg: KnowledgeGraph) -> list[Rule]:
    lines = run.path(SEEDS).read_text(encoding="utf-8").splitlines()
    return [parse_rule(line, kg) for line in lines if line.strip()]


def phase_seeds(run: Run):
    kg = run.graph()
    model = load_model(run.path(EMBEDDING))
    c = run.cfg.curriculum
    seeds = sample_seed_rules(kg, model, c.seed_count, np.random.default_rng(run.cfg.run.seed),
                              top_fraction=c.seed_top_fraction, pool=c.seed_pool)
    atomic_write_text(run.path(SEEDS), "".join(format_rule(r, kg) + "\n" for r in seeds))
    log.info("phase=seeds count=%d", len(seeds))
    return [GRAPH, SYMBOLS, EMBEDDING], [SEEDS], {"count": len(seeds)}


def phase_train_agent(run: Run):
    kg = run.graph()
    model = load_model(run.path(EMBEDDING))
    seeds = _read_seeds(run, kg)
    stages = run.cfg.curriculum.validate()
    total = sum(s.episodes for s in stages)
    every = max(1, total // 10)

    def progress(rec):
        if (rec["episode"] + 1) % every == 0:
            log.info("phase=train-agent step=%d stage=%d epsilon=%.3f reward=%.4f loss=%.4f",
                     rec["episode"] + 1, rec["stage"], rec["epsilon"], rec["reward"], rec["loss"])

    agent, tlog = train_agent(stages, run.cfg.agent, reward_fn=embedding_reward(model),
                              vocabulary=kg.predicate_vocabulary(), heads=kg.original_predicates(),
                              seeds=seeds, progress=progress)
    agent.net.save(run.path(AGENT), fingerprint=run.cfg.agent.fingerprint(),
                   tokens={"predicates": [kg.predicate_name(p) for p in kg.predicate_vocabulary()],
                           "separator": kg.num_predicates, "mask": kg.num_predicates + 1})
    with open(run.path(TRAINING_LOG), "w", encoding="utf-8") as fh:
        tlog.write(fh)
    return [GRAPH, SYMBOLS, EMBEDDING, SEEDS], [AGENT, TRAINING_LOG], {"episodes": total}


def load_agent(run: Run, kg: KnowledgeGraph) -> Agent:
    net, header = ValueNetwork.load(run.path(AGENT), dtype=np.float32)
    if net.shape.vocab_size != kg.num_predicates + 2:
        raise UsageError("agent checkpoint does not match the graph's predicate vocabulary; "
                         "run `train-agent` again")
    return Agent(net, kg.predicate_vocabulary())


def phase_mine(run: Run):
    kg = run.graph()
    model = load_model(run.path(EMBEDDING))
    agent = load_agent(run, kg)
    template = run.cfg.search.template()
    heads = run.heads(kg)
    results = mine_all(kg, template, agent.values, model, heads, run.path(RULES_DIR), run.jobs)
    merged = sorted((m for res in results.values() if res for m in res.rules),
                    key=lambda m: (-m.score, m.text))
    write_rules(merged, run.path(RULES))
    write_sidecar(merged, run.path(RULES_SIDECAR))
    failed = [kg.predicate_name(h) for h, res in results.items() if res is None]
    truncated = any(res.truncated for res in results.values() if res)
    for h, res in results.items():
        if res is not None:
            log.info("phase=mine head=%s rules=%d evaluations=%d truncated=%s elapsed=%.2f",
                     kg.predicate_name(h), len(res), res.evaluations, res.truncated, res.elapsed)
    if failed:
        raise RuntimeError(f"mining failed for {', '.join(failed)}")
    return ([GRAPH, SYMBOLS, EMBEDDING, AGENT], [RULES, RULES_SIDECAR, RULES_DIR],
            {"truncated": truncated, "rules": len(merged)})


def read_mined(run: Run) -> list[tuple[Rule, float]]:
    out = []
    with open(run.path(RULES_SIDECAR), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append((Rule(rec["head"], tuple(rec["body"])), rec["score"]))
    return out


def phase_predict(run: Run):
    kg = run.graph()
    preds = [p for p in apply_rules(kg, read_mined(run)) if not p.known]
    with open(run.path(PREDICTIONS), "w", encoding="utf-8") as fh:
        write_predictions(preds, kg, fh)
    log.info("phase=predict new_facts=%d", len(preds))
    return [GRAPH, SYMBOLS, RULES_SIDECAR], [PREDICTIONS], {}


def _split(run: Run, kg: KnowledgeGraph) -> EvalSplit:
    held = load_triples_like(kg.with_facts(()), run.path(HELDOUT)).facts
    return EvalSplit(kg, held, run.cfg.eval.holdout, run.cfg.run.seed)


def phase_evaluate(run: Run):
    kg = run.graph()
    rules = read_mined(run)
    split = _split(run, kg)
    metrics = {"rules": len(rules), "held_out": len(split.held_out)}
    if split.held_out:
        facts, qfacts = predictive_power(split, rules, run.cfg.eval.min_cd)
        lp = link_prediction(split, rules)
        metrics.update({"predicted_held_out": facts, "predicted_held_out_quality": qfacts,
                        "mrr": lp.mrr, "hits1": lp.hits1, "hits10": lp.hits10,
                        "queries": lp.queries})
    with open(run.path(METRICS), "w", encoding="utf-8") as txt, \
            open(run.path(METRICS_JSON), "w", encoding="utf-8") as js:
        write_metrics(metrics, txt, js)
    log.info("phase=evaluate %s", " ".join(f"{k}={v}" for k, v in sorted(metrics.items())))
    return [GRAPH, SYMBOLS, HELDOUT, RULES_SIDECAR], [METRICS, METRICS_JSON], {}


def phase_report(run: Run):
    kg = run.graph()
    report = run.path(REPORT_DIR)
    report.mkdir(exist_ok=True)

    with open(report / "rules.md", "w", encoding="utf-8") as fh:
        fh.write("| head | rule | supp | conf | hc | rho | S |\n|---|---|---|---|---|---|---|\n")
        with open(run.path(RULES_SIDECAR), encoding="utf-8") as side:
            for line in side:
                rec = json.loads(line)
                rule = Rule(rec["head"], tuple(rec["body"]))
                fh.write(f"| {kg.predicate_name(rule.head)} | `{format_rule(rule, kg)}` | {rec['supp']} "
                         f"| {rec['conf']:.4f} | {rec['hc']:.4f} | {rec['rho']:.4f} | {rec['score']:.4f} |\n")

    with open(run.path(TRAINING_LOG), encoding="utf-8") as fh:
        tlog = TrainingLog.read(fh)
    rewards = tlog.rewards()
    window = max(1, min(100, len(rewards) // 10 or 1))
    with open(report / "rewards.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "stage", "epsilon", "reward", "moving_average"])
        for i, rec in enumerate(tlog.records):
            avg = rewards[max(0, i - window + 1):i + 1].mean()
            w.writerow([rec["episode"], rec["stage"], rec["epsilon"], f"{rec['reward']:.6f}", f"{avg:.6f}"])

    outputs = [f"{REPORT_DIR}/rules.md", f"{REPORT_DIR}/rewards.csv"]
    if run.path(HELDOUT).exists():
        split = _split(run, kg)
        if split.held_out:
            cd, prec = precision_curve(split, read_mined(run))
            with open(report / "precision.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rank", "cd", "precision"])
                for i, (c, p) in enumerate(zip(cd.tolist(), prec.tolist()), start=1):
                    w.writerow([i, f"{c:.6f}", f"{p:.6f}"])
            outputs.append(f"{REPORT_DIR}/precision.csv")
    log.info("phase=report files=%d", len(outputs))
    return [RULES_SIDECAR, TRAINING_LOG], outputs, {}


PHASE_FUNCS = {"load": phase_load, "embed": phase_embed, "seeds": phase_seeds,
               "train-agent": phase_train_agent, "mine": phase_mine, "predict": phase_predict,
               "evaluate": phase_evaluate, "report": phase_report}


def run_phase(run: Run, phase: str):
    run.require(phase)
    log.info("phase=%s status=start", phase)
    started = time.perf_counter()
    inputs, outputs, extra = PHASE_FUNCS[phase](run)
    run.record(phase, time.perf_counter() - started, inputs, outputs, **extra)


# -- argument handling --------------------------------------------------------------

DEFAULTS = {"config": None, "seed": None, "jobs": 1, "time_limit": None, "predicates": None,
            "length": None, "out": None, "print_config": False, "verbose": 0}


def build_parser() -> argparse.ArgumentParser:
    # options are accepted before or after the subcommand; SUPPRESS keeps a
    # subcommand from resetting a value given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="global seed for every component")
    common.add_argument("--jobs", type=int, metavar="N", help="head predicates mined concurrently")
    common.add_argument("--time-limit", type=float, metavar="SECONDS",
                        help="mining budget per head predicate")
    common.add_argument("--predicates", metavar="LIST",
                        help="comma-separated head predicate names (default: all)")
    common.add_argument("--length", type=int, metavar="N", help="maximum rule length, head included")
    common.add_argument("--out", metavar="DIR", help=f"output directory (env {OUT_ENV} wins)")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved configuration with full-scale values and exit")
    common.add_argument("-v", "--verbose", action="count")

    parser = argparse.ArgumentParser(prog="rlminer", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {"load": "ingest the triple file and split off held-out facts",
             "embed": "train predicate/entity embeddings",
             "seeds": "sample high-scoring seed rules",
             "train-agent": "train the value network with the curriculum",
             "mine": "value-guided rule search for each head predicate",
             "predict": "apply mined rules and write scored new facts",
             "evaluate": "predictive power and link-prediction metrics",
             "report": "tables and plot-ready series",
             "run": "all phases in order"}
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return parser


def resolve_config(args) -> tuple[RunConfig, Path]:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    cfg = cfg.override(search__time_limit=args.time_limit, search__length=args.length,
                       search__predicates=args.predicates, paths__out=args.out)
    cfg.validate()
    out = Path(os.environ.get(OUT_ENV) or cfg.paths.out)
    return cfg, out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose + 1, 2),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg, out = resolve_config(args)
    except ConfigValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(cfg.to_ini(), end="")
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return 2
    run = Run(cfg, out, args.jobs)
    phases = PHASES if args.command == "run" else (args.command,)
    try:
        for phase in phases:
            run_phase(run, phase)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, don't trace, at the top level
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
