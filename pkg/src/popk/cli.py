"""Command-line driver: ingest, index, synth, train, eval, sweep.

Settings come from an optional JSON config file; command-line flags win.
Exit codes: 0 success, 1 validation or evaluation failure, 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .corpus import BucketSpec, CorpusError, parse_behaviors, parse_news, summarize
from .metrics import EmptyRecommendations, evaluate, write_category_tsv
from .model import ClickScorer, DivergenceDetected, ModelParams, score_impressions
from .popindex import PopularityIndex, PopularityLogic, PopularityMetric
from .sampler import PopkSampler, write_samples
from .synth import SynthConfig, generate_corpus, write_corpus

logger = logging.getLogger("popk")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


@dataclass
class RunConfig:
    news: str | None = None
    train_behaviors: str | None = None
    val_behaviors: str | None = None
    test_behaviors: str | None = None
    out_dir: str = "out"
    bucket_length: int = 3600
    k: int = 4
    popk: int = 0
    logic: str = "acc"
    metric: str = "clicks"
    dim: int = 32
    learning_rate: float = 0.05
    epochs: int = 3
    max_history: int = 50
    batch_size: int = 16
    ks: list = field(default_factory=lambda: [5, 10])
    seed: int = 0
    popk_list: list = field(default_factory=lambda: [1, 2, 3])
    logics: list = field(default_factory=lambda: ["acc", "ptb"])
    metrics: list = field(default_factory=lambda: ["clicks"])
    jobs: int = 1
    synth: dict = field(default_factory=dict)

    def validate(self):
        BucketSpec(self.bucket_length)
        if self.k < 1 or not 0 <= self.popk <= self.k:
            raise ValueError("need k >= 1 and 0 <= popk <= k")
        if any(not 0 <= p <= self.k for p in self.popk_list):
            raise ValueError("every sweep popk must lie in [0, k]")
        for name in [self.logic, *self.logics]:
            PopularityLogic(name)
        for name in [self.metric, *self.metrics]:
            PopularityMetric(name)
        if list(self.ks) != sorted(self.ks) or not self.ks or min(self.ks) < 1:
            raise ValueError("ks must be positive and sorted ascending")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")
        return self

    def fingerprint(self) -> str:
        record = {k: v for k, v in asdict(self).items() if k not in ("jobs", "out_dir")}
        blob = json.dumps(record, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def scorer(self, **overrides) -> ClickScorer:
        params = dict(dim=self.dim, learning_rate=self.learning_rate, epochs=self.epochs,
                      batch_size=self.batch_size, max_history=self.max_history, k=self.k,
                      popk=self.popk, logic=self.logic, metric=self.metric,
                      bucket_length=self.bucket_length, seed=self.seed)
        params.update(overrides)
        return ClickScorer(**params)


def _csv(cast):
    return lambda s: [cast(x) for x in s.split(",") if x != ""]


def load_config(args) -> RunConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = json.load(fh)
        unknown = set(values) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    flag_map = {
        "news": "news", "train": "train_behaviors", "val": "val_behaviors", "test": "test_behaviors",
        "out": "out_dir", "seed": "seed", "k": "k", "jobs": "jobs", "epochs": "epochs",
        "lr": "learning_rate", "dim": "dim", "batch_size": "batch_size",
    }
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    # --popk/--logic/--metric take lists for sweep, single values elsewhere
    for flag, single, many, cast in (("popk", "popk", "popk_list", int),
                                     ("logic", "logic", "logics", str),
                                     ("metric", "metric", "metrics", str)):
        v = getattr(args, flag, None)
        if v is None:
            continue
        items = _csv(cast)(v)
        if args.command == "sweep":
            values[many] = items
        else:
            if len(items) != 1:
                raise ValueError(f"--{flag} takes one value for {args.command}")
            values[single] = items[0]
    return RunConfig(**values).validate()


def _require(path, what):
    if not path:
        raise FileNotFoundError(f"no {what} path configured")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _load(cfg: RunConfig, *splits):
    catalog = parse_news(_require(cfg.news, "news"))
    out = [catalog]
    for split in splits:
        out.append(parse_behaviors(_require(getattr(cfg, f"{split}_behaviors"), f"{split} behaviors"), catalog))
    return out


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, record, cfg: RunConfig):
    record = {"config_fingerprint": cfg.fingerprint(), **record}
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands --------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> dict:
    catalog = parse_news(_require(cfg.news, "news"))
    summary = {"articles": len(catalog), "category_count": catalog.category_count, "splits": {}}
    for split in ("train", "val", "test"):
        path = getattr(cfg, f"{split}_behaviors")
        if not path:
            continue
        imps = parse_behaviors(_require(path, f"{split} behaviors"), catalog)
        summary["splits"][split] = summarize(imps)
        print(f"{split}\t{summary['splits'][split]['impr_users']}")
    summary["category_histogram"] = summarize([], catalog)["category_histogram"]
    _write_json(_out(cfg) / "ingest.json", summary, cfg)
    return summary


def cmd_index(cfg: RunConfig, at=None) -> PopularityIndex:
    _, train = _load(cfg, "train")
    index = PopularityIndex(bucket_length=cfg.bucket_length).fit(train)
    out = _out(cfg) / "index.tsv"
    index.to_tsv(out)
    print(f"indexed {len(index.article_ids_)} articles over {index.n_buckets_} buckets -> {out}")
    if at is not None:
        top = index.top_popk(at, max(cfg.popk, 1), cfg.logic, cfg.metric)
        print(f"top at {at} ({cfg.logic}/{cfg.metric}): {' '.join(top)}")
    return index


def cmd_synth(cfg: RunConfig) -> dict:
    synth_cfg = SynthConfig(**{**cfg.synth, "seed": cfg.seed})
    catalog, impressions, truth = generate_corpus(synth_cfg)
    paths = write_corpus(_out(cfg), catalog, impressions, truth)
    _write_json(_out(cfg) / "synth_config.json", {"synth": asdict(synth_cfg)}, cfg)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return paths


def cmd_train(cfg: RunConfig, dump_samples: bool = False) -> ClickScorer:
    catalog, train = _load(cfg, "train")
    logger.info("train seed=%d (sampler streams: [seed, epoch, crc32(impression_id)]; shuffle: [seed, 1])",
                cfg.seed)
    model = cfg.scorer().fit(train, catalog=catalog)
    out = _out(cfg)
    model.params_.save(out / "model.json")
    _write_json(out / "train.json", {"loss_trace": model.loss_trace_, "config": asdict(cfg)}, cfg)
    if dump_samples:
        write_samples(model.sampler_.transform(train, epoch=0), out / "samples.tsv")
    print("loss trace: " + " ".join(f"{x:.6f}" for x in model.loss_trace_))
    return model


def cmd_eval(cfg: RunConfig, checkpoint=None):
    catalog, test = _load(cfg, "test")
    out = _out(cfg)
    params = ModelParams.load(_require(checkpoint or out / "model.json", "checkpoint"))
    report = evaluate(test, score_impressions(params, test, cfg.max_history), catalog, cfg.ks)
    report.to_json(out / "report.json", extra={"config": asdict(cfg), "config_fingerprint": cfg.fingerprint()})
    for k, freq in report.category_freq.items():
        write_category_tsv(freq, out / f"category_freq_at{k}.tsv")
    print(_format_report(report, cfg.ks))
    return report


def _format_report(report, ks) -> str:
    parts = [f"auc={report.auc:.4f}", f"mrr={report.mrr:.4f}"]
    parts += [f"ndcg@{k}={report.ndcg[k]:.4f}" for k in ks]
    parts += [f"dctg@{k}={report.dctg[k]:.4f}" for k in ks if k in report.dctg]
    return " ".join(parts)


def sweep_cells(cfg: RunConfig) -> list[tuple[str, str, int]]:
    cells = [("-", "-", 0)]
    for logic in cfg.logics:
        for metric in cfg.metrics:
            for p in cfg.popk_list:
                if p > 0:
                    cells.append((logic, metric, p))
    return cells


def _run_cell(args):
    cfg, cell, catalog, train, test = args
    logic, metric, popk = cell
    overrides = {"popk": popk}
    if popk:
        overrides.update(logic=logic, metric=metric)
    model = cfg.scorer(**overrides).fit(train, catalog=catalog)
    report = evaluate(test, model.decision_function(test), catalog, cfg.ks)
    return report


def cmd_sweep(cfg: RunConfig) -> list[list[str]]:
    catalog, train, test = _load(cfg, "train", "test")
    cells = sweep_cells(cfg)
    for cell in cells:
        logger.info("cell %s/%s popk=%d seed=%d", *cell, cfg.seed)
    work = [(cfg, cell, catalog, train, test) for cell in cells]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            reports = list(pool.map(_run_cell, work))
    else:
        reports = [_run_cell(w) for w in work]

    metric_names = ["auc", "mrr"] + [f"ndcg@{k}" for k in cfg.ks] + [f"dctg@{k}" for k in cfg.ks]

    def values(r):
        return [r.auc, r.mrr] + [r.ndcg[k] for k in cfg.ks] + [r.dctg[k] for k in cfg.ks]

    rows = [["row", "logic", "metric", "popk", *metric_names]]
    table = [values(r) for r in reports]
    for (logic, metric, popk), vals in zip(cells, table):
        label = "original" if popk == 0 else f"{logic}/{metric}/popk={popk}"
        rows.append([label, logic, metric, str(popk), *(f"{v:.4f}" for v in vals)])
    base = table[0]
    variants = table[1:] or [base]
    delta = []
    for j in range(len(metric_names)):
        best = max(v[j] for v in variants)
        delta.append(f"{100 * (best - base[j]) / base[j]:.2f}%" if base[j] else "nan")
    rows.append(["increase_vs_original", "-", "-", "-", *delta])

    out = _out(cfg) / "sweep.tsv"
    text = f"# config_fingerprint={cfg.fingerprint()}\n" + "".join("\t".join(r) + "\n" for r in rows)
    out.write_text(text, encoding="utf-8")
    print(text, end="")
    return rows


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--popk", help="popular substitutions (comma list for sweep)")
    common.add_argument("--logic", help="acc|ptb (comma list for sweep)")
    common.add_argument("--metric", help="clicks|click_ratio|click_variation (comma list for sweep)")
    common.add_argument("--k", type=int, help="negatives per positive")
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--news")
    common.add_argument("--train")
    common.add_argument("--val")
    common.add_argument("--test")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--dim", type=int)
    common.add_argument("--batch-size", type=int)

    sub.add_parser("ingest", parents=[common], help="parse and summarise the dataset")
    p = sub.add_parser("index", parents=[common], help="build and snapshot the popularity index")
    p.add_argument("--at", type=int, help="also print the top popk list at this epoch second")
    sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p = sub.add_parser("train", parents=[common], help="train a click scorer")
    p.add_argument("--dump-samples", action="store_true")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint")
    sub.add_parser("sweep", parents=[common], help="baseline plus (logic, metric, popk) grid")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "index":
            cmd_index(cfg, args.at)
        elif args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.dump_samples)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        elif args.command == "sweep":
            cmd_sweep(cfg)
    except (OSError, CorpusError, json.JSONDecodeError) as exc:
        print(f"popk {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, DivergenceDetected, EmptyRecommendations) as exc:
        print(f"popk {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
