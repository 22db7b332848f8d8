"""Experiment orchestration: config files, sweep running, aggregation, plots.

A config is a flat key = value text file with optional [section] blocks (the
``train`` and ``probe`` sections).  Every experiment writes one directory per
(vocab, seed) cell plus an aggregate with bootstrap confidence intervals.
"""

from __future__ import annotations

import datetime
import glob as globlib
import hashlib
import json
import os
import re
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gradstab, metrics, models, optim, tasks
from .errors import ConfigError, UsageError

OUTPUT_ROOT_ENV = "POSRNN_OUTPUT_ROOT"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ProbeConfig:
    mode: str = "literal"
    n_pairs: int = 1024
    t_target: int = 1
    shared_prefix: bool = False
    pair_seed: int = 0


@dataclass
class ExperimentConfig:
    task: str = "reverse"
    model: str = "lstm"
    encoder: str = "none"
    vocab: list[int] = field(default_factory=lambda: [64])
    length: int | tuple[int, int] = 16
    hidden: int = 128
    embed_dim: int | None = None
    d_pos: int | None = None
    state_size: int = 64
    dtype: str = "real64"
    dual_freq_ratio: str = "7"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_sequences: int = 512
    output: str = "results/experiment"
    train: optim.TrainConfig = field(default_factory=optim.TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.embed_dim is None:
            self.embed_dim = self.hidden
        if self.d_pos is None:
            self.d_pos = self.embed_dim
        if not self.vocab:
            raise ConfigError("vocab sweep list must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("trial seeds must be distinct")
        if self.task not in tasks.TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in models.CORES:
            raise ConfigError(f"unknown model {self.model!r}")

    def max_length(self) -> int:
        return self.length if isinstance(self.length, int) else self.length[1]

    def model_config(self, vocab: int) -> models.ModelConfig:
        return models.ModelConfig(
            vocab_size=vocab, core=self.model, hidden=self.hidden,
            embed_dim=self.embed_dim, state_size=self.state_size,
            encoder_kind=self.encoder, d_pos=self.d_pos,
            max_len=self.max_length(), dtype=self.dtype,
        )

    def task_config(self, vocab: int) -> tasks.TaskConfig:
        from fractions import Fraction
        return tasks.TaskConfig(
            task=self.task, vocab_size=vocab, length=self.length,
            dual_freq_ratio=Fraction(self.dual_freq_ratio),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length"] = list(self.length) if isinstance(self.length, tuple) \
            else self.length
        return d


_TOP_SCHEMA = {
    "task": "str", "model": "str", "encoder": "str", "vocab": "int_list",
    "length": "length", "hidden": "int", "embed_dim": "int", "d_pos": "int",
    "state_size": "int", "dtype": "str", "dual_freq_ratio": "str",
    "seeds": "int_list", "eval_sequences": "int", "output": "str",
}
_TRAIN_SCHEMA = {
    "iterations": "int", "batch_size": "int", "warmup": "int",
    "peak_lr": "float", "seed": "int", "log_every": "int",
    "checkpoint_every": "int", "checkpoint_dir": "str",
}
_PROBE_SCHEMA = {
    "mode": "str", "n_pairs": "int", "t_target": "int",
    "shared_prefix": "bool", "pair_seed": "int",
}
_SCHEMAS = {"": _TOP_SCHEMA, "train": _TRAIN_SCHEMA, "probe": _PROBE_SCHEMA}


def _convert(kind: str, raw: str, lineno: int, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return [int(tok) for tok in re.split(r"[,\s]+", raw) if tok]
        if kind == "length":
            if ".." in raw:
                lo, hi = raw.split("..")
                return (int(lo), int(hi))
            return int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(
            f"line {lineno}: bad value for {key!r}: {raw!r}") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    sections: dict[str, dict] = {"": {}, "train": {}, "probe": {}}
    section = ""
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMAS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        schema = _SCHEMAS[section]
        if key not in schema:
            where = f"[{section}] " if section else ""
            raise ConfigError(f"line {lineno}: unknown key {where}{key!r}")
        sections[section][key] = _convert(schema[key], raw, lineno, key)
    try:
        return ExperimentConfig(
            train=optim.TrainConfig(**sections["train"]),
            probe=ProbeConfig(**sections["probe"]),
            **sections[""],
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def config_hash(config: ExperimentConfig) -> str:
    """Stable hash of the config contents (insensitive to key order)."""
    payload = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# manifests and output layout


@dataclass
class RunManifest:
    config_hash: str
    build: str
    started: str
    finished: str | None = None
    artifacts: list[str] = field(default_factory=list)

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=1)

    @staticmethod
    def load(path: str) -> "RunManifest":
        with open(path) as fh:
            return RunManifest(**json.load(fh))


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def resolve_output(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _build_id() -> str:
    from . import __version__
    return f"posrnn-{__version__}"


# ---------------------------------------------------------------------------
# experiment running


def _held_out_instances(config: ExperimentConfig, vocab: int) -> list:
    """Evaluation data from a seed stream disjoint from all training seeds."""
    rng = np.random.default_rng([10**6, vocab, config.max_length()])
    tcfg = config.task_config(vocab)
    length = tcfg.draw_length(rng)
    out = []
    for _ in range(config.eval_sequences):
        if config.task == "reverse":
            out.append(tasks.gen_reverse_ordering(vocab, length, rng))
        elif config.task == "dual_freq":
            out.append(tasks.gen_dual_frequency(tcfg.dual_freq_spec(), length, rng))
        elif config.task == "sorting":
            out.append(tasks.gen_sorting(vocab, length, rng))
        elif config.task == "delayed_add":
            out.append(tasks.gen_delayed_addition(vocab, length, rng))
        else:
            out.append(tasks.gen_predecessor_query(vocab, length, rng))
    return out


def run_cell(config: ExperimentConfig, vocab: int, seed: int,
             cell_dir: str) -> dict:
    """Train + evaluate one (vocab, seed) cell; resumable via its manifest."""
    os.makedirs(cell_dir, exist_ok=True)
    manifest_path = os.path.join(cell_dir, "manifest.json")
    metrics_path = os.path.join(cell_dir, "metrics.csv")
    if os.path.exists(manifest_path):
        manifest = RunManifest.load(manifest_path)
        if manifest.finished and os.path.exists(metrics_path):
            with open(os.path.join(cell_dir, "result.json")) as fh:
                return json.load(fh)
    manifest = RunManifest(config_hash=config_hash(config), build=_build_id(),
                           started=_now())
    manifest.save(manifest_path)

    model = models.init_params(config.model_config(vocab),
                               np.random.default_rng(seed))
    tcfg = optim.TrainConfig(**{**config.train.__dict__, "seed": seed})
    log_path = os.path.join(cell_dir, "train_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    optim.train(model, config.task_config(vocab), tcfg, log_path=log_path)
    models.save_params(model, os.path.join(cell_dir, "checkpoint"))

    instances = _held_out_instances(config, vocab)
    result = metrics.evaluate_instances(model, instances)
    rows = metrics.eval_result_rows(f"K{vocab}_s{seed}", result)
    metrics.write_metrics_csv(metrics_path, rows, metrics.EVAL_FIELDS)

    summary = {
        "vocab": vocab, "seed": seed,
        "token_accuracy": result.token_accuracy,
        "mean_distance": result.mean_distance,
    }
    with open(os.path.join(cell_dir, "result.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    manifest.finished = _now()
    manifest.artifacts = ["metrics.csv", "train_log.jsonl", "checkpoint",
                          "result.json"]
    manifest.save(manifest_path)
    return summary


AGGREGATE_FIELDS = [
    "vocab", "n_seeds", "token_accuracy", "token_accuracy_ci_lo",
    "token_accuracy_ci_hi", "mean_distance", "mean_distance_ci_lo",
    "mean_distance_ci_hi",
]


def run_experiment(config: ExperimentConfig) -> str:
    """Run the full sweep (vocab points x trial seeds) and aggregate.

    Returns the artifact directory.  Completed cells are skipped on rerun,
    so an interrupted sweep resumes where it stopped.
    """
    out_dir = resolve_output(config.output)
    os.makedirs(out_dir, exist_ok=True)
    summaries = []
    for vocab in config.vocab:
        for seed in config.seeds:
            cell_dir = os.path.join(out_dir, f"K{vocab}_s{seed}")
            summaries.append(run_cell(config, vocab, seed, cell_dir))

    agg_rows = []
    for vocab in config.vocab:
        accs = [s["token_accuracy"] for s in summaries if s["vocab"] == vocab]
        dists = [s["mean_distance"] for s in summaries if s["vocab"] == vocab]
        a_mean, a_lo, a_hi = metrics.bootstrap_ci(accs)
        d_mean, d_lo, d_hi = metrics.bootstrap_ci(dists)
        agg_rows.append({
            "vocab": vocab, "n_seeds": len(accs),
            "token_accuracy": a_mean, "token_accuracy_ci_lo": a_lo,
            "token_accuracy_ci_hi": a_hi,
            "mean_distance": d_mean, "mean_distance_ci_lo": d_lo,
            "mean_distance_ci_hi": d_hi,
        })
    metrics.write_metrics_csv(os.path.join(out_dir, "aggregate.csv"),
                              agg_rows, AGGREGATE_FIELDS)
    with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
        json.dump(agg_rows, fh, indent=1)
    return out_dir


# ---------------------------------------------------------------------------
# gradient probing over saved checkpoints


def probe_gradients(config: ExperimentConfig, checkpoint_glob: str,
                    out_path: str | None = None) -> gradstab.StabilityReport:
    """Run the stability sweep over checkpoints matching ``checkpoint_glob``.

    Checkpoint directories must carry an ``it<N>`` component naming their
    training iteration.
    """
    paths = sorted(globlib.glob(checkpoint_glob))
    checkpoints = []
    for path in paths:
        match = re.search(r"it(\d+)", os.path.basename(path.rstrip("/")))
        if match is None:
            raise UsageError(f"cannot parse iteration from {path!r}")
        checkpoints.append((int(match.group(1)), path))
    if not checkpoints:
        raise UsageError(f"no checkpoints matched {checkpoint_glob!r}")
    checkpoints.sort()
    spec = tasks.DualFreqSpec(config.vocab[0])
    report = gradstab.stability_sweep(
        checkpoints, spec,
        n_pairs=config.probe.n_pairs,
        mode=config.probe.mode,
        t_target=config.probe.t_target,
        length=config.max_length(),
        shared_prefix=config.probe.shared_prefix,
        pair_seed=config.probe.pair_seed,
    )
    if out_path:
        report.to_csv(out_path)
    return report


# ---------------------------------------------------------------------------
# plotting (SVG + CSV twins)


PLOT_KINDS = ("accuracy-vs-vocab", "condition-bars", "stability-lines")


def _read_csv(path: str) -> list[dict]:
    import csv
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plots(aggregate_csv: str, kind: str, out_base: str) -> tuple[str, str]:
    """Render one figure from an aggregate CSV.

    Writes ``out_base + '.svg'`` and a CSV twin ``out_base + '.csv'``
    containing exactly the plotted numbers.  Returns both paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}")
    rows = _read_csv(aggregate_csv)
    if not rows:
        raise ConfigError(f"empty aggregate {aggregate_csv!r}")
    svg_path = out_base + ".svg"
    csv_path = out_base + ".csv"
    fig, ax = plt.subplots(figsize=(5, 3.5))

    if kind == "accuracy-vs-vocab":
        series: dict[str, list[dict]] = {}
        for row in rows:
            series.setdefault(row.get("variant", "model"), []).append(row)
        twin = []
        for variant, pts in series.items():
            pts = sorted(pts, key=lambda r: int(r["vocab"]))
            xs = [int(r["vocab"]) for r in pts]
            ys = [float(r["token_accuracy"]) for r in pts]
            lo = [float(r["token_accuracy_ci_lo"]) for r in pts]
            hi = [float(r["token_accuracy_ci_hi"]) for r in pts]
            yerr = [[y - l for y, l in zip(ys, lo)],
                    [h - y for y, h in zip(ys, hi)]]
            ax.errorbar(xs, ys, yerr=yerr, marker="o", capsize=3,
                        label=variant)
            twin.extend({"variant": variant, "vocab": x, "token_accuracy": y,
                         "token_accuracy_ci_lo": l, "token_accuracy_ci_hi": h}
                        for x, y, l, h in zip(xs, ys, lo, hi))
        ax.set_xscale("log", base=2)
        ax.set_xlabel("vocabulary size")
        ax.set_ylabel("token accuracy")
        ax.legend()
        metrics.write_metrics_csv(csv_path, twin, [
            "variant", "vocab", "token_accuracy", "token_accuracy_ci_lo",
            "token_accuracy_ci_hi"])
    elif kind == "condition-bars":
        labels = [f"{r['target_group'][0].upper()}/{r['disturbant_group'][0].upper()}"
                  f" q{r['position_quartile']}" for r in rows]
        ys = [float(r["accuracy"]) for r in rows]
        ax.bar(range(len(rows)), ys)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=75, fontsize=6)
        ax.set_ylabel("target-token accuracy")
        twin = [{"label": lab, "accuracy": y} for lab, y in zip(labels, ys)]
        metrics.write_metrics_csv(csv_path, twin, ["label", "accuracy"])
    else:
        series = {}
        for row in rows:
            series.setdefault((row["condition"], row["mode"]), []).append(row)
        twin = []
        for (condition, mode), pts in sorted(series.items()):
            pts = sorted(pts, key=lambda r: int(r["iteration"]))
            xs = [int(r["iteration"]) for r in pts]
            ys = [float(r["mean_similarity"]) for r in pts]
            ax.plot(xs, ys, marker="o", label=f"{condition} ({mode})")
            twin.extend({"condition": condition, "mode": mode, "iteration": x,
                         "mean_similarity": y} for x, y in zip(xs, ys))
        ax.set_xlabel("training iteration")
        ax.set_ylabel("mean gradient similarity")
        ax.legend(fontsize=6)
        metrics.write_metrics_csv(csv_path, twin, [
            "condition", "mode", "iteration", "mean_similarity"])

    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return svg_path, csv_path
