"""Experiment runners.  Every runner persists its artifacts under
``<out_dir>/<digest[:16]>/`` and writes ``record.json`` last, so a visible
record always has complete artifacts next to it."""

from __future__ import annotations

import glob as globlib
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..analytics import MaskMatrix, iou_matrix, mask_trajectory, overlap_matrix
from ..autonet.params import ConfigurationError
from ..methods import imp, joint_discover, mpi, omp, parp, rp, run_pipeline, subnetwork_finetune
from ..pruning import BindingError, Mask, MaskFormatError, load_mask, mask_to_bytes, save_mask
from .config import ExperimentConfig
from .records import RecordParseError, RunRecord, atomic_write, csv_text
from .suite import Suite, run_pretrain, save_store

CURVE_HEADER = ("sparsity", "method", "seed", "final_dev", "final_test")
RUNS_HEADER = ("method", "task", "sparsity", "seed", "runs_consumed", "total_update_steps", "discovery_runs")
TRAJECTORY_HEADER = ("method", "task", "sparsity", "seed", "event", "iou")

_CONFIG_ERRORS = (ConfigurationError, BindingError, MaskFormatError)


class RunError(RuntimeError):
    """A method failed mid-run; the message names the run."""


def run_dir(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / config.digest[:16]


def mask_checksum(mask: Mask) -> str:
    return hashlib.sha256(mask_to_bytes(mask)).hexdigest()


def _final(task, store) -> dict:
    dev, test = task.evaluate(store, "dev"), task.evaluate(store, "test")
    return {"dev_loss": dev["loss"], "dev_error_rate": dev["error_rate"],
            "test_loss": test["loss"], "test_error_rate": test["error_rate"]}


def _initial_mask(suite: Suite, spec: str, s: float, seed: int) -> Mask:
    if spec == "mpi":
        return mpi(suite.theta0, s)
    if spec == "rp":
        return rp(suite.theta0, s, seed)
    path = Path(spec)
    if not path.exists():
        raise ConfigurationError(f"initial_mask: file not found: {path}")
    return load_mask(path, suite.theta0)


def _guard(label: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _CONFIG_ERRORS:
        raise
    except Exception as exc:
        raise RunError(f"{label}: {type(exc).__name__}: {exc}") from exc


def _single_config(config: ExperimentConfig, method: str, task: str, s: float, seed: int) -> ExperimentConfig:
    return config.replace(kind="sweep", methods=(method,), tasks=(task,), sparsities=(s,), seeds=(seed,))


def run_single(suite: Suite, method: str, task_id: str, s: float, seed: int, out: Path | None = None) -> RunRecord:
    """One method pipeline on one task at one sparsity and seed."""
    cfg = _single_config(suite.config, method, task_id, s, seed)
    out = run_dir(cfg) if out is None else Path(out)
    start = time.perf_counter()
    theta0, task = suite.theta0, suite.task(task_id)
    train = cfg.train.replace(seed=seed)
    initial, s0 = None, None
    if method == "parp":
        initial = _initial_mask(suite, cfg.initial_mask, s, seed)
    elif method == "parp-p" and s > 0.0:
        s0 = max(0.0, s - 0.2) if cfg.start_sparsity is None else cfg.start_sparsity
        initial = _initial_mask(suite, cfg.initial_mask, s0, seed)
    label = f"{method} on {task_id} at s={s} seed={seed}"
    result = _guard(label, run_pipeline, method, theta0, task, train, s, start_sparsity=s0, initial_mask=initial)
    final = _final(task, result.store)
    save_mask(result.mask, out / "mask.parpmask")
    trajectory = mask_trajectory(result.snapshots, initial) if initial is not None else []
    record = RunRecord(
        digest=cfg.digest, code_version=__version__, kind="run", config=cfg.to_dict(),
        method=method, task=task_id, sparsity=s, seed=seed,
        trace=[list(t) for t in result.trace], evals=[[step, m] for step, m in result.evals],
        final=final, mask_paths=["mask.parpmask"], mask_checksums=[mask_checksum(result.mask)],
        runs_consumed=result.runs_consumed, total_update_steps=result.total_updates,
        discovery_runs=int(result.extras.get("discovery_runs", 0)), trajectory=trajectory,
        extras={"zero_check_max": max((v for _, v in result.extras.get("zero_checks", [])), default=0.0)},
        wall_time=time.perf_counter() - start,
    )
    atomic_write(out / "trace.csv", record.trace_csv())
    record.write(out / "record.json")
    return record


@dataclass
class SweepResult:
    record: RunRecord
    rows: list  # (sparsity, method, seed, final_dev, final_test)
    children: list

    def curve(self, method: str) -> dict:
        """sparsity -> (mean, std) of final dev loss over seeds."""
        out: dict = {}
        for s, m, _, dev, _ in self.rows:
            if m == method:
                out.setdefault(s, []).append(dev)
        return {s: (float(np.mean(v)), float(np.std(v))) for s, v in sorted(out.items())}


def sparsity_sweep(config: ExperimentConfig, suite: Suite | None = None) -> SweepResult:
    """Every method x sparsity x seed on ``config.tasks[0]``; one child record each."""
    if len(config.tasks) != 1:
        raise ConfigurationError("tasks: a sweep takes exactly one task")
    if not config.sparsities:
        raise ConfigurationError("sparsities: at least one sparsity is required")
    suite = Suite(config) if suite is None else suite
    root = run_dir(config)
    start = time.perf_counter()
    rows, children = [], []
    for method in config.methods:
        for s in config.sparsities:
            for seed in config.seeds:
                child_cfg = _single_config(config, method, config.tasks[0], s, seed)
                rec = run_single(suite, method, config.tasks[0], s, seed, root / "runs" / child_cfg.digest[:16])
                children.append(rec)
                rows.append((s, method, seed, rec.final["dev_loss"], rec.final["test_loss"]))
    atomic_write(root / "curve.csv", csv_text(CURVE_HEADER, rows))
    summary = []
    result = SweepResult(None, rows, children)
    for method in config.methods:
        for s, (mean, std) in result.curve(method).items():
            tests = [r[4] for r in rows if r[0] == s and r[1] == method]
            summary.append((s, method, mean, std, float(np.mean(tests)), float(np.std(tests))))
    atomic_write(root / "summary.csv",
                 csv_text(("sparsity", "method", "mean_dev", "std_dev", "mean_test", "std_test"), summary))
    record = RunRecord(
        digest=config.digest, code_version=__version__, kind="sweep", config=config.to_dict(),
        children=[f"runs/{c.digest[:16]}" for c in children],
        runs_consumed=sum(c.runs_consumed for c in children),
        total_update_steps=sum(c.total_update_steps for c in children),
        extras={"curve": "curve.csv", "summary": "summary.csv"}, wall_time=time.perf_counter() - start,
    )
    record.write(root / "record.json")
    result.record = record
    return result


def discover_mask(method: str, suite: Suite, task_id: str, s: float, seed: int) -> Mask:
    """The mask a method settles on for one task (no extra finetuning)."""
    theta0, task = suite.theta0, suite.task(task_id)
    train = suite.config.train.replace(seed=seed)
    label = f"{method} discovery on {task_id} at s={s} seed={seed}"
    if method == "mpi":
        return mpi(theta0, s)
    if method == "rp":
        return rp(theta0, s, seed)
    if method == "omp":
        return _guard(label, omp, theta0, task, train, s).mask
    if method == "imp":
        return _guard(label, imp, theta0, task, train, s).mask
    if method == "parp":
        return _guard(label, parp, theta0, mpi(theta0, s), task, train, s).mask
    raise ConfigurationError(f"methods: {method!r} does not produce a standalone mask")


@dataclass
class TransferResult:
    row_labels: tuple  # source tasks, then "rp"
    col_labels: tuple  # target tasks
    deltas: np.ndarray  # mean over seeds of metric(src, tgt) - metric(tgt, tgt)
    raw: np.ndarray  # seeds x rows x cols final dev loss
    mode: str
    sparsity: float
    masks: dict = field(default_factory=dict)
    record: RunRecord | None = None

    def off_diagonal(self, values=None) -> np.ndarray:
        values = self.deltas if values is None else values
        t = len(self.col_labels)
        return values[:t][~np.eye(t, dtype=bool)]

    def off_diagonal_mean(self) -> float:
        return float(self.off_diagonal().mean())

    def per_seed_off_diagonal_means(self) -> list[float]:
        t = len(self.col_labels)
        return [float(self.off_diagonal(r - np.diag(r[:t])[None, :]).mean()) for r in self.raw]

    def to_matrix(self) -> MaskMatrix:
        return MaskMatrix(self.row_labels, self.col_labels, self.deltas, self.sparsity, "delta_dev_loss")


def transfer_matrix(config: ExperimentConfig, suite: Suite | None = None, masks: dict | None = None) -> TransferResult:
    """Cross-task transfer of OMP masks, finetuned frozen or with PARP.

    ``masks`` may supply precomputed OMP masks keyed ``(task, seed)``; missing
    ones are built on demand.  The last row uses a random mask.
    """
    if len(config.sparsities) != 1:
        raise ConfigurationError("sparsities: a transfer matrix takes exactly one sparsity")
    suite = Suite(config) if suite is None else suite
    s, mode, tasks = config.sparsities[0], config.mode, config.tasks
    root = run_dir(config)
    start = time.perf_counter()
    masks = {} if masks is None else dict(masks)
    theta0 = suite.theta0
    t = len(tasks)
    raw = np.zeros((len(config.seeds), t + 1, t))
    runs, rows, mask_paths, checksums = 0, [], [], []
    for k, seed in enumerate(config.seeds):
        train = config.train.replace(seed=seed)
        sources = []
        for src in tasks:
            if (src, seed) not in masks:
                masks[src, seed] = discover_mask("omp", suite, src, s, seed)
                runs += 1
            sources.append((src, masks[src, seed]))
        sources.append(("rp", rp(theta0, s, seed)))
        for label, mask in sources:
            path = f"masks/{label}-seed{seed}.parpmask"
            save_mask(mask, root / path)
            mask_paths.append(path)
            checksums.append(mask_checksum(mask))
        for i, (src, mask) in enumerate(sources):
            for j, tgt in enumerate(tasks):
                task = suite.task(tgt)
                label = f"transfer {src}->{tgt} ({mode}) at s={s} seed={seed}"
                if mode == "frozen":
                    res = _guard(label, subnetwork_finetune, theta0, mask, task, train)
                else:
                    res = _guard(label, parp, theta0, mask, task, train, s)
                raw[k, i, j] = task.evaluate(res.store, "dev")["loss"]
                runs += res.runs_consumed
        for i, (src, _) in enumerate(sources):
            for j, tgt in enumerate(tasks):
                rows.append((seed, src, tgt, float(raw[k, i, j]), float(raw[k, i, j] - raw[k, j, j])))
    deltas = (raw - np.diagonal(raw[:, :t], axis1=1, axis2=2)[:, None, :]).mean(axis=0)
    result = TransferResult(tuple(tasks) + ("rp",), tuple(tasks), deltas, raw, mode, s, masks)
    atomic_write(root / "matrix.csv", result.to_matrix().to_csv())
    atomic_write(root / "transfer.csv", csv_text(("seed", "source", "target", "dev_loss", "delta"), rows))
    result.record = RunRecord(
        digest=config.digest, code_version=__version__, kind="transfer-matrix", config=config.to_dict(),
        sparsity=s, mask_paths=mask_paths, mask_checksums=checksums, runs_consumed=runs,
        extras={"mode": mode, "off_diagonal_mean": result.off_diagonal_mean(),
                "per_seed_off_diagonal_means": result.per_seed_off_diagonal_means(),
                "matrix": "matrix.csv", "long": "transfer.csv"},
        wall_time=time.perf_counter() - start,
    )
    result.record.write(root / "record.json")
    return result


def iou_report(masks, reference=None, s: float | None = None, seed: int = 0,
               out: Path | None = None) -> tuple[MaskMatrix, MaskMatrix]:
    """IOU and overlap matrices over labelled masks ``[(label, mask), ...]``.

    With ``reference`` (pretrained weights) an MPI row and an RP row at
    sparsity ``s`` are appended.
    """
    masks = list(masks)
    if not masks:
        raise ConfigurationError("masks: at least one mask is required")
    extra = []
    if reference is not None:
        s = masks[0][1].declared_sparsity if s is None else s
        extra = [("mpi", mpi(reference, s)), ("rp", rp(reference, s, seed))]
    ious, overlaps = iou_matrix(masks, extra), overlap_matrix(masks, extra)
    if out is not None:
        atomic_write(Path(out) / "iou.csv", ious.to_csv())
        atomic_write(Path(out) / "overlap.csv", overlaps.to_csv())
    return ious, overlaps


def _iou_report_run(config: ExperimentConfig, suite: Suite) -> RunRecord:
    if len(config.sparsities) != 1:
        raise ConfigurationError("sparsities: an IOU report takes exactly one sparsity")
    s, seed, method = config.sparsities[0], config.seeds[0], config.methods[0]
    root = run_dir(config)
    start = time.perf_counter()
    masks = [(t, discover_mask(method, suite, t, s, seed)) for t in config.tasks]
    for label, mask in masks:
        save_mask(mask, root / "masks" / f"{label}.parpmask")
    ious, _ = iou_report(masks, suite.theta0, s, seed, root)
    record = RunRecord(
        digest=config.digest, code_version=__version__, kind="iou-report", config=config.to_dict(),
        method=method, sparsity=s, seed=seed,
        mask_paths=[f"masks/{label}.parpmask" for label, _ in masks],
        mask_checksums=[mask_checksum(m) for _, m in masks],
        extras={"iou": "iou.csv", "overlap": "overlap.csv", "iou_records": ious.records()},
        wall_time=time.perf_counter() - start,
    )
    record.write(root / "record.json")
    return record


@dataclass
class AblationResult:
    pairs: list  # (rp-initialized record, mpi-initialized record) per seed
    deltas: list  # final dev loss, mpi-initialized minus rp-initialized
    record: RunRecord | None = None


def ablation_initial_mask(config: ExperimentConfig, suite: Suite | None = None) -> AblationResult:
    """PARP from a random vs a magnitude initial mask, same seed and budget."""
    if len(config.sparsities) != 1:
        raise ConfigurationError("sparsities: the ablation takes exactly one sparsity")
    suite = Suite(config) if suite is None else suite
    s, task = config.sparsities[0], config.tasks[0]
    root = run_dir(config)
    start = time.perf_counter()
    pairs, deltas = [], []
    for seed in config.seeds:
        pair = []
        for init in ("rp", "mpi"):
            child = Suite(config.replace(initial_mask=init))
            child._theta0, child._tasks = suite.theta0, suite._tasks
            child_cfg = _single_config(child.config, "parp", task, s, seed)
            pair.append(run_single(child, "parp", task, s, seed, root / "runs" / child_cfg.digest[:16]))
        pairs.append(tuple(pair))
        deltas.append(pair[1].final["dev_loss"] - pair[0].final["dev_loss"])
    rows = [(seed, rp_rec.final["dev_loss"], mpi_rec.final["dev_loss"], d)
            for seed, (rp_rec, mpi_rec), d in zip(config.seeds, pairs, deltas)]
    atomic_write(root / "ablation.csv", csv_text(("seed", "rp_init_dev", "mpi_init_dev", "delta"), rows))
    record = RunRecord(
        digest=config.digest, code_version=__version__, kind="ablation", config=config.to_dict(),
        method="parp", task=task, sparsity=s,
        children=[f"runs/{r.digest[:16]}" for pair in pairs for r in pair],
        runs_consumed=sum(r.runs_consumed for pair in pairs for r in pair),
        extras={"deltas": deltas, "table": "ablation.csv"}, wall_time=time.perf_counter() - start,
    )
    record.write(root / "record.json")
    return AblationResult(pairs, deltas, record)


def _joint_run(config: ExperimentConfig, suite: Suite) -> RunRecord:
    if len(config.sparsities) != 1:
        raise ConfigurationError("sparsities: joint discovery takes exactly one sparsity")
    s, method = config.sparsities[0], config.methods[0]
    root = run_dir(config)
    start = time.perf_counter()
    tasks = [suite.task(t) for t in config.tasks]
    per_seed, paths, checksums, runs = [], [], [], 0
    for seed in config.seeds:
        train = config.train.replace(seed=seed)
        res = _guard(f"joint {method} at s={s} seed={seed}", joint_discover, suite.theta0, tasks, method, train, s)
        path = f"masks/joint-seed{seed}.parpmask"
        save_mask(res.mask, root / path)
        paths.append(path)
        checksums.append(mask_checksum(res.mask))
        runs += res.runs_consumed
        per_seed.append({"seed": seed, "per_task": res.per_task})
    rows = [(p["seed"], t, m["loss"], m["error_rate"]) for p in per_seed for t, m in p["per_task"].items()]
    atomic_write(root / "joint.csv", csv_text(("seed", "task", "dev_loss", "dev_error_rate"), rows))
    record = RunRecord(
        digest=config.digest, code_version=__version__, kind="joint", config=config.to_dict(),
        method=method, sparsity=s, mask_paths=paths, mask_checksums=checksums, runs_consumed=runs,
        extras={"per_seed": per_seed, "table": "joint.csv"}, wall_time=time.perf_counter() - start,
    )
    record.write(root / "record.json")
    return record


def _pretrain_run(config: ExperimentConfig) -> RunRecord:
    root = run_dir(config)
    start = time.perf_counter()
    theta0, trainer = _guard("pretrain", run_pretrain, config.model, config.pretrain)
    save_store(theta0, root / "theta0.npz")
    record = RunRecord(
        digest=config.digest, code_version=__version__, kind="pretrain", config=config.to_dict(),
        seed=config.pretrain.seed, trace=[list(t) for t in trainer.trace],
        total_update_steps=trainer.step, extras={"checkpoint": "theta0.npz", "checksum": theta0.checksum()},
        wall_time=time.perf_counter() - start,
    )
    atomic_write(root / "trace.csv", record.trace_csv())
    record.write(root / "record.json")
    return record


def run(config: ExperimentConfig) -> RunRecord:
    """Execute the experiment ``config.kind`` names and return its record."""
    if config.kind == "pretrain":
        return _pretrain_run(config)
    suite = Suite(config)
    if config.kind == "sweep":
        return sparsity_sweep(config, suite).record
    if config.kind == "transfer-matrix":
        return transfer_matrix(config, suite).record
    if config.kind == "joint":
        return _joint_run(config, suite)
    if config.kind == "iou-report":
        return _iou_report_run(config, suite)
    return ablation_initial_mask(config, suite).record


@dataclass
class Report:
    runs: list  # run-count vs sparsity rows (RUNS_HEADER)
    metrics: list  # metric vs sparsity rows (CURVE_HEADER)
    trajectory: list  # long-format re-prune IOU rows (TRAJECTORY_HEADER)

    def write(self, out) -> None:
        out = Path(out)
        atomic_write(out / "runs.csv", csv_text(RUNS_HEADER, self.runs))
        atomic_write(out / "metrics.csv", csv_text(CURVE_HEADER, self.metrics))
        atomic_write(out / "trajectory.csv", csv_text(TRAJECTORY_HEADER, self.trajectory))


def _record_paths(pattern: str) -> list[Path]:
    found = set()
    for match in globlib.glob(pattern, recursive=True):
        p = Path(match)
        if p.is_dir():
            found.update(p.rglob("record.json"))
        elif p.is_file():
            found.add(p)
    return sorted(found)


def report(pattern: str, out=None) -> Report:
    """Merge single-run records matched by ``pattern`` into long-format tables."""
    rep = Report([], [], [])
    for path in _record_paths(pattern):
        rec = RunRecord.load(path)
        if rec.kind != "run":
            continue
        try:
            key = (rec.method, rec.task, float(rec.sparsity), int(rec.seed))
            rep.runs.append((*key, rec.runs_consumed, rec.total_update_steps, rec.discovery_runs))
            rep.metrics.append((key[2], rec.method, key[3], float(rec.final["dev_loss"]),
                                float(rec.final["test_loss"])))
            rep.trajectory.extend((*key, i + 1, float(v)) for i, v in enumerate(rec.trajectory))
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordParseError(path, f"bad run fields ({exc})") from None
    rep.runs.sort(key=lambda r: (r[0], r[2], r[1], r[3]))
    rep.metrics.sort(key=lambda r: (r[1], r[0], r[2]))
    if out is not None:
        rep.write(out)
    return rep
