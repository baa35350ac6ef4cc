"""End-to-end orchestration: seeded training loop, greedy evaluation
(in-distribution, out-of-distribution, crop quality), pixel-budget sweep,
run comparison, and single-task replay.

Determinism contract: every random draw is keyed by (seed, purpose,
iteration, slot) counters, reductions run in task-slot order, and metrics
serialize with fixed key order, so identical configs produce byte-identical
metrics.jsonl and resumed runs continue bit-exactly. Wall-clock timings go
to a sidecar file, never into metrics.jsonl.
"""

from __future__ import annotations

import json
import os
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, to_dict
from .errors import ConfigInvalid, MisalignedLogs, NonFiniteGradient, NotFound
from .geometry import clamp_and_round_crop_rect
from .imaging import ImageBuffer, ImagingConfig, write_ppm
from .optim import (
    AdamWConfig,
    GradAccum,
    OptimState,
    accumulate_group_grad,
    adamw_step,
    clipped_surrogate_grad,
)
from .policy import (
    FeatureLayout,
    PolicyParams,
    PolicySpec,
    init_params,
    params_from_jsonable,
    params_to_jsonable,
)
from .rewards import accuracy_reward
from .rng import derive_key, stream
from .rollout import (
    Mode,
    RunCfg,
    TaskBundle,
    VisualEntry,
    prepare_input,
    render_transcript,
    run_group,
    run_rollout,
    trajectory_record,
)
from .taskgen import (
    GenConfig,
    QuestionKind,
    VisualTask,
    load_dataset,
    load_task_image,
    oracle_answer,
    render,
    to_image,
)

CHECKPOINT_VERSION = 1


class TaskSource:
    """Deterministic task access by index with caching.

    Metadata and prepared model inputs cache permanently (small); uint8
    rasters sit in a byte-capped LRU and regenerate on demand, since a task
    is a pure function of (generator seed, index).
    """

    def __init__(
        self,
        gen_cfg: GenConfig,
        kind: QuestionKind,
        icfg: ImagingConfig,
        raster_cache_mb: float = 1200.0,
    ):
        self.gen_cfg = gen_cfg
        self.kind = kind
        self.icfg = icfg
        per_raster = gen_cfg.image_size.area * 3
        self._cap = max(4, int(raster_cache_mb * 1e6 / per_raster))
        self._meta: dict[int, VisualTask] = {}
        self._inputs: dict[int, tuple[VisualEntry, float]] = {}
        self._rasters: "OrderedDict[int, np.ndarray]" = OrderedDict()

    def _raster(self, index: int) -> np.ndarray:
        hit = self._rasters.get(index)
        if hit is not None:
            self._rasters.move_to_end(index)
            return hit
        raster, task = render(self.gen_cfg, self.kind, index)
        self._meta.setdefault(index, task)
        self._rasters[index] = raster
        if len(self._rasters) > self._cap:
            self._rasters.popitem(last=False)
        return raster

    def meta(self, index: int) -> VisualTask:
        if index not in self._meta:
            self._raster(index)
        return self._meta[index]

    def _input(self, index: int) -> tuple[VisualEntry, float]:
        cached = self._inputs.get(index)
        if cached is None:
            cached = prepare_input(to_image(self._raster(index)), self.icfg)
            self._inputs[index] = cached
        return cached

    def bundle(self, index: int) -> TaskBundle:
        entry, scale = self._input(index)
        return TaskBundle(
            self.meta(index),
            lambda: to_image(self._raster(index)),
            entry,
            scale,
            raster_fn=lambda: self._raster(index),
        )


@dataclass
class EvalResult:
    accuracy: float
    valid_ground_ratio: float
    crop_answerable_ratio: Optional[float]


def evaluate(
    params: PolicyParams,
    source: TaskSource,
    n_tasks: int,
    mode: Mode,
    run_cfg: RunCfg,
) -> EvalResult:
    """Greedy rollouts over tasks 0..n_tasks-1 of ``source``.

    crop_answerable follows the sub-image protocol: the full-resolution
    crop at the emitted (valid) box must let the oracle answer correctly.
    For the singleturn mode that crop is materialized hypothetically, for
    parity; invalid boxes count as not answerable.
    """
    greedy = replace(run_cfg, temperature=0.0)
    n_correct = 0.0
    n_valid = 0
    n_answerable = 0
    needle = source.kind is QuestionKind.NEEDLE_CHOICE
    for i in range(n_tasks):
        bundle = source.bundle(i)
        traj = run_rollout(params, bundle, mode, greedy, rng=None)
        task = bundle.task
        n_correct += accuracy_reward(traj, task)
        ok = bool(traj.validity) if traj.validity is not None else False
        n_valid += ok
        if needle and ok:
            rect = traj.crop_rect
            if rect is None:
                rect = clamp_and_round_crop_rect(
                    traj.grounding_bbox_original,
                    task.original_size,
                    greedy.min_crop_side,
                )
            crop = bundle.crop_original(rect)
            if oracle_answer(task, crop, 1.0) == task.answer_index:
                n_answerable += 1
    return EvalResult(
        accuracy=n_correct / n_tasks,
        valid_ground_ratio=n_valid / n_tasks,
        crop_answerable_ratio=(n_answerable / n_tasks) if needle else None,
    )


@dataclass
class MetricsRecord:
    iteration: int
    mean_reward: Optional[float] = None
    train_accuracy: Optional[float] = None
    valid_ground_ratio: Optional[float] = None
    eval_id_accuracy: Optional[float] = None
    eval_ood_accuracy: Optional[float] = None
    crop_answerable_ratio: Optional[float] = None
    wall_time: Optional[float] = None  # sidecar only, never in metrics.jsonl

    def json_line(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "mean_reward": self.mean_reward,
                "train_accuracy": self.train_accuracy,
                "valid_ground_ratio": self.valid_ground_ratio,
                "eval_id_accuracy": self.eval_id_accuracy,
                "eval_ood_accuracy": self.eval_ood_accuracy,
                "crop_answerable_ratio": self.crop_answerable_ratio,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        return cls(**{k: d.get(k) for k in (
            "iteration",
            "mean_reward",
            "train_accuracy",
            "valid_ground_ratio",
            "eval_id_accuracy",
            "eval_ood_accuracy",
            "crop_answerable_ratio",
        )})


def moving_average(values, window: int = 10) -> list[float]:
    """Trailing moving average (shorter prefix windows at the start)."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def build_run_cfg(cfg: RunConfig) -> tuple[RunCfg, PolicySpec]:
    layout = FeatureLayout(
        token_dim=cfg.imaging.feature_dim, turn_slots=max(2, cfg.max_turns)
    )
    spec = PolicySpec(
        feature_dim=layout.dim,
        bins=cfg.policy.bins,
        choices=cfg.n_choices(),
        hidden=cfg.policy.hidden,
        init_scale=cfg.policy.init_scale,
    )
    run_cfg = RunCfg(
        imaging=cfg.imaging,
        bins=cfg.policy.bins,
        max_turns=cfg.max_turns,
        answer_turn=cfg.answer_turn,
        temperature=cfg.train.temperature,
        layout=layout,
    )
    return run_cfg, spec


def save_checkpoint(
    path, cfg: RunConfig, params: PolicyParams, opt: OptimState, iteration: int
) -> None:
    """Atomic write: temp file then rename."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "rng_state": {"seed": cfg.train.seed, "iteration": iteration},
        "policy": params_to_jsonable(params),
        "optim": opt.to_jsonable(),
        "config": to_dict(cfg),
    }
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as f:
        json.dump(payload, f)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    if not Path(path).exists():
        raise NotFound(f"checkpoint {path} does not exist")
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigInvalid(f"unsupported checkpoint version {payload.get('version')}")
    return payload


@dataclass
class TrainResult:
    params: PolicyParams
    opt: OptimState
    metrics: list[MetricsRecord]
    output_dir: Path
    final_eval_id: Optional[EvalResult] = None
    final_eval_ood: Optional[EvalResult] = None


def _eval_sources(cfg: RunConfig):
    id_src = TaskSource(cfg.env_eval_id, cfg.task_kind, cfg.imaging, raster_cache_mb=64)
    ood_src = TaskSource(cfg.env_eval_ood, cfg.task_kind, cfg.imaging, raster_cache_mb=64)
    return id_src, ood_src


def train(
    cfg: RunConfig,
    resume_from=None,
    stop_after: Optional[int] = None,
    quiet: bool = False,
) -> TrainResult:
    """The outer RL loop: per iteration, sample a task batch, run groups,
    score, baseline, accumulate gradients in slot order, and take one AdamW
    step. Evaluation runs on eval_every boundaries (before that iteration's
    update, so iteration 0 reports the random-init policy) and once more
    after the final update."""
    cfg.validate()
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    run_cfg, spec = build_run_cfg(cfg)
    seed = cfg.train.seed

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        params = params_from_jsonable(payload["policy"])
        opt = OptimState.from_jsonable(payload["optim"])
        start_iter = int(payload["iteration"])
        if params.spec != spec:
            raise ConfigInvalid("checkpoint policy shape differs from config")
    else:
        params = init_params(spec, stream(seed, "init"))
        opt = OptimState.zeros(params)
        start_iter = 0

    train_src = TaskSource(cfg.env_train, cfg.task_kind, cfg.imaging)
    id_src, ood_src = _eval_sources(cfg)

    adam = AdamWConfig(
        learning_rate=cfg.train.learning_rate,
        beta1=cfg.train.adam_beta1,
        beta2=cfg.train.adam_beta2,
        eps=cfg.train.adam_eps,
        weight_decay=cfg.train.weight_decay,
    )
    total = cfg.train.total_iterations
    end_iter = total if stop_after is None else min(total, stop_after)
    interrupted = end_iter < total

    metrics: list[MetricsRecord] = []
    file_mode = "a" if resume_from is not None else "w"
    metrics_f = open(out / "metrics.jsonl", file_mode)
    timings_f = open(out / "timings.jsonl", file_mode)
    rollout_f = open(out / "rollouts.jsonl", file_mode) if cfg.log_rollouts else None
    G = cfg.train.group_size

    def run_evals():
        rid = evaluate(params, id_src, cfg.eval_set_size, cfg.mode, run_cfg)
        rood = evaluate(params, ood_src, cfg.eval_set_size, cfg.mode, run_cfg)
        return rid, rood

    last_id = last_ood = None
    try:
        for it in range(start_iter, end_iter):
            t0 = time.perf_counter()
            eval_id = eval_ood = crop_ratio = None
            if it % cfg.eval_every == 0:
                rid, rood = run_evals()
                last_id, last_ood = rid, rood
                eval_id, eval_ood = rid.accuracy, rood.accuracy
                crop_ratio = rood.crop_answerable_ratio

            task_ids = stream(seed, "tasks", it).integers(
                0, cfg.train_set_size, size=cfg.train.groups_per_batch
            )
            acc = GradAccum.zeros(params)
            rewards_all: list[float] = []
            acc_all: list[float] = []
            valid_all: list[bool] = []
            for slot, tid in enumerate(task_ids):
                bundle = train_src.bundle(int(tid))
                group_seed = derive_key(seed, "group", it, slot)
                group = run_group(
                    params, bundle, G, cfg.mode, run_cfg, cfg.reward, group_seed
                )
                if cfg.train.use_clip:
                    clipped_surrogate_grad(group, params, cfg.train.clip_ratio, acc)
                else:
                    accumulate_group_grad(group, params, acc)
                rewards_all.extend(group.rewards)
                for traj in group.trajectories:
                    acc_all.append(accuracy_reward(traj, bundle.task))
                    valid_all.append(
                        bool(traj.validity) if traj.validity is not None else False
                    )
                    if rollout_f is not None:
                        rollout_f.write(
                            json.dumps(trajectory_record(traj)) + "\n"
                        )
            try:
                adamw_step(params, acc.mean(), opt, adam)
            except NonFiniteGradient as e:
                if not quiet:
                    print(f"[iter {it}] update rejected: {e}")

            rec = MetricsRecord(
                iteration=it,
                mean_reward=float(np.mean(rewards_all)),
                train_accuracy=float(np.mean(acc_all)),
                valid_ground_ratio=float(np.mean(valid_all)),
                eval_id_accuracy=eval_id,
                eval_ood_accuracy=eval_ood,
                crop_answerable_ratio=crop_ratio,
                wall_time=time.perf_counter() - t0,
            )
            metrics.append(rec)
            metrics_f.write(rec.json_line() + "\n")
            metrics_f.flush()
            timings_f.write(
                json.dumps({"iteration": it, "wall_time": rec.wall_time}) + "\n"
            )
            if not quiet and (it % 50 == 0 or it == end_iter - 1):
                print(
                    f"[iter {it}] reward {rec.mean_reward:.3f} "
                    f"acc {rec.train_accuracy:.3f} valid {rec.valid_ground_ratio:.3f}"
                )
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(
                    out / "checkpoints" / f"ckpt_{it + 1}.json", cfg, params, opt, it + 1
                )

        final_id = final_ood = None
        if not interrupted:
            final_id, final_ood = run_evals()
            rec = MetricsRecord(
                iteration=total,
                eval_id_accuracy=final_id.accuracy,
                eval_ood_accuracy=final_ood.accuracy,
                crop_answerable_ratio=final_ood.crop_answerable_ratio,
            )
            metrics.append(rec)
            metrics_f.write(rec.json_line() + "\n")
        save_checkpoint(
            out / "checkpoints" / f"ckpt_{end_iter}.json", cfg, params, opt, end_iter
        )
    finally:
        metrics_f.close()
        timings_f.close()
        if rollout_f is not None:
            rollout_f.close()

    return TrainResult(params, opt, metrics, out, final_id, final_ood)


def read_metrics(run_dir) -> list[MetricsRecord]:
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise NotFound(f"no metrics.jsonl under {run_dir}")
    with open(path) as f:
        return [MetricsRecord.from_json(line) for line in f if line.strip()]


# --- sweep -------------------------------------------------------------------


def sweep_max_pixels(cfg: RunConfig, budgets=None, quiet: bool = False):
    """Train each (budget, mode) cell and tabulate final eval accuracies.

    Returns rows [{budget, mode, eval_id_accuracy, eval_ood_accuracy}, ...]
    and writes sweep.csv plus a figure under cfg.output_dir.
    """
    budgets = list(budgets if budgets is not None else cfg.sweep_budgets)
    if len(budgets) < 2:
        raise ConfigInvalid("sweep needs at least two budgets")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for budget in budgets:
        for mode in (Mode.MULTITURN, Mode.SINGLETURN):
            sub = replace(
                cfg,
                mode=mode,
                imaging=replace(cfg.imaging, max_pixels=budget),
                output_dir=str(out / f"b{budget}_{mode.value}"),
            )
            result = train(sub, quiet=quiet)
            rows.append(
                {
                    "budget": budget,
                    "mode": mode.value,
                    "eval_id_accuracy": result.final_eval_id.accuracy,
                    "eval_ood_accuracy": result.final_eval_ood.accuracy,
                }
            )
    write_sweep_csv(rows, out / "sweep.csv")
    from .plots import sweep_figure

    sweep_figure(rows, out / "sweep.png")
    return rows


def write_sweep_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["budget", "mode", "eval_id_accuracy", "eval_ood_accuracy"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# --- compare -----------------------------------------------------------------


def compare_runs(run_dir_a, run_dir_b, out_dir=None) -> dict:
    """Aligned-by-iteration comparison of two metrics logs.

    Writes compare.csv (plot-ready) and trend figures; returns the summary
    with final eval deltas (a minus b)."""
    ma = read_metrics(run_dir_a)
    mb = read_metrics(run_dir_b)
    iters_a = [m.iteration for m in ma]
    iters_b = [m.iteration for m in mb]
    if iters_a != iters_b:
        raise MisalignedLogs(
            f"iteration sequences differ ({len(iters_a)} vs {len(iters_b)} records)"
        )
    evals_a = [m.iteration for m in ma if m.eval_id_accuracy is not None]
    evals_b = [m.iteration for m in mb if m.eval_id_accuracy is not None]
    if evals_a != evals_b:
        raise MisalignedLogs("evaluation iterations differ between the two logs")

    out = Path(out_dir) if out_dir is not None else Path(run_dir_a) / "compare"
    out.mkdir(parents=True, exist_ok=True)
    import csv

    with open(out / "compare.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "iteration",
                "a_mean_reward",
                "b_mean_reward",
                "a_valid_ground_ratio",
                "b_valid_ground_ratio",
                "a_eval_id_accuracy",
                "b_eval_id_accuracy",
                "a_eval_ood_accuracy",
                "b_eval_ood_accuracy",
                "delta_eval_id",
                "delta_eval_ood",
            ]
        )
        for a, b in zip(ma, mb):
            d_id = (
                a.eval_id_accuracy - b.eval_id_accuracy
                if a.eval_id_accuracy is not None and b.eval_id_accuracy is not None
                else None
            )
            d_ood = (
                a.eval_ood_accuracy - b.eval_ood_accuracy
                if a.eval_ood_accuracy is not None and b.eval_ood_accuracy is not None
                else None
            )
            writer.writerow(
                [
                    a.iteration,
                    a.mean_reward,
                    b.mean_reward,
                    a.valid_ground_ratio,
                    b.valid_ground_ratio,
                    a.eval_id_accuracy,
                    b.eval_id_accuracy,
                    a.eval_ood_accuracy,
                    b.eval_ood_accuracy,
                    d_id,
                    d_ood,
                ]
            )

    from .plots import comparison_figure

    comparison_figure(ma, mb, out)

    def final_eval(ms, attr):
        vals = [getattr(m, attr) for m in ms if getattr(m, attr) is not None]
        return vals[-1] if vals else None

    def last_valid_ratio(ms):
        vals = [m.valid_ground_ratio for m in ms if m.valid_ground_ratio is not None]
        if not vals:
            return None
        return moving_average(vals)[-1]

    summary = {
        "iterations": iters_a[-1] if iters_a else 0,
        "final_eval_id_a": final_eval(ma, "eval_id_accuracy"),
        "final_eval_id_b": final_eval(mb, "eval_id_accuracy"),
        "final_eval_ood_a": final_eval(ma, "eval_ood_accuracy"),
        "final_eval_ood_b": final_eval(mb, "eval_ood_accuracy"),
        "final_crop_answerable_a": final_eval(ma, "crop_answerable_ratio"),
        "final_crop_answerable_b": final_eval(mb, "crop_answerable_ratio"),
        "smoothed_valid_ratio_a": last_valid_ratio(ma),
        "smoothed_valid_ratio_b": last_valid_ratio(mb),
    }
    for k in ("eval_id", "eval_ood"):
        a = summary[f"final_{k}_a"]
        b = summary[f"final_{k}_b"]
        summary[f"delta_{k}"] = (a - b) if a is not None and b is not None else None
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


# --- replay ------------------------------------------------------------------


def replay(
    checkpoint_path, dataset_dir, task_id: str, out_dir, mode: Optional[Mode] = None
) -> Path:
    """Greedy rollout of one dataset task: transcript plus PPM dumps of
    every visual entry (input, crops or fallbacks)."""
    payload = load_checkpoint(checkpoint_path)
    params = params_from_jsonable(payload["policy"])
    from .config import from_dict

    cfg = from_dict(payload["config"])
    run_cfg, _ = build_run_cfg(cfg)
    mode = mode or cfg.mode

    tasks = load_dataset(dataset_dir)
    matches = [t for t in tasks if t.task_id == task_id]
    if not matches:
        raise NotFound(f"task {task_id!r} not in dataset {dataset_dir}")
    task = matches[0]
    original = load_task_image(dataset_dir, task)

    from .rollout import make_bundle

    bundle = make_bundle(task, original, cfg.imaging)
    greedy = replace(run_cfg, temperature=0.0)
    traj = run_rollout(params, bundle, mode, greedy, rng=None)

    out = Path(out_dir)
    (out / "crops").mkdir(parents=True, exist_ok=True)
    transcript = render_transcript(traj, task)
    with open(out / "transcript.txt", "w") as f:
        f.write(transcript)
    for i, entry in enumerate(traj.state.visuals()):
        write_ppm(
            entry.image, out / "crops" / f"visual_{i}_{entry.provenance.value}.ppm"
        )
    with open(out / "trajectory.jsonl", "w") as f:
        f.write(json.dumps(trajectory_record(traj)) + "\n")
    return out
