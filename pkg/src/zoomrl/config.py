"""Run configuration: a TOML file with sections mirroring the run layout,
an equivalent dataclass tree, defaults, and validation.

CLI flags override file keys; `config --dump` prints the effective TOML.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigInvalid
from .geometry import Size
from .imaging import ImagingConfig
from .rewards import RewardConfig, RewardKind
from .rollout import Mode
from .taskgen import ALPHABETS, GenConfig, QuestionKind


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    group_size: int = 8
    groups_per_batch: int = 32
    total_iterations: int = 600
    learning_rate: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.003
    clip_ratio: float = 0.2
    use_clip: bool = True
    temperature: float = 1.0

    def validate(self) -> None:
        if self.group_size < 2:
            raise ConfigInvalid("group_size must be >= 2")
        if self.groups_per_batch < 1:
            raise ConfigInvalid("groups_per_batch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigInvalid("learning_rate must be positive")
        if self.use_clip and not (0.0 < self.clip_ratio < 1.0):
            raise ConfigInvalid("clip_ratio must be in (0, 1) when use_clip is set")
        if self.total_iterations < 0:
            raise ConfigInvalid("total_iterations must be >= 0")
        if self.temperature < 0:
            raise ConfigInvalid("temperature must be >= 0")


# The full-scale learning rate used by large-model training; kept as a
# selectable preset (learning_rate = "fullscale").
FULLSCALE_LEARNING_RATE = 1e-6


@dataclass(frozen=True)
class PolicyConfig:
    bins: int = 8
    hidden: int = 64
    init_scale: float = 0.01

    def validate(self) -> None:
        if self.bins < 1:
            raise ConfigInvalid("bins must be >= 1")
        if self.hidden < 0:
            raise ConfigInvalid("hidden must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    mode: Mode = Mode.MULTITURN
    task_kind: QuestionKind = QuestionKind.NEEDLE_CHOICE
    output_dir: str = "runs/default"
    eval_every: int = 20
    eval_set_size: int = 500
    checkpoint_every: int = 0  # 0: checkpoint only at the end
    max_turns: int = 2
    answer_turn: Optional[int] = None
    train_set_size: int = 512
    log_rollouts: bool = False
    sweep_budgets: tuple[int, ...] = (16384, 65536)
    train: TrainConfig = TrainConfig()
    reward: RewardConfig = RewardConfig()
    imaging: ImagingConfig = ImagingConfig()
    policy: PolicyConfig = PolicyConfig()
    env_train: GenConfig = GenConfig(seed=101)
    env_eval_id: GenConfig = GenConfig(seed=201)
    env_eval_ood: GenConfig = GenConfig(
        image_size=Size(1152, 1152), glyph_side=36, glyph_alphabet_id="shifted", seed=301
    )

    def n_choices(self) -> int:
        if self.task_kind is QuestionKind.NEEDLE_CHOICE:
            return len(ALPHABETS[self.env_train.glyph_alphabet_id].class_names)
        lo, hi = self.env_train.count_range
        return hi - lo + 1

    def validate(self) -> None:
        self.train.validate()
        self.reward.validate()
        self.imaging.validate()
        self.policy.validate()
        for env in (self.env_train, self.env_eval_id, self.env_eval_ood):
            env.validate()
        if self.eval_set_size < 1:
            raise ConfigInvalid("eval_set_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigInvalid("eval_every must be >= 1")
        if self.train_set_size < 1:
            raise ConfigInvalid("train_set_size must be >= 1")
        if self.max_turns < 2:
            raise ConfigInvalid("max_turns must be >= 2")
        if self.answer_turn is not None and self.answer_turn < 2:
            raise ConfigInvalid("answer_turn must be >= 2")
        seeds = {self.env_train.seed, self.env_eval_id.seed, self.env_eval_ood.seed}
        if len(seeds) != 3:
            raise ConfigInvalid("train/eval_id/eval_ood generator seeds must differ")
        if self.reward.kind is RewardKind.ACCURACY_PLUS_POINT and (
            self.task_kind is not QuestionKind.COUNT
        ):
            raise ConfigInvalid("accuracy_plus_point reward requires count tasks")
        if len(self.sweep_budgets) < 2:
            raise ConfigInvalid("sweep needs at least two budgets")
        if self.task_kind is QuestionKind.COUNT:
            lo, hi = self.env_train.count_range
            for env in (self.env_eval_id, self.env_eval_ood):
                if env.count_range != (lo, hi):
                    raise ConfigInvalid("count_range must match across count envs")


# --- TOML mapping ------------------------------------------------------------


def _gen_section(env: GenConfig) -> dict:
    return {
        "width": env.image_size.width,
        "height": env.image_size.height,
        "glyph_side": env.glyph_side,
        "distractor_count": env.distractor_count,
        "alphabet": env.glyph_alphabet_id,
        "count_min": env.count_range[0],
        "count_max": env.count_range[1],
        "seed": env.seed,
    }


def _gen_from(section: dict, base: GenConfig) -> GenConfig:
    size = Size(
        int(section.get("width", base.image_size.width)),
        int(section.get("height", base.image_size.height)),
    )
    return GenConfig(
        image_size=size,
        glyph_side=int(section.get("glyph_side", base.glyph_side)),
        distractor_count=int(section.get("distractor_count", base.distractor_count)),
        glyph_alphabet_id=section.get("alphabet", base.glyph_alphabet_id),
        count_range=(
            int(section.get("count_min", base.count_range[0])),
            int(section.get("count_max", base.count_range[1])),
        ),
        seed=int(section.get("seed", base.seed)),
    )


def to_dict(cfg: RunConfig) -> dict:
    return {
        "run": {
            "mode": cfg.mode.value,
            "task_kind": "needle"
            if cfg.task_kind is QuestionKind.NEEDLE_CHOICE
            else "count",
            "output_dir": cfg.output_dir,
            "eval_every": cfg.eval_every,
            "eval_set_size": cfg.eval_set_size,
            "checkpoint_every": cfg.checkpoint_every,
            "max_turns": cfg.max_turns,
            **({"answer_turn": cfg.answer_turn} if cfg.answer_turn else {}),
            "train_set_size": cfg.train_set_size,
            "log_rollouts": cfg.log_rollouts,
            "sweep_budgets": list(cfg.sweep_budgets),
        },
        "train": {
            "seed": cfg.train.seed,
            "group_size": cfg.train.group_size,
            "groups_per_batch": cfg.train.groups_per_batch,
            "total_iterations": cfg.train.total_iterations,
            "learning_rate": cfg.train.learning_rate,
            "adam_beta1": cfg.train.adam_beta1,
            "adam_beta2": cfg.train.adam_beta2,
            "adam_eps": cfg.train.adam_eps,
            "weight_decay": cfg.train.weight_decay,
            "clip_ratio": cfg.train.clip_ratio,
            "use_clip": cfg.train.use_clip,
            "temperature": cfg.train.temperature,
        },
        "reward": {
            "kind": cfg.reward.kind.value,
            "point_weight": cfg.reward.point_weight,
            "match_radius": cfg.reward.match_radius,
        },
        "imaging": {
            "patch_size": cfg.imaging.patch_size,
            "merge": cfg.imaging.merge,
            "max_pixels": cfg.imaging.max_pixels,
            "feature_dim": cfg.imaging.feature_dim,
            "align": cfg.imaging.align,
        },
        "policy": {
            "bins": cfg.policy.bins,
            "hidden": cfg.policy.hidden,
            "init_scale": cfg.policy.init_scale,
        },
        "env": {
            "train": _gen_section(cfg.env_train),
            "eval_id": _gen_section(cfg.env_eval_id),
            "eval_ood": _gen_section(cfg.env_eval_ood),
        },
    }


def from_dict(data: dict) -> RunConfig:
    base = RunConfig()
    run = data.get("run", {})
    train = data.get("train", {})
    reward = data.get("reward", {})
    imaging = data.get("imaging", {})
    policy = data.get("policy", {})
    env = data.get("env", {})

    try:
        mode = Mode(run.get("mode", base.mode.value))
    except ValueError as e:
        raise ConfigInvalid(f"unknown mode: {run.get('mode')!r}") from e
    kind_key = run.get("task_kind", "needle")
    if kind_key not in ("needle", "count"):
        raise ConfigInvalid(f"unknown task_kind: {kind_key!r}")
    lr = train.get("learning_rate", base.train.learning_rate)
    if lr == "fullscale":
        lr = FULLSCALE_LEARNING_RATE
    try:
        reward_kind = RewardKind(reward.get("kind", base.reward.kind.value))
    except ValueError as e:
        raise ConfigInvalid(f"unknown reward kind: {reward.get('kind')!r}") from e

    cfg = RunConfig(
        mode=mode,
        task_kind=QuestionKind.NEEDLE_CHOICE
        if kind_key == "needle"
        else QuestionKind.COUNT,
        output_dir=run.get("output_dir", base.output_dir),
        eval_every=int(run.get("eval_every", base.eval_every)),
        eval_set_size=int(run.get("eval_set_size", base.eval_set_size)),
        checkpoint_every=int(run.get("checkpoint_every", base.checkpoint_every)),
        max_turns=int(run.get("max_turns", base.max_turns)),
        answer_turn=(
            int(run["answer_turn"]) if run.get("answer_turn") is not None else None
        ),
        train_set_size=int(run.get("train_set_size", base.train_set_size)),
        log_rollouts=bool(run.get("log_rollouts", base.log_rollouts)),
        sweep_budgets=tuple(run.get("sweep_budgets", base.sweep_budgets)),
        train=TrainConfig(
            seed=int(train.get("seed", base.train.seed)),
            group_size=int(train.get("group_size", base.train.group_size)),
            groups_per_batch=int(
                train.get("groups_per_batch", base.train.groups_per_batch)
            ),
            total_iterations=int(
                train.get("total_iterations", base.train.total_iterations)
            ),
            learning_rate=float(lr),
            adam_beta1=float(train.get("adam_beta1", base.train.adam_beta1)),
            adam_beta2=float(train.get("adam_beta2", base.train.adam_beta2)),
            adam_eps=float(train.get("adam_eps", base.train.adam_eps)),
            weight_decay=float(train.get("weight_decay", base.train.weight_decay)),
            clip_ratio=float(train.get("clip_ratio", base.train.clip_ratio)),
            use_clip=bool(train.get("use_clip", base.train.use_clip)),
            temperature=float(train.get("temperature", base.train.temperature)),
        ),
        reward=RewardConfig(
            kind=reward_kind,
            point_weight=float(reward.get("point_weight", base.reward.point_weight)),
            match_radius=float(reward.get("match_radius", base.reward.match_radius)),
        ),
        imaging=ImagingConfig(
            patch_size=int(imaging.get("patch_size", base.imaging.patch_size)),
            merge=int(imaging.get("merge", base.imaging.merge)),
            max_pixels=int(imaging.get("max_pixels", base.imaging.max_pixels)),
            feature_dim=int(imaging.get("feature_dim", base.imaging.feature_dim)),
            align=int(imaging.get("align", base.imaging.align)),
        ),
        policy=PolicyConfig(
            bins=int(policy.get("bins", base.policy.bins)),
            hidden=int(policy.get("hidden", base.policy.hidden)),
            init_scale=float(policy.get("init_scale", base.policy.init_scale)),
        ),
        env_train=_gen_from(env.get("train", {}), base.env_train),
        env_eval_id=_gen_from(env.get("eval_id", {}), base.env_eval_id),
        env_eval_ood=_gen_from(env.get("eval_ood", {}), base.env_eval_ood),
    )
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigInvalid(f"cannot serialize {v!r} to TOML")


def dump_toml(cfg: RunConfig) -> str:
    """Emit the effective configuration as TOML text."""
    data = to_dict(cfg)
    lines: list[str] = []

    def emit(prefix: str, section: dict):
        lines.append(f"[{prefix}]")
        for k, v in section.items():
            if not isinstance(v, dict):
                lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
        for k, v in section.items():
            if isinstance(v, dict):
                emit(f"{prefix}.{k}", v)

    for name, section in data.items():
        emit(name, section)
    return "\n".join(lines)


def load_toml(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigInvalid(f"{path}: {e}") from e
    return from_dict(data)


def apply_overrides(
    cfg: RunConfig,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    max_pixels: Optional[int] = None,
    iters: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """The CLI's flag-beats-file rule."""
    if mode is not None:
        try:
            cfg = replace(cfg, mode=Mode(mode))
        except ValueError as e:
            raise ConfigInvalid(f"unknown mode: {mode!r}") from e
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    if max_pixels is not None:
        cfg = replace(cfg, imaging=replace(cfg.imaging, max_pixels=max_pixels))
    if iters is not None:
        cfg = replace(cfg, train=replace(cfg.train, total_iterations=iters))
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    return cfg
