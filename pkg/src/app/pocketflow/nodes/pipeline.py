"""Nodes behind the ``remos`` subcommands.

The store starts with ``run`` (a ``RunConfig``) and ``config`` (the process
``Config``); ``LoadSettingsNode`` adds ``settings`` and routes on the
subcommand. Every written file is appended to ``store["outputs"]``.
"""

from pathlib import Path

from loguru import logger

from app.config import Config
from app.models.configs import RunConfig, Settings, Stage
from app.models.errors import ConfigError, SkeletonMismatchError
from app.models.motion import InteractionPair, Skeleton, skeleton_preset
from app.pocketflow.nodes.base import BaseNode, Store
from app.services.diffusion import (
    DiffusionSchedule,
    reactor_sequence,
    sample_sequence,
    schedule_from_config,
)
from app.services.evaluation import compare_motions, evaluate_model
from app.services.inspection import (
    loss_curve_records,
    mask_records,
    parameter_records,
    schedule_records,
    trajectory_records,
    write_csv,
)
from app.services.motion_io import (
    load_dataset,
    load_edit_constraint,
    load_motion,
    save_dataset,
    save_motion,
)
from app.services.synthetic import generate_pairs, windows_from_pairs
from app.services.trainer import (
    TrainingState,
    inference_denoiser,
    load_checkpoint,
    read_training_log,
    train_stage,
)
from app.utils.settings_file import build_settings, read_settings

INSPECT_TARGETS = ("schedule", "masks", "trajectory", "params", "loss-curve", "config")
DEFAULT_INSPECT = ("schedule", "params", "config")


def data_dir(store: Store) -> Path:
    settings: Settings = store["settings"]
    config: Config = store["config"]
    return settings.data_dir or config.data_dir


def checkpoint_dir(store: Store) -> Path:
    settings: Settings = store["settings"]
    run: RunConfig = store["run"]
    return settings.checkpoint_dir or run.out_dir / "checkpoints"


def checkpoint_path(store: Store, stage: Stage) -> Path:
    settings: Settings = store["settings"]
    explicit = {"body": settings.body_checkpoint, "hands": settings.hand_checkpoint}
    return explicit.get(stage) or checkpoint_dir(store) / f"{stage}.ckpt.json"


def training_log_path(store: Store, stage: Stage) -> Path:
    return checkpoint_dir(store) / f"{stage}.log.jsonl"


def _require(settings: Settings, key: str, subcommand: str) -> Path:
    value = getattr(settings, key)
    if value is None:
        msg = f"{subcommand} needs the '{key}' setting"
        raise ConfigError(msg)
    return value


class LoadSettingsNode(BaseNode):
    """Resolve the settings file, overrides and seed; route on the subcommand."""

    required = ("run", "config")

    def exec(self, store: Store) -> Store:
        run: RunConfig = store["run"]
        file_pairs = read_settings(run.config_path) if run.config_path else {}
        store["settings"] = build_settings(file_pairs, run.overrides, seed=run.seed)
        store["action"] = run.subcommand
        return store


class GenerateDataNode(BaseNode):
    """``gen-data``: synthetic pairs as motion files plus a manifest."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        config: Config = store["config"]
        pairs = generate_pairs(settings.synth, workers=config.threads)
        split, assignment = windows_from_pairs(pairs, settings.synth)
        manifest = save_dataset(pairs, assignment, settings.synth, data_dir(store))
        self.record_output(store, manifest)
        store["dataset"] = {"train": len(split.train), "test": len(split.test)}
        store["action"] = "success"
        return store


def _load_stage(store: Store, stage: Stage) -> TrainingState:
    return load_checkpoint(checkpoint_path(store, stage), stage)


class TrainNode(BaseNode):
    """``train``: one cascade stage, checkpoint and JSON-lines log."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        config = settings.train_config()
        split, _ = load_dataset(data_dir(store))
        body = None
        if config.stage == "hands" and config.mask_policy == "synthesized":
            body = inference_denoiser(_load_stage(store, "body"))

        target = checkpoint_path(store, config.stage)
        log_path = training_log_path(store, config.stage)
        state = None
        if settings.resume and target.is_file():
            state = load_checkpoint(target, config.stage)
            self.logger.info(
                f"Resuming {config.stage} training from epoch {state.epoch}"
            )
        else:
            log_path.unlink(missing_ok=True)

        state = train_stage(
            split.train,
            config,
            body_denoiser=body,
            state=state,
            log_path=log_path,
            checkpoint_path=target,
        )
        self.record_output(store, target)
        self.record_output(store, log_path)
        store["training"] = {
            "stage": state.stage,
            "epoch": state.epoch,
            "step": state.step,
            "loss": state.history[-1].total if state.history else None,
        }
        store["action"] = "success"
        return store


class LoadConstraintNode(BaseNode):
    """``edit``: read the constraint file, then hand over to sampling."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        constraint = load_edit_constraint(_require(settings, "constraint", "edit"))
        if constraint.is_empty():
            self.logger.warning("The edit constraint controls nothing")
        store["edit"] = constraint
        store["action"] = "success"
        return store


def _cascade(
    store: Store, skeleton: Skeleton
) -> tuple[TrainingState, TrainingState | None]:
    """The trained stages to sample with: body and hands, or the joint stage."""
    settings: Settings = store["settings"]
    hands = None
    if not settings.cascade:
        body = _load_stage(store, "joint")
    else:
        body = _load_stage(store, "body")
        if not settings.body_only:
            path = checkpoint_path(store, "hands")
            if path.is_file() or settings.hand_checkpoint is not None:
                hands = _load_stage(store, "hands")
            else:
                logger.warning(
                    f"No hand checkpoint at {path}; sampling the body only"
                )
    for state in (body, hands):
        if state is None:
            continue
        trained = state.model.config
        if (trained.num_body_joints, trained.num_hand_joints) != (
            skeleton.num_body_joints,
            skeleton.num_hand_joints,
        ):
            msg = (
                f"the {state.stage} checkpoint was trained for "
                f"{trained.num_body_joints} body and {trained.num_hand_joints} "
                f"hand joints, the motion has "
                f"{skeleton.num_body_joints} and {skeleton.num_hand_joints}"
            )
            raise SkeletonMismatchError(msg)
    if hands is not None and hands.model.num_steps != body.model.num_steps:
        msg = "the body and hand checkpoints use different diffusion step counts"
        raise ConfigError(msg)
    if hands is not None and hands.config.objective != body.config.objective:
        msg = (
            f"the body checkpoint was trained by {body.config.objective}, "
            f"the hand checkpoint by {hands.config.objective}"
        )
        raise ConfigError(msg)
    return body, hands


def _schedule(state: TrainingState) -> DiffusionSchedule:
    return schedule_from_config(state.config.diffusion)


class SampleNode(BaseNode):
    """``sample`` and ``edit``: the reactor for an actor motion file."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        run: RunConfig = store["run"]
        edit = store.get("edit")
        subcommand = "edit" if edit is not None else "sample"
        actor = load_motion(_require(settings, "actor", subcommand))
        body, hands = _cascade(store, actor.skeleton)
        window = body.model.config.window_length
        if hands is not None:
            window = min(window, hands.model.config.window_length)

        sample = sample_sequence(
            actor,
            inference_denoiser(body),
            None if hands is None else inference_denoiser(hands),
            _schedule(body),
            window_length=window,
            seed=settings.seed,
            guidance=settings.guidance,
            edit=edit,
            deterministic=settings.deterministic,
            mask_threshold=settings.mask_threshold,
            single_stage=not settings.cascade,
        )
        name = "edited.json" if edit is not None else "reactor.json"
        path = save_motion(reactor_sequence(sample, actor), run.out_dir / name)
        self.record_output(store, path)
        store["action"] = "success"
        return store


class EvaluateNode(BaseNode):
    """``eval``: compare two motion files, or score checkpoints on the test split."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        run: RunConfig = store["run"]
        if settings.generated is not None:
            reference = load_motion(_require(settings, "reference", "eval"))
            generated = load_motion(settings.generated, reference.skeleton)
            report = compare_motions(reference, generated, settings.eval.features)
        else:
            split, _ = load_dataset(data_dir(store))
            body, hands = _cascade(store, split.test.skeleton)
            report = evaluate_model(
                inference_denoiser(body),
                None if hands is None else inference_denoiser(hands),
                split.test,
                _schedule(body),
                settings.eval_config(),
                mask_threshold=settings.mask_threshold,
                single_stage=not settings.cascade,
                objective=body.config.objective,
            )
        path = run.out_dir / "metrics.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        self.record_output(store, path)
        store["metrics"] = report
        store["action"] = "success"
        return store


class InspectNode(BaseNode):
    """``inspect``: CSV and JSON dumps for external tools."""

    required = ("settings",)

    def exec(self, store: Store) -> Store:
        settings: Settings = store["settings"]
        run: RunConfig = store["run"]
        targets = run.inspect_targets or DEFAULT_INSPECT
        unknown = sorted(set(targets) - set(INSPECT_TARGETS))
        if unknown:
            msg = (
                f"unknown inspect targets {unknown}; "
                f"choose from {list(INSPECT_TARGETS)}"
            )
            raise ConfigError(msg)
        out = run.out_dir
        for target in targets:
            if target == "schedule":
                rows = schedule_records(schedule_from_config(settings.diffusion))
                self.record_output(store, write_csv(rows, out / "schedule.csv"))
            elif target == "masks":
                actor = load_motion(_require(settings, "actor", "inspect --masks"))
                reactor = load_motion(
                    _require(settings, "reference", "inspect --masks"), actor.skeleton
                )
                pair = InteractionPair(actor, reactor, actor.skeleton)
                rows = mask_records(pair, settings.mask_threshold)
                self.record_output(store, write_csv(rows, out / "masks.csv"))
            elif target == "trajectory":
                source = settings.generated or _require(
                    settings, "actor", "inspect --trajectory"
                )
                rows = trajectory_records(load_motion(source))
                self.record_output(store, write_csv(rows, out / "trajectory.csv"))
            elif target == "params":
                rows = parameter_records(
                    settings.denoiser,
                    skeleton_preset(settings.synth.skeleton_preset),
                    settings.synth.window_length,
                    settings.diffusion.num_steps,
                    cascade=settings.cascade,
                )
                self.record_output(store, write_csv(rows, out / "params.csv"))
            elif target == "loss-curve":
                log_path = training_log_path(store, settings.train_config().stage)
                if not log_path.is_file():
                    msg = f"no training log at {log_path}"
                    raise ConfigError(msg)
                history = read_training_log(log_path)
                rows = loss_curve_records(history)
                self.record_output(store, write_csv(rows, out / "loss_curve.csv"))
            else:
                path = out / "resolved_config.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(settings.model_dump_json(indent=2), encoding="utf-8")
                self.record_output(store, path)
        store["action"] = "success"
        return store
