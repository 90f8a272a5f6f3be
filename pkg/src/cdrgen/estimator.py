"""A scikit-learn style front door for the whole design workflow.

CdrDesigner wraps model construction, diffusion training, sampling, and
the perturb-then-denoise optimization loop behind the familiar
fit/sample/score surface. Hyperparameters live in the constructor so
``get_params`` and ``set_params`` work with sklearn tooling; everything
learned during ``fit`` lands in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import (
    GradcheckError,
    OptimizerConfig,
    OptimizerState,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)
from .config import OptimizerSettings, seed_streams
from .diffusion import (
    CoordinateNormalizer,
    LossBreakdown,
    ScheduleConfig,
    loss_with_gradients,
    make_schedules,
    optimize_antibody,
    sample,
)
from .evaluation import aar
from .features import FeatureConfig
from .network import DenoiserModel, ModelConfig, as_tensors
from .structure import ComplexInstance


class CdrDesigner(BaseEstimator):
    """Sequence-structure co-design of one CDR via coupled diffusion.

    Parameters mirror the model and schedule configuration plus the
    training loop knobs. ``fit`` expects a list of ComplexInstance
    objects (a single instance is also accepted) and trains the
    denoising network; ``sample`` and ``optimize`` then generate designs
    for a fitted context.
    """

    def __init__(
        self,
        residue_width: int = 128,
        pair_width: int = 128,
        atom_width: int = 64,
        type_embed_width: int = 16,
        time_embed_width: int = 8,
        k_neighbors: int = 32,
        atom_cutoff: float = 5.0,
        atom_rbf_count: int = 32,
        pair_rbf_count: int = 64,
        vismp_blocks: int = 4,
        ipa_blocks: int = 2,
        ipa_heads: int = 4,
        ipa_channel: int = 16,
        ipa_points: int = 4,
        pos_blocks: int = 2,
        pos_readout: int = 4,
        total_steps: int = 100,
        schedule: ScheduleConfig | None = None,
        learning_rate: float = 1e-3,
        train_steps: int = 1000,
        t_batch: int = 1,
        lr_final_fraction: float = 1.0,
        adam_beta1: float = 0.9,
        adam_beta2: float = 0.999,
        adam_eps: float = 1e-8,
        warm_start: bool = False,
        seed: int = 0,
    ):
        self.residue_width = residue_width
        self.pair_width = pair_width
        self.atom_width = atom_width
        self.type_embed_width = type_embed_width
        self.time_embed_width = time_embed_width
        self.k_neighbors = k_neighbors
        self.atom_cutoff = atom_cutoff
        self.atom_rbf_count = atom_rbf_count
        self.pair_rbf_count = pair_rbf_count
        self.vismp_blocks = vismp_blocks
        self.ipa_blocks = ipa_blocks
        self.ipa_heads = ipa_heads
        self.ipa_channel = ipa_channel
        self.ipa_points = ipa_points
        self.pos_blocks = pos_blocks
        self.pos_readout = pos_readout
        self.total_steps = total_steps
        self.schedule = schedule
        self.learning_rate = learning_rate
        self.train_steps = train_steps
        self.t_batch = t_batch
        self.lr_final_fraction = lr_final_fraction
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.warm_start = warm_start
        self.seed = seed

    # -- configuration assembly -------------------------------------------

    def build_model_config(self) -> ModelConfig:
        config = ModelConfig(
            features=FeatureConfig(
                residue_width=self.residue_width,
                pair_width=self.pair_width,
                atom_width=self.atom_width,
                type_embed_width=self.type_embed_width,
                time_embed_width=self.time_embed_width,
                k_neighbors=self.k_neighbors,
                atom_cutoff=self.atom_cutoff,
                atom_rbf_count=self.atom_rbf_count,
                pair_rbf_count=self.pair_rbf_count,
            ),
            vismp_blocks=self.vismp_blocks,
            ipa_blocks=self.ipa_blocks,
            ipa_heads=self.ipa_heads,
            ipa_channel=self.ipa_channel,
            ipa_points=self.ipa_points,
            pos_blocks=self.pos_blocks,
            pos_readout=self.pos_readout,
            total_steps=self.total_steps,
        )
        config.validate()
        return config

    def build_schedule_config(self) -> ScheduleConfig:
        schedule = self.schedule
        if schedule is None:
            schedule = ScheduleConfig(total_steps=self.total_steps)
        if schedule.total_steps != self.total_steps:
            raise ValueError(
                "schedule total_steps must match the estimator total_steps"
            )
        return schedule

    def _optimizer_settings(self) -> OptimizerSettings:
        settings = OptimizerSettings(
            learning_rate=self.learning_rate,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            eps=self.adam_eps,
            train_steps=self.train_steps,
            t_batch=self.t_batch,
            lr_final_fraction=self.lr_final_fraction,
        )
        settings.validate()
        return settings

    # -- fitting ------------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this CdrDesigner is not fitted yet; call fit first"
            )

    @staticmethod
    def _as_instances(X) -> list[ComplexInstance]:
        if isinstance(X, ComplexInstance):
            return [X]
        instances = list(X)
        if not instances:
            raise ValueError("fit requires at least one complex")
        for item in instances:
            if not isinstance(item, ComplexInstance):
                raise TypeError(
                    f"expected ComplexInstance entries, got {type(item)!r}"
                )
        return instances

    def fit(self, X, y=None, step_callback=None):
        """Train the denoiser on a list of complexes.

        With ``warm_start`` the previous parameters, optimizer moments,
        and random streams carry over and training continues for another
        ``train_steps`` steps; otherwise everything is rebuilt from the
        estimator seed.
        """
        instances = self._as_instances(X)
        settings = self._optimizer_settings()
        schedules = make_schedules(self.build_schedule_config())

        fresh = not (self.warm_start and hasattr(self, "model_"))
        if fresh:
            config = self.build_model_config()
            streams = seed_streams(self.seed)
            init_seed = int(streams["init"].integers(0, 2**31 - 1))
            self.model_ = DenoiserModel.create(config, seed=init_seed)
            self.optimizer_state_ = OptimizerState()
            self.data_rng_ = streams["data"]
            self.diffusion_rng_ = streams["diffusion"]
            self.sampling_rng_ = streams["sampling"]
            self.loss_history_ = []
            self.steps_trained_ = 0
        config = self.model_.config
        schedules_steps = schedules.total_steps
        if schedules_steps != config.total_steps:
            raise ValueError("schedule and model disagree on step count")

        normalizers = [CoordinateNormalizer.from_instance(i)
                       for i in instances]
        tensors = as_tensors(self.model_.params)
        self.schedules_ = schedules
        start = self.steps_trained_
        planned = start + settings.train_steps
        for local in range(1, settings.train_steps + 1):
            # The ramp runs over global steps so a resumed fit applies the
            # same learning rate the uninterrupted run would have used.
            fraction = (start + local) / planned
            lr = settings.learning_rate * (
                1.0 + (settings.lr_final_fraction - 1.0) * fraction
            )
            opt_config = OptimizerConfig(
                learning_rate=lr,
                beta1=settings.beta1,
                beta2=settings.beta2,
                eps=settings.eps,
            )
            accumulated = None
            parts = np.zeros(4)
            draws = []
            for _ in range(settings.t_batch):
                pick = int(self.data_rng_.integers(0, len(instances)))
                t = int(self.diffusion_rng_.integers(1, schedules_steps + 1))
                draws.append({"complex": instances[pick].complex_id, "t": t})
                try:
                    breakdown, grads = loss_with_gradients(
                        config, self.model_.params, instances[pick], t,
                        schedules, normalizers[pick], self.diffusion_rng_,
                    )
                except GradcheckError as err:
                    error = FloatingPointError(
                        f"non-finite value at step {start + local}: {err}"
                    )
                    error.details = {"step": start + local, "batch": draws}
                    raise error from err
                scale = 1.0 / settings.t_batch
                if accumulated is None:
                    accumulated = {k: g * scale for k, g in grads.items()}
                else:
                    for key, grad in grads.items():
                        accumulated[key] += grad * scale
                parts += scale * np.array([
                    breakdown.type_loss, breakdown.pos_loss,
                    breakdown.ori_loss, breakdown.total,
                ])
            if not np.isfinite(parts).all():
                error = FloatingPointError(
                    f"non-finite loss at step {start + local}: {parts}"
                )
                error.details = {
                    "step": start + local,
                    "losses": [float(p) for p in parts],
                    "batch": draws,
                }
                raise error
            self.optimizer_state_ = optimizer_step(
                tensors, accumulated, self.optimizer_state_, opt_config
            )
            step_loss = LossBreakdown(*parts)
            self.steps_trained_ = start + local
            self.loss_history_.append((start + local, step_loss))
            if step_callback is not None:
                step_callback(start + local, step_loss)
        return self

    # -- generation -----------------------------------------------------------

    def sample(self, instance: ComplexInstance, count: int = 1,
               rng: np.random.Generator | None = None):
        """Draw designs from the prior for one fitted-context complex."""
        self._check_fitted()
        rng = self.sampling_rng_ if rng is None else rng
        return sample(instance, self.model_, self.schedules_, count, rng)

    def optimize(self, instance: ComplexInstance, t: int, count: int = 1,
                 rng: np.random.Generator | None = None):
        """Perturb the native CDR t steps and denoise it back."""
        self._check_fitted()
        rng = self.sampling_rng_ if rng is None else rng
        return optimize_antibody(instance, self.model_, self.schedules_, t,
                                 count, rng)

    def score(self, X, y=None) -> float:
        """Mean sequence recovery over one sampled design per complex."""
        self._check_fitted()
        instances = self._as_instances(X)
        values = []
        for instance in instances:
            design = self.sample(instance, count=1)[0]
            values.append(aar(instance.cdr_sequence(), design.sequence))
        return float(np.mean(values))

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        """Write parameters, optimizer moments, and run state to one file."""
        self._check_fitted()
        arrays = dict(self.model_.params)
        for name, moment in self.optimizer_state_.first_moment.items():
            arrays["opt.m." + name] = moment
        for name, moment in self.optimizer_state_.second_moment.items():
            arrays["opt.v." + name] = moment
        meta = {
            "model_config": self.model_.config.to_dict(),
            "schedule_config": self.build_schedule_config().to_dict(),
            "estimator_params": {
                k: v for k, v in self.get_params().items()
                if k != "schedule"
            },
            "optimizer_step": self.optimizer_state_.step,
            "steps_trained": self.steps_trained_,
            "rng_state": {
                "data": self.data_rng_.bit_generator.state,
                "diffusion": self.diffusion_rng_.bit_generator.state,
                "sampling": self.sampling_rng_.bit_generator.state,
            },
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "CdrDesigner":
        """Rebuild a fitted designer, random streams included."""
        arrays, meta = load_checkpoint(path)
        params = meta.get("estimator_params", {})
        schedule = ScheduleConfig.from_dict(meta["schedule_config"])
        designer = cls(**params, schedule=schedule)
        config = ModelConfig.from_dict(meta["model_config"])
        weights = {}
        first = {}
        second = {}
        for name, value in arrays.items():
            if name.startswith("opt.m."):
                first[name[len("opt.m."):]] = value
            elif name.startswith("opt.v."):
                second[name[len("opt.v."):]] = value
            else:
                weights[name] = value
        designer.model_ = DenoiserModel(config=config, params=weights)
        designer.optimizer_state_ = OptimizerState(
            step=int(meta["optimizer_step"]),
            first_moment=first,
            second_moment=second,
        )
        designer.steps_trained_ = int(meta["steps_trained"])
        designer.loss_history_ = []
        designer.schedules_ = make_schedules(schedule)
        states = meta["rng_state"]
        for name in ("data", "diffusion", "sampling"):
            generator = np.random.default_rng(0)
            generator.bit_generator.state = states[name]
            setattr(designer, f"{name}_rng_", generator)
        return designer
