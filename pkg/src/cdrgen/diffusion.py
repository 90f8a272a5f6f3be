"""Coupled diffusion over CDR types, positions, and orientations.

Three forward processes share one step counter: amino-acid types follow a
multinomial resampling process, alpha-carbon positions follow a Gaussian
process in normalized coordinates, and orientations follow an isotropic
Gaussian random walk on the rotation group. The reverse process runs the
denoising network at each step and draws the previous state from the
predicted distributions. Losses compare network outputs against the
posterior (types), the injected noise (positions), and the clean frames
(orientations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, evaluate_with_gradients, log, matmul, maximum_const, tsum
from .evaluation import aar, rmsd_ca
from .features import build_features, complex_view
from .network import DenoiserModel, ModelConfig, as_tensors, denoise_features
from .geometry import random_rotation, igso3_sample, scale_rotation
from .structure import AA1, ComplexInstance

TYPE_COUNT = 20
PROB_FLOOR = 1e-10


class DiffusionError(ValueError):
    """Raised when diffusion preconditions are violated."""


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass
class ScheduleConfig:
    """Noise schedule knobs for the three processes."""

    total_steps: int = 100
    pos_beta_start: float = 1e-4
    pos_beta_end: float = 0.05
    ori_beta_start: float = 1e-4
    ori_beta_end: float = 0.1
    type_beta_min: float = 1e-4
    type_beta_max: float = 0.12
    type_sharpness: float = 12.0

    def validate(self) -> None:
        if self.total_steps < 1:
            raise DiffusionError("total_steps must be at least 1")
        for name in ("pos_beta_start", "pos_beta_end", "ori_beta_start",
                     "ori_beta_end", "type_beta_min", "type_beta_max"):
            value = float(getattr(self, name))
            if not 0.0 < value < 1.0:
                raise DiffusionError(f"{name} must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, payload: dict) -> "ScheduleConfig":
        return cls(**payload)


@dataclass
class ScheduleSet:
    """Per-step betas and their exact cumulative products.

    Arrays are indexed by step - 1; ``alpha_bar(process, 0)`` is 1 by
    convention.
    """

    total_steps: int
    beta_type: np.ndarray
    beta_pos: np.ndarray
    beta_ori: np.ndarray
    alpha_bar_type: np.ndarray = field(init=False)
    alpha_bar_pos: np.ndarray = field(init=False)
    alpha_bar_ori: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        for name in ("beta_type", "beta_pos", "beta_ori"):
            beta = np.asarray(getattr(self, name), dtype=np.float64)
            if beta.shape != (self.total_steps,):
                raise DiffusionError(f"{name} must have one entry per step")
            if np.any(beta <= 0.0) or np.any(beta >= 1.0):
                raise DiffusionError(f"{name} entries must lie in (0, 1)")
            setattr(self, name, beta)
        self.alpha_bar_type = np.cumprod(1.0 - self.beta_type)
        self.alpha_bar_pos = np.cumprod(1.0 - self.beta_pos)
        self.alpha_bar_ori = np.cumprod(1.0 - self.beta_ori)

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.total_steps:
            raise DiffusionError(
                f"step {t} outside [1, {self.total_steps}]"
            )

    def beta(self, process: str, t: int) -> float:
        self._check_step(t)
        return float(getattr(self, f"beta_{process}")[t - 1])

    def alpha_bar(self, process: str, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(getattr(self, f"alpha_bar_{process}")[t - 1])


def schedules_from_betas(beta_type, beta_pos, beta_ori) -> ScheduleSet:
    """Build a ScheduleSet from explicit beta sequences of equal length."""
    beta_type = np.asarray(beta_type, dtype=np.float64)
    if beta_type.ndim != 1:
        raise DiffusionError("beta sequences must be one-dimensional")
    return ScheduleSet(
        total_steps=beta_type.shape[0],
        beta_type=beta_type,
        beta_pos=np.asarray(beta_pos, dtype=np.float64),
        beta_ori=np.asarray(beta_ori, dtype=np.float64),
    )


def make_schedules(config: ScheduleConfig | None = None) -> ScheduleSet:
    """Standard schedules: linear position/orientation betas, sigmoid types.

    The sigmoid type schedule must push the cumulative type signal below
    0.01 at the final step so step T draws are near-uniform.
    """
    config = ScheduleConfig() if config is None else config
    config.validate()
    steps = config.total_steps
    grid = (np.arange(1, steps + 1) - 0.5) / steps
    logistic = 1.0 / (1.0 + np.exp(-config.type_sharpness * (grid - 0.5)))
    beta_type = config.type_beta_min + (
        config.type_beta_max - config.type_beta_min
    ) * logistic
    schedules = ScheduleSet(
        total_steps=steps,
        beta_type=beta_type,
        beta_pos=np.linspace(config.pos_beta_start, config.pos_beta_end, steps),
        beta_ori=np.linspace(config.ori_beta_start, config.ori_beta_end, steps),
    )
    if schedules.alpha_bar_type[-1] >= 0.01:
        raise DiffusionError(
            "type schedule leaves too much signal at the final step "
            f"(cumulative alpha {schedules.alpha_bar_type[-1]:.4f} >= 0.01)"
        )
    return schedules


# ---------------------------------------------------------------------------
# Coordinate normalization
# ---------------------------------------------------------------------------


@dataclass
class CoordinateNormalizer:
    """Translation to the CDR anchor centroid plus a fixed uniform scale."""

    origin: np.ndarray
    scale: float = 10.0

    @classmethod
    def from_instance(cls, instance: ComplexInstance,
                      scale: float = 10.0) -> "CoordinateNormalizer":
        """Center on the two context residues flanking the CDR.

        Falls back to the centroid of all context residues when the CDR
        touches a chain end so an anchor is missing.
        """
        if scale <= 0:
            raise DiffusionError("scale must be positive")
        n = len(instance)
        cdr = instance.cdr_indices
        context = np.setdiff1d(np.arange(n), cdr)
        if context.size == 0:
            raise DiffusionError("instance has no context residues")
        ca = instance.ca_array()
        chains = instance.chain_ordinals()
        cdr_chain = chains[cdr[0]]
        before = int(cdr[0]) - 1
        after = int(cdr[-1]) + 1
        has_before = before >= 0 and chains[before] == cdr_chain
        has_after = after < n and chains[after] == cdr_chain
        if has_before and has_after:
            origin = 0.5 * (ca[before] + ca[after])
        else:
            origin = ca[context].mean(axis=0)
        return cls(origin=origin.astype(np.float64), scale=float(scale))

    def normalize(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.origin) / self.scale

    def denormalize(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.float64) * self.scale + self.origin

    def to_dict(self) -> dict:
        return {"origin": [float(v) for v in self.origin],
                "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, payload: dict) -> "CoordinateNormalizer":
        return cls(origin=np.array(payload["origin"], dtype=np.float64),
                   scale=float(payload["scale"]))


# ---------------------------------------------------------------------------
# States and forward processes
# ---------------------------------------------------------------------------


@dataclass
class DiffusionState:
    """Noised CDR at one step: types, normalized positions, orientations."""

    types: np.ndarray  # (m,) int
    ca: np.ndarray  # (m, 3) normalized coordinates
    frames: np.ndarray  # (m, 3, 3)
    t: int

    def validate(self) -> None:
        m = self.types.shape[0]
        if self.ca.shape != (m, 3) or self.frames.shape != (m, 3, 3):
            raise DiffusionError("state arrays disagree on CDR length")
        if self.types.min(initial=0) < 0 or self.types.max(initial=0) >= TYPE_COUNT:
            raise DiffusionError("state types outside the 20-letter alphabet")
        if not np.isfinite(self.ca).all():
            raise DiffusionError("state positions must be finite")
        eye = np.eye(3)
        gram = np.einsum("mji,mjk->mik", self.frames, self.frames)
        if np.abs(gram - eye).max() > 1e-6:
            raise DiffusionError("state frames must be orthonormal")


def forward_type(s0: np.ndarray, t: int, schedules: ScheduleSet,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw noised types: keep with probability alpha-bar, else uniform."""
    abar = schedules.alpha_bar("type", t)
    s0 = np.asarray(s0)
    probs = np.full((s0.shape[0], TYPE_COUNT), (1.0 - abar) / TYPE_COUNT)
    probs[np.arange(s0.shape[0]), s0] += abar
    return sample_categorical(probs, rng)


def forward_type_single_step(s_prev: np.ndarray, t: int,
                             schedules: ScheduleSet,
                             rng: np.random.Generator) -> np.ndarray:
    """One transition: resample uniformly with probability beta."""
    beta = schedules.beta("type", t)
    s_prev = np.asarray(s_prev)
    resample = rng.random(s_prev.shape[0]) < beta
    fresh = rng.integers(0, TYPE_COUNT, s_prev.shape[0])
    return np.where(resample, fresh, s_prev)


def forward_position(x0: np.ndarray, t: int, schedules: ScheduleSet,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noised positions and the standard normal draw that produced them."""
    abar = schedules.alpha_bar("pos", t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps, eps


def forward_orientation(o0: np.ndarray, t: int, schedules: ScheduleSet,
                        rng: np.random.Generator) -> np.ndarray:
    """Noised orientations around the angle-scaled clean frames."""
    abar = schedules.alpha_bar("ori", t)
    o0 = np.asarray(o0, dtype=np.float64)
    mean = scale_rotation(o0, np.sqrt(abar))
    return igso3_sample(mean, 1.0 - abar, rng,
                        size=o0.shape[0] if o0.ndim == 3 else None)


def sample_categorical(probs: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Row-wise categorical draws via inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((probs.shape[0], 1))
    return (u > cdf).sum(axis=1).astype(np.int64)


def type_posterior(s_t: np.ndarray, s0: np.ndarray, t: int,
                   schedules: ScheduleSet) -> np.ndarray:
    """Posterior over the previous types given noised and clean types.

    Proportional to the product of the single-step likelihood of s_t and
    the closed-form marginal of the candidate at step t - 1, normalized
    over the 20 types.
    """
    schedules._check_step(t)
    beta = schedules.beta("type", t)
    abar_prev = schedules.alpha_bar("type", t - 1)
    s_t = np.asarray(s_t)
    s0 = np.asarray(s0)
    m = s_t.shape[0]
    rows = np.arange(m)
    step = np.full((m, TYPE_COUNT), beta / TYPE_COUNT)
    step[rows, s_t] += 1.0 - beta
    marginal = np.full((m, TYPE_COUNT), (1.0 - abar_prev) / TYPE_COUNT)
    marginal[rows, s0] += abar_prev
    product = step * marginal
    return product / product.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    type_loss: float
    pos_loss: float
    ori_loss: float
    total: float

    def as_row(self) -> dict[str, float]:
        return {
            "L_type": self.type_loss,
            "L_pos": self.pos_loss,
            "L_ori": self.ori_loss,
            "total": self.total,
        }


def loss_type(predicted: Tensor, posterior: np.ndarray) -> Tensor:
    """Mean KL divergence from the posterior to the predicted rows.

    Predicted probabilities are floored at 1e-10 before the logarithm.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    entropy = float(
        np.where(posterior > 0.0, posterior * np.log(
            np.where(posterior > 0.0, posterior, 1.0)), 0.0).sum()
    )
    cross = tsum(Tensor(posterior) * log(maximum_const(predicted, PROB_FLOOR)))
    m = posterior.shape[0]
    return (Tensor(np.asarray(entropy)) - cross) * (1.0 / m)


def loss_pos(eps: np.ndarray, eps_hat: Tensor) -> Tensor:
    """Mean squared norm of the position-noise prediction error."""
    diff = eps_hat - Tensor(np.asarray(eps, dtype=np.float64))
    return tsum(diff * diff) * (1.0 / eps.shape[0])


def loss_ori(o0: np.ndarray, o_hat: Tensor) -> Tensor:
    """Mean squared Frobenius distance of the relative rotation from I."""
    o0 = np.asarray(o0, dtype=np.float64)
    m = o0.shape[0]
    rel = matmul(Tensor(np.swapaxes(o0, 1, 2)), o_hat) - Tensor(
        np.tile(np.eye(3), (m, 1, 1))
    )
    return tsum(rel * rel) * (1.0 / m)


# ---------------------------------------------------------------------------
# Training-side composition
# ---------------------------------------------------------------------------


@dataclass
class NoiseRecord:
    """A noised CDR plus everything the losses need to score it."""

    state: DiffusionState
    clean_types: np.ndarray
    clean_positions: np.ndarray  # normalized
    clean_frames: np.ndarray
    position_noise: np.ndarray


def noise_cdr(instance: ComplexInstance, t: int, schedules: ScheduleSet,
              normalizer: CoordinateNormalizer,
              rng: np.random.Generator) -> NoiseRecord:
    """Apply the three forward processes to the CDR of one complex."""
    schedules._check_step(t)
    idx = instance.cdr_indices
    s0 = instance.aa_array()[idx]
    x0 = normalizer.normalize(instance.ca_array()[idx])
    o0 = instance.frame_array()[idx]
    s_t = forward_type(s0, t, schedules, rng)
    x_t, eps = forward_position(x0, t, schedules, rng)
    o_t = forward_orientation(o0, t, schedules, rng)
    state = DiffusionState(types=s_t, ca=x_t, frames=o_t, t=t)
    return NoiseRecord(
        state=state,
        clean_types=s0,
        clean_positions=x0,
        clean_frames=o0,
        position_noise=eps,
    )


def loss_terms(
    data,
    record: NoiseRecord,
    params: dict[str, Tensor],
    config: ModelConfig,
    schedules: ScheduleSet,
) -> tuple[Tensor, Tensor, Tensor]:
    """The three loss Tensors for one featurized noise record."""
    predicted, eps_hat, o_hat = denoise_features(data, params, config)
    posterior = type_posterior(record.state.types, record.clean_types,
                               record.state.t, schedules)
    return (
        loss_type(predicted, posterior),
        loss_pos(record.position_noise, eps_hat),
        loss_ori(record.clean_frames, o_hat),
    )


def featurize_record(instance: ComplexInstance, record: NoiseRecord,
                     normalizer: CoordinateNormalizer, config: ModelConfig):
    view = complex_view(instance, origin=normalizer.origin,
                        scale=normalizer.scale, state=record.state)
    return build_features(view, config.features,
                          total_steps=config.total_steps)


def total_loss(model: DenoiserModel, instance: ComplexInstance, t: int,
               rng: np.random.Generator,
               schedules: ScheduleSet | None = None,
               normalizer: CoordinateNormalizer | None = None) -> LossBreakdown:
    """Noise the CDR, run the denoiser, and report the three losses."""
    schedules = make_schedules() if schedules is None else schedules
    if schedules.total_steps != model.config.total_steps:
        raise DiffusionError("schedule and model disagree on step count")
    normalizer = (CoordinateNormalizer.from_instance(instance)
                  if normalizer is None else normalizer)
    breakdown, _ = loss_with_gradients(model.config, model.params, instance,
                                       t, schedules, normalizer, rng,
                                       compute_gradients=False)
    return breakdown


def loss_with_gradients(
    config: ModelConfig,
    params: dict[str, np.ndarray],
    instance: ComplexInstance,
    t: int,
    schedules: ScheduleSet,
    normalizer: CoordinateNormalizer,
    rng: np.random.Generator,
    compute_gradients: bool = True,
) -> tuple[LossBreakdown, dict[str, np.ndarray] | None]:
    """One training evaluation: sample noise, score it, differentiate."""
    record = noise_cdr(instance, t, schedules, normalizer, rng)
    data = featurize_record(instance, record, normalizer, config)
    parts: dict[str, float] = {}

    def expression(p: dict[str, Tensor]) -> Tensor:
        l_type, l_pos, l_ori = loss_terms(data, record, p, config, schedules)
        parts["type"] = float(l_type.data)
        parts["pos"] = float(l_pos.data)
        parts["ori"] = float(l_ori.data)
        return l_type + l_pos + l_ori

    tensors = as_tensors(params, requires_grad=compute_gradients)
    if compute_gradients:
        total, grads = evaluate_with_gradients(expression, tensors)
    else:
        total = float(expression(tensors).data)
        grads = None
    breakdown = LossBreakdown(parts["type"], parts["pos"], parts["ori"],
                              total)
    return breakdown, grads


# ---------------------------------------------------------------------------
# Reverse process
# ---------------------------------------------------------------------------


def _reverse_once(
    state: DiffusionState,
    instance: ComplexInstance,
    model: DenoiserModel,
    schedules: ScheduleSet,
    normalizer: CoordinateNormalizer,
    rng: np.random.Generator,
):
    t = state.t
    if t < 1:
        raise DiffusionError("reverse_step requires t >= 1")
    schedules._check_step(t)
    output = model.denoise(instance, state, normalizer.origin,
                           normalizer.scale)

    new_types = sample_categorical(output.type_probs, rng)

    beta = schedules.beta("pos", t)
    abar = schedules.alpha_bar("pos", t)
    mean = (state.ca - (beta / np.sqrt(1.0 - abar)) * output.position_noise)
    mean /= np.sqrt(1.0 - beta)
    if t > 1:
        new_ca = mean + np.sqrt(beta) * rng.standard_normal(mean.shape)
        new_frames = igso3_sample(output.orientations,
                                  schedules.beta("ori", t), rng,
                                  size=state.types.shape[0])
    else:
        new_ca = mean
        new_frames = output.orientations.copy()

    new_state = DiffusionState(types=new_types, ca=new_ca,
                               frames=new_frames, t=t - 1)
    return new_state, output


def reverse_step(state: DiffusionState, instance: ComplexInstance,
                 model: DenoiserModel, schedules: ScheduleSet,
                 normalizer: CoordinateNormalizer,
                 rng: np.random.Generator) -> DiffusionState:
    """One generative step from t to t - 1; noise-free at the final step."""
    new_state, _ = _reverse_once(state, instance, model, schedules,
                                 normalizer, rng)
    return new_state


# ---------------------------------------------------------------------------
# Sampling and optimization workflows
# ---------------------------------------------------------------------------


@dataclass
class Design:
    """One generated CDR in angstrom coordinates."""

    types: np.ndarray  # (m,) int
    ca: np.ndarray  # (m, 3) angstroms
    frames: np.ndarray  # (m, 3, 3)
    confidence: np.ndarray  # (m,) max type probability at the final step

    @property
    def sequence(self) -> str:
        return "".join(AA1[i] for i in self.types)


@dataclass
class OptimizedDesign:
    design: Design
    aar: float
    rmsd: float


def _denoise_chain(state: DiffusionState, instance: ComplexInstance,
                   model: DenoiserModel, schedules: ScheduleSet,
                   normalizer: CoordinateNormalizer,
                   rng: np.random.Generator) -> Design:
    output = None
    while state.t >= 1:
        state, output = _reverse_once(state, instance, model, schedules,
                                      normalizer, rng)
    return Design(
        types=state.types,
        ca=normalizer.denormalize(state.ca),
        frames=state.frames,
        confidence=output.type_probs.max(axis=1),
    )


def sample(instance: ComplexInstance, model: DenoiserModel,
           schedules: ScheduleSet, count: int,
           rng: np.random.Generator,
           normalizer: CoordinateNormalizer | None = None,
           cdr_length: int | None = None) -> list[Design]:
    """Generate designs from the prior with the context held fixed.

    The designed length must equal the native CDR length: the context
    featurization rebuilds that many residues.
    """
    if count < 1:
        raise DiffusionError("count must be at least 1")
    m = instance.cdr_indices.size
    if cdr_length is not None and cdr_length != m:
        raise DiffusionError(
            f"requested CDR length {cdr_length} differs from the native "
            f"length {m}; variable-length sampling is unsupported"
        )
    if schedules.total_steps != model.config.total_steps:
        raise DiffusionError("schedule and model disagree on step count")
    normalizer = (CoordinateNormalizer.from_instance(instance)
                  if normalizer is None else normalizer)
    designs = []
    for _ in range(count):
        state = DiffusionState(
            types=rng.integers(0, TYPE_COUNT, m),
            ca=rng.standard_normal((m, 3)),
            frames=random_rotation(rng, size=m),
            t=schedules.total_steps,
        )
        designs.append(
            _denoise_chain(state, instance, model, schedules, normalizer, rng)
        )
    return designs


def optimize_antibody(instance: ComplexInstance, model: DenoiserModel,
                      schedules: ScheduleSet, t: int, count: int,
                      rng: np.random.Generator,
                      normalizer: CoordinateNormalizer | None = None
                      ) -> list[OptimizedDesign]:
    """Perturb the real CDR t steps forward, then denoise it back.

    Small t keeps designs close to the original; t = T reduces to de novo
    sampling. Each design is scored against the original CDR.
    """
    if not 1 <= t <= schedules.total_steps:
        raise DiffusionError(
            f"perturbation steps {t} outside [1, {schedules.total_steps}]"
        )
    if count < 1:
        raise DiffusionError("count must be at least 1")
    if schedules.total_steps != model.config.total_steps:
        raise DiffusionError("schedule and model disagree on step count")
    normalizer = (CoordinateNormalizer.from_instance(instance)
                  if normalizer is None else normalizer)
    idx = instance.cdr_indices
    native_seq = instance.cdr_sequence()
    native_ca = instance.ca_array()[idx]
    results = []
    for _ in range(count):
        record = noise_cdr(instance, t, schedules, normalizer, rng)
        design = _denoise_chain(record.state, instance, model, schedules,
                                normalizer, rng)
        results.append(
            OptimizedDesign(
                design=design,
                aar=aar(native_seq, design.sequence),
                rmsd=rmsd_ca(native_ca, design.ca),
            )
        )
    return results
