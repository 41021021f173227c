"""Analytic rectified-flow sampler over a context-conditioned 2-D Gaussian mixture.

The generative model is exact: modes sit on a circle, the per-mode marginal of
the linear-interpolation path z_t = (1-t) x0 + t eps is Gaussian, so the
denoiser posterior and the velocity field have closed forms. A per-sample
context (logits over modes) conditions the mixture weights through a softmax
whose temperature plays the role of guidance: sharp prompts collapse the batch
onto one mode.

Each step, the raw context is enriched with an image-feedback term (the
centered per-mode log-likelihood of the sample's current latent), which is
what makes the contexts of identically-prompted samples comparable yet
distinct. Interventions hook in per step: contextual repulsion acts on the
enriched logits and its deltas persist in the context state, latent repulsion
acts on the positions directly, and the noise-injection baseline corrupts the
prompt upstream with an annealed schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import ContextBatch, rbf_kernel
from .repulsion import RepulsionConfig, fraction_in_interval, repulse
from .rng import derive_seed
from .vendi import average_pair_vendi, entropy_and_score

METHODS = ("none", "contextual", "latent", "cads")

_CADS_SALT = 0x63616473


@dataclass(frozen=True)
class MixtureWorld:
    """Conditional 2-D Gaussian mixture with modes on a circle.

    ``guidance_gamma`` is the softmax temperature applied to context logits;
    ``feedback_scale`` weights the per-step image-feedback enrichment of the
    context. ``context_dim`` equals ``n_modes``.
    """

    n_modes: int = 8
    radius: float = 4.0
    mode_sigma: float = 0.25
    guidance_gamma: float = 1.0
    n_steps: int = 64
    feedback_scale: float = 0.5

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (self.mode_sigma > 0.0):
            raise ValueError("mode_sigma must be positive")
        if self.guidance_gamma < 0.0:
            raise ValueError("guidance_gamma must be >= 0")
        if self.n_modes > 1:
            gap = 2.0 * self.radius * math.sin(math.pi / self.n_modes)
            if not (self.mode_sigma < gap / 6.0):
                raise ValueError(
                    f"mode_sigma {self.mode_sigma} too large for separable modes "
                    f"(needs < {gap / 6.0:.4f})"
                )

    @property
    def context_dim(self) -> int:
        return self.n_modes

    @property
    def mode_centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.n_modes) / self.n_modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True)
class SampleTrajectory:
    """One sample's integration record: times descend 1 -> 0, length T + 1.

    ``contexts[j]`` is the effective (enriched, post-intervention) context the
    generator consumed when stepping from ``times[j]``; the final row repeats
    the last consumed context.
    """

    times: np.ndarray
    latents: np.ndarray
    contexts: np.ndarray


@dataclass(frozen=True)
class RunMetrics:
    vendi_rbf: float
    mode_coverage: int
    off_manifold_rate: float
    mean_nearest_mode_distance: float
    avg_pair_vendi: float

    def as_dict(self) -> dict:
        return {
            "vendi_rbf": self.vendi_rbf,
            "mode_coverage": self.mode_coverage,
            "off_manifold_rate": self.off_manifold_rate,
            "mean_nearest_mode_distance": self.mean_nearest_mode_distance,
            "avg_pair_vendi": self.avg_pair_vendi,
        }


@dataclass(frozen=True)
class CadsParams:
    """Annealed prompt-noise baseline: corruption follows the (tau1, tau2)
    schedule on diffusion time with optional psi rescaling."""

    scale: float = 0.15
    tau1: float = 0.3
    tau2: float = 0.8
    psi: float = 1.0

    def corruption(self, t: float) -> float:
        """Clean fraction gamma_c(t): 1 below tau1, 0 above tau2, linear between."""
        if t <= self.tau1:
            return 1.0
        if t >= self.tau2:
            return 0.0
        return (self.tau2 - t) / (self.tau2 - self.tau1)


def conditional_weights(context: np.ndarray, gamma: float) -> np.ndarray:
    """softmax(gamma * context); shift-invariant in the logits."""
    logits = gamma * np.asarray(context, dtype=float)
    logits = logits - np.max(logits, axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / np.sum(weights, axis=-1, keepdims=True)


def _noise_scale_sq(world: MixtureWorld, t: float) -> float:
    return (1.0 - t) ** 2 * world.mode_sigma**2 + t * t


def _component_log_likelihood(world: MixtureWorld, z: np.ndarray, t: float) -> np.ndarray:
    """Rows: per-sample log N(z; (1-t) mu_k, s_t^2 I) over components."""
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    s2 = _noise_scale_sq(world, t)
    centers = (1.0 - t) * world.mode_centers
    diff = z2[:, None, :] - centers[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    return -sq / (2.0 * s2) - math.log(2.0 * math.pi * s2)


def enrichment(world: MixtureWorld, z: np.ndarray, t: float) -> np.ndarray:
    """Image feedback in logit space: centered negative half squared distances
    to the time-scaled mode centers.

    Deliberately omits the 1/s_t^2 likelihood precision so the feedback stays
    commensurate with prompt logits for the whole trajectory instead of
    dominating them as t -> 0.
    """
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    centers = (1.0 - t) * world.mode_centers
    diff = z2[:, None, :] - centers[None, :, :]
    affinity = -np.sum(diff * diff, axis=2) / 2.0
    out = affinity - np.mean(affinity, axis=1, keepdims=True)
    return out if np.asarray(z).ndim == 2 else out[0]


def _responsibilities(world: MixtureWorld, z2: np.ndarray, t: float, w2: np.ndarray) -> np.ndarray:
    log_lik = _component_log_likelihood(world, z2, t)
    with np.errstate(divide="ignore"):
        log_post = np.log(w2) + log_lik
    log_post = log_post - np.max(log_post, axis=1, keepdims=True)
    post = np.exp(log_post)
    return post / np.sum(post, axis=1, keepdims=True)


def _component_posterior_means(world: MixtureWorld, z2: np.ndarray, t: float) -> np.ndarray:
    s2 = _noise_scale_sq(world, t)
    shrink = (1.0 - t) * world.mode_sigma**2 / s2
    centers = (1.0 - t) * world.mode_centers
    return world.mode_centers[None, :, :] + shrink * (z2[:, None, :] - centers[None, :, :])


def _denoise_batch(world: MixtureWorld, z2: np.ndarray, t: float, w2: np.ndarray):
    resp = _responsibilities(world, z2, t, w2)
    x0 = np.sum(resp[:, :, None] * _component_posterior_means(world, z2, t), axis=1)
    return x0, resp


def _lagged_denoise(
    world: MixtureWorld, z2: np.ndarray, t: float, t_resp: float, w2: np.ndarray
) -> np.ndarray:
    """Denoiser pull with responsibilities evaluated at the step's arrival time.

    The earlier mode commitment cancels the discretization smear that plain
    same-time evaluation leaves near basin boundaries; the per-component
    posterior means stay at the departure time, so single-mode dynamics are
    untouched and the scheme remains first-order consistent with the same ODE.
    """
    resp = _responsibilities(world, z2, t_resp, w2)
    return np.sum(resp[:, :, None] * _component_posterior_means(world, z2, t), axis=1)


def posterior_denoiser(world: MixtureWorld, z: np.ndarray, t: float, weights: np.ndarray):
    """Closed-form E[x0 | z_t] and mode responsibilities for one latent.

    Underflow is handled in log space, so the responsibilities are always a
    valid distribution.
    """
    if not (t > 0.0):
        raise ValueError("t must be positive")
    z2 = np.asarray(z, dtype=float).reshape(1, 2)
    w2 = np.asarray(weights, dtype=float).reshape(1, world.n_modes)
    x0, resp = _denoise_batch(world, z2, t, w2)
    return x0[0], resp[0]


def log_density(world: MixtureWorld, z: np.ndarray, t: float, weights: np.ndarray) -> float:
    """log p_t(z) of the mixture marginal, via log-sum-exp."""
    log_lik = _component_log_likelihood(world, z, t)[0]
    with np.errstate(divide="ignore"):
        terms = np.log(np.asarray(weights, dtype=float)) + log_lik
    peak = np.max(terms)
    return float(peak + np.log(np.sum(np.exp(terms - peak))))


def mixture_score(world: MixtureWorld, z: np.ndarray, t: float, weights: np.ndarray) -> np.ndarray:
    """Analytic grad_z log p_t(z) = -sum_k r_k (z - (1-t) mu_k) / s_t^2."""
    _, resp = posterior_denoiser(world, z, t, weights)
    s2 = _noise_scale_sq(world, t)
    diff = np.asarray(z, dtype=float)[None, :] - (1.0 - t) * world.mode_centers
    return -np.sum(resp[:, None] * diff, axis=0) / s2


def one_hot_prompts(world: MixtureWorld, batch: int, mode: int = 0, strength: float = 10.0) -> np.ndarray:
    """The collapse-regime prompt: every sample asks for the same mode."""
    prompts = np.zeros((batch, world.n_modes))
    prompts[:, mode % world.n_modes] = strength
    return prompts


def seed_prompt(world: MixtureWorld, seed: int, strength: float = 10.0) -> np.ndarray:
    """A one-hot prompt whose mode is derived from the seed (for steering runs)."""
    prompt = np.zeros(world.n_modes)
    prompt[seed % world.n_modes] = strength
    return prompt


def sample_batch(
    world: MixtureWorld,
    prompts: np.ndarray,
    method: str = "none",
    *,
    seed: int = 0,
    repulsion: RepulsionConfig | None = None,
    cads: CadsParams | None = None,
    cads_interval: tuple[float, float] = (0.0, 1.0),
    context_hook=None,
    latent_hook=None,
) -> list[SampleTrajectory]:
    """Integrate the batch from t=1 to t=0 with the chosen intervention.

    Each of the T uniform steps moves z by -dt * (z - x0_hat)/t, where the
    denoiser pull uses arrival-time responsibilities (see
    :func:`_lagged_denoise`). ``contextual`` repels the batch of enriched
    context logits and keeps the deltas as context state; ``latent`` repels
    the latent positions directly; ``cads`` corrupts the prompt with annealed
    seeded noise; ``none`` leaves the model alone. The optional hooks replace
    the context or latent at each step (used by the steering operator) and run
    after the method intervention.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    prompts = np.array(prompts, dtype=float)
    if prompts.ndim != 2 or prompts.shape[1] != world.n_modes:
        raise ValueError(f"prompts must have shape (B, {world.n_modes})")
    if method in ("contextual", "latent") and repulsion is None:
        raise ValueError(f"method {method!r} requires a repulsion config")
    if method == "cads" and cads is None:
        cads = CadsParams()

    batch = prompts.shape[0]
    t_steps = world.n_steps
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((batch, 2))
    cads_rng = np.random.default_rng(derive_seed(seed, _CADS_SALT))

    context_state = prompts.copy()
    times = 1.0 - np.arange(t_steps + 1) / t_steps
    latents = np.empty((t_steps + 1, batch, 2))
    contexts = np.empty((t_steps + 1, batch, world.n_modes))
    latents[0] = z

    for j in range(t_steps):
        t = times[j]
        dt = times[j] - times[j + 1]
        in_window = repulsion is not None and fraction_in_interval(
            j, t_steps, repulsion.timestep_interval
        )

        if method == "latent" and in_window:
            z = repulse(ContextBatch(z), repulsion).vectors
        if latent_hook is not None:
            z = latent_hook(j, t, z)

        base = context_state
        if method == "cads" and fraction_in_interval(j, t_steps, cads_interval):
            base = _cads_corrupt(prompts, t, cads, cads_rng)
        effective = base + world.feedback_scale * enrichment(world, z, t)
        if method == "contextual" and in_window:
            repelled = repulse(ContextBatch(effective), repulsion).vectors
            context_state = context_state + (repelled - effective)
            effective = repelled
        if context_hook is not None:
            effective = context_hook(j, t, effective)

        weights = conditional_weights(effective, world.guidance_gamma)
        t_resp = max(times[j + 1], times[t_steps - 1])
        x0 = _lagged_denoise(world, z, t, t_resp, weights)
        z = z - (dt / t) * (z - x0)

        contexts[j] = effective
        latents[j + 1] = z

    contexts[t_steps] = contexts[t_steps - 1]
    return [
        SampleTrajectory(
            times=times.copy(), latents=latents[:, i, :].copy(), contexts=contexts[:, i, :].copy()
        )
        for i in range(batch)
    ]


def _cads_corrupt(prompts: np.ndarray, t: float, cads: CadsParams, rng) -> np.ndarray:
    gamma_c = cads.corruption(t)
    noise = rng.standard_normal(prompts.shape)
    corrupted = math.sqrt(gamma_c) * prompts + cads.scale * math.sqrt(1.0 - gamma_c) * noise
    if cads.psi == 0.0:
        return corrupted
    mean_in = np.mean(prompts, axis=1, keepdims=True)
    std_in = np.std(prompts, axis=1, keepdims=True)
    mean_c = np.mean(corrupted, axis=1, keepdims=True)
    std_c = np.std(corrupted, axis=1, keepdims=True)
    safe_std = np.where(std_c > 0.0, std_c, 1.0)
    rescaled = (corrupted - mean_c) / safe_std * std_in + mean_in
    return cads.psi * rescaled + (1.0 - cads.psi) * corrupted


def evaluate(trajectories: list[SampleTrajectory], world: MixtureWorld) -> RunMetrics:
    """Diversity and fidelity metrics over the batch's final samples."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    finals = np.stack([tr.latents[-1] for tr in trajectories])
    batch = finals.shape[0]

    diff = finals[:, None, :] - world.mode_centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    nearest = np.argmin(dist, axis=1)
    nearest_dist = dist[np.arange(batch), nearest]
    on_manifold = nearest_dist <= 3.0 * world.mode_sigma

    coverage = int(np.unique(nearest[on_manifold]).size)
    off_rate = float(np.mean(~on_manifold))
    mean_dist = float(np.mean(nearest_dist))

    points = ContextBatch(finals)
    bandwidth = world.radius / 2.0
    vendi = entropy_and_score(rbf_kernel(points, bandwidth)).score
    if batch >= 2:
        pair = average_pair_vendi(points, "rbf", bandwidth=bandwidth)
    else:
        pair = 1.0
    return RunMetrics(
        vendi_rbf=float(vendi),
        mode_coverage=coverage,
        off_manifold_rate=off_rate,
        mean_nearest_mode_distance=mean_dist,
        avg_pair_vendi=float(pair),
    )
