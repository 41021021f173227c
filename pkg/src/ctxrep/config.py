"""Flat key = value experiment configuration with a strict schema.

Lines hold one ``key = value`` pair; ``#`` starts a comment. Unknown keys are
rejected so typos fail loudly. Intervals are written ``a:b`` and lists are
comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .repulsion import PRESETS, RepulsionConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass
class ExperimentConfig:
    # mixture world
    world_modes: int = 8
    world_radius: float = 4.0
    world_sigma: float = 0.25
    world_gamma: float = 1.0
    world_steps: int = 64
    world_feedback: float = 0.5
    # prompts
    prompt_mode: int = 0
    prompt_strength: float = 10.0
    batch_size: int = 8
    # contextual repulsion
    repulsion_preset: str = ""
    repulsion_eta: float = 2.0
    repulsion_steps: int = 2
    repulsion_interval: tuple[float, float] = (0.0, 0.25)
    repulsion_normalize: bool = True
    repulsion_block_selector: str = "all"
    repulsion_target_stream: str = "text"
    # latent-space repulsion baseline
    latent_eta: float = 0.65
    latent_steps: int = 2
    latent_interval: tuple[float, float] = (0.0, 1.0)
    latent_normalize: bool = True
    # annealed-noise baseline
    cads_scale: float = 0.5
    cads_tau1: float = 0.3
    cads_tau2: float = 0.8
    cads_psi: float = 1.0
    cads_interval: tuple[float, float] = (0.0, 1.0)
    # execution
    method: str = "contextual"
    seeds: int = 20
    seed_start: int = 0
    jobs: int = 1
    output: str = ""
    # sweep axes
    sweep_batch_sizes: tuple[int, ...] = (4, 8, 16)
    sweep_intervals: tuple[tuple[float, float], ...] = (
        (0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0), (0.0, 1.0),
    )
    sweep_block_groups: tuple[str, ...] = ("first_third", "middle_third", "last_third", "all")
    # toy transformer
    toy_text_tokens: int = 8
    toy_image_tokens: int = 16
    toy_dim: int = 16
    toy_dual_blocks: int = 4
    toy_single_blocks: int = 2
    toy_heads: int = 2
    toy_seed: int = 0
    toy_prompt_id: int = 0
    toy_batch: int = 4
    toy_step_index: int = 0
    toy_total_steps: int = 1
    output_snapshots: str = "toy_snapshots.csv"
    output_report: str = "toy_report.json"

    def __post_init__(self):
        self.explicit_keys: set[str] = set()


def _parse_interval(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"interval must look like a:b, got {text!r}")
    try:
        a, b = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"bad interval {text!r}") from exc
    return (a, b)


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc
    raise ConfigError(f"{name}: unsupported type")


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text, rejecting unknown keys and unknown presets."""
    field_map = {f.name: f for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    explicit: set[str] = set()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in field_map:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in explicit:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        explicit.add(key)

        default = getattr(cfg, key)
        if key in ("repulsion_interval", "latent_interval", "cads_interval"):
            value = _parse_interval(raw)
        elif key == "sweep_batch_sizes":
            value = tuple(_parse_value(key, item, int) for item in raw.split(",") if item.strip())
        elif key == "sweep_intervals":
            value = tuple(_parse_interval(item.strip()) for item in raw.split(",") if item.strip())
        elif key == "sweep_block_groups":
            value = tuple(item.strip() for item in raw.split(",") if item.strip())
        else:
            value = _parse_value(key, raw, type(default))
        setattr(cfg, key, value)

    if cfg.repulsion_preset and cfg.repulsion_preset not in PRESETS:
        raise ConfigError(f"unknown repulsion preset {cfg.repulsion_preset!r}")
    cfg.explicit_keys = explicit
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def repulsion_from_config(cfg: ExperimentConfig) -> RepulsionConfig:
    """Contextual repulsion settings: preset values first, explicit keys win."""
    explicit = getattr(cfg, "explicit_keys", set())
    if cfg.repulsion_preset:
        base = PRESETS[cfg.repulsion_preset]
        eta = cfg.repulsion_eta if "repulsion_eta" in explicit else base.eta
        steps = cfg.repulsion_steps if "repulsion_steps" in explicit else base.inner_steps
        interval = (
            cfg.repulsion_interval
            if "repulsion_interval" in explicit
            else base.timestep_interval
        )
    else:
        eta = cfg.repulsion_eta
        steps = cfg.repulsion_steps
        interval = cfg.repulsion_interval
    return RepulsionConfig(
        eta=eta,
        inner_steps=steps,
        timestep_interval=interval,
        block_selector=cfg.repulsion_block_selector,
        target_stream=cfg.repulsion_target_stream,
        gradient_normalization=cfg.repulsion_normalize,
    )


def latent_repulsion_from_config(cfg: ExperimentConfig) -> RepulsionConfig:
    return RepulsionConfig(
        eta=cfg.latent_eta,
        inner_steps=cfg.latent_steps,
        timestep_interval=cfg.latent_interval,
        gradient_normalization=cfg.latent_normalize,
    )
