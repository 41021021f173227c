"""Command-line front end: metrics, checks, simulations, sweeps, steering.

Exit codes: 0 on success, 2 on configuration or usage errors, 3 on numeric
check failures. Errors go to stderr as single-line JSON.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import gmmflow, steering, toydit
from .config import (
    ConfigError,
    ExperimentConfig,
    latent_repulsion_from_config,
    load_config,
    repulsion_from_config,
)
from .linalg import (
    ContextBatch,
    DegenerateVector,
    NonConvergence,
    cosine_kernel,
    rbf_kernel,
)
from .repulsion import NumericOverflow, RepulsionConfig, repulse
from .vendi import entropy_and_score, entropy_gradient

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

GRAD_CHECK_THRESHOLD = 1e-4


class _UsageError(ValueError):
    """Bad flags or malformed input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fail(message: str) -> None:
    print(json.dumps({"error": message}), file=sys.stderr)


def read_vector_csv(path: str) -> np.ndarray:
    """Read one sample per row under a dim0,dim1,... header."""
    try:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise _UsageError(f"cannot read {path!r}: {exc}") from exc
    if not rows:
        raise _UsageError(f"{path!r} is empty")
    header = rows[0]
    expected = [f"dim{i}" for i in range(len(header))]
    if header != expected:
        raise _UsageError(f"{path!r}: header must be dim0,dim1,..., got {header}")
    width = len(header)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise _UsageError(f"{path!r}: line {lineno} has {len(row)} fields, expected {width}")
        try:
            data.append([float(item) for item in row])
        except ValueError as exc:
            raise _UsageError(f"{path!r}: line {lineno}: {exc}") from exc
    if not data:
        raise _UsageError(f"{path!r} holds no samples")
    return np.array(data)


def write_vector_csv(path: str, vectors: np.ndarray) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"dim{i}" for i in range(vectors.shape[1])])
        for row in vectors:
            writer.writerow([repr(float(v)) for v in row])


def _world_from_config(cfg: ExperimentConfig) -> gmmflow.MixtureWorld:
    return gmmflow.MixtureWorld(
        n_modes=cfg.world_modes,
        radius=cfg.world_radius,
        mode_sigma=cfg.world_sigma,
        guidance_gamma=cfg.world_gamma,
        n_steps=cfg.world_steps,
        feedback_scale=cfg.world_feedback,
    )


def _cads_from_config(cfg: ExperimentConfig) -> gmmflow.CadsParams:
    return gmmflow.CadsParams(
        scale=cfg.cads_scale, tau1=cfg.cads_tau1, tau2=cfg.cads_tau2, psi=cfg.cads_psi
    )


def _toy_config(cfg: ExperimentConfig) -> toydit.ToyDiTConfig:
    return toydit.ToyDiTConfig(
        n_text_tokens=cfg.toy_text_tokens,
        n_image_tokens=cfg.toy_image_tokens,
        token_dim=cfg.toy_dim,
        n_dual_blocks=cfg.toy_dual_blocks,
        n_single_blocks=cfg.toy_single_blocks,
        attention_heads=cfg.toy_heads,
        weight_seed=cfg.toy_seed,
    )


def _run_one_simulation(args) -> dict:
    cfg, method, seed, run_id = args
    world = _world_from_config(cfg)
    prompts = gmmflow.one_hot_prompts(
        world, cfg.batch_size, mode=cfg.prompt_mode, strength=cfg.prompt_strength
    )
    kwargs = {}
    if method == "contextual":
        kwargs["repulsion"] = repulsion_from_config(cfg)
    elif method == "latent":
        kwargs["repulsion"] = latent_repulsion_from_config(cfg)
    elif method == "cads":
        kwargs["cads"] = _cads_from_config(cfg)
        kwargs["cads_interval"] = cfg.cads_interval
    trajectories = gmmflow.sample_batch(world, prompts, method, seed=seed, **kwargs)
    metrics = gmmflow.evaluate(trajectories, world)
    return {"run_id": run_id, "seed": seed, "method": method, **metrics.as_dict()}


def _map_runs(work: list, jobs: int) -> list:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one_simulation, work))
    return [_run_one_simulation(item) for item in work]


def _emit_lines(lines: list[str], output: str) -> None:
    if output:
        with open(output, "w") as handle:
            handle.write("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)


def _cmd_vendi(args) -> int:
    if args.kernel == "rbf" and args.bandwidth is None:
        raise _UsageError("--kernel rbf requires --bandwidth")
    vectors = read_vector_csv(args.input)
    try:
        batch = ContextBatch(vectors)
        if args.kernel == "cosine":
            kernel = cosine_kernel(batch)
        else:
            kernel = rbf_kernel(batch, args.bandwidth)
        value = entropy_and_score(kernel)
    except (DegenerateVector, ValueError) as exc:
        raise _UsageError(str(exc)) from exc
    print(json.dumps({"entropy": value.entropy, "score": value.score}))
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    worst = 0.0
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        vectors = rng.standard_normal((args.batch, args.dim))
        batch = ContextBatch(vectors)
        analytic = entropy_gradient(batch)

        fd = np.zeros_like(vectors)
        for i in range(args.batch):
            for j in range(args.dim):
                bump = np.zeros_like(vectors)
                bump[i, j] = args.fd_step
                high = entropy_and_score(cosine_kernel(ContextBatch(vectors + bump))).entropy
                low = entropy_and_score(cosine_kernel(ContextBatch(vectors - bump))).entropy
                fd[i, j] = (high - low) / (2.0 * args.fd_step)
        scale = float(np.max(np.abs(analytic)))
        err = float(np.max(np.abs(fd - analytic))) / max(scale, 1e-30)
        worst = max(worst, err)
    print(
        json.dumps(
            {
                "max_relative_error": worst,
                "batch": args.batch,
                "dim": args.dim,
                "seeds": args.seeds,
                "fd_step": args.fd_step,
            }
        )
    )
    if worst > GRAD_CHECK_THRESHOLD:
        _fail(f"max relative error {worst:.3e} exceeds {GRAD_CHECK_THRESHOLD}")
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_repulse(args) -> int:
    vectors = read_vector_csv(args.input)
    try:
        batch = ContextBatch(vectors)
        cfg = RepulsionConfig(
            eta=args.eta,
            inner_steps=args.steps,
            gradient_normalization=args.normalize,
        )
        updated = repulse(batch, cfg)
    except (DegenerateVector, ValueError) as exc:
        raise _UsageError(str(exc)) from exc
    write_vector_csv(args.output, updated.vectors)
    return EXIT_OK


def _toy_block_report(cfg: ExperimentConfig, repulsion: RepulsionConfig | None):
    model_cfg = _toy_config(cfg)
    weights = toydit.init_weights(model_cfg)
    prompts = [toydit.encode_prompt(model_cfg, cfg.toy_prompt_id) for _ in range(cfg.toy_batch)]
    images = np.stack(
        [toydit.seed_image_tokens(model_cfg, cfg.seed_start + i) for i in range(cfg.toy_batch)]
    )
    return toydit.forward_with_hooks(
        prompts,
        images,
        weights,
        repulsion,
        step_index=cfg.toy_step_index,
        total_steps=cfg.toy_total_steps,
    )


def _snapshot_score(snapshot: toydit.StreamSnapshot) -> float:
    return entropy_and_score(cosine_kernel(ContextBatch(snapshot.vectors))).score


def _cmd_toy_run(args) -> int:
    cfg = load_config(args.config)
    repulsion = repulsion_from_config(cfg)
    _, snaps_on = _toy_block_report(cfg, repulsion)
    _, snaps_off = _toy_block_report(cfg, None)

    toydit.write_snapshots_csv(snaps_on, cfg.output_snapshots, _toy_config(cfg))
    off_scores = {(s.block_index, s.stream): _snapshot_score(s) for s in snaps_off}
    lines = []
    for snap in snaps_on:
        lines.append(
            json.dumps(
                {
                    "block": snap.block_index,
                    "stream": snap.stream,
                    "vendi_with_repulsion": _snapshot_score(snap),
                    "vendi_without_repulsion": off_scores[(snap.block_index, snap.stream)],
                }
            )
        )
    with open(cfg.output_report, "w") as handle:
        handle.write("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    method = args.method or cfg.method
    if method not in gmmflow.METHODS:
        raise _UsageError(f"unknown method {method!r}")
    seeds = args.seeds if args.seeds is not None else cfg.seeds
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    work = [
        (cfg, method, cfg.seed_start + i, i)
        for i in range(seeds)
    ]
    records = _map_runs(work, jobs)
    _emit_lines([json.dumps(r) for r in records], args.output or cfg.output)
    return EXIT_OK


def _ablate_rows_gmm(cfg: ExperimentConfig, axis: str, jobs: int) -> tuple[list[str], list[dict]]:
    header = [
        "axis", "value", "seed",
        "vendi_rbf", "mode_coverage", "off_manifold_rate",
        "mean_nearest_mode_distance", "avg_pair_vendi",
    ]
    rows = []
    if axis == "timestep":
        values = cfg.sweep_intervals
    else:
        values = cfg.sweep_batch_sizes
    run_id = 0
    work = []
    labels = []
    for value in values:
        variant = copy.deepcopy(cfg)
        if axis == "timestep":
            variant.repulsion_interval = value
            variant.latent_interval = value
            variant.cads_interval = value
            variant.explicit_keys = set(cfg.explicit_keys) | {"repulsion_interval"}
            label = f"{value[0]:g}:{value[1]:g}"
        else:
            variant.batch_size = int(value)
            label = str(int(value))
        for i in range(cfg.seeds):
            work.append((variant, cfg.method, cfg.seed_start + i, run_id))
            labels.append(label)
            run_id += 1
    records = _map_runs(work, jobs)
    for label, record in zip(labels, records):
        rows.append(
            {
                "axis": axis,
                "value": label,
                "seed": record["seed"],
                "vendi_rbf": record["vendi_rbf"],
                "mode_coverage": record["mode_coverage"],
                "off_manifold_rate": record["off_manifold_rate"],
                "mean_nearest_mode_distance": record["mean_nearest_mode_distance"],
                "avg_pair_vendi": record["avg_pair_vendi"],
            }
        )
    return header, rows


def _ablate_rows_blocks(cfg: ExperimentConfig) -> tuple[list[str], list[dict]]:
    header = ["axis", "value", "seed", "text_vendi", "prompt_similarity"]
    rows = []
    base = repulsion_from_config(cfg)
    for group in cfg.sweep_block_groups:
        for i in range(cfg.seeds):
            seed = cfg.seed_start + i
            variant = copy.deepcopy(cfg)
            # vary weights and image noise together per seed
            variant.toy_seed = cfg.toy_seed + seed
            variant.seed_start = seed * 1000
            repulsion = RepulsionConfig(
                eta=base.eta,
                inner_steps=base.inner_steps,
                timestep_interval=base.timestep_interval,
                block_selector=group,
                target_stream=base.target_stream,
                gradient_normalization=base.gradient_normalization,
            )
            _, snaps = _toy_block_report(variant, repulsion)
            final = [s for s in snaps if s.stream == "text"][-1]
            prompt_vec = toydit.encode_prompt(
                _toy_config(variant), variant.toy_prompt_id
            ).tokens.reshape(-1)
            sims = [
                float(row @ prompt_vec / (np.linalg.norm(row) * np.linalg.norm(prompt_vec)))
                for row in final.vectors
            ]
            rows.append(
                {
                    "axis": "blocks",
                    "value": group,
                    "seed": seed,
                    "text_vendi": _snapshot_score(final),
                    "prompt_similarity": float(np.mean(sims)),
                }
            )
    return header, rows


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    if args.axis == "blocks":
        header, rows = _ablate_rows_blocks(cfg)
    else:
        header, rows = _ablate_rows_gmm(cfg, args.axis, jobs)
    output = args.output or cfg.output
    if not output:
        raise _UsageError("ablate requires an output path (--output or config `output`)")
    with open(output, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


def _cmd_steer(args) -> int:
    cfg = load_config(args.config)
    world = _world_from_config(cfg)
    spec = steering.SteeringSpec(alpha=args.alpha, space=args.space)
    trajectory = steering.steered_run(
        world, args.source_seed, args.target_seed, spec, prompt_strength=cfg.prompt_strength
    )
    output = args.output or cfg.output
    if not output:
        raise _UsageError("steer requires an output path (--output or config `output`)")
    with open(output, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "time", "zx", "zy"])
        for j, t in enumerate(trajectory.times):
            writer.writerow(
                [j, repr(float(t)), repr(float(trajectory.latents[j, 0])), repr(float(trajectory.latents[j, 1]))]
            )
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="ctxrep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vendi", help="entropy and score of a sample CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--kernel", choices=("cosine", "rbf"), default="cosine")
    p.add_argument("--bandwidth", type=float, default=None)
    p.set_defaults(func=_cmd_vendi)

    p = sub.add_parser("grad-check", help="analytic gradient vs central differences")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("repulse", help="apply the repulsion update to a sample CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=_cmd_repulse)

    p = sub.add_parser("toy-run", help="toy transformer forward with and without repulsion")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_toy_run)

    p = sub.add_parser("simulate", help="mixture-flow runs, one metrics JSON line per seed")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=gmmflow.METHODS, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ablate", help="sweep one axis, write a CSV of metrics")
    p.add_argument("--axis", choices=("timestep", "blocks", "batch"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("steer", help="blend a source run toward a target run")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--source-seed", type=int, required=True)
    p.add_argument("--target-seed", type=int, required=True)
    p.add_argument("--space", choices=steering.SPACES, default="contextual")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_steer)

    return parser


def run_command(argv) -> int:
    """Dispatch one CLI invocation, returning the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _fail(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse exits directly for --help; keep its code
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except (_UsageError, ConfigError) as exc:
        _fail(str(exc))
        return EXIT_USAGE
    except (NonConvergence, NumericOverflow) as exc:
        _fail(str(exc))
        return EXIT_NUMERIC
    except ValueError as exc:
        # domain validation (bad world geometry, degenerate inputs, ...)
        _fail(str(exc))
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
