#!/usr/bin/env python3
"""corrgarment - Rich CLI Interface.

Command-line pipeline from garment generation to task evaluation:
gen -> selfplay -> skel-train -> train -> refine -> annotate -> adapt -> demo -> eval.
Run with: python -m workflows.cli <command> --help
"""

import argparse
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from core.config import AppConfig, garment_ranges, load_config
from core.errors import CorrGarmentError, DatasetError
from core.storage import read_json, write_json
from modules.descriptor.field import forward
from modules.descriptor.network import load_model, save_model
from modules.garment.generator import GarmentMesh, generate_garment, load_garment, sample_spec, save_garment
from modules.garment.templates import Category
from modules.percept.observation import load_observation, save_observation
from modules.percept.render import render_partial
from modules.sim.primitives import INITIAL_KINDS, initial_state, random_self_play
from modules.sim.recorder import EpisodeRecorder
from modules.sim.state import SimState, build_constraints
from modules.skeleton.merger import load_skeleton_model, predict_skeleton, save_skeleton_model, train_skeleton
from modules.tasks.demonstration import (
    TaskKind,
    load_demonstration,
    load_recipe,
    resolve_recipe,
    save_demonstration,
)
from modules.tasks.heatmap import export_heatmap
from modules.training.adaptation import adapt_few_shot, annotate_landmark, load_annotations, save_annotations
from modules.training.dataset import CorrDataset, load_dataset
from modules.training.trainer import refine_c2f, train_correspondence, uniform_baseline
from validation.correspondence_eval import functional_distance, model_fields, score_model, skeleton_error
from workflows.batch_eval import TaskBench, save_report, save_timings

console = Console()


def show_header(command: str):
    """Display the application header."""
    console.print(Panel.fit(
        f"[bold blue]corrgarment {command}[/bold blue]\n"
        "[dim]Dense visual correspondence for garment manipulation[/dim]",
        border_style="blue"
    ))


def make_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
    )


def progress_callback(progress: Progress, task) -> Callable:
    return lambda *_: progress.advance(task)


def settings(args) -> AppConfig:
    return load_config(args.config, args.preset)


def garment_files(path: str) -> List[Path]:
    """Garment sidecars under a directory, or the one given file."""
    p = Path(path)
    if p.is_file():
        return [p.with_suffix(".json")]
    found = [s for s in sorted(p.glob("*.json"))
             if not s.name.endswith(".obs.json") and "spec" in read_json(str(s))]
    if not found:
        raise DatasetError(f"No garments in {path}")
    return found


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_gen(args) -> int:
    """Generate procedural garments of one category."""
    config = settings(args)
    ranges = garment_ranges(args.category)
    table = Table(title=f"{args.count} {args.category} garments")
    table.add_column("Mesh", style="cyan")
    table.add_column("Vertices", justify="right")
    table.add_column("Faces", justify="right")
    table.add_column("Area (m²)", justify="right")
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        spec = sample_spec(Category(args.category), rng, ranges, config.garment.edge_length,
                           seed=args.seed * 1000 + i, jitter=config.garment.jitter)
        mesh = generate_garment(spec, config.garment.min_vertices, config.garment.max_vertices)
        save_garment(mesh, args.out)
        table.add_row(mesh.mesh_id, str(mesh.vertex_count), str(len(mesh.faces)),
                      f"{mesh.canonical_area:.4f}")
    console.print(table)
    console.print(f"[green]✓[/green] Saved to [cyan]{args.out}[/cyan]")
    return 0


def self_play_garment(mesh: GarmentMesh, config: AppConfig, k: int, episodes: int, seed: int,
                      out: str, stride: int, on_episode: Optional[Callable] = None) -> None:
    """Flat observation plus ``episodes`` recorded self-play episodes of one garment."""
    constraints = build_constraints(mesh, config.sim)
    flat = SimState.flat(mesh, constraints)
    save_garment(mesh, out)
    save_observation(render_partial(flat, mesh, seed=seed, render=config.render),
                     str(Path(out) / f"{mesh.mesh_id}_flat.obs.ugmc"), extra={"state": "flat"})
    for e in range(episodes):
        episode_seed = seed * 1000 + e
        name = f"{mesh.mesh_id}_ep{e:04d}"
        recorder = EpisodeRecorder(mesh.mesh_id, episode_seed, stride)
        recorder.start(flat)
        actions = []
        state = random_self_play(flat.copy(), constraints, mesh, k, episode_seed, config.sim,
                                 config.render, hook=recorder.record, actions=actions)
        for action in actions:
            recorder.add_action(action)
        recorder.close(state)
        recorder.save(out, name, extra={"settled": state.settled})
        save_observation(render_partial(state, mesh, seed=episode_seed, render=config.render),
                         str(Path(out) / f"{name}.obs.ugmc"), extra={"state": "self-play"})
        if on_episode:
            on_episode()


def cmd_selfplay(args) -> int:
    """Record random pick-place episodes and their observations."""
    config = settings(args)
    files = garment_files(args.mesh)
    with make_progress() as progress:
        task = progress.add_task("Self-play episodes", total=len(files) * args.episodes)
        for sidecar in files:
            self_play_garment(load_garment(str(sidecar)), config, args.k, args.episodes, args.seed,
                              args.out, args.stride, progress_callback(progress, task))
    console.print(f"[green]✓[/green] {len(files) * args.episodes} episodes in [cyan]{args.out}[/cyan]")
    return 0


def cmd_skel_train(args) -> int:
    """Learn a category skeleton from flat observations."""
    config = settings(args)
    dataset = load_dataset(args.data, args.category)
    records = [r for r in dataset.records if r.flat is not None]
    anchor = records[0].skeleton if records else None
    if anchor is not None and anchor.size > args.s:
        anchor = None
    with make_progress() as progress:
        task = progress.add_task("Skeleton steps", total=config.skeleton.steps)
        model = train_skeleton([r.flat for r in records], args.s, config.skeleton, seed=args.seed,
                               anchor=anchor, on_step=progress_callback(progress, task))
    save_skeleton_model(model, args.out)

    table = Table(title="Skeleton error (bbox diagonals)")
    table.add_column("Mesh", style="cyan")
    table.add_column("Error", justify="right")
    for record in records:
        try:
            error = skeleton_error(predict_skeleton(model, record.flat), record.mesh)
        except ValueError:
            continue
        table.add_row(record.mesh_id, f"{error:.4f}")
    console.print(table)
    console.print(f"[green]✓[/green] Saved skeleton model: [cyan]{args.out}[/cyan]")
    return 0


def training_dataset(args, config: AppConfig) -> CorrDataset:
    dataset = load_dataset(args.data, getattr(args, "category", None))
    dataset.validate()
    if config.skeleton.source == "learned" and not getattr(args, "skeleton", None):
        raise DatasetError("skeleton.source is 'learned' but no --skeleton checkpoint was given")
    if getattr(args, "skeleton", None):
        model = load_skeleton_model(args.skeleton)
        missing = [r.mesh_id for r in dataset.records if r.flat is None]
        if missing:
            raise DatasetError(f"Learned skeletons need flat observations; missing for {', '.join(missing)}")
        dataset.with_skeletons(lambda r: predict_skeleton(model, r.flat))
    return dataset


def _loss_log(args) -> str:
    return args.log or str(Path(args.out).with_suffix(".losses.csv"))


def cmd_train(args) -> int:
    """Offline cross-deformation and cross-object training."""
    config = settings(args)
    if args.seed is not None:
        config.train.seed = args.seed
    dataset = training_dataset(args, config)
    batches = config.train.total_batches if args.batches is None else args.batches
    with make_progress() as progress:
        task = progress.add_task("Training batches", total=batches)
        model = train_correspondence(dataset, config.train, config.descriptor, batches=batches,
                                     log_path=_loss_log(args), on_batch=progress_callback(progress, task))
    save_model(model, args.out, extra={"seed": config.train.seed, "batches": batches})
    console.print(f"[dim]Uniform-feature loss ln(m+1) = {uniform_baseline(config.train.negatives):.4f}[/dim]")
    console.print(f"[green]✓[/green] Saved checkpoint: [cyan]{args.out}[/cyan]")
    return 0


def cmd_refine(args) -> int:
    """Coarse-to-fine refinement of a trained checkpoint."""
    config = settings(args)
    if args.seed is not None:
        config.train.seed = args.seed
    if args.alpha is not None:
        config.train.alpha = args.alpha
    dataset = training_dataset(args, config)
    model = load_model(args.ckpt)
    batches = config.train.refine_batches if args.batches is None else args.batches
    with make_progress() as progress:
        task = progress.add_task("Refinement batches", total=batches)
        model = refine_c2f(model, dataset, config.train, batches=batches, log_path=_loss_log(args),
                           on_batch=progress_callback(progress, task))
    save_model(model, args.out, extra={"refined_from": Path(args.ckpt).name, "alpha": config.train.alpha,
                                      "seed": config.train.seed})
    console.print(f"[green]✓[/green] Saved checkpoint: [cyan]{args.out}[/cyan]")
    return 0


def cmd_annotate(args) -> int:
    """Mark a ground-truth landmark on observations (simulated annotation)."""
    dataset = load_dataset(args.data)
    out_dir = Path(args.out).resolve().parent
    triples = []
    for record in dataset.records:
        if args.landmark not in record.mesh.landmarks:
            continue
        vertex = record.mesh.landmarks[args.landmark]
        for obs, name in zip(record.observations, record.names):
            triples.append((obs, vertex, os.path.relpath(Path(args.data).resolve() / name, out_dir)))
    annotation = annotate_landmark(triples, args.count, task=args.task, landmark=args.landmark)
    save_annotations([annotation], args.out)
    console.print(f"[green]✓[/green] {len(annotation.entries)} annotations of "
                  f"[cyan]{args.landmark}[/cyan] saved to [cyan]{args.out}[/cyan]")
    return 0


def cmd_adapt(args) -> int:
    """Few-shot functional adaptation on saved annotations."""
    config = settings(args)
    if args.seed is not None:
        config.train.seed = args.seed
    model = load_model(args.ckpt)
    annotations = load_annotations(args.annotations)
    history: List[float] = []
    with console.status("Adapting..."):
        adapted = adapt_few_shot(model, annotations, config.train, steps=args.steps, history=history)
    save_model(adapted, args.out, extra={"adapted_from": Path(args.ckpt).name, "seed": config.train.seed})
    if history:
        console.print(f"Adaptation loss {history[0]:.4f} → {history[-1]:.4f}")
    console.print(f"[green]✓[/green] Saved checkpoint: [cyan]{args.out}[/cyan]")
    return 0


def cmd_demo(args) -> int:
    """Resolve a landmark recipe on a garment into a demonstration."""
    config = settings(args)
    mesh = load_garment(args.garment)
    constraints = build_constraints(mesh, config.sim)
    state = initial_state(mesh, constraints, args.init, args.seed, config.sim, config.task.init_actions,
                          config.task.drop_height, config.render)
    obs = render_partial(state, mesh, seed=args.seed, render=config.render)
    demo = resolve_recipe(load_recipe(args.recipe), mesh, state, obs)
    save_demonstration(demo, args.out)
    console.print(f"[green]✓[/green] {demo.task.value} demonstration with {len(demo.actions)} actions, "
                  f"{len(demo.candidates)} candidates: [cyan]{args.out}[/cyan]")
    return 0


def display_task_report(report) -> None:
    color = "green" if report.success_rate >= 0.5 else "yellow"
    console.print(Panel(
        f"[bold]{report.task}[/bold] ({report.policy}, init {report.init})\n\n"
        f"[{color}]{report.successes}/{len(report.results)} successes[/{color}]  "
        f"mean metric {report.mean_metric:.3f} (bar {report.threshold})",
        title="Evaluation",
        border_style=color,
    ))
    table = Table(show_header=True)
    table.add_column("Ep", justify="right")
    table.add_column("Garment", style="cyan")
    table.add_column("Metric", justify="right")
    table.add_column("Status")
    for r in report.results:
        status = "[green]✓ Success[/green]" if r.success else "[red]✗ Failed[/red]"
        if not r.settled:
            status += " [yellow](unsettled)[/yellow]"
        table.add_row(str(r.episode), r.garment, f"{r.metric:.3f}", status)
    console.print(table)


def cmd_eval(args) -> int:
    """Run task episodes with a demonstration and write the report."""
    config = settings(args)
    demo = load_demonstration(args.demo)
    if demo.task != TaskKind(args.task):
        raise DatasetError(f"{args.demo} is a {demo.task.value} demonstration, not {args.task}")
    garments = [load_garment(str(s)) for s in garment_files(args.garments)]
    garments = [g for g in garments if g.category.value == demo.obs.category] or garments
    bench = TaskBench(demo, load_model(args.ckpt), config)
    timings: Dict[str, float] = {}
    with make_progress() as progress:
        task = progress.add_task(f"{args.task} episodes", total=args.episodes)
        report = bench.run(garments, args.episodes, seed=args.seed, init=args.init, policy=args.policy,
                           on_progress=progress_callback(progress, task), timings=timings)
    save_report(report, args.report)
    save_timings(timings, args.report)
    display_task_report(report)
    console.print(f"[green]✓[/green] Saved report: [cyan]{args.report}[/cyan]")
    return 0


def cmd_heatmap(args) -> int:
    """Colour a target observation by similarity to one query point."""
    model = load_model(args.ckpt)
    obs_a, obs_b = load_observation(args.obs), load_observation(args.target)
    path = export_heatmap(forward(model, obs_a), args.query, forward(model, obs_b), args.out)
    console.print(f"[green]✓[/green] Saved heatmap: [cyan]{path}[/cyan]")
    return 0


def cmd_score(args) -> int:
    """Correspondence scores of a checkpoint on a data directory."""
    config = settings(args)
    dataset = load_dataset(args.data)
    model = load_model(args.ckpt)
    with console.status("Scoring..."):
        report = score_model(model, dataset, config.train, probes=args.probes, seed=args.seed)
        if args.annotations:
            for annotation in load_annotations(args.annotations):
                sources = {(e.obs.mesh_id, e.vertex) for e in annotation.entries}
                held_out = []
                for record in dataset.records:
                    vertex = record.mesh.landmarks.get(annotation.landmark)
                    if vertex is None:
                        continue
                    held_out += [(o, record.mesh, vertex) for o in record.observations
                                 if vertex in o.first_index and (o.mesh_id, vertex) not in sources]
                report.functional_distance = functional_distance(model_fields(model), annotation, held_out)
        if args.skeleton:
            skeleton_model = load_skeleton_model(args.skeleton)
            errors = [skeleton_error(predict_skeleton(skeleton_model, r.flat), r.mesh)
                      for r in dataset.records if r.flat is not None]
            report.skeleton_error = float(np.mean(errors)) if errors else None

    table = Table(title="Correspondence scores")
    table.add_column("Score", style="cyan")
    table.add_column("Value", justify="right")
    for key, value in report.to_dict().items():
        if value is not None:
            table.add_row(key.replace("_", " "), f"{value:.4f}" if isinstance(value, float) else str(value))
    console.print(table)
    if args.report:
        write_json(args.report, report.to_dict())
        console.print(f"[green]✓[/green] Saved scores: [cyan]{args.report}[/cyan]")
    return 0


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config overrides")
    common.add_argument("--preset", help="Preset in defaults.json (desk, full, test)")

    parser = argparse.ArgumentParser(prog="corrgarment", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="Generate procedural garments")
    p.add_argument("--category", choices=[c.value for c in Category], default="top")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("selfplay", parents=[common], help="Random pick-place self-play")
    p.add_argument("--mesh", required=True, help="Garment OBJ/JSON or a directory of garments")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=10, help="Record every n-th solver step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("skel-train", parents=[common], help="Learn a category skeleton")
    p.add_argument("--category", choices=[c.value for c in Category], default="top")
    p.add_argument("--s", type=int, default=50)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skel_train)

    for name, func, helptext in (("train", cmd_train, "Offline correspondence training"),
                                 ("refine", cmd_refine, "Coarse-to-fine refinement")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--category")
        p.add_argument("--skeleton", help="Learned skeleton checkpoint (default: analytic skeletons)")
        p.add_argument("--batches", type=int)
        p.add_argument("--log", help="Loss CSV (default: <out>.losses.csv)")
        p.add_argument("--seed", type=int, help="Override train.seed")
        p.set_defaults(func=func)
        if name == "refine":
            p.add_argument("--ckpt", required=True)
            p.add_argument("--alpha", type=float)

    p = sub.add_parser("annotate", parents=[common], help="Annotate a functional landmark")
    p.add_argument("--data", required=True)
    p.add_argument("--landmark", required=True)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--task", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("adapt", parents=[common], help="Few-shot functional adaptation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="Override train.seed (negative sampling)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("demo", parents=[common], help="Resolve a demo recipe on a garment")
    p.add_argument("--recipe", required=True)
    p.add_argument("--garment", required=True)
    p.add_argument("--init", choices=INITIAL_KINDS, default="flat")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a task with a demonstration")
    p.add_argument("--task", choices=[t.value for t in TaskKind], required=True)
    p.add_argument("--demo", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--garments", required=True)
    p.add_argument("--episodes", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=INITIAL_KINDS)
    p.add_argument("--policy", choices=["matched", "random"], default="matched")
    p.add_argument("--report", required=True, help="Report path (.csv or .json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", parents=[common], help="Similarity heatmap as PLY")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--query", type=int, required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("score", parents=[common], help="Correspondence scores")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--annotations")
    p.add_argument("--skeleton")
    p.add_argument("--report", help="Write the scores as JSON")
    p.set_defaults(func=cmd_score)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    args = build_parser().parse_args(argv)
    show_header(args.command)
    try:
        return args.func(args)
    except (CorrGarmentError, ValueError, OSError) as e:
        console.print(f"[red]Error: {e}[/red]")
        return 1


if __name__ == "__main__":
    sys.exit(main())
