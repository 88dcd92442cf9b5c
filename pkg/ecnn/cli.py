"""
ECNN Command Line

This script wires code-matrix design, training, attacks, evaluation, the
branch transfer study and the lemma checks into reproducible runs. Every
subcommand writes its artifacts plus a ``manifest.yaml`` into
``--output-dir``; feeding the manifest back through ``--config`` repeats
the run.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

import functools
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import click
import numpy as np
import yaml
from click.core import ParameterSource
from rich.console import Console
from rich.panel import Panel

from ecnn import __version__
from ecnn.annealer import AnnealSchedule, design_matrix
from ecnn.attacks import AttackConfig, AttackFamily, attack_dataset, attack_records
from ecnn.codebook import (
    CodeMatrix,
    load_matrix,
    min_hamming,
    min_vi,
    mirror_columns,
    save_matrix,
)
from ecnn.config import load_config, resolve_parameters
from ecnn.errors import EcnnError, InvalidArgumentError, ParseError
from ecnn.lemmalab import (
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
    verify_lemma4,
    verify_lemma5,
)
from ecnn.model import EcnnModel, LossConfig, LossKind, parameter_count
from ecnn.reporting import (
    RunManifest,
    matrix_rows,
    print_outputs,
    setup_logging,
    summary_table,
    write_yaml,
)
from ecnn.trainer import (
    SYNTHETIC_KINDS,
    Dataset,
    TrainConfig,
    build_model,
    evaluate,
    load_csv,
    load_model,
    make_synthetic,
    off_diagonal_mean,
    save_model,
    train,
    transfer_frame,
    transfer_matrix,
)

console = Console()
logger = logging.getLogger(__name__)

FAMILIES = [family.value for family in AttackFamily]
LOSSES = [kind.value for kind in LossKind]
EXPLICIT_SOURCES = (ParameterSource.COMMANDLINE, ParameterSource.ENVIRONMENT)

LEMMA_DEFAULTS: Dict[int, Dict[str, Any]] = {
    1: {"features": 16, "samples": 8, "length": 4, "classes": 4, "trials": 20},
    2: {"features": 4, "classes": 3, "length": 8, "trials": 50},
    3: {"features": 16, "classes": 3, "length": 4, "trials": 200},
}


class CommandRun:
    """Resolved parameters, artifact paths and the manifest of one subcommand."""

    def __init__(self, ctx: click.Context, command: str, values: Dict[str, Any]):
        self.ctx = ctx
        values = dict(values)
        config = values.pop("config", None)
        explicit = {
            name: value
            for name, value in values.items()
            if ctx.get_parameter_source(name) in EXPLICIT_SOURCES
        }
        file_values = load_config(Path(config)) if config else None
        self.params = resolve_parameters(values, file_values, explicit)
        self.output_dir = Path(self.params["output_dir"])
        self.manifest = RunManifest(command, self.params, int(self.params["seed"]))
        if config:
            self.manifest.inputs["config"] = str(config)

    @property
    def seed(self) -> int:
        return int(self.params["seed"])

    @property
    def threads(self) -> int:
        return int(self.params.get("threads") or os.cpu_count() or 1)

    def require(self, *names: str) -> None:
        """Options that may come from the config file but must be set somewhere."""
        for name in names:
            if self.params.get(name) is None:
                flag = "--" + name.replace("_", "-")
                raise click.UsageError(f"Missing option '{flag}'.", ctx=self.ctx)

    def input(self, name: str, path: Any) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"{name} file not found: {path}")
        self.manifest.inputs[name] = str(path)
        return path

    def output(self, name: str, filename: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / filename
        self.manifest.outputs[name] = str(path)
        return path

    def finish(self) -> None:
        self.manifest.write(self.output_dir)
        print_outputs(console, self.manifest.outputs)


def handle_errors(func: Callable[..., None]) -> Callable[..., None]:
    """Map library errors onto exit codes with a message naming the file."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            func(*args, **kwargs)
        except ParseError as exc:
            fail(str(exc))
        except InvalidArgumentError as exc:
            raise click.UsageError(str(exc), ctx=click.get_current_context()) from exc
        except (EcnnError, OSError, yaml.YAMLError) as exc:
            fail(str(exc))

    return wrapper


def fail(message: str) -> None:
    console.print(f"[bold red]Error:[/bold red] {message}")
    sys.exit(1)


def header(title: str, detail: str) -> None:
    console.print(
        Panel.fit(f"[bold green]{title}[/bold green]\n{detail}", border_style="green")
    )


def common_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--config", type=click.Path(), help="YAML run config or manifest"),
        click.option("--seed", type=int, default=0, show_default=True, help="Run seed"),
        click.option(
            "--output-dir",
            type=click.Path(file_okay=False),
            default="ecnn-out",
            show_default=True,
            help="Directory for artifacts and the manifest",
        ),
        click.option(
            "--threads", type=int, default=None, help="Attack worker threads (default: cores)"
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def dataset_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--data", type=click.Path(), help="CSV with features and a label column"),
        click.option("--label-column", default="label", show_default=True),
        click.option("--scale/--no-scale", default=False, help="Min-max scale CSV features"),
        click.option(
            "--synthetic",
            type=click.Choice(list(SYNTHETIC_KINDS)),
            default="blobs",
            show_default=True,
            help="Synthetic dataset used when --data is not given",
        ),
        click.option("--samples-per-class", type=int, default=50, show_default=True),
        click.option("--noise-sigma", type=float, default=0.05, show_default=True),
        click.option("--input-dim", type=int, default=2, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def attack_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--epsilon", type=float, default=0.1, show_default=True),
        click.option("--step-alpha", type=float, default=0.01, show_default=True),
        click.option("--iterations", type=int, default=20, show_default=True),
        click.option("--random-start-radius", type=float, default=None),
        click.option("--hinge-c", type=float, default=50.0, show_default=True),
        click.option("--cw-kappa", type=float, default=1.0, show_default=True),
        click.option("--cw-c", type=float, default=1.0, show_default=True),
        click.option("--cw-step", type=float, default=1e-2, show_default=True),
        click.option("--cw-iterations", type=int, default=1000, show_default=True),
        click.option("--jsma-theta", type=float, default=1.0, show_default=True),
        click.option("--jsma-gamma", type=float, default=0.1, show_default=True),
        click.option("--jsma-max-iterations", type=int, default=1000, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def training_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--matrix", type=click.Path(), help="Code matrix JSON from `design`"),
        click.option("--feature-dim", type=int, default=8, show_default=True),
        click.option("--front-sizes", default="32,32", show_default=True),
        click.option("--share-head/--no-share-head", default=True, show_default=True),
        click.option("--epochs", type=int, default=30, show_default=True),
        click.option("--batch-size", type=int, default=32, show_default=True),
        click.option("--learning-rate", type=float, default=0.05, show_default=True),
        click.option("--momentum", type=float, default=0.9, show_default=True),
        click.option("--decay-factor", type=float, default=0.5, show_default=True),
        click.option(
            "--loss",
            type=click.Choice(LOSSES),
            default=LossKind.CROSS_ENTROPY.value,
            show_default=True,
        ),
        click.option("--gamma", type=float, default=0.0, show_default=True),
        click.option("--kappa", type=float, default=1.0, show_default=True),
        click.option("--adversarial/--no-adversarial", default=False),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def parse_sizes(text: Any) -> Tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        sizes = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise InvalidArgumentError(f"front sizes must be comma-separated integers: {text}") from exc
    if not sizes or min(sizes) < 1:
        raise InvalidArgumentError("front sizes must be positive")
    return sizes


def load_dataset(run: CommandRun, num_classes: int) -> Dataset:
    p = run.params
    if p.get("data"):
        path = run.input("data", p["data"])
        return load_csv(path, p["label_column"], scale=bool(p["scale"]), num_classes=num_classes)
    return make_synthetic(
        p["synthetic"],
        num_classes,
        int(p["samples_per_class"]),
        float(p["noise_sigma"]),
        run.seed,
        feature_dim=int(p["input_dim"]),
    )


def attack_config(run: CommandRun, dataset: Dataset, family: str) -> AttackConfig:
    p = run.params
    return AttackConfig(
        family=AttackFamily(family),
        epsilon=float(p["epsilon"]),
        step_alpha=float(p["step_alpha"]),
        iterations=int(p["iterations"]),
        kappa=float(p["cw_kappa"]),
        jsma_theta=float(p["jsma_theta"]),
        jsma_gamma=float(p["jsma_gamma"]),
        jsma_max_iterations=int(p["jsma_max_iterations"]),
        cw_c=float(p["cw_c"]),
        cw_step=float(p["cw_step"]),
        cw_iterations=int(p["cw_iterations"]),
        hinge_c=float(p["hinge_c"]),
        random_start_radius=p["random_start_radius"],
        seed=run.seed,
        clip_min=dataset.lower,
        clip_max=dataset.upper,
    )


def train_config(run: CommandRun, dataset: Dataset) -> TrainConfig:
    p = run.params
    adversarial = attack_config(run, dataset, "pgd") if p["adversarial"] else None
    return TrainConfig(
        epochs=int(p["epochs"]),
        batch_size=int(p["batch_size"]),
        learning_rate=float(p["learning_rate"]),
        momentum=float(p["momentum"]),
        loss=LossConfig(
            loss_kind=LossKind(p["loss"]), gamma=float(p["gamma"]), kappa=float(p["kappa"])
        ),
        adversarial=adversarial,
        seed=run.seed,
        decay_factor=float(p["decay_factor"]),
    )


def fit_model(run: CommandRun) -> Tuple[EcnnModel, Dataset, List[float]]:
    """Build and train a model from --matrix and the dataset options."""
    run.require("matrix")
    p = run.params
    matrix = load_matrix(run.input("matrix", p["matrix"]))
    dataset = load_dataset(run, matrix.num_classes)
    model = build_model(
        dataset.feature_dim,
        matrix,
        feature_dim=int(p["feature_dim"]),
        front_sizes=parse_sizes(p["front_sizes"]),
        share_head=bool(p["share_head"]),
        seed=run.seed,
    )
    console.print(
        f"Training {matrix.code_length} branches on {dataset.size} samples "
        f"({parameter_count(model)} parameters)"
    )
    result = train(model, dataset, train_config(run, dataset))
    result.history_frame().to_csv(run.output("history", "history.csv"), index=False)
    save_model(result.model, run.output("model", "model.json"))
    return result.model, dataset, result.history


def show_matrix(matrix: CodeMatrix) -> None:
    columns = ["class"] + [str(j) for j in range(matrix.code_length)]
    rows = [[str(i)] + list(matrix.row(i)) for i in range(matrix.num_classes)]
    console.print(summary_table("Code matrix", columns, rows))


@click.group()
@click.version_option(__version__, prog_name="ecnn")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings only")
def main(verbose: bool, quiet: bool) -> None:
    """
    Error-correcting neural network ensembles: design code matrices, train,
    attack and evaluate models, and check the supporting lemmas.

    Examples:
        ecnn design --classes 10 --length 30 --seed 7
        ecnn train --matrix ecnn-out/matrix.json --gamma 0.1
        ecnn attack --model ecnn-out/model.json --family pgd --epsilon 0.1
        ecnn verify --lemma 5 --classes 10 --alphabet 2
    """
    setup_logging(verbose=verbose, quiet=quiet)


@main.command()
@click.option("--classes", type=int, default=None, help="Number of classes M")
@click.option("--length", type=int, default=None, help="Code length N")
@click.option("--alphabet", type=int, default=2, show_default=True, help="Alphabet size q")
@click.option("--eta", type=float, default=None, help="Column weight (default: calibrated)")
@click.option("--initial-temperature", type=float, default=1.0, show_default=True)
@click.option("--cooling-factor", type=float, default=0.95, show_default=True)
@click.option("--steps-per-temperature", type=int, default=500, show_default=True)
@click.option("--num-temperatures", type=int, default=200, show_default=True)
@click.option("--mirror", is_flag=True, help="Emit [M, 1 - M] (binary only)")
@common_options
@click.pass_context
@handle_errors
def design(ctx: click.Context, **values: Any) -> None:
    """Design a code matrix by simulated annealing."""
    run = CommandRun(ctx, "design", values)
    run.require("classes", "length")
    p = run.params
    schedule = AnnealSchedule(
        initial_temperature=float(p["initial_temperature"]),
        cooling_factor=float(p["cooling_factor"]),
        steps_per_temperature=int(p["steps_per_temperature"]),
        num_temperatures=int(p["num_temperatures"]),
        seed=run.seed,
        eta=None if p["eta"] is None else float(p["eta"]),
    )
    header(
        "ECNN Code Matrix Design",
        f"M={p['classes']} classes, N={p['length']} columns, q={p['alphabet']}",
    )
    result = design_matrix(int(p["classes"]), int(p["length"]), int(p["alphabet"]), schedule)
    matrix = result.matrix
    report = result.to_dict()
    if p["mirror"]:
        matrix = mirror_columns(matrix)
        report["code_length"] = matrix.code_length
        report["mirror"] = {
            "designed_code_length": result.matrix.code_length,
            "min_hamming": min_hamming(matrix),
            "min_vi": min_vi(matrix),
        }

    run.manifest.results.update(
        num_classes=matrix.num_classes, code_length=matrix.code_length, alphabet=matrix.alphabet
    )
    save_matrix(matrix, run.output("matrix", "matrix.json"))
    write_yaml(run.output("report", "design_report.yaml"), report)

    rows = [
        ["final energy", result.final_energy],
        ["eta", result.eta_used],
        ["min Hamming", result.min_hamming],
        ["min VI", result.min_vi],
    ]
    if p["mirror"]:
        rows += [["mirrored min Hamming", report["mirror"]["min_hamming"]]]
        rows += [["mirrored min VI", report["mirror"]["min_vi"]]]
    console.print(summary_table("Design summary", ["metric", "value"], rows))
    if matrix.num_classes * matrix.code_length <= 400:
        show_matrix(matrix)
    run.finish()


@main.command(name="train")
@training_options
@attack_options
@dataset_options
@common_options
@click.pass_context
@handle_errors
def train_command(ctx: click.Context, **values: Any) -> None:
    """Train an ECNN on a CSV or synthetic dataset."""
    run = CommandRun(ctx, "train", values)
    header("ECNN Training", f"loss={run.params['loss']}, gamma={run.params['gamma']}")
    model, dataset, history = fit_model(run)
    report = evaluate(model, dataset)
    write_yaml(
        run.output("report", "train_report.yaml"),
        {
            "final_loss": history[-1],
            "training_accuracy": report.accuracy,
            "parameters": parameter_count(model),
        },
    )
    rows = [
        ["epochs", len(history)],
        ["final loss", history[-1]],
        ["training accuracy", report.accuracy],
    ]
    console.print(summary_table("Training summary", ["metric", "value"], rows))
    run.finish()


@main.command()
@click.option("--model", type=click.Path(), help="Checkpoint from `train`")
@click.option("--family", type=click.Choice(FAMILIES), default="pgd", show_default=True)
@click.option("--limit", type=int, default=None, help="Attack only the first N samples")
@attack_options
@dataset_options
@common_options
@click.pass_context
@handle_errors
def attack(ctx: click.Context, **values: Any) -> None:
    """Attack a trained model and write one CSV row per sample."""
    run = CommandRun(ctx, "attack", values)
    run.require("model")
    p = run.params
    model = load_model(run.input("model", p["model"]))
    dataset = load_dataset(run, model.code_matrix.num_classes)
    if p["limit"] is not None:
        dataset = dataset.subset(range(min(int(p["limit"]), dataset.size)))
    cfg = attack_config(run, dataset, p["family"])
    header(
        "ECNN Attack",
        f"{cfg.family.value} with epsilon={cfg.epsilon} on {dataset.size} samples",
    )

    clean = evaluate(model, dataset)
    outcome = attack_dataset(model, dataset.X, dataset.y, cfg, run.threads)
    accuracy = float(np.mean(outcome.predictions == dataset.y))
    records = attack_records(outcome, dataset.y, cfg)
    records.to_csv(run.output("records", "attack.csv"), index=False)
    write_yaml(
        run.output("report", "attack_report.yaml"),
        {
            "family": cfg.family.value,
            "samples": dataset.size,
            "clean_accuracy": clean.accuracy,
            "adversarial_accuracy": accuracy,
            "success_rate": float(np.mean(outcome.success)),
            "mean_l2": float(np.mean(outcome.l2)),
            "max_linf": float(np.max(outcome.linf)),
        },
    )
    console.print(
        summary_table(
            "Attack summary",
            ["metric", "value"],
            [
                ["clean accuracy", clean.accuracy],
                ["adversarial accuracy", accuracy],
                ["success rate", float(np.mean(outcome.success))],
                ["mean L2", float(np.mean(outcome.l2))],
            ],
        )
    )
    run.finish()


@main.command(name="eval")
@click.option("--model", type=click.Path(), help="Checkpoint from `train`")
@click.option("--family", type=click.Choice(FAMILIES), default=None, help="Evaluate under attack")
@attack_options
@dataset_options
@common_options
@click.pass_context
@handle_errors
def eval_command(ctx: click.Context, **values: Any) -> None:
    """Report clean (or attacked) accuracy with a per-class breakdown."""
    run = CommandRun(ctx, "eval", values)
    run.require("model")
    p = run.params
    model = load_model(run.input("model", p["model"]))
    dataset = load_dataset(run, model.code_matrix.num_classes)
    cfg = attack_config(run, dataset, p["family"]) if p["family"] else None
    header("ECNN Evaluation", f"{dataset.size} samples, attack: {p['family'] or 'none'}")

    report = evaluate(model, dataset, attack=cfg, threads=run.threads)
    write_yaml(run.output("report", "eval_report.yaml"), report.to_dict())
    rows = [[str(k), acc] for k, acc in enumerate(report.per_class_accuracy)]
    console.print(summary_table("Per-class accuracy", ["class", "accuracy"], rows))
    console.print(f"\n[bold]Accuracy:[/bold] {report.accuracy:.4f}")
    run.finish()


@main.command()
@click.option("--model", type=click.Path(), help="Use a trained checkpoint")
@training_options
@attack_options
@dataset_options
@common_options
@click.pass_context
@handle_errors
def transfer(ctx: click.Context, **values: Any) -> None:
    """Branch-to-branch transferability of PGD examples."""
    run = CommandRun(ctx, "transfer", values)
    p = run.params
    header("ECNN Transfer Study", f"gamma={p['gamma']}, epsilon={p['epsilon']}")
    if p.get("model"):
        model = load_model(run.input("model", p["model"]))
        dataset = load_dataset(run, model.code_matrix.num_classes)
    else:
        model, dataset, _ = fit_model(run)

    cfg = attack_config(run, dataset, "pgd")
    matrix = transfer_matrix(model, dataset, cfg, run.threads)
    mean = off_diagonal_mean(matrix)
    transfer_frame(matrix).to_csv(run.output("matrix", "transfer.csv"))
    write_yaml(
        run.output("report", "transfer_report.yaml"),
        {"gamma": p["gamma"], "off_diagonal_mean": mean, "transfer_matrix": matrix},
    )
    labels = [f"branch_{n}" for n in range(len(matrix))]
    columns = ["substitute"] + [str(n) for n in range(len(matrix))]
    console.print(summary_table("Transfer accuracy", columns, matrix_rows(matrix, labels)))
    console.print(f"\n[bold]Mean off-diagonal accuracy:[/bold] {mean:.4f}")
    run.finish()


@main.command()
@click.option("--lemma", type=click.IntRange(1, 5), default=None, help="Which lemma to check")
@click.option("--features", type=int, default=None, help="Feature dimension F")
@click.option("--samples", type=int, default=None, help="Sample count K (lemma 1)")
@click.option("--length", type=int, default=None, help="Branch count N")
@click.option("--classes", type=int, default=None, help="Number of classes M")
@click.option("--alphabet", type=int, default=None, help="Alphabet size q (lemma 5)")
@click.option("--trials", type=int, default=None)
@click.option("--sigma", type=float, multiple=True, help="Noise levels (lemma 3)")
@click.option("--gamma", type=float, multiple=True, help="Smoothing weights (lemma 4)")
@common_options
@click.pass_context
@handle_errors
def verify(ctx: click.Context, **values: Any) -> None:
    """Numerically check one of the five supporting lemmas."""
    run = CommandRun(ctx, "verify", values)
    run.require("lemma")
    p = run.params
    lemma = int(p["lemma"])
    settings = dict(LEMMA_DEFAULTS.get(lemma, {}))
    settings.update({k: p[k] for k in settings if p.get(k) is not None})
    header(f"ECNN Lemma {lemma} Check", ", ".join(f"{k}={v}" for k, v in settings.items()))

    s = settings
    if lemma == 1:
        report: Any = verify_lemma1(
            s["features"], s["samples"], s["length"], s["classes"], s["trials"], run.seed
        )
    elif lemma == 2:
        report = verify_lemma2(s["features"], s["classes"], s["length"], s["trials"], run.seed)
    elif lemma == 3:
        kwargs: Dict[str, Any] = {"sigma_grid": list(p["sigma"])} if p["sigma"] else {}
        report = verify_lemma3(
            s["features"], s["classes"], s["length"], trials=s["trials"], seed=run.seed, **kwargs
        )
    elif lemma == 4:
        report = verify_lemma4(list(p["gamma"])) if p["gamma"] else verify_lemma4()
    else:
        classes = [int(p["classes"])] if p.get("classes") else [6, 10, 12]
        alphabets = [int(p["alphabet"])] if p.get("alphabet") else [2, 3, 4]
        report = verify_lemma5(classes, alphabets)

    payload = report.to_dict()
    write_yaml(run.output("report", f"lemma{lemma}_report.yaml"), payload)
    render_lemma(payload)
    run.finish()
    if report.passed:
        console.print("\n[bold green]Lemma check passed![/bold green]")
    else:
        console.print("\n[bold red]Lemma check failed![/bold red]")
        sys.exit(1)


def render_lemma(payload: Dict[str, Any]) -> None:
    rows: Optional[List[Dict[str, Any]]] = payload.get("rows")
    if rows:
        columns = list(rows[0].keys())
        console.print(
            summary_table("Results", columns, [[row[c] for c in columns] for row in rows])
        )
        return
    scalars = [[k, v] for k, v in payload.items() if not isinstance(v, (list, dict))]
    console.print(summary_table("Results", ["quantity", "value"], scalars))
    if payload.get("accuracy_curve"):
        curve = zip(payload["sigma_grid"], payload["accuracy_curve"])
        console.print(
            summary_table("Meta-accuracy by noise level", ["sigma", "accuracy"], curve)
        )


if __name__ == "__main__":
    main()
