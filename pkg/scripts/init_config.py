"""
Initialization script for noisy-label segmentation experiments

This script writes the default experiment configs, the monitoring config and
the config schema, and creates the working directories.
"""

import json
from pathlib import Path
from typing import Any, Dict

import click
import yaml
from rich.console import Console
from rich.panel import Panel
from rich.prompt import Confirm

from experiments.config import ExperimentConfig, NetworkConfig, config_schema, emit_config
from grid.tensor_io import atomic_write_text
from models.arch import CmMode
from simulation.dataset import LabelRegime
from training.trainer import TrainConfig

console = Console()


def create_directory_structure(root: Path):
    """Create the required directory structure."""
    for directory in ["config", "logs", "results", "data"]:
        (root / directory).mkdir(parents=True, exist_ok=True)
        console.print(f"✓ Created directory: {directory}")


def create_toy_config() -> ExperimentConfig:
    """Small synthetic experiment that finishes in minutes on a laptop."""
    return ExperimentConfig()


def create_desk_config() -> ExperimentConfig:
    """Larger run where each training image carries one random annotation."""
    return ExperimentConfig(
        name="desk",
        label_regime=LabelRegime.SINGLE_RANDOM,
        network=NetworkConfig(trunk_layers=3, trunk_channels=16, cm_mode=CmMode.FULL),
        train=TrainConfig(epochs=30, batch_size=16, warmup_epochs=3),
        seeds=[0, 1, 2, 3, 4],
    )


def create_monitoring_config() -> Dict[str, Any]:
    """Create monitoring configuration."""
    return {
        "logging": {
            "level": "INFO",
            "format": "console",
            "output": "stream",
            "log_file": "logs/nlseg.log",
        },
        "metrics": {
            "enabled": True,
            "embed_in_summary": True,
        },
    }


def create_gitignore() -> str:
    """Create .gitignore file."""
    return """# Python
__pycache__/
*.py[cod]
build/
dist/
*.egg-info/

# Virtual environments
venv/
.venv/

# Logs
logs/
*.log

# Experiment outputs
results/
data/
.pytest_cache/
.coverage
.hypothesis/
"""


def emit_schema() -> str:
    return json.dumps(config_schema(), indent=2, sort_keys=True) + "\n"


def save_file(root: Path, relative: str, text: str, force: bool):
    path = root / relative
    if path.exists() and not force and not Confirm.ask(f"{relative} exists. Overwrite?", default=False):
        console.print(f"- Kept existing {relative}")
        return
    atomic_write_text(path, text)
    console.print(f"✓ Created {relative}")


@click.command()
@click.option("--root", type=click.Path(file_okay=False), default=".", help="Project directory")
@click.option("--force", "-f", is_flag=True, help="Overwrite existing files without asking")
@click.option("--minimal", "-m", is_flag=True, help="Only write the toy experiment config")
def init_config(root: str, force: bool, minimal: bool):
    """Initialize noisy-label segmentation configuration."""
    root = Path(root)
    console.print(Panel.fit(
        "[bold blue]Noisy-label segmentation initialization[/bold blue]\n"
        "Writing experiment and monitoring configuration",
        border_style="blue",
    ))

    console.print("\n[bold]Creating directory structure...[/bold]")
    create_directory_structure(root)

    console.print("\n[bold]Creating configuration files...[/bold]")
    save_file(root, "config/experiment.json", emit_config(create_toy_config()), force)
    if not minimal:
        save_file(root, "config/desk.json", emit_config(create_desk_config()), force)
        save_file(root, "config/monitoring.yml", yaml.safe_dump(create_monitoring_config(), sort_keys=False), force)
        save_file(root, "config/experiment.schema.json", emit_schema(), force)
        save_file(root, ".gitignore", create_gitignore(), force)

    console.print("\n[bold green]Initialization Complete![/bold green]")
    console.print("\n[bold]Next steps:[/bold]")
    console.print("1. Review config/experiment.json")
    console.print("2. Check the theory: nlseg verify-theorem --out results/theorem.json")
    console.print("3. Run the toy experiment: nlseg report --config config/experiment.json --out results/toy")


if __name__ == "__main__":
    init_config()
