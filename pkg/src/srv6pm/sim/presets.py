"""Bundled scenarios.

``paper-experiment`` is the 8-router validation setup: six monitored router
pairs with symmetric waypoint paths (twelve directed flows), 0.1% loss on
every link adjacent to R2 and R6, T=10 s with a 5 s read margin, one minute
of traffic.
"""

from __future__ import annotations

from importlib import resources

from ..errors import ValidationError
from .scenario import ScenarioBuilder, ScenarioConfig, parse_scenario

TOPOLOGY = [
    ("R1", "R2"), ("R2", "R3"), ("R2", "R7"), ("R3", "R4"), ("R3", "R6"),
    ("R4", "R5"), ("R4", "R6"), ("R5", "R6"), ("R6", "R8"), ("R7", "R8"),
]

# (sender, reflector, waypoints); the reverse flow uses the waypoints reversed
PAIRS = [
    ("R1", "R3", ("R2",)),
    ("R1", "R5", ("R3", "R4")),
    ("R1", "R8", ("R2", "R7")),
    ("R3", "R5", ("R4", "R6")),
    ("R3", "R8", ("R6",)),
    ("R5", "R8", ("R6",)),
]

LOSSY_NODES = ("R2", "R6")
DEFAULT_RATE = 100.0


def paper_experiment(*, seed: int = 1, rate: float = DEFAULT_RATE, loss_rate: float = 0.001,
                     link_delay: float = 0.001, interval: float = 10.0, margin: float = 5.0,
                     duration: float = 60.0) -> ScenarioConfig:
    b = ScenarioBuilder(seed=seed, duration=duration, name="paper-experiment")
    for i in range(1, 9):
        b.node(f"R{i}")
    for x, y in TOPOLOGY:
        lossy = x in LOSSY_NODES or y in LOSSY_NODES
        b.link(x, y, delay=link_delay, loss_rate=loss_rate if lossy else 0.0)
    for src, dst, waypoints in PAIRS:
        b.monitored_pair(src, dst, waypoints, rate=rate, interval=interval, margin=margin)
    return b.build()


def preset_names() -> list[str]:
    files = resources.files(__package__).joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    path = resources.files(__package__).joinpath("presets", f"{name}.yaml")
    if not path.is_file():
        raise ValidationError(f"no bundled scenario {name!r}; have {preset_names()}")
    return path.read_text()


def load_preset(name: str) -> ScenarioConfig:
    return parse_scenario(preset_text(name))


if __name__ == "__main__":  # regenerate the bundled YAML
    import pathlib

    out = pathlib.Path(__file__).with_name("presets") / "paper-experiment.yaml"
    header = ("# 8-router validation scenario: 12 directed flows over symmetric waypoint\n"
              "# paths, 0.1% loss on every link adjacent to R2 and R6, T=10 s, margin 5 s.\n"
              "# Generated by `python -m srv6pm.sim.presets`.\n")
    out.write_text(header + paper_experiment().dump())
