"""Experiment configuration: one declarative record drives every scenario.

Configs serialize as JSON; each run embeds its fully resolved config in the
report header with the target's secrets (window offsets, AES key) redacted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

SCENARIOS = (
    "whitebox",
    "format_preserving",
    "seed_transfer",
    "arch_transfer",
    "offset_transfer",
    "offset_adaptive",
    "adv_training",
    "unpairing",
    "aes_defense",
    "neighbor_sweep",
    "blackbox",
)

REDACTED = "***secret***"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "whitebox"
    out_dir: str = "reports"
    global_seed: int = 0

    # corpus
    train_per_class: int = 60
    sub_train_per_class: int = 40
    test_per_class: int = 10
    eval_per_class: int = 10
    size_range: tuple[int, int] = (3072, 9216)

    # models
    target_seed: int = 7
    target_arch: str = "default"  # default | small | tiny
    sub_arch: str = "tiny"
    substitutes: int = 16
    substitute_grid: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    epochs: int = 20
    sub_epochs: int = 16
    step_size: float = 0.3

    # defenses
    aes_rounds: int = 1
    adv_budgets: tuple[int, ...] = (0, 5, 10, 15)
    unpair_lambda: float = 4.0
    unpair_epochs: int = 10

    # attack
    budgets: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 10)
    attack_iterations: int = 80
    attack_neighbors: int = 128
    attack_top_k: int = 48
    attack_value_top: int = 24
    attack_scoring: str = "onehot"
    attack_restarts: int = 2
    targeted_fallback: int = 2  # extra targeted attempts at top competitors

    # black-box / sweeps
    neighbor_grid: tuple[int, ...] = (8, 32, 128, 512)
    blackbox_iterations: int = 160
    formats: tuple[str, ...] = ("pdf", "zip", "png", "elf", "js")

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; know {SCENARIOS}")
        if not self.budgets or min(self.budgets) < 0:
            raise ValueError("budgets must be non-negative")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        for key in ("size_range", "substitute_grid", "adv_budgets", "budgets",
                    "neighbor_grid", "formats"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def redacted_header(self, extra_secrets: tuple[str, ...] = ()) -> str:
        """Resolved config for report headers; secrets never serialize."""
        raw = asdict(self)
        for key in ("target_window", "target_aes_key") + extra_secrets:
            if key in raw:
                raw[key] = REDACTED
        lines = ["# resolved config (target window offsets and AES keys are never reported)"]
        for key in sorted(raw):
            lines.append(f"#   {key} = {raw[key]}")
        return "\n".join(lines)


DESK_CAVEAT = (
    "Desk-scale run: a 12-class synthetic corpus stands in for the "
    "production-scale corpus, and substitute pools are capped for CPU "
    "budgets. Absolute rates are not comparable to full-scale numbers; "
    "trends and orderings are the evaluation target."
)
