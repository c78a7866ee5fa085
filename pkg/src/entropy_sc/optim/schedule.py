"""Per-epoch annealing weights (gamma, delta) for the entropy objective."""

from dataclasses import dataclass

from ..objectives import AnnealingWeights

MODES = ("none", "prior", "beta", "tempering")


@dataclass(frozen=True)
class AnnealingSchedule:
    mode: str = "none"
    constant: float = 1.0  # c for energy tempering

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown annealing mode {self.mode!r}; expected one of {MODES}")
        if not self.constant >= 0:
            raise ValueError("tempering constant must be non-negative")

    def weights(self, epoch):
        return schedule_weights(self, epoch)


def schedule_weights(schedule, epoch):
    """Weights for 1-based ``epoch``.

    prior: gamma = max(1, 2 (5 - i)), delta = 1.
    beta: gamma = 1, delta = min(1, 1 / (7 - i)), and 1 from epoch 7 on.
    tempering: (c, c) throughout.
    """
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if schedule.mode == "prior":
        return AnnealingWeights.prior_annealing(max(1.0, 2.0 * (5 - epoch)))
    if schedule.mode == "beta":
        delta = 1.0 if epoch >= 7 else min(1.0, 1.0 / (7 - epoch))
        return AnnealingWeights(1.0, delta)
    if schedule.mode == "tempering":
        return AnnealingWeights.energy_tempering(schedule.constant)
    return AnnealingWeights(1.0, 1.0)
