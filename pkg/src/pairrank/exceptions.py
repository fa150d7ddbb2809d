"""Exception types shared across the package."""

from __future__ import annotations


class PairRankError(Exception):
    """Base class for data and solver failures raised by this package."""


class DisconnectedGraphError(PairRankError):
    """The comparison graph is not connected, so ratings are not identified.

    Attributes:
        components: list of player-index lists, one per connected component,
            sorted by smallest member.
    """

    def __init__(self, components):
        self.components = sorted((sorted(c) for c in components), key=lambda c: c[0])
        sizes = ", ".join(str(len(c)) for c in self.components)
        super().__init__(
            f"comparison graph has {len(self.components)} connected components "
            f"(sizes {sizes}); ratings are only identified within a component"
        )


class DivergenceError(PairRankError):
    """The likelihood has no finite maximizer (separated comparison data).

    Attributes:
        players: indices of the players driving the divergence.
    """

    def __init__(self, players, detail: str = ""):
        self.players = sorted(int(p) for p in players)
        msg = f"maximum likelihood estimate diverges; offending players: {self.players}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConvergenceError(PairRankError):
    """An iterative solver stopped before reaching its tolerance.

    Attributes:
        gap: the residual the solver was trying to drive below tolerance,
            when available.
    """

    def __init__(self, message: str, gap: float | None = None):
        self.gap = gap
        super().__init__(message)
