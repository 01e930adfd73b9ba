"""Online Bayesian persuasion games, direct schemes and the lifted loss set.

Utility tables are indexed ``[outcome, action]`` for the sender and
``[type, outcome, action]`` for receivers.  A direct scheme assigns each
outcome a distribution over signal profiles ``s in A^K``; profile ``s``
recommends action ``s[k]`` to receiver type ``k``.  Profiles are ordered as
``itertools.product(range(A), repeat=K)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..geometry import PointSet

__all__ = [
    "ObpGame",
    "DirectScheme",
    "SchemeCatalog",
    "ObpTaskStream",
    "ZeroMarginalError",
    "EmptyRetentionError",
    "posterior",
    "best_response",
    "sender_utility",
    "is_persuasive",
    "enumerate_schemes",
    "load_game",
]

TIE_TOL = 1e-10
PERSUASION_TOL = 1e-10


class ZeroMarginalError(ValueError):
    """Posterior requested for a signal the scheme never sends."""


class EmptyRetentionError(ValueError):
    """No grid scheme passed the persuasiveness filter."""


@dataclass(frozen=True)
class ObpGame:
    prior: np.ndarray
    sender_utility: np.ndarray  # [outcome, action]
    receiver_utilities: np.ndarray  # [type, outcome, action]

    def __post_init__(self):
        mu = np.asarray(self.prior, float)
        us = np.asarray(self.sender_utility, float)
        ur = np.asarray(self.receiver_utilities, float)
        if mu.ndim != 1 or np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("prior must be strictly positive and sum to one")
        if us.shape != (mu.size, us.shape[1]) or us.ndim != 2:
            raise ValueError("sender utility must be an outcomes x actions table")
        if ur.ndim != 3 or ur.shape[1:] != us.shape:
            raise ValueError("receiver utilities must be types x outcomes x actions")
        for arr in (us, ur):
            if not np.all(np.isfinite(arr)) or np.abs(arr).max() > 1.0 + 1e-12:
                raise ValueError("utilities must lie in [-1, 1]")
        object.__setattr__(self, "prior", mu)
        object.__setattr__(self, "sender_utility", us)
        object.__setattr__(self, "receiver_utilities", ur)

    @property
    def n_outcomes(self) -> int:
        return self.prior.size

    @property
    def n_actions(self) -> int:
        return self.sender_utility.shape[1]

    @property
    def n_types(self) -> int:
        return self.receiver_utilities.shape[0]

    @cached_property
    def profiles(self) -> np.ndarray:
        """All signal profiles, shape ``(A**K, K)``."""
        return np.array(list(itertools.product(range(self.n_actions), repeat=self.n_types)), dtype=int)

    def to_dict(self) -> dict:
        return {
            "outcomes": self.n_outcomes,
            "actions": self.n_actions,
            "types": self.n_types,
            "prior": self.prior.tolist(),
            "sender_utility": self.sender_utility.tolist(),
            "receiver_utilities": self.receiver_utilities.tolist(),
        }


@dataclass(frozen=True)
class DirectScheme:
    phi: np.ndarray  # [outcome, profile]

    def __post_init__(self):
        phi = np.asarray(self.phi, float)
        if phi.ndim != 2 or np.any(phi < 0) or np.abs(phi.sum(1) - 1.0).max() > 1e-12:
            raise ValueError("each outcome row must be a probability distribution")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def pure(cls, game: ObpGame, profile_by_outcome) -> "DirectScheme":
        """Deterministic scheme sending profile ``profile_by_outcome[w]`` in outcome ``w``."""
        phi = np.zeros((game.n_outcomes, game.profiles.shape[0]))
        for w, prof in enumerate(profile_by_outcome):
            phi[w, _profile_index(game, prof)] = 1.0
        return cls(phi)


def _profile_index(game: ObpGame, prof) -> int:
    idx = 0
    for a in prof:
        idx = idx * game.n_actions + int(a)
    return idx


def posterior(game: ObpGame, scheme: DirectScheme, s: int) -> np.ndarray:
    joint = game.prior * scheme.phi[:, s]
    tot = joint.sum()
    if tot <= 1e-12:
        raise ZeroMarginalError(f"signal {s} has marginal probability {tot:.3e}")
    return joint / tot


def best_response(game: ObpGame, k: int, rho) -> tuple[np.ndarray, int]:
    """Receiver best-response set for type ``k`` and the sender-favoured pick."""
    rho = np.asarray(rho, float)
    vals = rho @ game.receiver_utilities[k]
    tied = np.flatnonzero(vals >= vals.max() - TIE_TOL)
    sender_vals = rho @ game.sender_utility[:, tied]
    best = sender_vals.max()
    pick = int(tied[np.flatnonzero(sender_vals >= best - TIE_TOL)[0]])
    return tied, pick


def sender_utility(game: ObpGame, scheme: DirectScheme, k: int, response: str = "obedient") -> float:
    """Expected sender utility against receiver type ``k``.

    ``response="obedient"`` assumes type ``k`` follows its recommendation
    (the utility is then linear in the scheme).  ``response="best"`` instead
    plays the sender-favoured best response to the posterior of each full
    signal profile.
    """
    if response == "obedient":
        joint = game.prior[:, None] * scheme.phi
        return float((joint * game.sender_utility[:, game.profiles[:, k]]).sum())
    if response != "best":
        raise ValueError(f"unknown response model {response!r}")
    total = 0.0
    for s in range(scheme.phi.shape[1]):
        joint = game.prior * scheme.phi[:, s]
        if joint.sum() <= 1e-12:
            continue
        _, a = best_response(game, k, joint / joint.sum())
        total += float(joint @ game.sender_utility[:, a])
    return total


def is_persuasive(game: ObpGame, scheme: DirectScheme) -> bool:
    return bool(_persuasion_slack(game, scheme.phi[None]).min() >= -PERSUASION_TOL)


def _persuasion_slack(game: ObpGame, phis: np.ndarray) -> np.ndarray:
    """Smallest persuasiveness slack of each scheme in a batch ``[n, outcome, profile]``."""
    joint = phis * game.prior[None, :, None]  # [n, w, s]
    worst = np.full(phis.shape[0], np.inf)
    for k in range(game.n_types):
        rec = game.profiles[:, k]
        ur = game.receiver_utilities[k]  # [w, a]
        obey = ur[:, rec]  # [w, s]
        for a in range(game.n_actions):
            gain = obey - ur[:, a][:, None]
            slack = (joint * gain[None]).sum(axis=(1, 2))
            worst = np.minimum(worst, slack)
    return worst


def _sender_utility_batch(game: ObpGame, phis: np.ndarray, response: str = "obedient") -> np.ndarray:
    """``u^s(phi, k)`` for a batch of schemes, shape ``[n, K]``."""
    joint = phis * game.prior[None, :, None]  # [n, w, s]
    if response == "obedient":
        cols = [(joint * game.sender_utility[:, game.profiles[:, k]][None]).sum((1, 2)) for k in range(game.n_types)]
        return np.stack(cols, axis=1)
    if response != "best":
        raise ValueError(f"unknown response model {response!r}")
    marg = joint.sum(1)  # [n, s]
    safe = np.where(marg > 1e-12, marg, 1.0)
    rho = joint / safe[:, None, :]  # [n, w, s]
    out = np.zeros((phis.shape[0], game.n_types))
    us = game.sender_utility
    for k in range(game.n_types):
        rv = np.einsum("nws,wa->nsa", rho, game.receiver_utilities[k])
        sv = np.einsum("nws,wa->nsa", rho, us)
        tied = rv >= rv.max(-1, keepdims=True) - TIE_TOL
        masked = np.where(tied, sv, -np.inf)
        favoured = tied & (masked >= masked.max(-1, keepdims=True) - TIE_TOL)
        pick = np.argmax(favoured, axis=-1)  # lowest index among favoured ties
        payoff = np.take_along_axis(np.einsum("nws,wa->nsa", joint, us), pick[..., None], -1)[..., 0]
        out[:, k] = np.where(marg > 1e-12, payoff, 0.0).sum(1)
    return out


def _grid_rows(n_parts: int, units: int) -> np.ndarray:
    """All vectors of ``n_parts`` nonnegative integers summing to ``units``."""
    rows = []
    for bars in itertools.combinations(range(units + n_parts - 1), n_parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(units + n_parts - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=float)


@dataclass
class SchemeCatalog:
    """Persuasive grid schemes and their normalised loss points.

    ``points`` holds the distinct normalised loss vectors in lexicographic
    order; ``schemes[j]`` is the first enumerated scheme mapping to
    ``points[j]``.  Raw losses are ``offset + scale * normalised``.
    """

    game: ObpGame
    grid_step: float
    point_set: PointSet
    schemes: list[DirectScheme]
    offset: np.ndarray
    scale: np.ndarray
    n_candidates: int
    n_retained: int
    _raw_points: np.ndarray = field(repr=False, default=None)

    @property
    def points(self) -> np.ndarray:
        return self.point_set.points

    def loss(self, j: int, k: int) -> float:
        """Normalised loss of playing point ``j`` against type ``k``."""
        return float(self.points[j, k])

    def to_raw(self, z) -> np.ndarray:
        return self.offset + self.scale * np.asarray(z, float)

    def scheme_for(self, j: int) -> DirectScheme:
        return self.schemes[j]


def enumerate_schemes(game: ObpGame, grid_step: float = 0.25, response: str = "obedient") -> SchemeCatalog:
    """Persuasive schemes on a probability grid, lifted to normalised losses."""
    units = round(1.0 / grid_step)
    if units < 1 or abs(units * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid step {grid_step} must divide 1")
    n_prof = game.profiles.shape[0]
    rows = _grid_rows(n_prof, units) / units  # [r, s]
    choices = itertools.product(range(rows.shape[0]), repeat=game.n_outcomes)
    idx = np.array(list(choices), dtype=int)  # [n, w]
    phis = rows[idx]  # [n, w, s]
    keep = _persuasion_slack(game, phis) >= -PERSUASION_TOL
    if not keep.any():
        raise EmptyRetentionError(f"no persuasive scheme on a grid of step {grid_step}")
    kept = phis[keep]
    raw = -_sender_utility_batch(game, kept, response)
    lo = raw.min(0)
    span = raw.max(0) - lo
    scale = np.where(span > 1e-12, span, 1.0)
    norm = (raw - lo) / scale
    # deduplicate, keeping the first scheme that reaches each point
    key = np.round(norm, 12)
    uniq, first = np.unique(key, axis=0, return_index=True)
    order = np.lexsort(uniq.T[::-1])
    first = first[order]
    # rounding snaps float residue such as 7e-16 onto the grid value
    pts = np.clip(uniq[order], 0.0, 1.0) + 0.0
    schemes = [DirectScheme(kept[i]) for i in first]
    return SchemeCatalog(
        game=game,
        grid_step=grid_step,
        point_set=PointSet(pts),
        schemes=schemes,
        offset=lo,
        scale=scale,
        n_candidates=phis.shape[0],
        n_retained=int(keep.sum()),
        _raw_points=raw[first],
    )


@dataclass(frozen=True)
class ObpTaskStream:
    """Per-task games sampled uniformly in a box of width ``tau1`` around a mean game."""

    mean_game: ObpGame
    tau1: float
    n_tasks: int
    rounds: int
    seed: int
    type_sequence: str = "iid"  # or "cyclic"

    def game(self, rep: int, t: int) -> ObpGame:
        from ..rng import stream

        rng = stream(self.seed, "obp-task", rep, t)
        g = self.mean_game
        tau = self.tau1
        mu = g.prior + rng.uniform(-tau, tau, g.prior.shape)
        mu = np.maximum(mu, 1e-6)
        mu /= mu.sum()
        us = np.clip(g.sender_utility + rng.uniform(-tau, tau, g.sender_utility.shape), -1.0, 1.0)
        ur = np.clip(g.receiver_utilities + rng.uniform(-tau, tau, g.receiver_utilities.shape), -1.0, 1.0)
        return ObpGame(mu, us, ur)

    def types(self, rep: int, t: int) -> np.ndarray:
        K = self.mean_game.n_types
        if self.type_sequence == "cyclic":
            return np.arange(self.rounds) % K
        if self.type_sequence != "iid":
            raise ValueError(f"unknown type sequence {self.type_sequence!r}")
        from ..rng import stream

        return stream(self.seed, "obp-types", rep, t).integers(K, size=self.rounds)


def load_game(path_or_dict) -> tuple[ObpGame, dict]:
    """Read a game definition; returns the game and the remaining settings."""
    if isinstance(path_or_dict, (str, Path)):
        data = json.loads(Path(path_or_dict).read_text())
    else:
        data = dict(path_or_dict)
    game = ObpGame(data["prior"], data["sender_utility"], data["receiver_utilities"])
    declared = (data.get("outcomes"), data.get("actions"), data.get("types"))
    actual = (game.n_outcomes, game.n_actions, game.n_types)
    for name, d, a in zip(("outcomes", "actions", "types"), declared, actual):
        if d is not None and int(d) != a:
            raise ValueError(f"{name}: declared {d} but tables imply {a}")
    extra = {k: data[k] for k in ("tau1", "grid_step", "seed") if k in data}
    return game, extra
