"""Model containers: linear dynamics with separable convex costs, and noise."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from .costs import Cost, cost_from_dict, zero_cost
from .grid import MixedSpace, RegularGrid

PROB_ATOL = 1e-12


def _mat(a, rows: int, cols: int) -> np.ndarray:
    if a is None:
        return np.zeros((rows, cols))
    m = np.asarray(a, dtype=float)
    if m.size == 0:
        return np.zeros((rows, cols))
    return m.reshape(rows, cols)


@dataclass(frozen=True)
class StageData:
    """Everything the operator at one stage needs."""

    A: np.ndarray  # A', d x d
    B: np.ndarray  # B', d x c
    gx: Cost
    gu: Cost


@dataclass
class DpModel:
    """x_{t+1} = A' x_t + B' u_t (+ noise) with cost g_x(x) + g_u(u), terminal g_T.

    ``A_full`` and ``B_full`` are the assembled block matrices
    A' = [[A, 0], [0, D]] and B' = [[B, C], [0, E]]; the first ``d_r`` state
    coordinates and the first ``c_r`` action coordinates are continuous.
    ``stages`` maps a stage index to overrides of any of A, B, gx, gu.
    """

    A_full: np.ndarray
    B_full: np.ndarray
    state_space: MixedSpace
    action_space: MixedSpace
    gx: Cost
    gu: Cost
    gT: Cost
    T: int
    d_r: Optional[int] = None
    c_r: Optional[int] = None
    stages: Dict[int, dict] = field(default_factory=dict)

    def __post_init__(self):
        self.A_full = np.atleast_2d(np.asarray(self.A_full, dtype=float))
        d = self.state_space.dim
        c = self.action_space.dim
        self.B_full = np.asarray(self.B_full, dtype=float).reshape(d, c)
        if self.A_full.shape != (d, d):
            raise ValueError(f"A' must be {d}x{d}")
        if self.T < 1:
            raise ValueError("horizon must be at least 1")
        if self.d_r is None:
            self.d_r = self.state_space.d_r
        if self.c_r is None:
            self.c_r = self.action_space.d_r
        for t, ov in self.stages.items():
            if not 0 <= int(t) < self.T:
                raise ValueError(f"override for stage {t} outside the horizon")
        for t in range(self.T):
            self._check_blocks(self.stage(t))

    def _check_blocks(self, st: StageData) -> None:
        d_r, c_r = self.d_r, self.c_r
        if np.any(st.A[:d_r, d_r:] != 0) or np.any(st.A[d_r:, :d_r] != 0):
            raise ValueError("A' must be block diagonal over the continuous/integer split")
        if np.any(st.B[d_r:, :c_r] != 0):
            raise ValueError("continuous actions must not move integer states")
        Di, Ei = st.A[d_r:, d_r:], st.B[d_r:, c_r:]
        if np.any(Di != np.round(Di)) or np.any(Ei != np.round(Ei)):
            raise ValueError("integer blocks D and E must be integer matrices")

    @classmethod
    def from_blocks(cls, A, B, C=None, D=None, E=None, **kw) -> "DpModel":
        A = np.atleast_2d(np.asarray(A, dtype=float)) if A is not None and np.size(A) else np.zeros((0, 0))
        d_r = A.shape[0]
        d_i = 0 if D is None or np.size(D) == 0 else np.atleast_2d(D).shape[0]
        B = np.zeros((d_r, 0)) if B is None or np.size(B) == 0 else np.asarray(B, dtype=float).reshape(d_r, -1)
        c_r = B.shape[1]
        c_i = 0 if E is None or np.size(E) == 0 else np.atleast_2d(E).shape[1]
        Ap = np.zeros((d_r + d_i, d_r + d_i))
        Bp = np.zeros((d_r + d_i, c_r + c_i))
        Ap[:d_r, :d_r] = A
        Bp[:d_r, :c_r] = B
        if d_i:
            Ap[d_r:, d_r:] = np.atleast_2d(D)
        if c_i:
            Bp[:d_r, c_r:] = _mat(C, d_r, c_i)
            Bp[d_r:, c_r:] = _mat(E, d_i, c_i)
        return cls(Ap, Bp, d_r=d_r, c_r=c_r, **kw)

    # block views
    @property
    def A(self):
        return self.A_full[: self.d_r, : self.d_r]

    @property
    def B(self):
        return self.B_full[: self.d_r, : self.c_r]

    @property
    def C(self):
        return self.B_full[: self.d_r, self.c_r :]

    @property
    def D(self):
        return self.A_full[self.d_r :, self.d_r :]

    @property
    def E(self):
        return self.B_full[self.d_r :, self.c_r :]

    @property
    def dim(self) -> int:
        return self.state_space.dim

    @property
    def action_dim(self) -> int:
        return self.action_space.dim

    def stage(self, t: int) -> StageData:
        ov = self.stages.get(t, {})
        return StageData(
            np.asarray(ov.get("A", self.A_full), dtype=float),
            np.asarray(ov.get("B", self.B_full), dtype=float),
            ov.get("gx", self.gx),
            ov.get("gu", self.gu),
        )

    @property
    def state_grid(self) -> RegularGrid:
        return self.state_space.grid

    @property
    def action_grid(self) -> RegularGrid:
        return self.action_space.grid

    def tau(self) -> float:
        """Largest Euclidean norm of a state in the box."""
        g = self.state_grid
        corners = np.array(list(itertools.product(*zip(g.lower, g.upper))))
        return float(np.max(np.linalg.norm(corners, axis=1)))

    def eta(self, t: Optional[int] = None) -> float:
        """Largest Euclidean norm of B'u over the action box (over stages if t is None)."""
        g = self.action_grid
        corners = np.array(list(itertools.product(*zip(g.lower, g.upper))))
        ts = range(self.T) if t is None else [t]
        return max(float(np.max(np.linalg.norm(corners @ self.stage(s).B.T, axis=1))) for s in ts)

    def is_diagonal(self, t: int) -> bool:
        A = self.stage(t).A
        return bool(np.all(A == np.diag(np.diag(A))))

    # serialization
    def to_dict(self) -> dict:
        stages = {}
        for t, ov in self.stages.items():
            stages[str(t)] = {
                k: (v.to_dict() if isinstance(v, Cost) else np.asarray(v).tolist()) for k, v in ov.items()
            }
        return {
            "A": self.A_full.tolist(),
            "B": self.B_full.tolist(),
            "d_r": self.d_r,
            "c_r": self.c_r,
            "state_space": self.state_space.to_dict(),
            "action_space": self.action_space.to_dict(),
            "gx": self.gx.to_dict(),
            "gu": self.gu.to_dict(),
            "gT": self.gT.to_dict(),
            "T": self.T,
            "stages": stages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DpModel":
        state = MixedSpace.from_dict(d["state_space"])
        action = MixedSpace.from_dict(d["action_space"])
        stages = {}
        for t, ov in d.get("stages", {}).items():
            stages[int(t)] = {
                k: (cost_from_dict(v) if k in ("gx", "gu") else np.asarray(v, dtype=float)) for k, v in ov.items()
            }
        gx = cost_from_dict(d["gx"]) if d.get("gx") else zero_cost(state.dim)
        common = dict(
            state_space=state,
            action_space=action,
            gx=gx,
            gu=cost_from_dict(d["gu"]),
            gT=cost_from_dict(d["gT"]),
            T=int(d["T"]),
            stages=stages,
        )
        if "A" in d and "D" not in d:
            return cls(d["A"], d["B"], d_r=d.get("d_r"), c_r=d.get("c_r"), **common)
        return cls.from_blocks(d.get("A"), d.get("B"), d.get("C"), d.get("D"), d.get("E"), **common)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "DpModel":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class NoiseModel:
    """Finite-support distribution of the additive state noise."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.probs, dtype=float))
        sup = np.asarray(self.support, dtype=float)
        if sup.ndim == 1:
            sup = sup.reshape(len(p), -1)
        if len(p) < 1 or sup.shape[0] != len(p):
            raise ValueError("support and probs must have the same positive length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValueError("probs must be nonnegative and sum to one")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", p)

    @property
    def r(self) -> int:
        return len(self.probs)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @classmethod
    def zero(cls, dim: int) -> "NoiseModel":
        return cls(np.zeros((1, dim)), [1.0])

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d["support"], d["probs"])


NoiseSpec = Union[NoiseModel, Mapping[int, NoiseModel], Sequence[NoiseModel]]


def noise_at(noise: NoiseSpec, t: int, dim: int) -> NoiseModel:
    """Noise entering state x_t; stages without an entry are noiseless."""
    if isinstance(noise, NoiseModel):
        return noise
    if isinstance(noise, Mapping):
        return noise.get(t, NoiseModel.zero(dim))
    return noise[t] if 0 <= t < len(noise) and noise[t] is not None else NoiseModel.zero(dim)


def noise_from_dict(d) -> NoiseSpec:
    if "support" in d:
        return NoiseModel.from_dict(d)
    return {int(t): NoiseModel.from_dict(v) for t, v in d.items()}
