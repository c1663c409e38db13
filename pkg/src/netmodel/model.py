"""Network of dynamically coupled linear subsystems.

Subsystem i evolves as

    x_i+ = sum_{j in N_i} A_ij x_j + B_i u_i + G_i w_i

with neighborhood state constraints X_{N_i}, input constraints U_i and an
ellipsoidal disturbance set W_i. Neighborhoods are stored sorted and always
contain i itself; x_{N_i} stacks the states of N_i in that order.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from src.netmodel.sets import DimensionError, Ellipsoid, Polytope


class DisturbanceBoundError(ValueError):
    """Raised when a disturbance sample lies outside its set W_i."""
    pass


@dataclass(frozen=True, eq=False)
class SubsystemSpec:
    """Local dynamics and constraints of one subsystem."""

    index: int
    n: int
    m: int
    p: int
    neighbors: tuple[int, ...]
    A: dict[int, np.ndarray]
    B: np.ndarray
    G: np.ndarray
    X: Polytope
    U: Polytope
    W: Ellipsoid

    def __post_init__(self) -> None:
        object.__setattr__(self, "neighbors", tuple(sorted(set(self.neighbors))))
        object.__setattr__(
            self,
            "A",
            {int(j): np.atleast_2d(np.asarray(a, dtype=float)) for j, a in self.A.items()},
        )
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        object.__setattr__(self, "G", np.atleast_2d(np.asarray(self.G, dtype=float)))

    @property
    def others(self) -> tuple[int, ...]:
        """N_i without i."""
        return tuple(j for j in self.neighbors if j != self.index)


@dataclass(frozen=True, eq=False)
class GlobalMatrices:
    """Dense global view of the network (Ax + Bu + Gw, Hx <= h, Ou <= o)."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    H: np.ndarray
    h: np.ndarray
    O: np.ndarray
    o: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable collection of subsystems plus lifting maps."""

    subsystems: tuple[SubsystemSpec, ...]

    def __post_init__(self) -> None:
        subs = tuple(self.subsystems)
        for position, sub in enumerate(subs):
            if sub.index != position:
                raise DimensionError(
                    f"subsystem at position {position} carries index {sub.index}"
                )
        object.__setattr__(self, "subsystems", subs)

    def __len__(self) -> int:
        return len(self.subsystems)

    def __getitem__(self, i: int) -> SubsystemSpec:
        return self.subsystems[i]

    # ------------------------------------------------------------------
    # Sizes and offsets
    # ------------------------------------------------------------------

    @property
    def M(self) -> int:
        return len(self.subsystems)

    @cached_property
    def state_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.n for s in self.subsystems])]).astype(int)

    @cached_property
    def input_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.m for s in self.subsystems])]).astype(int)

    @cached_property
    def disturbance_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.p for s in self.subsystems])]).astype(int)

    @property
    def n(self) -> int:
        return int(self.state_offsets[-1])

    @property
    def m(self) -> int:
        return int(self.input_offsets[-1])

    @property
    def p(self) -> int:
        return int(self.disturbance_offsets[-1])

    @property
    def neighborhoods(self) -> list[tuple[int, ...]]:
        return [s.neighbors for s in self.subsystems]

    def state_slice(self, i: int) -> slice:
        return slice(int(self.state_offsets[i]), int(self.state_offsets[i + 1]))

    def input_slice(self, i: int) -> slice:
        return slice(int(self.input_offsets[i]), int(self.input_offsets[i + 1]))

    def disturbance_slice(self, i: int) -> slice:
        return slice(int(self.disturbance_offsets[i]), int(self.disturbance_offsets[i + 1]))

    def neighborhood_dim(self, i: int) -> int:
        return sum(self.subsystems[j].n for j in self.subsystems[i].neighbors)

    def neighborhood_slice(self, i: int, j: int) -> slice:
        """Position of x_j inside x_{N_i}."""
        start = 0
        for k in self.subsystems[i].neighbors:
            if k == j:
                return slice(start, start + self.subsystems[k].n)
            start += self.subsystems[k].n
        raise KeyError(f"{j} is not a neighbor of {i}")

    # ------------------------------------------------------------------
    # Lifting maps
    # ------------------------------------------------------------------

    @cached_property
    def T_maps(self) -> list[np.ndarray]:
        """T_i with x_i = T_i x."""
        maps = []
        for i, sub in enumerate(self.subsystems):
            T = np.zeros((sub.n, self.n))
            T[:, self.state_slice(i)] = np.eye(sub.n)
            maps.append(T)
        return maps

    @cached_property
    def W_maps(self) -> list[np.ndarray]:
        """W_i with x_{N_i} = W_i x."""
        return [
            np.vstack([self.T_maps[j] for j in sub.neighbors]) for sub in self.subsystems
        ]

    def local(self, x: np.ndarray, i: int) -> np.ndarray:
        return np.asarray(x)[self.state_slice(i)]

    def neighborhood(self, x: np.ndarray, i: int) -> np.ndarray:
        x = np.asarray(x)
        return np.concatenate([x[self.state_slice(j)] for j in self.subsystems[i].neighbors])

    # ------------------------------------------------------------------
    # Neighborhood and global matrices
    # ------------------------------------------------------------------

    def A_neighborhood(self, i: int) -> np.ndarray:
        """A_{N_i} = [A_ij]_{j in N_i}, zero blocks where no coupling is stored."""
        sub = self.subsystems[i]
        return np.hstack(
            [
                sub.A.get(j, np.zeros((sub.n, self.subsystems[j].n)))
                for j in sub.neighbors
            ]
        )

    @cached_property
    def global_matrices(self) -> GlobalMatrices:
        A = np.zeros((self.n, self.n))
        B = np.zeros((self.n, self.m))
        G = np.zeros((self.n, self.p))
        H_rows, h_rows, O_rows, o_rows = [], [], [], []
        for i, sub in enumerate(self.subsystems):
            rows = self.state_slice(i)
            A[rows, :] = self.A_neighborhood(i) @ self.W_maps[i]
            B[rows, self.input_slice(i)] = sub.B
            G[rows, self.disturbance_slice(i)] = sub.G
            H_rows.append(sub.X.H @ self.W_maps[i])
            h_rows.append(sub.X.h)
            O_block = np.zeros((sub.U.n_rows, self.m))
            O_block[:, self.input_slice(i)] = sub.U.H
            O_rows.append(O_block)
            o_rows.append(sub.U.h)
        return GlobalMatrices(
            A=A,
            B=B,
            G=G,
            H=np.vstack(H_rows),
            h=np.concatenate(h_rows),
            O=np.vstack(O_rows),
            o=np.concatenate(o_rows),
        )

    def lift_gains(self, gains: list[np.ndarray]) -> np.ndarray:
        """Assemble a global gain K (m x n) from neighborhood gains K_i (m_i x n_{N_i})."""
        K = np.zeros((self.m, self.n))
        for i, K_i in enumerate(gains):
            K[self.input_slice(i), :] = K_i @ self.W_maps[i]
        return K

    def block_diag(self, blocks: list[np.ndarray]) -> np.ndarray:
        """Global block-diagonal matrix from per-subsystem blocks (n_i x n_i)."""
        P = np.zeros((self.n, self.n))
        for i, block in enumerate(blocks):
            s = self.state_slice(i)
            P[s, s] = block
        return P

    def state_violation(self, x: np.ndarray) -> float:
        """Largest excess over all neighborhood state constraints."""
        return max(sub.X.violation(self.neighborhood(x, i)) for i, sub in enumerate(self.subsystems))

    def input_violation(self, u: np.ndarray) -> float:
        u = np.asarray(u)
        return max(sub.U.violation(u[self.input_slice(i)]) for i, sub in enumerate(self.subsystems))


def step_truth(
    model: NetworkModel,
    x: np.ndarray,
    u: np.ndarray,
    w: np.ndarray,
    slack: float | None = None,
) -> np.ndarray:
    """
    Advance the true disturbed network by one step, blockwise.

    Args:
        model: Network model
        x: Global state (n)
        u: Global input (m)
        w: Global disturbance (p); every w_i must lie in W_i
        slack: Membership slack for the disturbance check

    Returns:
        Next global state

    Raises:
        DimensionError: If a vector length does not match the model
        DisturbanceBoundError: If some w_i is outside W_i
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    for name, vec, size in (("state", x, model.n), ("input", u, model.m), ("disturbance", w, model.p)):
        if vec.size != size:
            raise DimensionError(f"{name} has length {vec.size}, model expects {size}")

    x_next = np.empty(model.n)
    for i, sub in enumerate(model.subsystems):
        w_i = w[model.disturbance_slice(i)]
        if not sub.W.contains(w_i, slack):
            raise DisturbanceBoundError(
                f"disturbance of subsystem {i} outside W_i: "
                f"w'Qw = {sub.W.level(w_i):.3e} > q = {sub.W.q:.3e}"
            )
        x_next[model.state_slice(i)] = (
            model.A_neighborhood(i) @ model.neighborhood(x, i)
            + sub.B @ u[model.input_slice(i)]
            + sub.G @ w_i
        )
    return x_next
