"""Certificates and sampling oracles for the RPI property of a tube."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np
import structlog
from pydantic import BaseModel

from src.core.config import settings
from src.netmodel import NetworkModel
from src.netmodel.sets import sample_ellipsoid
from src.tube.lmi import neighborhood_block_diag
from src.tube.synthesis import StructuredTube

logger = structlog.get_logger(__name__)


class RpiCertificate(BaseModel):
    """
    Per-subsystem re-evaluation of the synthesized invariance conditions.

    Eigenvalues are compared against ``tolerance * scale[i]``, where
    ``scale[i]`` is the spectral norm of subsystem i's Schur matrix.
    """

    schur_min_eig: list[float]
    decrease_max_eig: list[float]
    budget: list[float]
    scale: list[float]
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(
            schur >= -self.tolerance * scale and decrease <= self.tolerance * scale
            for schur, decrease, scale in zip(self.schur_min_eig, self.decrease_max_eig, self.scale)
        ) and max(self.budget) <= self.tolerance


def check_rpi_lmis(tube: StructuredTube, model: NetworkModel) -> RpiCertificate:
    """
    Re-evaluate the invariance LMI of every subsystem at the returned values.

    Both the full Schur form (with the lifted tau*E_bar_i block) and the
    equivalent quadratic form
    [[A_cl' P_i A_cl - tau P_bar_i, A_cl' P_i G], [G' P_i A_cl, G' P_i G - tau_i Q]] <= 0
    are reported, together with the multiplier budget. The quadratic form is
    evaluated after congruence with diag(E_{N_i}, I), which keeps it on the
    scale of the Schur matrix however large P_i is.
    """
    E_blocks = tube.E_blocks
    schur, decrease, budget, scale = [], [], [], []
    for i, sub in enumerate(model.subsystems):
        E_N = neighborhood_block_diag(model, E_blocks, i)
        A_cl = model.A_neighborhood(i) + sub.B @ tube.gains[i]
        C = A_cl @ E_N
        E_bar = model.W_maps[i] @ model.T_maps[i].T @ E_blocks[i] @ model.T_maps[i] @ model.W_maps[i].T
        n_N = E_N.shape[0]
        full = np.block(
            [
                [tube.tau * E_bar, np.zeros((n_N, sub.p)), C.T],
                [np.zeros((sub.p, n_N)), tube.tau_local[i] * sub.W.Q, sub.G.T],
                [C, sub.G, E_blocks[i]],
            ]
        )
        full_eigs = np.linalg.eigvalsh(0.5 * (full + full.T))
        schur.append(float(np.min(full_eigs)))
        scale.append(max(1.0, float(np.max(np.abs(full_eigs)))))

        P_i = tube.P_blocks[i]
        quad = np.block(
            [
                [A_cl.T @ P_i @ A_cl - tube.tau * tube.P_neighborhood[i], A_cl.T @ P_i @ sub.G],
                [sub.G.T @ P_i @ A_cl, sub.G.T @ P_i @ sub.G - tube.tau_local[i] * sub.W.Q],
            ]
        )
        S = np.block(
            [
                [E_N, np.zeros((n_N, sub.p))],
                [np.zeros((sub.p, n_N)), np.eye(sub.p)],
            ]
        )
        quad = S.T @ quad @ S
        decrease.append(float(np.max(np.linalg.eigvalsh(0.5 * (quad + quad.T)))))
        budget.append(float((tube.tau - 1.0) / model.M + tube.tau_local[i] * sub.W.q))

    return RpiCertificate(
        schur_min_eig=schur,
        decrease_max_eig=decrease,
        budget=budget,
        scale=scale,
        tolerance=settings.sdp_feasibility_tol,
    )


def _sample_disturbances(model: NetworkModel, rng: np.random.Generator, size: int) -> np.ndarray:
    w = np.zeros((size, model.p))
    for i, sub in enumerate(model.subsystems):
        w[:, model.disturbance_slice(i)] = sample_ellipsoid(sub.W.Q, sub.W.q, rng, size)
    return w


def _batched_count(
    samples: int,
    seed: int,
    batch: Callable[[np.random.Generator, int], int],
    workers: Optional[int],
) -> int:
    batch_size = settings.mc_batch_size
    sizes = [batch_size] * (samples // batch_size)
    if samples % batch_size:
        sizes.append(samples % batch_size)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(s), n) for s, n in zip(streams, sizes)]
    with ThreadPoolExecutor(max_workers=workers or settings.mc_workers) as pool:
        return sum(pool.map(lambda job: batch(*job), jobs))


def verify_rpi_monte_carlo(
    tube: StructuredTube,
    model: NetworkModel,
    samples: Optional[int] = None,
    seed: int = 0,
    slack: Optional[float] = None,
    boundary_fraction: float = 0.5,
    workers: Optional[int] = None,
) -> int:
    """
    Count sampled one-step escapes from Omega = {e : e' P e <= 1}.

    Errors are drawn on the surface (``boundary_fraction`` of each batch) and
    uniformly inside Omega, disturbances uniformly in every W_i; each sample is
    propagated through e+ = (A + B K) e + G w.

    Returns:
        Number of samples with e+' P e+ > 1 + slack
    """
    samples = settings.mc_samples if samples is None else samples
    slack = settings.membership_slack if slack is None else slack
    mats = model.global_matrices
    A_cl = mats.A + mats.B @ tube.K
    P = tube.P

    def batch(rng: np.random.Generator, size: int) -> int:
        n_surface = int(round(boundary_fraction * size))
        e = np.vstack(
            [
                sample_ellipsoid(P, 1.0, rng, n_surface, boundary=True),
                sample_ellipsoid(P, 1.0, rng, size - n_surface),
            ]
        )
        w = _sample_disturbances(model, rng, size)
        e_next = e @ A_cl.T + w @ mats.G.T
        levels = np.einsum("ij,jk,ik->i", e_next, P, e_next)
        return int(np.count_nonzero(levels > 1.0 + slack))

    violations = _batched_count(samples, seed, batch, workers)
    logger.info("RPI Monte Carlo check", samples=samples, violations=violations)
    return violations


def verify_budget_split_sampling(
    tube: StructuredTube,
    model: NetworkModel,
    samples: Optional[int] = None,
    seed: int = 0,
    slack: Optional[float] = None,
    workers: Optional[int] = None,
) -> int:
    """
    Sample arbitrary budget splits beta (beta >= 0, sum <= 1) and local errors
    e_i' P_i e_i <= beta_i; count successors leaving Omega.
    """
    samples = settings.mc_samples if samples is None else samples
    slack = settings.membership_slack if slack is None else slack
    mats = model.global_matrices
    A_cl = mats.A + mats.B @ tube.K
    P = tube.P

    def batch(rng: np.random.Generator, size: int) -> int:
        betas = rng.dirichlet(np.ones(model.M), size) * rng.random((size, 1)) ** 0.25
        e = np.zeros((size, model.n))
        on_surface = rng.random(size) < 0.5
        for i in range(model.M):
            local = sample_ellipsoid(tube.P_blocks[i], 1.0, rng, size)
            local_surface = sample_ellipsoid(tube.P_blocks[i], 1.0, rng, size, boundary=True)
            local = np.where(on_surface[:, None], local_surface, local)
            e[:, model.state_slice(i)] = local * np.sqrt(betas[:, i : i + 1])
        w = _sample_disturbances(model, rng, size)
        e_next = e @ A_cl.T + w @ mats.G.T
        levels = np.einsum("ij,jk,ik->i", e_next, P, e_next)
        return int(np.count_nonzero(levels > 1.0 + slack))

    violations = _batched_count(samples, seed, batch, workers)
    logger.info("Budget-split RPI check", samples=samples, violations=violations)
    return violations
