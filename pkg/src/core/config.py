"""Application configuration using Pydantic Settings."""

from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables (prefix ``DMPSC_``)."""

    model_config = SettingsConfigDict(
        env_prefix="DMPSC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ==========================================================================
    # Numerics
    # ==========================================================================
    membership_slack: float = Field(
        default=1e-9,
        ge=0.0,
        le=1e-3,
        description="Absolute slack for polytope / ellipsoid membership tests",
    )
    sdp_feasibility_tol: float = Field(
        default=1e-7,
        gt=0.0,
        le=1e-3,
        description="Accepted residual when re-checking synthesized LMIs",
    )
    psd_margin: float = Field(
        default=1e-9,
        ge=0.0,
        le=1e-3,
        description="epsilon*I added to strict blocks of every LMI",
    )
    tube_min_shape: float = Field(
        default=1e-6,
        gt=0.0,
        le=1.0,
        description="Lower eigenvalue bound on tube shape inverses E_i",
    )
    disturbance_free_shape: float = Field(
        default=1e-4,
        gt=0.0,
        le=1.0,
        description="Lower eigenvalue bound on E_i of subsystems with W_i = {0}",
    )
    solver_tolerance: float = Field(default=1e-8, gt=0.0, le=1e-3)
    passthrough_tol: float = Field(
        default=1e-6,
        gt=0.0,
        description="Objective below which a certified input counts as pass-through",
    )
    passthrough_input_tol: float = Field(
        default=1e-5,
        gt=0.0,
        description="Largest input change still reported as an unmodified proposal",
    )

    # ==========================================================================
    # Solvers
    # ==========================================================================
    conic_solver: str = Field(default="CLARABEL", description="Primary cvxpy solver")
    fallback_solver: str = Field(
        default="SCS",
        description="Solver tried when the primary one raises",
    )
    solver_max_iter: int = Field(default=500, ge=10, le=100000)

    # ==========================================================================
    # Tube synthesis
    # ==========================================================================
    tau_preset: float = Field(default=0.055, gt=0.0, lt=1.0)
    tau_grid_points: int = Field(default=12, ge=2, le=200)
    tau_search_iterations: int = Field(
        default=12,
        ge=0,
        le=100,
        description="Golden-section refinement steps after the grid",
    )
    tau_workers: int = Field(default=1, ge=1, le=64)
    containment_fraction: float = Field(
        default=0.6,
        gt=0.0,
        lt=1.0,
        description="Largest share of an original offset a tube support may use",
    )
    mc_samples: int = Field(default=10_000, ge=1)
    mc_batch_size: int = Field(default=2_000, ge=1)
    mc_workers: int = Field(default=1, ge=1, le=64)

    # ==========================================================================
    # Terminal synthesis
    # ==========================================================================
    terminal_contraction: float = Field(
        default=0.98,
        gt=0.0,
        le=1.0,
        description="Decrease factor lambda in the terminal Lyapunov LMI",
    )
    terminal_min_shape: float = Field(
        default=1e-5,
        gt=0.0,
        le=1.0,
        description="Lower eigenvalue bound on terminal shape inverses E_f,i",
    )

    # ==========================================================================
    # Certifier
    # ==========================================================================
    horizon: int = Field(default=10, ge=1, le=200)

    # ==========================================================================
    # Consensus ADMM
    # ==========================================================================
    admm_rho: float = Field(default=1.0, gt=0.0)
    admm_max_iter: int = Field(default=400, ge=1, le=100000)
    admm_tol: float = Field(default=1e-5, gt=0.0)
    admm_residual_balancing: bool = Field(default=False)
    admm_parallel: bool = Field(
        default=False,
        description="Dispatch agent solves concurrently within a round",
    )

    # ==========================================================================
    # Benchmark & simulation
    # ==========================================================================
    sim_steps: int = Field(default=20, ge=1)
    bench_runs: int = Field(default=20, ge=1)
    bench_workers: int = Field(default=1, ge=1, le=64)
    policy_state_weight: float = Field(default=0.5, gt=0.0)
    policy_input_weight: float = Field(default=1.0, gt=0.0)

    # ==========================================================================
    # Observability
    # ==========================================================================
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="console")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        v_upper = v.upper()
        if v_upper not in valid_levels:
            raise ValueError(f"log_level must be one of {valid_levels}")
        return v_upper

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Validate log renderer."""
        v_lower = v.lower()
        if v_lower not in {"json", "console"}:
            raise ValueError("log_format must be 'json' or 'console'")
        return v_lower

    @field_validator("conic_solver", "fallback_solver")
    @classmethod
    def normalize_solver(cls, v: str) -> str:
        """Solver names are matched upper-case by cvxpy."""
        return v.upper()


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Global settings instance
settings = get_settings()
