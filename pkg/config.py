"""
Configuration management for the fiber solver.
Holds model, grid, optimizer and study defaults plus environment settings.
"""
import os
from dotenv import load_dotenv


class ModelDefaults:
    """Physical defaults of the hanging fiber set-up."""

    # Line weight and bending stiffness
    OMEGA = 1e-5
    BEND = 1e-9

    # Fiber length and simulated end time
    LENGTH = 1.0
    END_TIME = 1e-3

    # Planar by default; every reference scenario lives in the e1/e2 plane
    DIM = 2

    # Direction of gravity, e_g = -e1
    GRAVITY_DIR = (-1.0, 0.0)

    @classmethod
    def gravity_dir(cls, dim):
        """
        Get the default gravity direction padded to the ambient dimension.

        Args:
            dim (int): Ambient dimension (2 or 3).

        Returns:
            tuple: Unit vector of length dim.
        """
        return tuple(cls.GRAVITY_DIR) + (0.0,) * (dim - len(cls.GRAVITY_DIR))


class GridDefaults:
    """Spatial discretization defaults."""

    NODES = 300


class OptimizerDefaults:
    """Projected gradient defaults."""

    TOL_A = 1e-3
    TOL_R = 1e-2
    MAX_ITER = 10000

    # Projected Armijo rule
    SIGMA0 = 1.0
    BETA = 0.5
    ARMIJO_C = 1e-4
    SIGMA_MIN = 1e-16

    PROJECTION = "diagonal"
    GRADIENT_METRIC = "riesz"
    STATIONARITY_NORM = "full"


class StudyConfig:
    """Configuration for the time-step studies."""

    # tau_i = 2^-i * TAU_BASE for i = 0..TAU_COUNT-1
    TAU_BASE = 1e-3
    TAU_COUNT = 8
    T_STAR = 1e-3
    REFERENCE_INDEX = 7

    # Combined-force bound scenario
    BOUND_TAU = 1.25e-4
    BOUND_HORIZON = 0.05

    # Worker threads for independent tau rows (loaded from environment)
    THREADS = None

    @classmethod
    def _load_threads(cls):
        """Load the worker count from environment (from .env file)."""
        if cls.THREADS is None:
            load_dotenv()
            raw = os.getenv("FIBER_THREADS", "1")
            try:
                threads = int(raw)
            except ValueError:
                raise ValueError(f"FIBER_THREADS must be a positive integer, got {raw!r}")
            if threads < 1:
                raise ValueError(f"FIBER_THREADS must be a positive integer, got {raw!r}")
            cls.THREADS = threads

    @classmethod
    def get_threads(cls):
        """Get the number of worker threads for study rows."""
        cls._load_threads()
        return cls.THREADS

    @classmethod
    def taus(cls, count=None, base=None):
        """
        Get the halving sequence of time steps.

        Args:
            count (int, optional): Number of steps. Defaults to TAU_COUNT.
            base (float, optional): Coarsest step. Defaults to TAU_BASE.

        Returns:
            list: [base, base/2, base/4, ...] of the given length.
        """
        count = cls.TAU_COUNT if count is None else count
        base = cls.TAU_BASE if base is None else base
        return [base * 2.0 ** (-i) for i in range(count)]


class AppConfig:
    """General application configuration."""

    APP_NAME = "Fiber Solver"

    load_dotenv()

    # Enable the JSONL solve log
    DEBUG = os.getenv("DEBUG", "False").lower() == "true"

    LOG_DIR = os.getenv("FIBER_LOG_DIR", "logs/")

    @classmethod
    def validate_config(cls):
        """
        Validate that environment-driven configuration is usable.

        Raises:
            ValueError: If an environment value is invalid.
        """
        try:
            StudyConfig.get_threads()
        except ValueError as e:
            raise ValueError(f"Study Configuration Error: {e}")
