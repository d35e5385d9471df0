from apexrace._core import (
    Action,
    ApexError,
    BaselineOptions,
    CheckpointError,
    ConfigError,
    EnvConfig,
    EvalReport,
    FrenetPose,
    ParseError,
    Policy,
    RacingEnv,
    Track,
    UsageError,
    VehicleParams,
    VehicleState,
    evaluate_baseline,
    evaluate_policy,
    integrate_step,
    load_params,
    save_params,
    simulate_log,
)

__all__ = [
    "Action",
    "ApexError",
    "BaselineOptions",
    "CheckpointError",
    "ConfigError",
    "EnvConfig",
    "EvalReport",
    "FrenetPose",
    "ParseError",
    "Policy",
    "RacingEnv",
    "Track",
    "UsageError",
    "VehicleParams",
    "VehicleState",
    "evaluate_baseline",
    "evaluate_policy",
    "integrate_step",
    "load_params",
    "save_params",
    "simulate_log",
]
