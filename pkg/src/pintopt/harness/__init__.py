from .baseline import ImexEulerModel, ImexEulerObjective, build_imex_euler_model, run_imex_euler_baseline
from .config import ConfigError, ExperimentConfig
from .experiments import build_hierarchy, build_problem, convergence_study, run_experiment
from .presets import PRESETS, Preset, get_preset
