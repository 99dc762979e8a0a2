"""Biochemically informed neural ODEs: masked neural process rates composed
through a stoichiometric layer and fitted to trajectories by RK4 rollouts."""
from .autodiff import Tape, Var, apply, backward, lift
from .model import (BUILDERS, BinodeModel, ProcessSurface, StoichiometricLayer, build_lv_binode,
                    build_monod_binode, build_pk_binode, build_ssystem_binode, build_ultradian_binode,
                    extract_surface)
from .nnp import Nnp, NnpSpec, fit_surface, forward, init
from .odeint import IntegratorConfig, Trajectory, integrate, rollout
from .training import TrainConfig, run_sweep, sample_segments, train

__version__ = "0.1.0"
