from .comm import CommunicationError, CommunicationTimeout, WorkerFailure, run_workers
from .controller import (NonConvergenceError, SolveReport, StepRecord, StepSolver, Tolerance,
                         convergence_rule, mlsdc_step, pfasst_solve, worker_solve)
from .hierarchy import Equation, Hierarchy, LevelSpec, TimeDecomposition
