"""Numerical toolkit for locally doubling metric measure spaces with weighted metrics.

Weighted spaces ``(R^d, rho_phi, mu_{+-phi})`` are discretised into finite
metric measure spaces, on which dyadic cubes, isoperimetric constants,
BMO and Hardy-space machinery and singular-integral constants are
computed and checked.
"""

from .errors import *  # noqa: F401,F403
from .weights import *  # noqa: F401,F403
from .space import *  # noqa: F401,F403
from .cubes import *  # noqa: F401,F403
from .isoperimetry import *  # noqa: F401,F403
from .bmo import *  # noqa: F401,F403
from .hardy import *  # noqa: F401,F403
from .maximal import *  # noqa: F401,F403
from .kernels import *  # noqa: F401,F403
from .suites import *  # noqa: F401,F403
from .reports import ExperimentConfig, Report, emit_report, run_experiment  # noqa: F401

__version__ = "0.1.0"
