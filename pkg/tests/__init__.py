"""Tests various aspects of the bilevel package."""

from .test_errors import *
from .test_log import *
from .test_dump_vec import *
from .test_streams import *
from .test_problem import *
from .test_quadratic import *
from .test_multitask import *
from .test_hyperclean import *
from .test_logreg import *
from .test_serialize import *
from .test_inner import *
from .test_hypergrad import *
from .test_theory import *
from .test_trace import *
from .test_optimizers import *
from .test_config import *
from .test_harness import *
from .test_acceptance import *
