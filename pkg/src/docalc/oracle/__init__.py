"""Ground-truth evaluation on fully specified discrete models."""

from .falsify import falsify_identifiability, total_variation
from .scm import (DiscreteSCM, conditional_table, Dist, NonNumericOutcome, UnboundPopulation, ZeroDenominator,
                  dump_scm, eval_estimand, eval_interventional, eval_nde, eval_observational,
                  load_scm, random_scm, restrict)

__all__ = ["DiscreteSCM", "conditional_table", "falsify_identifiability", "total_variation", "Dist", "NonNumericOutcome", "UnboundPopulation", "ZeroDenominator",
           "dump_scm", "eval_estimand", "eval_interventional", "eval_nde", "eval_observational",
           "load_scm", "random_scm", "restrict"]
