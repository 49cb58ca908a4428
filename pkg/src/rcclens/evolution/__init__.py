"""Evolutionary search: operators, NSGA-II machinery, fitness functions and the Step-2 searches."""

from .evaluation import Evaluation, EvaluationError, Evaluator, Individual
from .fitness import (
    f1_population,
    f1_values,
    f2_branch,
    f2_matrix,
    f3_branch,
    f3_matrix,
    fitness_f1,
    fitness_f2,
    fitness_f3,
)
from .nsga import (
    MODIFIED,
    ORIGINAL,
    ContractError,
    NSGAResult,
    crowding_assign,
    dominates,
    fast_nondominated_sort,
    nsga2,
    ranks,
    select,
)
from .operators import make_offspring, polynomial_mutation, sbx, tournament
from .search import (
    DEEP_NSGA2,
    NO_UNSAFE,
    NSGA2,
    OK,
    PAIR,
    UNCOVERABLE,
    ReferenceObjective,
    SearchError,
    SearchResult,
    SearchRun,
    Step2Result,
    deep_nsga2_baseline,
    nsga2_baseline,
    nsga2_prime,
    pair_search,
    seed_population,
    step2,
    unique_rows,
)
