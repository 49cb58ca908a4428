"""Decision-list learning and unsafe-region expressions."""

from .expression import (
    TRUE,
    And,
    Atom,
    ExpressionError,
    Not,
    Or,
    UnsatisfiableError,
    conj,
    disj,
    evaluate,
    feature_matrix,
    format_number,
    parse,
    render,
)
from .part import (
    CORRECT,
    ERROR,
    DecisionList,
    EmptyExpressionError,
    PARTClassifier,
    Rule,
    UnsafeExpression,
    compile_expression,
    learn_part,
    min_max_box,
    pessimistic_errors,
    sample_expression,
)


def evaluate_expression(expr, space, c) -> bool:
    """Whether one chromosome (or encoded vector) satisfies an expression."""
    values = getattr(c, "values", c)
    node = expr.node() if isinstance(expr, UnsafeExpression) else expr
    return bool(evaluate(node, space, values)[0])
