import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exprtools import (
    central_difference,
    derivative_oracle,
    near_singular,
    random_expr,
    render_expr,
    render_model,
)
from hftlab.dsl import (
    BinOp,
    Call,
    Const,
    EvaluationError,
    ModelError,
    ModelSyntaxError,
    Neg,
    Param,
    Pow,
    differentiate,
    evaluate,
    evaluate_derivative,
    evaluate_matrix,
    evaluate_second_derivative,
    parse_expr,
    parse_model,
)
from hftlab.models import BUILTIN_NAMES, builtin_model

LAM = Param()


def test_parse_diagonal_family():
    m = parse_model("matrix H { dim = 2; [1,1] = lambda; [2,2] = -lambda; }")
    assert m.dimension == 2
    assert list(m.matrices) == ["H"]
    np.testing.assert_array_equal(evaluate_matrix(m, "H", 0.7), np.diag([0.7, -0.7]))


def test_offdiagonal_stored_once_and_mirrored():
    m = parse_model("matrix H { dim = 2; [1,2] = 0.5; [1,1] = lambda; [2,2] = -lambda; }")
    assert [(r, c) for r, c, _ in m.matrices["H"].entries] == [(1, 2), (1, 1), (2, 2)]
    M = evaluate_matrix(m, "H", 0.0)
    np.testing.assert_array_equal(M, [[0, 0.5], [0.5, 0]])


def test_complex_offdiagonal_is_conjugated():
    m = parse_model("matrix H { dim = 2; [1,2] = 2 + 3*i*lambda; }")
    M = evaluate_matrix(m, "H", 1.0)
    assert M[0, 1] == 2 + 3j
    assert M[1, 0] == 2 - 3j
    assert np.array_equal(M, M.conj().T)


def test_comments_and_multiple_matrices():
    text = """
    # coupled levels
    matrix H {
        dim = 2;      # size
        [1,1] = lambda;
    }
    matrix A { dim = 2; [2,2] = lambda^2; }
    """
    m = parse_model(text)
    assert "A" in m and "W" not in m
    np.testing.assert_array_equal(evaluate_matrix(m, "A", 3.0), np.diag([0, 9]))


@pytest.mark.parametrize(
    "text, message, line, column",
    [
        ("matrix H { dim = 2; [2,1] = 1; }", "row > col", 1, 21),
        ("matrix H { dim = 2; [1,3] = 1; }", "out of bounds", 1, 24),
        ("matrix H { dim = 2; [1,1] = 1; [1,1] = 2; }", "duplicate entry", 1, 32),
        ("matrix W { dim = 2; [1,1] = 1; }", 'missing matrix "H"', 1, 1),
        ("matrix H { dim = 2; [1,1] = tan(lambda); }", "unknown function", 1, 29),
        ("matrix H { dim = 2; [1,1] = 1 }", "expected ';'", 1, 31),
        ("matrix H {\n  dim = 2;\n  [1,1] = lambda $ 2;\n}", "unexpected character", 3, 18),
        ("matrix H { dim = 2; [1,1] = lambda^0.5; }", "expected integer exponent", 1, 36),
        ("matrix H { dim = 0; }", "dimension must be positive", 1, 18),
        ("matrix H { dim = 2; }\nmatrix H { dim = 2; }", "declared twice", 2, 1),
        ("matrix H { dim = 2; }\nmatrix A { dim = 3; }", "has dim 3", 2, 1),
        ("", "empty model", 1, 1),
        ("matrix H { dim = 2; [1,1] = x; }", "unknown identifier", 1, 29),
    ],
)
def test_malformed_models_report_position(text, message, line, column):
    with pytest.raises(ModelSyntaxError) as info:
        parse_model(text)
    err = info.value
    assert message in err.message
    assert (err.line, err.column) == (line, column)
    assert str(err).startswith(f"line {line}, column {column}:")


def test_precedence_and_unary_minus():
    assert evaluate(parse_expr("1 + 2*3"), 0) == 7
    assert evaluate(parse_expr("2*3^2"), 0) == 18
    assert evaluate(parse_expr("-lambda^2"), 3.0) == -9
    assert evaluate(parse_expr("2*-3"), 0) == -6
    assert evaluate(parse_expr("8/2/2"), 0) == 2
    assert evaluate(parse_expr("lambda^-2"), 2.0) == 0.25
    assert evaluate(parse_expr("1.5e1 + .5"), 0) == 15.5


def test_constants_are_folded_at_parse_time():
    assert parse_expr("4 + 2*i") == Const(4 + 2j)
    assert parse_expr("-0.5") == Const(-0.5 + 0j)
    assert parse_expr("sin(lambda)") == Call("sin", LAM)


def test_derivative_examples():
    assert differentiate(LAM) == Const(1 + 0j)
    assert differentiate(Const(4 + 2j)) == Const(0j)
    e = Call("sin", Pow(LAM, 2))
    de = differentiate(e)
    for lam in (0.3, 1.7):
        expected = math.cos(lam**2) * 2 * lam
        fd = central_difference(lambda x: evaluate(e, x), lam)
        assert abs(evaluate(de, lam) - expected) <= 1e-12
        assert abs(evaluate(de, lam) - fd) <= 1e-7 * abs(fd)


@pytest.mark.parametrize(
    "e, lam",
    [
        (BinOp("/", LAM, BinOp("+", LAM, Const(2 + 0j))), 0.4),
        (Call("sqrt", BinOp("+", Pow(LAM, 2), Const(1 + 0j))), -1.2),
        (Call("ln", Call("exp", Neg(LAM))), 0.8),
        (Call("cos", BinOp("*", Const(1j), LAM)), 0.6),
        (Pow(BinOp("-", LAM, Const(3 + 0j)), -3), 1.1),
        (Pow(LAM, 0), 1.5),
    ],
)
def test_derivative_rules_against_fd(e, lam):
    fd = central_difference(lambda x: evaluate(e, x), lam)
    assert abs(evaluate(differentiate(e), lam) - fd) <= 1e-8 * (1 + abs(fd))


def test_sin_entry_derivative_at_zero():
    m = parse_model("matrix H { dim = 1; [1,1] = sin(lambda); }")
    dH = evaluate_derivative(m, "H", 0.0)
    fd = central_difference(lambda x: evaluate_matrix(m, "H", x)[0, 0].real, 0.0)
    assert dH[0, 0] == 1.0
    assert abs(dH[0, 0] - fd) <= 1e-7


def test_second_derivative():
    m = parse_model("matrix H { dim = 1; [1,1] = lambda^3; }")
    assert evaluate_second_derivative(m, "H", 2.0)[0, 0] == 12.0


def test_builtin_evaluations():
    np.testing.assert_array_equal(evaluate_matrix(builtin_model("crossing"), "H", 2.0), np.diag([2, -2]))
    np.testing.assert_array_equal(evaluate_matrix(builtin_model("avoided"), "H", 0.0), [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(evaluate_derivative(builtin_model("crossing"), "H", -0.3), np.diag([1, -1]))
    np.testing.assert_array_equal(evaluate_derivative(builtin_model("avoided"), "H", 4.0), [[1, 0], [0, -1]])


def test_nonreal_diagonal_rejected():
    m = parse_model("matrix H { dim = 1; [1,1] = i*lambda; }")
    with pytest.raises(EvaluationError, match="not real"):
        evaluate_matrix(m, "H", 1.0)
    # at lambda = 0 the entry is real
    assert evaluate_matrix(m, "H", 0.0)[0, 0] == 0


def test_singular_point_is_evaluation_error_not_parse_error():
    m = parse_model("matrix H { dim = 1; [1,1] = 1/lambda + ln(lambda^2); }")
    with pytest.raises(EvaluationError):
        evaluate_matrix(m, "H", 0.0)
    assert np.isfinite(evaluate_matrix(m, "H", 2.0)).all()


def test_unknown_matrix_name():
    with pytest.raises(ModelError, match="no matrix named"):
        evaluate_matrix(builtin_model("crossing"), "A", 0.0)


def test_expression_nodes_validate_arity_and_kind():
    with pytest.raises(TypeError):
        Pow(LAM, 0.5)
    with pytest.raises(ValueError):
        Call("tan", LAM)
    with pytest.raises(ValueError):
        BinOp("%", LAM, LAM)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_are_exactly_hermitian_on_grid(name):
    m = builtin_model(name)
    for lam in np.linspace(-2, 2, 17):
        M = evaluate_matrix(m, "H", lam)
        assert np.array_equal(M, M.conj().T)
        dM = evaluate_derivative(m, "H", lam)
        assert np.array_equal(dM, dM.conj().T)


def _entry_order_free(m):
    return {
        name: (spec.dim, frozenset((r, c, e) for r, c, e in spec.entries))
        for name, spec in m.matrices.items()
    }


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_render_roundtrip_builtins(name):
    m = builtin_model(name)
    assert _entry_order_free(parse_model(render_model(m))) == _entry_order_free(m)


def test_render_roundtrip_random_models():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        pairs = [(r, c) for r in range(1, n + 1) for c in range(r, n + 1)]
        lines = [f"matrix H {{ dim = {n};"]
        for r, c in pairs:
            if rng.random() < 0.7:
                lines.append(f"[{r},{c}] = {render_expr(random_expr(rng, 4))};")
        lines.append("}")
        m = parse_model("\n".join(lines))
        again = parse_model(render_model(m))
        assert _entry_order_free(again) == _entry_order_free(m)


@st.composite
def expressions(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_expr(np.random.default_rng(seed), draw(st.integers(0, 6)))


@settings(max_examples=150, deadline=None)
@given(expressions(), st.floats(-2, 2))
def test_derivative_matches_oracle(e, lam):
    try:
        if near_singular(e, lam):
            return
        value = evaluate(e, lam)
        expected, _ = derivative_oracle(e, lam)
    except (EvaluationError, OverflowError, ZeroDivisionError, ValueError):
        return
    got = evaluate(differentiate(e), lam)
    assert abs(got - expected) <= 1e-6 * (1 + max(abs(value), abs(got)))


def test_evaluation_is_thread_safe():
    from concurrent.futures import ThreadPoolExecutor

    m = builtin_model("rotating")
    grid = np.linspace(-1, 1, 64)
    serial = [evaluate_derivative(m, "H", x) for x in grid]
    with ThreadPoolExecutor(8) as pool:
        parallel = list(pool.map(lambda x: evaluate_derivative(m, "H", x), grid))
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)


def test_cmath_branch_used_for_sqrt_of_negative():
    e = parse_expr("sqrt(lambda)")
    assert evaluate(e, -4.0) == cmath.sqrt(-4)
