from pathlib import Path

import numpy as np
import pytest

from src.coefficients import Relation
from src.config import DEFAULT_CONFIG_PATH, ConfigError, InitialSpec, load_config, parse_config
from src.paths import FunctionalKind
from src.scheme import Truncation

MINIMAL = """
scheme:
  steps_M: 10
  particles_N: 50
models:
  down: gbm(0.05, 1.0)
  up:
    builtin: gbm(0.15, 1.0)
    initial: {distribution: normal, mean: 1.0, std: 0.1}
order_check:
  lower: down
  upper: up
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("MCV_THREADS", raising=False)
    monkeypatch.delenv("MCV_OUT_DIR", raising=False)


def test_default_document_loads():
    config = load_config(DEFAULT_CONFIG_PATH)
    assert config.scheme.steps_M == 100
    assert set(config.models) == {"down", "y", "up"}
    assert config.bound_check.relation == "bounding"
    assert config.bound_check.strict_after == 0.2
    assert config.models["y"].model.label == "y"
    assert [f.kind for f in config.functionals] == [FunctionalKind.TERMINAL_CALL_SQUARE, FunctionalKind.SUP_PATH]


def test_minimal_document_and_defaults():
    config = parse_config(MINIMAL)
    assert config.scheme.horizon_T == 1.0
    assert config.scheme.truncation is Truncation.TRUNCATED
    assert config.order_check.relation is Relation.ASSUMPTION_II
    assert config.order_check.strike_count == 129
    assert config.strike_grid() is None
    assert config.outputs.directory == Path("output")
    pair = config.order_pair()
    assert pair.lower.label == "down" and pair.upper.label == "up"


def test_initial_laws():
    config = parse_config(MINIMAL)
    assert np.all(config.initial_measure("down").samples == 1.0)
    normal = config.initial_measure("up")
    assert normal.size == 50
    assert normal.mean == pytest.approx(1.0, abs=1e-12)
    uniform = InitialSpec("uniform", low=0.0, high=2.0).measure(4)
    assert uniform.samples.tolist() == pytest.approx([0.25, 0.75, 1.25, 1.75])


def test_builtin_reference_resolves_outside_models():
    config = parse_config(MINIMAL)
    assert config.model("example1_y", "bound_check.mid").label == "example1_y"
    with pytest.raises(ConfigError) as info:
        config.model("nothing", "bound_check.mid")
    assert info.value.field == "bound_check.mid"


def test_overrides_and_environment(monkeypatch):
    monkeypatch.setenv("MCV_THREADS", "3")
    monkeypatch.setenv("MCV_OUT_DIR", "from-env")
    config = parse_config(MINIMAL)
    assert config.scheme.threads == 3
    assert config.outputs.directory == Path("from-env")

    config = parse_config(MINIMAL, overrides={"threads": 2, "seed": 99, "out": "cli", "allow_large_h": True})
    assert config.scheme.threads == 2
    assert config.scheme.master_seed == 99
    assert config.scheme.allow_large_h is True
    assert config.outputs.directory == Path("cli")


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("MCV_THREADS", "many")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL)


def test_error_carries_field_and_line():
    with pytest.raises(ConfigError) as info:
        parse_config("scheme:\n  steps_M: zero\n")
    assert info.value.field == "scheme.steps_M"
    assert info.value.line == 2
    assert str(info.value).startswith("scheme.steps_M (line 2):")


@pytest.mark.parametrize("text,field", [
    ("extras: 1\n", "extras"),
    ("scheme:\n  step_M: 10\n", "scheme.step_M"),
    ("models:\n  bad: heston(1)\n", "models.bad.builtin"),
    ("models:\n  bad:\n    drift: 'x +'\n    diffusion: x\n    lip_x_drift: 1\n    lip_x_diffusion: 1\n", "models.bad"),
    ("models:\n  bad:\n    drift: x\n", "models.bad.diffusion"),
    ("order_check:\n  lower: missing\n", "order_check.lower"),
    ("order_check:\n  relation: assumption_III\n", "order_check.relation"),
    ("order_check:\n  strikes: [1, 0]\n", "order_check.strikes"),
    ("order_check:\n  probes: 10\n", "order_check.probes"),
    ("bound_check:\n  relation: sandwich\n", "bound_check.relation"),
    ("bound_check:\n  strict_after: -0.1\n", "bound_check.strict_after"),
    ("convergence:\n  ladder: [25, 60]\n", "convergence.ladder"),
    ("outputs:\n  marginal_steps: [500]\n", "outputs.marginal_steps"),
    ("functionals:\n  - kind: user_composite\n", "functionals[0]"),
    ("functionals:\n  - kind: user_composite\n    expression: 'median(x)'\n", "functionals[0]"),
])
def test_validation_errors(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_strict_after_default_and_null():
    assert parse_config(MINIMAL).bound_check.strict_after == 0.2
    assert parse_config("bound_check:\n  strict_after: null\n").bound_check.strict_after is None
    assert parse_config("bound_check:\n  strict_after: 0.5\n").bound_check.strict_after == 0.5


def test_invalid_yaml_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("scheme:\n  steps_M: [1,\n")
    assert info.value.line is not None


def test_scheme_values_are_checked():
    with pytest.raises(ConfigError) as info:
        parse_config("scheme:\n  horizon_T: -1\n")
    assert info.value.field == "scheme"


def test_custom_model_and_functionals():
    config = parse_config("""
models:
  y:
    drift: "0.05 * x * (mean_sin2 + 2)"
    diffusion: x
    lip_x_drift: 0.15
    lip_x_diffusion: 1.0
    state_floor: 0
functionals:
  - terminal_value
  - kind: user_composite
    name: call_on_mean
    expression: "max(path_mean - 1, 0)"
order_check:
  strikes: [-1, 0, 1]
""")
    assert config.models["y"].model.state_floor == 0.0
    assert [f.name for f in config.functionals] == ["terminal_value", "call_on_mean"]
    np.testing.assert_array_equal(config.strike_grid(), [-1.0, 0.0, 1.0])


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config(Path("/nonexistent/config.yaml"))
