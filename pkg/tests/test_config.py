import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave.config import (
    EXPERIMENTS,
    ExperimentBlock,
    ExperimentConfig,
    FamilyBlock,
    SolverBlock,
    parse_config,
    serialize_config,
)
from dampwave.errors import ConfigurationError


def test_defaults_from_empty_text():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.domain.lengths == (math.pi,)


def test_lists_and_inline_comments():
    cfg = parse_config("[family]\neps = 0.0, 0.5 ; grid\nphases = 0, 1.5\n[solver]\ndt = 0.01  # step\n")
    assert cfg.family.eps == (0.0, 0.5) and cfg.family.phases == (0.0, 1.5)
    assert cfg.solver.dt == 0.01


def test_unknown_key_line_number():
    with pytest.raises(ConfigurationError) as info:
        parse_config("[solver]\ndt = 0.01\nstep = 3\n")
    assert info.value.line == 3 and info.value.key == "step"


def test_unknown_section_line_number():
    with pytest.raises(ConfigurationError) as info:
        parse_config("[solver]\ndt = 0.01\n\n[plots]\nx = 1\n")
    assert info.value.line == 4


@pytest.mark.parametrize("text,key,line", [
    ("[solver]\ndt = -1\n", "solver.dt", 2),
    ("[solver]\nmethod = euler\n", "solver.method", 2),
    ("[domain]\nN = 2.5\n", "domain.N", 2),
    ("[family]\nkappa = 4\n", "family.kappa", 2),
    ("[family]\neps = 0.5, 1.5\n", "family.eps", 2),
    ("[experiment]\nkind = fly\n", "experiment.kind", 2),
    ("[solver]\n\nhorizon = nan\n", "solver.horizon", 3),
])
def test_invalid_values(text, key, line):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text)
    assert info.value.key == key and info.value.line == line


def test_semicontinuity_needs_zero():
    with pytest.raises(ConfigurationError):
        parse_config("[family]\neps = 0.5, 0.1\n[experiment]\nkind = semicontinuity\n")


def test_with_seed():
    assert ExperimentConfig().with_seed(7).experiment.seed == 7


finite = st.floats(0.001, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=4),
    st.lists(st.floats(-10, 10), min_size=1, max_size=4),
    finite,
    st.sampled_from(["rk4", "exp_mode"]),
    st.integers(1, 50),
    st.sampled_from(EXPERIMENTS),
    st.integers(0, 2**31),
)
def test_round_trip(eps, phases, dt, method, rec, kind, seed):
    if kind == "semicontinuity":
        eps = eps + [0.0]
    cfg = ExperimentConfig(
        family=FamilyBlock(eps=tuple(eps), phases=tuple(phases)),
        solver=SolverBlock(dt=dt, method=method, record_every=rec),
        experiment=ExperimentBlock(kind=kind, seed=seed),
    )
    assert parse_config(serialize_config(cfg)) == cfg


def test_serialized_is_canonical():
    cfg = replace(ExperimentConfig(), solver=SolverBlock(dt=0.1 + 0.2))
    text = serialize_config(cfg)
    assert serialize_config(parse_config(text)) == text
