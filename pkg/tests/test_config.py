import json

import pytest

from app.config import RunConfig, apply_overrides, dump_config, load_config
from app.errors import ConfigError
from app.models import Backend, PsiPair, Stepper, ThetaKind


def test_defaults():
    config = load_config()
    assert config.scenario == "relax"
    assert config.solver.stepper == Stepper.STRANG
    assert config.solver.n_steps == 100
    assert config.dissipation.psi_pair == PsiPair.QUADRATIC


def test_overrides():
    config = load_config(
        overrides=[
            "solver.dt=0.02",
            "grid.nx=4",
            "solver.stepper=euler",
            "solver.backend=quadrature",
            "dissipation.psi_pair=cosh",
            "audit.perturbations=[0.5, 2.0]",
            "workers=3",
        ]
    )
    assert config.solver.dt == 0.02
    assert config.grid.nx == 4
    assert config.solver.stepper == Stepper.EULER
    assert config.solver.backend == Backend.QUADRATURE
    assert config.dissipation.theta == ThetaKind.GEOMETRIC_MEAN
    assert config.audit.perturbations == [0.5, 2.0]
    assert config.workers == 3


@pytest.mark.parametrize(
    "override",
    ["solver.bogus=1", "bogus=1", "grid.d=4", "solver.dt=-1", "no_equals_sign", "scenario.name=x"],
)
def test_invalid_configuration(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_apply_overrides_nests_keys():
    data = apply_overrides({"grid": {"nx": 2}}, ["grid.nv=8", "output.out_dir=results"])
    assert data == {"grid": {"nx": 2, "nv": 8}, "output": {"out_dir": "results"}}


def test_toml_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('scenario = "audit"\n[grid]\nnx = 4\nnv = 8\n[solver]\nt_end = 0.5\n')
    config = load_config(str(path), ["grid.nx=2"])
    assert config.scenario == "audit"
    assert config.grid.nx == 2
    assert config.grid.nv == 8
    assert config.solver.t_end == 0.5


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("does/not/exist.toml")


def test_dumped_config_reproduces_the_run(tmp_path):
    config = load_config(overrides=["solver.dt=0.005", "dissipation.psi_pair=cosh", "output.checkpoint_every=10"])
    path = dump_config(config, tmp_path / "config.json")
    assert load_config(str(path)) == config


def test_environment_variables(monkeypatch):
    monkeypatch.setenv("FUZZY_SOLVER__DT", "0.5")
    monkeypatch.setenv("FUZZY_SEED", "7")
    config = RunConfig()
    assert config.solver.dt == 0.5
    assert config.seed == 7


def test_json_file_and_environment_priority(tmp_path, monkeypatch):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3, "grid": {"nx": 4}, "solver": {"dt": 0.02}}))
    monkeypatch.setenv("FUZZY_SOLVER__DT", "0.05")
    config = load_config(str(path), ["grid.nv=8"])
    assert config.seed == 3
    assert (config.grid.nx, config.grid.nv) == (4, 8)
    assert config.solver.dt == 0.05


@pytest.mark.parametrize("text", ["[grid\nnx = 4\n", "[grid]\nbogus = 1\n"])
def test_bad_toml_file(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_file_is_only_read_inside_load_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("seed = 11\n")
    assert load_config(str(path)).seed == 11
    assert RunConfig().seed == 0
