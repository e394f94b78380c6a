import numpy as np
import pytest

from kernpool import (
    EnergyKernel,
    MbmParams,
    Panel,
    ScenarioConfig,
    Strategy,
    fit,
    generate_scenario,
    load_model,
    load_panel,
    load_preset,
    save_model,
    save_panel,
)
from kernpool.data import PRESETS, FittedModel, ModelFormatError, PanelFormatError, scenario_from_ini
from kernpool.evaluation import pit_batch, pit_histogram
from kernpool.pooling import combine_panel


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_minimal_panel(tmp_path):
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1.5\n")
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value\n0,0,2.0\n")
    p = load_panel(f, o)
    assert (p.n, p.J, p.member_counts, p.d) == (1, 1, (1,), 1)
    assert p.obs[0, 0] == 2.0 and p.alphas[0] == 1.0


def test_missing_member_names_case_and_model(tmp_path):
    f = _write(
        tmp_path / "f.csv",
        "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n0,A,1,0,2\n1,A,0,0,3\n",
    )
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value\n0,0,0\n1,0,0\n")
    with pytest.raises(PanelFormatError, match=r"case '1', model 'A'"):
        load_panel(f, o)


def test_missing_model_and_observation(tmp_path):
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n0,B,0,0,2\n1,A,0,0,3\n")
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value\n0,0,0\n1,0,0\n")
    with pytest.raises(PanelFormatError, match=r"case '1' is missing model 'B'"):
        load_panel(f, o)
    f2 = _write(tmp_path / "f2.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n1,A,0,0,3\n")
    o2 = _write(tmp_path / "o2.csv", "case_id,dim_index,value\n0,0,0\n")
    with pytest.raises(PanelFormatError, match="has no observation"):
        load_panel(f2, o2)


def test_non_numeric_value_cites_row(tmp_path):
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n0,A,1,0,abc\n")
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value\n0,0,0\n")
    with pytest.raises(PanelFormatError, match="row 3"):
        load_panel(f, o)


def test_bad_headers_and_dims(tmp_path):
    f = _write(tmp_path / "f.csv", "case_id,model,member_id,dim_index,value\n")
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value\n0,0,0\n")
    with pytest.raises(PanelFormatError, match="missing columns"):
        load_panel(f, o)
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n0,A,0,2,1\n")
    with pytest.raises(PanelFormatError, match="dims"):
        load_panel(f, o)
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n0,A,0,0,1\n0,A,0,0,1\n")
    with pytest.raises(PanelFormatError, match="duplicate"):
        load_panel(f, o)


def test_alpha_and_meta_columns(tmp_path):
    f = _write(tmp_path / "f.csv", "case_id,model_id,member_id,dim_index,value\n2,A,0,0,1\n10,A,0,0,2\n")
    o = _write(tmp_path / "o.csv", "case_id,dim_index,value,lead_time,alpha\n10,0,0,24,0.5\n2,0,1,12,2\n")
    p = load_panel(f, o)
    assert p.case_ids == ("2", "10")
    np.testing.assert_array_equal(p.alphas, [2.0, 0.5])
    assert list(p.meta["lead_time"]) == ["12", "24"]


def test_panel_round_trip_is_exact(tmp_path):
    train, _ = generate_scenario(ScenarioConfig(member_counts=(3, 2), biases=(0.1, -0.2), spreads=(1.0, 0.5),
                                                n_train=15, n_test=1, d=2, n_locations=3))
    train = train.with_alphas(np.linspace(0.1, 1.0, train.n) / 3)
    save_panel(train, tmp_path / "f.csv", tmp_path / "o.csv")
    back = load_panel(tmp_path / "f.csv", tmp_path / "o.csv")
    assert back.case_ids == train.case_ids and back.model_ids == train.model_ids
    for a, b in zip(train.members, back.members):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(train.obs, back.obs)
    np.testing.assert_array_equal(train.alphas, back.alphas)
    for k in train.meta:
        np.testing.assert_array_equal(train.meta[k], back.meta[k])


def test_generator_is_deterministic_and_splits_differ():
    cfg = ScenarioConfig(member_counts=(4, 3), biases=(0.0, 1.0), spreads=(1.0, 2.0), n_train=20, n_test=20, seed=5)
    a_tr, a_te = generate_scenario(cfg)
    b_tr, b_te = generate_scenario(cfg)
    for x, y in zip(a_tr.members + a_te.members, b_tr.members + b_te.members):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a_tr.obs, a_te.obs)
    other = generate_scenario(ScenarioConfig(member_counts=(4, 3), biases=(0.0, 1.0), spreads=(1.0, 2.0),
                                             n_train=20, n_test=20, seed=6))[0]
    assert not np.array_equal(a_tr.obs, other.obs)


def test_generator_streams_do_not_depend_on_other_models():
    base = dict(biases=(0.0, 0.0), spreads=(1.0, 1.0), n_train=10, n_test=1)
    a = generate_scenario(ScenarioConfig(member_counts=(3, 5), **base))[0]
    b = generate_scenario(ScenarioConfig(member_counts=(3, 9), **base))[0]
    np.testing.assert_array_equal(a.members[0], b.members[0])
    np.testing.assert_array_equal(a.obs, b.obs)


def test_generator_moments():
    cfg = ScenarioConfig(member_counts=(1,), biases=(1.0,), spreads=(2.0,), n_train=5000, n_test=1, seed=3)
    train, _ = generate_scenario(cfg)
    diff = train.members[0][:, 0, 0] - train.obs[:, 0]
    se = diff.std(ddof=1) / np.sqrt(diff.size)
    assert abs(diff.mean() - 1.0) <= 3 * se
    assert abs(diff.std(ddof=1) / np.sqrt(5.0) - 1.0) <= 0.05


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(member_counts=(2,), biases=(0.0,), spreads=(0.0,))
    with pytest.raises(ValueError):
        ScenarioConfig(member_counts=(2, 3), biases=(0.0,), spreads=(1.0, 1.0))
    with pytest.raises(ValueError):
        ScenarioConfig(member_counts=(0,), biases=(0.0,), spreads=(1.0,))
    with pytest.raises(ValueError):
        ScenarioConfig(member_counts=(1,), biases=(0.0,), spreads=(1.0,), seed=-1)


def test_positive_variant():
    train, _ = generate_scenario(ScenarioConfig(member_counts=(5,), biases=(0.0,), spreads=(1.0,), n_train=50,
                                                n_test=1, positive=True))
    assert np.all(train.members[0] >= 0) and np.all(train.obs >= 0)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_parse(name):
    cfg = load_preset(name)
    assert cfg.member_counts == (11, 21, 51)
    assert (cfg.n_train, cfg.n_test, cfg.d) == (730, 365, 1)
    assert load_preset(name, seed=9).seed == 9


def test_biased_preset_values():
    cfg = load_preset("biased-underdispersed")
    assert cfg.biases == (1.0, 1.5, 0.5) and cfg.spreads == (0.3, 0.3, 0.5)
    with pytest.raises(ValueError):
        load_preset("nope")


def test_scenario_from_ini():
    cfg = scenario_from_ini("[scenario]\nmember_counts = 2, 3\nbiases = 0 1\nspreads = 1 1\nmodel_ids = a, b\n")
    assert cfg.member_counts == (2, 3) and cfg.model_ids == ("a", "b")
    with pytest.raises(ValueError):
        scenario_from_ini("[other]\n")


def test_biased_underdispersed_pit_mass_is_low():
    cfg = ScenarioConfig(member_counts=(20,), biases=(1.0,), spreads=(0.3,), n_train=1, n_test=2000, seed=1)
    _, test = generate_scenario(cfg)
    atoms, w = combine_panel(test, Strategy.EQUAL)
    h = pit_histogram(pit_batch(atoms, w, test.obs, seed=1), 10)
    assert h[:3].sum() > 0.6 * h.sum()


def test_calibrated_preset_discrete_pool_is_hump_shaped():
    train, test = generate_scenario(load_preset("calibrated", n_test=2000))
    sol = fit(EnergyKernel(), train, Strategy.DISCRETE)
    atoms, w = combine_panel(test, Strategy.DISCRETE, sol.w)
    h = pit_histogram(pit_batch(atoms, w, test.obs, seed=0), 10)
    assert min(h[4], h[5]) > max(h[0], h[9])


def _toy_model(two_dirac_panel, mbm=None):
    sol = fit(EnergyKernel(), two_dirac_panel, Strategy.DISCRETE)
    return FittedModel(Strategy.DISCRETE, "energy", ("A", "B"), (1, 1), 1, {"all": sol}, (), mbm or {}, (), "sqrt")


def test_model_round_trip(tmp_path, two_dirac_panel):
    mbm = {("A", "all"): MbmParams(0.1, 1.0 / 3.0, 2.0 ** 0.5, 1e-17), ("B", "all"): MbmParams()}
    model = _toy_model(two_dirac_panel, mbm)
    save_model(model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    sol, sol2 = model.solutions["all"], back.solutions["all"]
    np.testing.assert_array_equal(sol.w.weights, sol2.w.weights)
    np.testing.assert_allclose(sol2.w.weights, [0.5, 0.5], atol=1e-6)
    assert (sol2.objective, sol2.score, sol2.iterations, sol2.kkt_residual, sol2.converged) == (
        sol.objective, sol.score, sol.iterations, sol.kkt_residual, sol.converged)
    assert back.mbm == mbm
    assert (back.strategy, back.kernel, back.model_ids, back.member_counts, back.dim) == (
        Strategy.DISCRETE, "energy", ("A", "B"), (1, 1), 1)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == "format_version = 1"


def test_model_header_errors(tmp_path, two_dirac_panel):
    save_model(_toy_model(two_dirac_panel), tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(["garbage header"] + lines[1:]))
    with pytest.raises(ModelFormatError):
        load_model(bad)
    bad.write_text("\n".join(["format_version = 2"] + lines[1:]))
    with pytest.raises(ModelFormatError, match="format_version"):
        load_model(bad)
    bad.write_text("\n".join(l for l in lines if not l.startswith("fit.0.weights")))
    with pytest.raises(ModelFormatError, match="missing key"):
        load_model(bad)


def test_check_panel(two_dirac_panel, rng):
    model = _toy_model(two_dirac_panel)
    model.check_panel(two_dirac_panel)
    with pytest.raises(ValueError, match="does not match"):
        model.check_panel(Panel((rng.normal(size=(2, 2, 1)), rng.normal(size=(2, 1, 1))), rng.normal(size=(2, 1)),
                                ("A", "B")))
    with pytest.raises(KeyError):
        model.solution_for("lead_time=1")
