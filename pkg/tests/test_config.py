import pytest

from credo.config import AUTO, ConfigError, bundled_configs, load_config, parse_config


def test_bundled_configs_parse():
    names = bundled_configs()
    assert {"synthetic.cfg", "covariance_scalar.cfg", "real_cadata.cfg", "real_abalone.cfg",
            "real_bank.cfg"} <= set(names)
    for n in names:
        load_config(n)


def test_synthetic_config_values():
    cfg = load_config("synthetic")
    e = cfg.section("experiment")
    assert e["runs"] == 50 and e["horizon"] == 10_000 and e["credo_tau1"] == (0.49, 0.65, 1.0)
    s = cfg.section("schedule")
    assert s["a"] == AUTO and s["eps"] == 0.02 and s["tau1"] == 0.49
    assert cfg.section("sensing")["noise_var"] == 0.25


def test_defaults_fill_missing_sections():
    cfg = parse_config("[experiment]\nruns = 3\n")
    assert cfg.section("experiment")["runs"] == 3
    assert cfg.section("network")["nodes"] == 20
    assert cfg.has("experiment") and not cfg.has("network")


def test_unknown_key_located():
    text = "[experiment]\nruns = 3\n\n[schedule]\neps = 0.02\ntau = 0.4\n"
    with pytest.raises(ConfigError, match=r"x.cfg:6: \[schedule\] tau: unknown key"):
        parse_config(text, "x.cfg")


def test_unknown_section_located():
    with pytest.raises(ConfigError, match=r"<config>:3: \[bogus\]: unknown section"):
        parse_config("[experiment]\nruns = 1\n[bogus]\n")


def test_bad_value_located():
    with pytest.raises(ConfigError, match=r":2: \[experiment\] runs: expected integer, got '2.5'"):
        parse_config("[experiment]\nruns = 2.5\n")
    with pytest.raises(ConfigError, match=r"\[schedule\] a: expected auto or number"):
        parse_config("[schedule]\na = fast\n")


def test_range_checks():
    with pytest.raises(ConfigError, match=r"runs: must be >= 1"):
        parse_config("[experiment]\nruns = 0\n")
    with pytest.raises(ConfigError, match="unknown estimator"):
        parse_config("[experiment]\nestimators = oracle, magic\n")
    with pytest.raises(ConfigError, match="fit_window"):
        parse_config("[experiment]\nfit_window = 100, 10\n")
    with pytest.raises(ConfigError, match="given together"):
        parse_config("[schedule]\nrho_exponent = 0.01\n")


def test_raw_exponents_resolve():
    from credo.experiments import resolve_schedule, synthetic_problem
    cfg = parse_config("[schedule]\nrho_exponent = 0.01\nzeta_exponent = 0.235\n")
    inst = synthetic_problem(cfg, 0)
    s = resolve_schedule(cfg, inst.model, inst.topology)
    assert s.eps == pytest.approx(0.02) and s.tau1 == pytest.approx(0.49)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        load_config(tmp_path / "none.cfg")


def test_paths_resolve_relative_to_config(tmp_path):
    p = tmp_path / "sub" / "c.cfg"
    p.parent.mkdir()
    p.write_text("[network]\nedge_list = g.edges\n")
    cfg = load_config(p)
    assert cfg.resolve_path(cfg.section("network")["edge_list"]) == tmp_path / "sub" / "g.edges"
