"""Configuration plumbing: defaults, derivation, file/env/flag layering,
validation, and the delay-spec mini-language.
"""

import pytest

import specsim
from specsim.core import (
    PAD,
    ConfigError,
    SimConfig,
    SpeculativeSegment,
    env_overrides,
    format_config,
    load_config,
    parse_config_text,
    parse_delay_spec,
    validate_config,
)


def test_package_exports():
    assert specsim.__version__
    for name in ("SimConfig", "run", "run_sweep", "TokenStreamOracle", "DraftServer"):
        assert name in specsim.__all__
        assert hasattr(specsim, name)


class TestSegment:
    def test_positions(self):
        seg = SpeculativeSegment(tokens=(5, 6, 7), start_position=10, origin_round=2)
        assert len(seg) == 3
        assert seg.end_position == 13

    def test_pad_is_max_token(self):
        assert PAD == (1 << 64) - 1


class TestResolution:
    def test_derived_fields_fill_from_base_latencies(self):
        cfg = SimConfig(t_target=0.040, batch_size=10).resolved()
        assert cfg.max_concurrency == 10
        assert cfg.reply_timeout == pytest.approx(0.080)
        assert cfg.stale_timeout == pytest.approx(0.160)
        assert cfg.heartbeat_period == pytest.approx(0.040)
        assert cfg.heartbeat_expiry == pytest.approx(0.120)
        assert cfg.reorder_span == pytest.approx(0.040)

    def test_explicit_values_not_overwritten(self):
        cfg = SimConfig(reply_timeout=1.5, heartbeat_period=0.2).resolved()
        assert cfg.reply_timeout == 1.5
        assert cfg.heartbeat_period == 0.2
        assert cfg.heartbeat_expiry == pytest.approx(0.6)

    def test_resolved_does_not_mutate_original(self):
        cfg = SimConfig()
        cfg.resolved()
        assert cfg.reply_timeout is None


class TestOverrides:
    def test_string_coercion_by_field_type(self):
        cfg = SimConfig().with_overrides(
            {"batch_size": "16", "alpha": "0.9", "delay_dist": "constant:0"}
        )
        assert cfg.batch_size == 16
        assert cfg.alpha == 0.9
        assert cfg.delay_dist == "constant:0"

    def test_none_spelling(self):
        cfg = SimConfig(reply_timeout=3.0).with_overrides({"reply_timeout": "none"})
        assert cfg.reply_timeout is None

    def test_non_string_values_pass_through(self):
        cfg = SimConfig().with_overrides({"qps": 2.5, "n_requests": 4})
        assert cfg.qps == 2.5
        assert cfg.n_requests == 4

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key: batchsize"):
            SimConfig().with_overrides({"batchsize": "8"})


class TestConfigText:
    def test_parse_key_values_and_comments(self):
        text = """
        # experiment knobs
        batch_size = 8
        alpha = 0.75   # trailing comment
        delay_dist = uniform:0:0.01
        """
        parsed = parse_config_text(text)
        assert parsed == {
            "batch_size": "8",
            "alpha": "0.75",
            "delay_dist": "uniform:0:0.01",
        }

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("just words\n")

    def test_format_round_trips(self):
        cfg = SimConfig(batch_size=3, alpha=0.66, reply_timeout=None)
        again = SimConfig().with_overrides(parse_config_text(format_config(cfg)))
        assert again == cfg


class TestLayering:
    def test_env_overrides_filter_and_lowercase(self):
        env = {"SPECSIM_ALPHA": "0.9", "SPECSIM_BATCH_SIZE": "4", "PATH": "/bin"}
        assert env_overrides(env) == {"alpha": "0.9", "batch_size": "4"}

    def test_precedence_defaults_file_env_flags(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("alpha = 0.5\ngamma = 6\n")
        cfg = load_config(
            path,
            flag_overrides={"alpha": 0.9},
            environ={"SPECSIM_ALPHA": "0.7", "SPECSIM_SEED": "11"},
        )
        assert cfg.alpha == 0.9      # flag beats env beats file
        assert cfg.seed == 11        # env beats default
        assert cfg.gamma == 6        # file beats default
        assert cfg.batch_size == 32  # untouched default

    def test_load_without_file(self):
        cfg = load_config(None, flag_overrides={"qps": 3.0}, environ={})
        assert cfg.qps == 3.0


class TestValidation:
    def test_valid_default_config(self):
        cfg, warnings = validate_config(SimConfig())
        assert warnings == []
        assert cfg.max_concurrency == cfg.batch_size

    def test_all_violations_reported_together(self):
        bad = SimConfig(gamma=0, batch_size=0, alpha=2.0, qps=-1)
        with pytest.raises(ConfigError) as info:
            validate_config(bad)
        message = str(info.value)
        for fragment in ("gamma", "batch_size", "alpha", "qps"):
            assert fragment in message

    def test_overlap_warning(self):
        # gamma * t_draft >= t_target breaks the pipelining assumption; the
        # config is legal (the simulator handles it) but flagged.
        _, warnings = validate_config(SimConfig(t_draft=0.020))
        assert len(warnings) == 1
        assert "overlap" in warnings[0]

    def test_fixed_threshold_must_exceed_one(self):
        with pytest.raises(ConfigError, match="fixed_threshold_l"):
            validate_config(SimConfig(fixed_threshold_l=1.0))

    def test_bad_delay_spec_caught(self):
        with pytest.raises(ConfigError, match="delay_dist"):
            validate_config(SimConfig(delay_dist="gaussian:1:2"))


class TestDelaySpec:
    @pytest.mark.parametrize(
        "spec,expected",
        [
            ("constant:0.0005", ("constant", (0.0005,))),
            ("constant:0", ("constant", (0.0,))),
            ("uniform:0.001:0.01", ("uniform", (0.001, 0.01))),
            ("exponential:0.002", ("exponential", (0.002,))),
            ("  CONSTANT:0.1", ("constant", (0.1,))),
        ],
    )
    def test_valid(self, spec, expected):
        assert parse_delay_spec(spec) == expected

    @pytest.mark.parametrize(
        "spec",
        [
            "constant",            # missing parameter
            "constant:-1",         # negative
            "uniform:0.01:0.001",  # inverted bounds
            "uniform:0.01",        # arity
            "exponential:0",       # non-positive mean
            "normal:1:2",          # unknown kind
            "constant:abc",        # non-numeric
        ],
    )
    def test_invalid(self, spec):
        with pytest.raises(ValueError):
            parse_delay_spec(spec)
