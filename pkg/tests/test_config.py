import pytest

from ganglionet.config import PipelineConfig, config_dict, parse_config, serialize_config


class TestParse:
    def test_defaults_round_trip(self):
        config = PipelineConfig()
        again = parse_config(serialize_config(config))
        assert again == config

    def test_modified_round_trip(self):
        config = PipelineConfig(
            sigma=3.5,
            dilation_k=9,
            encoder_widths=(4, 8, 16, 32, 64, 128),
            augment=False,
            scan_type="N",
            data_dir="some/where",
        )
        assert parse_config(serialize_config(config)) == config

    def test_comments_and_blanks(self):
        config = parse_config("# a comment\n\nsigma = 4.0  # trailing\nseed=7\n")
        assert config.sigma == 4.0
        assert config.seed == 7

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("sigmaa=4.0\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_config("epochs=many\n")

    def test_bad_boolean_rejected(self):
        with pytest.raises(ValueError, match="boolean"):
            parse_config("augment=maybe\n")

    def test_validation_applies(self):
        with pytest.raises(ValueError, match="dilation_k"):
            parse_config("dilation_k=15\n")
        with pytest.raises(ValueError, match="scan_type"):
            parse_config("scan_type=Q\n")

    def test_widths_parse_as_tuple(self):
        config = parse_config("encoder_widths=2,4,8,16,32,64\n")
        assert config.encoder_widths == (2, 4, 8, 16, 32, 64)


class TestSnapshot:
    def test_config_dict_is_json_friendly(self):
        import json

        snap = config_dict(PipelineConfig())
        text = json.dumps(snap)
        assert "encoder_widths" in text
        assert isinstance(snap["encoder_widths"], list)
