import copy
import json
import math

import pytest

from fcsdpc.config import (ConfigError, default_config, default_document, dump, load, parse,
                           serialize)


@pytest.fixture
def doc():
    return copy.deepcopy(default_document())


class TestParse:
    def test_default(self, cfg):
        assert (cfg.n, cfg.m, cfg.p) == (4, 3, 2)
        assert cfg.N_f == (1, 2, 3) and cfg.N_p == 4
        assert cfg.lambda_a == 1e3 and cfg.delta_bound == 1.0
        assert cfg.methods == ("SDA", "ENUM")

    def test_round_trip(self, cfg):
        assert parse(serialize(cfg)) == cfg
        assert serialize(parse(serialize(cfg))) == serialize(cfg)

    def test_file_round_trip(self, cfg, tmp_path):
        dump(cfg, tmp_path / "c.json")
        assert load(tmp_path / "c.json") == cfg

    def test_diag_shorthand(self, doc):
        doc["weights"]["Q"] = [[1.0, 0.0], [0.0, 1.0]]
        assert parse(doc).Q == default_config().Q

    def test_scalar_nf(self, doc):
        doc["horizons"]["N_f"] = 2
        assert parse(doc).N_f == (2,)

    def test_infinite_snr(self, doc):
        doc["data"]["snr_db"] = "inf"
        cfg = parse(doc)
        assert math.isinf(cfg.snr_db)
        assert serialize(cfg)["data"]["snr_db"] == "inf"
        json.dumps(serialize(cfg))

    def test_per_channel_levels(self, doc):
        doc["control_set"]["levels"] = [[-1, 1], [-1, 0, 1], [0, 1]]
        cfg = parse(doc)
        assert cfg.channel_levels()[0] == (-1.0, 1.0)

    def test_overrides(self, cfg):
        c = cfg.with_overrides(nf=2, seed=9, method="sda", out="x", trace=True)
        assert c.N_f == (2,) and c.data_seed == c.cl_seed == 9
        assert c.methods == ("SDA",) and c.out_dir == "x" and c.trace


class TestValidate:
    @pytest.mark.parametrize("lam", [0.0, -1.0])
    def test_lambda(self, doc, lam):
        doc["weights"]["lambda_a"] = lam
        with pytest.raises(ConfigError, match="lambda_a"):
            parse(doc)

    def test_short_collection(self, doc):
        doc["data"]["collect_steps"] = 7
        with pytest.raises(ConfigError, match=r"N_p \+ N_f \+ 1 = 8"):
            parse(doc)

    def test_minimum_collection_accepted(self, doc):
        doc["data"]["collect_steps"] = 8
        assert parse(doc).collect_steps == 8

    def test_enum_cap(self, doc):
        doc["horizons"]["N_f"] = [8]
        with pytest.raises(ConfigError, match="ENUM needs"):
            parse(doc)
        doc["closed_loop"]["methods"] = ["SDA"]
        assert parse(doc).N_f == (8,)

    @pytest.mark.parametrize("path, value, msg", [
        (("weights", "R"), {"diag": [1.0, 0.0, 1.0]}, "R must"),
        (("weights", "Q"), {"diag": [1.0, -1.0]}, "Q must"),
        (("weights", "regularizer"), "l1", "regularizer"),
        (("control_set", "levels"), [1, 0], "increasing"),
        (("control_set", "delta_bound"), -1, "delta_bound"),
        (("closed_loop", "methods"), ["MILP"], "methods"),
        (("closed_loop", "steps"), -1, "steps"),
        (("horizons", "N_p"), 0, "N_p"),
    ])
    def test_rejections(self, doc, path, value, msg):
        doc[path[0]][path[1]] = value
        with pytest.raises(ConfigError, match=msg):
            parse(doc)

    def test_missing_section(self, doc):
        del doc["weights"]
        with pytest.raises(ConfigError, match="malformed"):
            parse(doc)

    def test_wrong_weight_size(self, doc):
        doc["weights"]["Q"] = {"diag": [1.0]}
        with pytest.raises(ConfigError, match="2x2"):
            parse(doc)

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="cannot read"):
            load(tmp_path / "bad.json")
