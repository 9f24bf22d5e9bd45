"""Configuration schema, defaults and semantic validation."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import pytest

from semitrace.config import DEFAULTS, ConfigError, RunConfig, parse_config
from semitrace.verify import LadderSettings

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = {"problem": {"domain": {"d": 2, "periods": [1.0, 1.0]}, "phi": {"support": [0.5, 4.0]}}}


def with_problem(**problem) -> dict:
    doc = copy.deepcopy(MINIMAL)
    doc["problem"].update(problem)
    return doc


def planar(modes, j=0, k=1):
    return {"components": [{"j": j, "k": k, "modes": modes}]}


class TestResolution:
    def test_minimal_free_config(self):
        cfg = parse_config(MINIMAL)
        prob = cfg.problem
        assert prob.domain.d == 2 and prob.V.is_zero()
        assert all(f.is_zero() for f in prob.B.upper.values())
        assert cfg.data["ladder"]["p"] == DEFAULTS["ladder"]["p"]
        assert cfg.seed == 0 and cfg.threads == 1

    def test_ladder_settings(self):
        settings = parse_config(MINIMAL).ladder_settings()
        assert isinstance(settings, LadderSettings)
        assert settings.hs_quad_n == DEFAULTS["hsfc"]["quad_n"]
        assert settings.lanczos["seed"] == 0

    @pytest.mark.parametrize("name", ["free.json", "acceptance.json", "underresolved.json"])
    def test_shipped_configs_resolve(self, name):
        cfg = parse_config(CONFIGS / name)
        assert cfg.source.endswith(name)

    def test_snapshot_round_trip_and_digest(self):
        cfg = parse_config(CONFIGS / "acceptance.json")
        again = parse_config(json.loads(cfg.to_json()))
        assert again.data == cfg.data
        assert again.digest == cfg.digest and len(cfg.digest) == 64

    def test_overrides(self):
        cfg = parse_config(MINIMAL).with_overrides(seed=7, threads=None, output="elsewhere")
        assert cfg.seed == 7 and cfg.threads == 1 and str(cfg.output) == "elsewhere"
        assert cfg.digest != parse_config(MINIMAL).digest

    def test_field_and_potential(self):
        doc = with_problem(
            B=planar([{"k": [1, 0], "cos": 2.0}]),
            V={"constant": 3.0, "modes": [{"k": [0, 1], "sin": 0.5}]},
        )
        prob = parse_config(doc).problem
        assert prob.V([0.0, 0.25]) == pytest.approx(3.5)
        assert prob.B.component(0, 1)([0.0, 0.0]) == pytest.approx(2.0)


class TestRejection:
    def test_nonzero_flux(self):
        doc = with_problem(B={"components": [{"j": 0, "k": 1, "constant": 1.0}]})
        with pytest.raises(ConfigError, match="flux"):
            parse_config(doc)

    @pytest.mark.parametrize(
        "mutate, path",
        [
            (lambda d: d["problem"]["domain"].update(d=4), "problem.domain.d"),
            (lambda d: d["problem"]["domain"].update(periods=[1.0]), "problem.domain.periods"),
            (lambda d: d["problem"]["phi"].update(support=[2.0, 1.0]), "problem.phi.support"),
            (lambda d: d.update(seed="zero"), "seed"),
            (lambda d: d.update(bogus=1), "<root>"),
            (lambda d: d.setdefault("ladder", {}).update(grid_min=4), "ladder.grid_min"),
            (lambda d: d.setdefault("ladder", {}).update(p=[10, 8, 12]), "ladder.p"),
            (lambda d: d.setdefault("hs_check", {}).update(N=2), "hs_check.N"),
        ],
    )
    def test_error_names_field_path(self, mutate, path):
        doc = copy.deepcopy(MINIMAL)
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            parse_config(doc)
        assert str(info.value).startswith(path)

    def test_unrepresentable_mode(self):
        doc = with_problem(V={"modes": [{"k": [5, 0], "cos": 1.0}]})
        doc["problem"]["domain"]["grid_n"] = 16
        with pytest.raises(ConfigError, match="not representable"):
            parse_config(doc)

    def test_bad_component_indices(self):
        doc = with_problem(B=planar([{"k": [1, 0], "cos": 1.0}], j=1, k=0))
        with pytest.raises(ConfigError, match="j < k"):
            parse_config(doc)

    def test_open_field_in_3d(self):
        doc = {
            "problem": {
                "domain": {"d": 3, "periods": [1.0, 1.0, 1.0]},
                "B": {"components": [{"j": 0, "k": 1, "modes": [{"k": [0, 0, 1], "cos": 1.0}]}]},
                "phi": {"support": [0.5, 4.0]},
            }
        }
        with pytest.raises(ConfigError, match="closed"):
            parse_config(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse_config(path)

    def test_config_error_is_value_error(self):
        assert issubclass(ConfigError, ValueError)
        assert isinstance(parse_config(MINIMAL), RunConfig)
        assert math.isfinite(parse_config(MINIMAL).tolerances["c0_rel"])
