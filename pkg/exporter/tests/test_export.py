import os

import numpy as np
import pytest
import torch

from whar_export import MappingError, export_checkpoint, load_name_map, write_name_map
from whar_export.export import _apply_rule, convert_state_dict
from whar_export.namemap import Rule, required_entries


class TestNameMap:
    def test_default_map_covers_required_entries_exactly_once(self, rules, config):
        targets = [r.target for r in rules]
        assert len(targets) == len(set(targets))
        assert sorted(targets) == sorted(required_entries(config))

    def test_yaml_round_trip(self, rules, tmp_path):
        path = tmp_path / "map.yaml"
        write_name_map(rules, path)
        reloaded = load_name_map(path)
        assert reloaded == rules

    def test_missing_rule_reports_unmapped_names(self, checkpoint, rules, config):
        state = torch.load(checkpoint, weights_only=True)
        pruned = [r for r in rules if r.target != "fusion/head_w"]
        with pytest.raises(MappingError, match="fusion/head_w"):
            convert_state_dict(state, pruned, config)

    def test_missing_source_reported(self, checkpoint, rules, config):
        state = torch.load(checkpoint, weights_only=True)
        bad = list(rules) + [Rule(target="fusion/extra_w", source="does.not.exist")]
        with pytest.raises(MappingError, match="does.not.exist"):
            convert_state_dict(state, bad, config)

    def test_duplicate_target_rejected(self, checkpoint, rules, config):
        state = torch.load(checkpoint, weights_only=True)
        dup = list(rules) + [rules[0]]
        with pytest.raises(MappingError, match="more than once"):
            convert_state_dict(state, dup, config)

    def test_unused_target_rejected(self, checkpoint, rules, config):
        state = torch.load(checkpoint, weights_only=True)
        extra = list(rules) + [Rule(target="fusion/bogus_w",
                                    source="classifier.fusion.head.weight")]
        with pytest.raises(MappingError, match="bogus"):
            convert_state_dict(state, extra, config)


class TestDirectives:
    def test_transpose(self):
        state = {"w": torch.arange(6, dtype=torch.float32).reshape(2, 3)}
        rule = Rule(target="x", source="w", transpose=(1, 0))
        out = _apply_rule(rule, state)
        np.testing.assert_array_equal(out, state["w"].numpy().T)

    def test_reshape(self):
        state = {"w": torch.arange(12, dtype=torch.float32).reshape(3, 4)}
        rule = Rule(target="x", source="w", reshape=(2, 6))
        assert _apply_rule(rule, state).shape == (2, 6)

    def test_fold_bn_weight_and_bias_match_torch(self):
        torch.manual_seed(0)
        conv = torch.nn.Conv1d(3, 5, 4)
        bn = torch.nn.BatchNorm1d(5)
        bn.running_mean.data = torch.randn(5) * 0.3
        bn.running_var.data = 0.5 + torch.rand(5)
        bn.weight.data = 0.5 + torch.rand(5)
        bn.bias.data = torch.randn(5) * 0.3
        conv.eval(), bn.eval()
        state = {"c.weight": conv.weight.data, "c.bias": conv.bias.data,
                 "b.weight": bn.weight.data, "b.bias": bn.bias.data,
                 "b.running_mean": bn.running_mean.data,
                 "b.running_var": bn.running_var.data}
        w = _apply_rule(Rule(target="w", source="c.weight", fold_bn="b"), state)
        b = _apply_rule(Rule(target="b", source="c.bias", fold_bn="b"), state)
        x = torch.randn(1, 3, 20)
        with torch.no_grad():
            expected = bn(conv(x)).numpy()[0]
        folded = torch.nn.functional.conv1d(
            x, torch.from_numpy(w), torch.from_numpy(b)).numpy()[0]
        assert np.abs(folded - expected).max() <= 1e-5 * max(np.abs(expected).max(), 1.0)

    def test_fold_role_required_when_unknown(self):
        state = {"b.weight": torch.ones(2), "b.bias": torch.zeros(2),
                 "b.running_mean": torch.zeros(2), "b.running_var": torch.ones(2),
                 "odd.name": torch.ones(2)}
        with pytest.raises(MappingError, match="role"):
            _apply_rule(Rule(target="x", source="odd.name", fold_bn="b"), state)

    def test_synthesized_bias_from_bn_only(self):
        state = {"b.weight": torch.full((2,), 2.0), "b.bias": torch.full((2,), 1.5),
                 "b.running_mean": torch.full((2,), 0.25),
                 "b.running_var": torch.ones(2)}
        out = _apply_rule(Rule(target="x", fold_bn="b", role="bias", eps=0.0), state)
        np.testing.assert_allclose(out, [1.0, 1.0], atol=1e-6)


class TestExport:
    def test_archive_loads_in_engine(self, exported_archive):
        from whar.archive import read_archive
        from whar.models import ModelBundle
        bundle = ModelBundle.from_archive(read_archive(exported_archive))
        assert bundle.detector is not None
        assert bundle.classifier is not None

    def test_quantized_export_halves_payload(self, checkpoint, rules, config, tmp_path):
        full = export_checkpoint(checkpoint, rules, tmp_path / "f32.whar", config)
        half = export_checkpoint(checkpoint, rules, tmp_path / "f16.whar", config,
                                 quantize=True)
        assert half["payload_bytes"] * 2 == full["payload_bytes"]
        assert os.path.getsize(tmp_path / "f16.whar") < 0.51 * os.path.getsize(
            tmp_path / "f32.whar") + 8192
        from whar.archive import read_archive
        from whar.models import ModelBundle
        bundle = ModelBundle.from_archive(read_archive(tmp_path / "f16.whar"))
        assert bundle.classifier is not None

    def test_summary_and_embedded_config(self, checkpoint, rules, config, tmp_path):
        summary = export_checkpoint(checkpoint, rules, tmp_path / "m.whar", config)
        assert summary["entries"] == len(rules)
        assert summary["dtype"] == "f32"
        from whar.archive import read_archive
        assert read_archive(tmp_path / "m.whar").config_dict == config
