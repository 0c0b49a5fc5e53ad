"""Cross-stack parity: the engine, fed only the exported archive and the
fixture files, must reproduce the training stack's outputs to 1e-4
relative on the logits."""

import filecmp
import json
import os

import numpy as np
import pytest

from whar_export import emit_parity_fixtures
from whar_export.export import read_case_tensor


@pytest.fixture(scope="module")
def fixture_dir(checkpoint, config, tmp_path_factory):
    out = tmp_path_factory.mktemp("parity")
    emit_parity_fixtures(checkpoint, config, out, n_cases=10, seed=5)
    return out


@pytest.fixture(scope="module")
def engine_bundle(exported_archive):
    from whar.archive import read_archive
    from whar.models import ModelBundle
    return ModelBundle.from_archive(read_archive(exported_archive))


def load_index(fixture_dir):
    return json.load(open(os.path.join(fixture_dir, "index.json")))


class TestFixtureEmission:
    def test_deterministic_from_seed(self, checkpoint, config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        emit_parity_fixtures(checkpoint, config, a, n_cases=4, seed=9)
        emit_parity_fixtures(checkpoint, config, b, n_cases=4, seed=9)
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert not mismatch and not errors

    def test_index_embeds_frontend_config(self, fixture_dir, config):
        index = load_index(fixture_dir)
        assert index["config"]["audio_frontend"] == config["audio_frontend"]
        assert index["tolerance"] == 1e-4

    def test_case_counts(self, fixture_dir):
        index = load_index(fixture_dir)
        kinds = [c["model"] for c in index["cases"]]
        assert kinds.count("detector") == 10
        assert kinds.count("classifier") == 10


class TestParity:
    def test_detector_probabilities_match(self, fixture_dir, engine_bundle):
        index = load_index(fixture_dir)
        for case in index["cases"]:
            if case["model"] != "detector":
                continue
            window = read_case_tensor(fixture_dir, case["inputs"]["window"])
            expected = float(read_case_tensor(fixture_dir, case["outputs"]["prob"])[0])
            got = engine_bundle.detector.forward(window)
            assert abs(got - expected) <= 1e-4 * max(abs(expected), 1e-6)

    def test_classifier_logits_match(self, fixture_dir, engine_bundle):
        index = load_index(fixture_dir)
        worst = 0.0
        n = 0
        for case in index["cases"]:
            if case["model"] != "classifier":
                continue
            imu = read_case_tensor(fixture_dir, case["inputs"]["imu"])
            wave = read_case_tensor(fixture_dir, case["inputs"]["wave"])
            expected = read_case_tensor(fixture_dir, case["outputs"]["logits"])
            _, logits = engine_bundle.classifier.forward(imu, wave)
            rel = np.abs(logits - expected).max() / max(np.abs(expected).max(), 1e-9)
            worst = max(worst, rel)
            n += 1
        assert n >= 10
        assert worst <= 1e-4
        print(f"\nACCEPTANCE parity (classifier logits, {n} cases, "
              f"worst rel {worst:.2e}): PASS")

    def test_quantized_archive_stays_close(self, checkpoint, rules, config,
                                           fixture_dir, tmp_path):
        # f16 storage moves logits but must keep the predicted class on these
        # fixture cases
        from whar_export import export_checkpoint
        from whar.archive import read_archive
        from whar.models import ModelBundle
        path = tmp_path / "f16.whar"
        export_checkpoint(checkpoint, rules, path, config, quantize=True)
        bundle = ModelBundle.from_archive(read_archive(path))
        index = load_index(fixture_dir)
        for case in index["cases"]:
            if case["model"] != "classifier":
                continue
            imu = read_case_tensor(fixture_dir, case["inputs"]["imu"])
            wave = read_case_tensor(fixture_dir, case["inputs"]["wave"])
            expected = read_case_tensor(fixture_dir, case["outputs"]["logits"])
            class_id, _ = bundle.classifier.forward(imu, wave)
            assert class_id == int(np.argmax(expected))
