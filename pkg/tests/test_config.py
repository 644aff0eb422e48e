import pytest

from crowdloop.config import (
    ExperimentConfig,
    METHOD_PRESETS,
    build_dataset,
    build_pool,
    validate_config,
)
from crowdloop.errors import SchemaError
from crowdloop.seeding import derive_seed


class TestDefaults:
    def test_empty_object_fills_documented_defaults(self):
        cfg = validate_config({})
        assert cfg.loop.risk_threshold == 0.1
        assert cfg.train.tau == 0.1
        assert cfg.em.epsilon == 0.01
        assert cfg.loop.stop_patience == 5
        assert cfg.loop.max_annotations_per_item == 3
        assert cfg.skill_prior.n_beta == 10.0
        assert cfg.skill_prior.alpha_diag == 0.7
        assert cfg.assignment.alpha_cap == 2000
        assert cfg.workers.noise_level == 0.03
        assert cfg.method == "full"

    def test_labels_per_update_defaults_to_batch_size(self):
        cfg = validate_config({"loop": {"batch_size": 64}})
        assert cfg.loop.labels_per_update == 64


class TestSchemaErrors:
    def test_out_of_range_risk_threshold(self):
        with pytest.raises(SchemaError, match="loop.risk_threshold"):
            validate_config({"loop": {"risk_threshold": 1.5}})

    def test_unknown_key_carries_path(self):
        with pytest.raises(SchemaError, match="loop.fancy_knob"):
            validate_config({"loop": {"fancy_knob": 1}})

    def test_unknown_top_level_key(self):
        with pytest.raises(SchemaError, match="bogus"):
            validate_config({"bogus": {}})

    def test_unknown_method(self):
        with pytest.raises(SchemaError, match="method"):
            validate_config({"method": "magic"})

    def test_wrong_type(self):
        with pytest.raises(SchemaError, match="train.epochs"):
            validate_config({"train": {"epochs": "lots"}})


class TestPresets:
    def test_full_preset_switches(self):
        cfg = validate_config({"method": "full"})
        assert cfg.switches.semi_mode == "pseudo"
        assert cfg.switches.em_mode == "soft"
        assert cfg.switches.global_selection
        assert cfg.switches.calibration == "prototype"

    def test_online_ds_preset(self):
        cfg = validate_config({"method": "online_ds"})
        assert not cfg.switches.model_enabled
        assert cfg.switches.em_mode == "hard"

    def test_lean_preset_has_no_clean_validation(self):
        cfg = validate_config({"method": "lean"})
        assert cfg.switches.model_enabled
        assert cfg.switches.calibration == "cross_val"
        assert cfg.switches.semi_mode == "none"

    def test_switch_override(self):
        cfg = validate_config({"method": "full",
                               "switches": {"semi_mode": "mixmatch"}})
        assert cfg.switches.semi_mode == "mixmatch"
        assert cfg.switches.em_mode == "soft"

    def test_preset_table_is_closed(self):
        assert set(METHOD_PRESETS) == {"online_ds", "lean", "lean_star",
                                       "full"}


class TestEcho:
    def test_resolved_config_round_trips(self):
        cfg = validate_config({"method": "lean_star", "seed": 5,
                               "loop": {"batch_size": 32}})
        first = cfg.to_dict()
        second = validate_config(first).to_dict()
        assert first == second


class TestAssignmentSync:
    def test_loop_assignment_propagates(self):
        cfg = validate_config({"loop": {"assignment": "greedy"}})
        assert cfg.assignment.mode == "greedy"

    def test_assignment_mode_propagates(self):
        cfg = validate_config({"assignment": {"mode": "greedy"}})
        assert cfg.loop.assignment == "greedy"

    def test_agreeing_settings_pass(self):
        cfg = validate_config({"loop": {"assignment": "greedy"},
                               "assignment": {"mode": "greedy"}})
        assert cfg.assignment.mode == "greedy"


class TestSeedDerivation:
    def test_stable_and_distinct(self):
        assert derive_seed(42, "hits") == derive_seed(42, "hits")
        assert derive_seed(42, "hits") != derive_seed(42, "assign")
        assert derive_seed(42, "hits") != derive_seed(43, "hits")

    def test_range(self):
        s = derive_seed(0, "x")
        assert 0 <= s < 2 ** 63


class TestBuilders:
    def synthetic_cfg(self, **extra):
        raw = {
            "seed": 3,
            "dataset": {"synthetic": {"k": 2, "n_per_class": 6, "dim": 3,
                                      "separation": 5.0,
                                      "prototypes_per_class": 2}},
            "workers": {"kind": "uniform", "n_workers": 3,
                        "uniform_accuracy": 0.9},
        }
        raw.update(extra)
        return validate_config(raw)

    def test_build_dataset_synthetic(self):
        manifest, store = build_dataset(self.synthetic_cfg())
        assert manifest.n_items == 12 and store.dim == 3

    def test_build_dataset_deterministic_in_master_seed(self):
        import numpy as np

        a = build_dataset(self.synthetic_cfg())
        b = build_dataset(self.synthetic_cfg())
        np.testing.assert_array_equal(a[1].data, b[1].data)

    def test_build_pool_uniform(self):
        cfg = self.synthetic_cfg()
        manifest, _ = build_dataset(cfg)
        pool = build_pool(cfg, manifest)
        assert sorted(pool) == ["w000", "w001", "w002"]
        assert pool["w000"].confusion.shape == (2, 2)

    def test_build_pool_structured_from_synthetic_bank(self):
        import numpy as np

        raw = {
            "seed": 9,
            "dataset": {"synthetic": {"k": 4, "n_per_class": 5, "dim": 3,
                                      "prototypes_per_class": 2,
                                      "group_size": 2}},
            "workers": {"kind": "structured", "n_workers": 4,
                        "bank": {"n_workers_per_group": 3,
                                 "acc_min": 0.6, "acc_max": 0.9}},
        }
        cfg = validate_config(raw)
        manifest, _ = build_dataset(cfg)
        assert manifest.groups == [[0, 1], [2, 3]]
        pool = build_pool(cfg, manifest)
        assert len(pool) == 4
        for w in pool.values():
            np.testing.assert_allclose(w.confusion.sum(axis=1), 1.0,
                                       atol=1e-6)

    def test_ood_fraction_extends_everything(self):
        cfg = self.synthetic_cfg(dataset={
            "synthetic": {"k": 2, "n_per_class": 6, "dim": 3,
                          "prototypes_per_class": 2},
            "ood_fraction": 0.5,
        })
        manifest, store = build_dataset(cfg)
        assert manifest.n_items == 18 and manifest.has_ood_class
        pool = build_pool(cfg, manifest)
        assert pool["w000"].confusion.shape == (3, 3)

    def test_feature_manifest_mismatch_rejected(self, tmp_path):
        import numpy as np

        from crowdloop.datastore import (FeatureStore, save_features,
                                         save_manifest)

        cfg = self.synthetic_cfg()
        manifest, _ = build_dataset(cfg)
        save_manifest(manifest, tmp_path / "manifest.json")
        save_features(FeatureStore(np.zeros((3, 2), dtype=np.float32)),
                      tmp_path / "features.bin")
        raw = {
            "dataset": {"features": str(tmp_path / "features.bin"),
                        "manifest": str(tmp_path / "manifest.json")},
        }
        with pytest.raises(SchemaError, match="do not match"):
            build_dataset(validate_config(raw))
