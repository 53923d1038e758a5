import numpy as np
import pytest

from adprog.data import (
    BIOMARKER_NAMES,
    VISIT_ORDER,
    BiomarkerRow,
    DiagnosisCohortConfig,
    FeatureSequence,
    SyntheticCohortConfig,
    assemble_sequences,
    augmented_pool_from_caches,
    fit_norm_stats,
    forward_fill,
    kfold_split,
    load_biomarkers,
    load_feature_cache,
    normalize_image,
    normalize_sequences,
    rebalance,
    rotate_augment,
    synth_diagnosis,
    synth_generate,
    write_biomarkers,
    write_feature_cache,
)
from adprog.errors import ConfigurationError, InputError, SchemaError


def make_row(sid, visit, value=1.0, missing=()):
    values = {n: (None if n in missing else value) for n in BIOMARKER_NAMES}
    return BiomarkerRow(sid, visit, values)


def make_sequence(sid, label, fill=0.0, augmented=False, variant=0):
    return FeatureSequence(sid, np.full((4, 273), fill), label,
                           augmented=augmented,
                           source_subject_id=sid, variant=variant)


class TestBiomarkerIO:
    def test_round_trip_two_rows(self, tmp_path):
        rows = [make_row("S0", "bl", 1.5), make_row("S0", "m06", 2.5)]
        path = tmp_path / "bio.csv"
        write_biomarkers(path, rows)
        loaded = load_biomarkers(path)
        assert len(loaded) == 2
        assert loaded[0].subject_id == "S0"
        assert all(loaded[0].values[n] == 1.5 for n in BIOMARKER_NAMES)

    def test_missing_column_names_it(self, tmp_path):
        path = tmp_path / "bio.csv"
        cols = ["subject_id", "visit_code"] + [n for n in BIOMARKER_NAMES
                                               if n != "MMSE"]
        path.write_text(",".join(cols) + "\n")
        with pytest.raises(SchemaError, match="MMSE"):
            load_biomarkers(path)

    def test_na_marks_field_missing(self, tmp_path):
        rows = [make_row("S0", "bl", 3.0, missing=("Hippocampus",))]
        path = tmp_path / "bio.csv"
        write_biomarkers(path, rows)
        loaded = load_biomarkers(path)
        assert loaded[0].values["Hippocampus"] is None
        assert loaded[0].missing_fields() == ["Hippocampus"]

    def test_unparseable_value_reports_line(self, tmp_path):
        path = tmp_path / "bio.csv"
        write_biomarkers(path, [make_row("S0", "bl")])
        text = path.read_text().splitlines()
        text.append(text[1].replace("1.000000", "bogus", 1))
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(SchemaError, match=":3"):
            load_biomarkers(path)

    def test_unknown_column_warns_but_parses(self, tmp_path, caplog):
        path = tmp_path / "bio.csv"
        write_biomarkers(path, [make_row("S0", "bl")])
        lines = path.read_text().splitlines()
        lines[0] += ",extraneous"
        lines[1] += ",42"
        path.write_text("\n".join(lines) + "\n")
        with caplog.at_level("WARNING"):
            rows = load_biomarkers(path)
        assert len(rows) == 1
        assert "extraneous" in caplog.text


class TestForwardFill:
    def test_m18_filled_from_m12(self):
        visits = {"bl": "a", "m06": "b", "m12": "c"}
        filled, records = forward_fill(visits)
        assert filled["m18"] == "c"
        assert [(r.visit_code, r.source_visit) for r in records] == [("m18", "m12")]

    def test_complete_unchanged(self):
        visits = {c: c for c in VISIT_ORDER}
        filled, records = forward_fill(visits)
        assert filled == visits and records == []

    def test_baseline_only_fills_three(self):
        filled, records = forward_fill({"bl": "x"})
        assert all(filled[c] == "x" for c in VISIT_ORDER)
        assert len(records) == 3
        assert all(r.source_visit == "bl" for r in records)

    def test_missing_baseline_rejected(self):
        with pytest.raises(InputError, match="baseline"):
            forward_fill({"m06": "x"})

    def test_never_reads_future_visits(self):
        filled, records = forward_fill({"bl": "a", "m18": "z"})
        assert filled["m06"] == "a" and filled["m12"] == "a"
        order = {c: i for i, c in enumerate(VISIT_ORDER)}
        assert all(order[r.source_visit] < order[r.visit_code] for r in records)


class TestAssembly:
    def _features(self, sid, visits=VISIT_ORDER, value=0.5):
        return {(sid, c): np.full(256, value) for c in visits}

    def test_single_subject_shape(self):
        feats = self._features("S0")
        rows = [make_row("S0", c) for c in VISIT_ORDER]
        seqs = assemble_sequences(feats, rows, {"S0": 1})
        assert len(seqs) == 1
        assert seqs[0].data.shape == (4, 273)
        assert np.all(np.isfinite(seqs[0].data))

    def test_feature_order_images_then_biomarkers(self):
        feats = {("S0", c): np.arange(256.0) for c in VISIT_ORDER}
        rows = [make_row("S0", c, value=9.0) for c in VISIT_ORDER]
        seqs = assemble_sequences(feats, rows, {"S0": 0})
        np.testing.assert_array_equal(seqs[0].data[0, :256], np.arange(256.0))
        np.testing.assert_array_equal(seqs[0].data[0, 256:], 9.0)

    def test_forward_fill_applies_to_both_modalities(self):
        feats = self._features("S0", visits=("bl", "m06", "m12"))
        rows = [make_row("S0", c, value=float(i))
                for i, c in enumerate(("bl", "m06"))]
        seqs = assemble_sequences(feats, rows, {"S0": 0})
        # m12/m18 biomarkers filled from m06 (value 1.0)
        np.testing.assert_array_equal(seqs[0].data[2, 256:], 1.0)
        np.testing.assert_array_equal(seqs[0].data[3, 256:], 1.0)

    def test_missing_modalities_raise_subject_error(self):
        rows = [make_row("S0", "bl")]
        with pytest.raises(InputError, match="S0"):
            assemble_sequences({}, rows, {"S0": 0})

    def test_field_level_fill_from_earlier_visit(self):
        feats = self._features("S0")
        rows = [make_row("S0", "bl", 2.0)]
        rows += [make_row("S0", c, 2.0, missing=("MMSE",))
                 for c in ("m06", "m12", "m18")]
        seqs = assemble_sequences(feats, rows, {"S0": 0})
        mmse_col = 256 + BIOMARKER_NAMES.index("MMSE")
        np.testing.assert_array_equal(seqs[0].data[:, mmse_col], 2.0)

    def test_field_missing_everywhere_rejected(self):
        feats = self._features("S0")
        rows = [make_row("S0", c, missing=("ICV",)) for c in VISIT_ORDER]
        with pytest.raises(InputError, match="ICV"):
            assemble_sequences(feats, rows, {"S0": 0})

    def test_zero_variance_feature_normalizes_to_zero(self):
        seqs = [make_sequence("S0", 0, fill=3.0), make_sequence("S1", 1, fill=3.0)]
        stats = fit_norm_stats(seqs)
        normed = normalize_sequences(seqs, stats)
        np.testing.assert_array_equal(normed[0].data, 0.0)

    def test_normalization_uses_train_stats_only(self):
        train = [make_sequence("S0", 0, fill=0.0), make_sequence("S1", 1, fill=2.0)]
        val = [make_sequence("S2", 1, fill=4.0)]
        stats = fit_norm_stats(train)
        normed_val = normalize_sequences(val, stats)
        # val z-scores computed against train mean 1.0 / std 1.0
        np.testing.assert_allclose(normed_val[0].data, 3.0)
        # refitting with val included would change stats: proves provenance
        stats_leaky = fit_norm_stats(train + val)
        assert not np.allclose(stats.mean, stats_leaky.mean)


class TestRotation:
    def test_zero_angle_identity(self):
        img = np.random.default_rng(0).standard_normal((3, 16, 16))
        np.testing.assert_allclose(rotate_augment(img, 0.0), img, atol=1e-12)

    def test_round_trip_small_on_smooth_image(self):
        # centered smooth blob vanishing toward the borders, so zero fill
        # outside the frame does not clip real content
        ax = np.linspace(-1, 1, 64)
        yy, xx = np.meshgrid(ax, ax, indexing="ij")
        blob = 1.0 / (1.0 + np.exp((np.sqrt(yy ** 2 + xx ** 2) - 0.4) / 0.08))
        img = np.stack([blob, 0.8 * blob, 0.6 * blob])
        back = rotate_augment(rotate_augment(img, 5.0), -5.0)
        assert np.abs(back - img).max() <= 0.1

    def test_constant_interior_unchanged(self):
        img = np.full((3, 32, 32), 2.5)
        out = rotate_augment(img, 4.0)
        np.testing.assert_allclose(out[:, 8:24, 8:24], 2.5, atol=1e-9)

    def test_angle_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            rotate_augment(np.zeros((3, 8, 8)), 5.5)


class TestRebalance:
    def _pool(self, sids, label, variants):
        return [make_sequence(s, label, augmented=True, variant=v)
                for s in sids for v in range(1, variants + 1)]

    def test_paper_ratio_140_to_420(self):
        base = [make_sequence(f"A{i}", 0) for i in range(390)]
        base += [make_sequence(f"B{i}", 1) for i in range(140)]
        pool = self._pool([f"B{i}" for i in range(140)], 1, 2)
        out = rebalance(base, pool, multiplier=3)
        counts = {0: 0, 1: 0}
        for s in out:
            counts[s.label] += 1
        assert counts == {0: 390, 1: 420}

    def test_multiplier_inferred_from_ratio(self):
        base = [make_sequence(f"A{i}", 0) for i in range(390)]
        base += [make_sequence(f"B{i}", 1) for i in range(140)]
        pool = self._pool([f"B{i}" for i in range(140)], 1, 2)
        out = rebalance(base, pool)
        assert sum(1 for s in out if s.label == 1) == 420

    def test_balanced_input_unchanged(self):
        base = [make_sequence("A", 0), make_sequence("B", 1)]
        assert rebalance(base, []) == base

    def test_augmented_flag_and_source_recorded(self):
        base = [make_sequence("A0", 0), make_sequence("A1", 0),
                make_sequence("B0", 1)]
        pool = self._pool(["B0"], 1, 1)
        out = rebalance(base, pool)
        added = [s for s in out if s.augmented]
        assert len(added) == 1
        assert added[0].source_subject_id == "B0"
        assert added[0].variant == 1

    def test_missing_pool_entry_names_extract(self):
        base = [make_sequence("A0", 0), make_sequence("A1", 0),
                make_sequence("B0", 1)]
        with pytest.raises(InputError, match="extract"):
            rebalance(base, [])

    def test_single_class_rejected(self):
        with pytest.raises(InputError):
            rebalance([make_sequence("A", 0)], [])


class TestKfold:
    def test_ten_subjects_five_folds(self):
        subjects = {f"S{i}": i % 2 for i in range(10)}
        folds = kfold_split(subjects, k=5, seed=1)
        assert len(folds) == 5
        for train, val in folds:
            assert len(val) == 2
            assert len(train) == 8
            assert not set(train) & set(val)
        all_val = [s for _, val in folds for s in val]
        assert sorted(all_val) == sorted(subjects)

    def test_stratification_within_one_subject(self):
        subjects = {f"S{i}": (1 if i < 12 else 0) for i in range(30)}
        folds = kfold_split(subjects, k=5, seed=2)
        global_ratio = 12 / 30
        for _, val in folds:
            positives = sum(subjects[s] for s in val)
            assert abs(positives - global_ratio * len(val)) <= 1.0

    def test_same_seed_same_partition(self):
        subjects = {f"S{i}": i % 2 for i in range(20)}
        assert kfold_split(subjects, 5, seed=9) == kfold_split(subjects, 5, seed=9)
        assert kfold_split(subjects, 5, seed=9) != kfold_split(subjects, 5, seed=10)

    def test_class_smaller_than_k_suggests_smaller_k(self):
        subjects = {"A": 0, "B": 0, "C": 0, "D": 0, "E": 1, "F": 1}
        with pytest.raises(ConfigurationError, match="smaller k"):
            kfold_split(subjects, k=5, seed=0)


class TestSyntheticCohort:
    def test_seed_determinism(self):
        cfg = SyntheticCohortConfig(n_smci=3, n_pmci=2, seed=11)
        a = synth_generate(cfg)
        b = synth_generate(cfg)
        assert a.labels == b.labels
        for key in a.images:
            np.testing.assert_array_equal(a.images[key], b.images[key])
        for ra, rb in zip(a.biomarkers, b.biomarkers):
            assert ra.values == rb.values

    def test_cohort_shape(self):
        cfg = SyntheticCohortConfig(n_smci=4, n_pmci=2, seed=0)
        cohort = synth_generate(cfg)
        assert len(cohort.labels) == 6
        assert len(cohort.images) == 24
        assert len(cohort.biomarkers) == 24
        assert sum(cohort.labels.values()) == 2
        img = cohort.images[("S0000", "bl")]
        assert img.shape == (3, 64, 64)

    def test_progressive_subjects_shrink_faster(self):
        cfg = SyntheticCohortConfig(n_smci=12, n_pmci=12, seed=5, image_noise=0.0)
        cohort = synth_generate(cfg)

        def blob_mass(sid):
            start = cohort.images[(sid, "bl")][0].sum()
            end = cohort.images[(sid, "m18")][0].sum()
            return (start - end) / start

        smci = np.mean([blob_mass(f"S{i:04d}") for i in range(12)])
        pmci = np.mean([blob_mass(f"S{i:04d}") for i in range(12, 24)])
        assert pmci > smci * 1.5

    def test_null_config_removes_class_signal(self):
        cfg = SyntheticCohortConfig(n_smci=2, n_pmci=2, seed=5).null_signal()
        assert cfg.pmci_atrophy == cfg.smci_atrophy
        assert cfg.biomarker_separation == 0.0

    def test_label_noise_flips_some(self):
        cfg = SyntheticCohortConfig(n_smci=50, n_pmci=50, seed=2, label_noise=0.3)
        cohort = synth_generate(cfg)
        flips = sum(1 for i in range(50) if cohort.labels[f"S{i:04d}"] == 1)
        flips += sum(1 for i in range(50, 100) if cohort.labels[f"S{i:04d}"] == 0)
        assert 10 <= flips <= 50

    def test_logistic_baseline_on_raw_biomarkers(self):
        # independent oracle: sklearn logistic regression on flattened
        # biomarker trajectories must already separate the default classes
        from sklearn.linear_model import LogisticRegression
        from sklearn.model_selection import cross_val_score
        from sklearn.pipeline import make_pipeline
        from sklearn.preprocessing import StandardScaler

        cfg = SyntheticCohortConfig(n_smci=60, n_pmci=60, seed=7)
        cohort = synth_generate(cfg)
        by_subject = {}
        for row in cohort.biomarkers:
            by_subject.setdefault(row.subject_id, {})[row.visit_code] = [
                row.values[n] for n in BIOMARKER_NAMES]
        x = np.array([[v for code in VISIT_ORDER for v in by_subject[sid][code]]
                      for sid in sorted(cohort.labels)])
        y = np.array([cohort.labels[sid] for sid in sorted(cohort.labels)])
        model = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
        acc = cross_val_score(model, x, y, cv=3).mean()
        assert acc >= 0.80

    def test_diagnosis_cohort(self):
        cfg = DiagnosisCohortConfig(n_cn=3, n_mci=3, n_ad=3, seed=1)
        images, labels = synth_diagnosis(cfg)
        assert len(images) == 9
        assert sorted(set(labels.values())) == [0, 1, 2]
        # class radii ordered CN > MCI > AD: blob mass must follow
        mass = {cls: np.mean([images[sid][0].sum() for sid, lab in labels.items()
                              if lab == cls]) for cls in (0, 1, 2)}
        assert mass[0] > mass[1] > mass[2]

    def test_normalize_image(self):
        img = np.random.default_rng(1).standard_normal((3, 8, 8)) * 5 + 2
        out = normalize_image(img)
        assert abs(out.mean()) < 1e-12
        assert abs(out.std() - 1.0) < 1e-12


class TestFeatureCacheIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        feats = {("S0", "bl"): rng.standard_normal(256),
                 ("S0", "m06"): rng.standard_normal(256)}
        path = tmp_path / "features.csv"
        write_feature_cache(path, feats)
        loaded = load_feature_cache(path)
        assert set(loaded) == set(feats)
        for key in feats:
            np.testing.assert_allclose(loaded[key], feats[key], rtol=1e-10)

    def test_augmented_pool_assembly(self):
        rng = np.random.default_rng(4)
        augmented = {("S0", 1, c): rng.standard_normal(256) for c in VISIT_ORDER}
        rows = [make_row("S0", c, 1.0) for c in VISIT_ORDER]
        pool = augmented_pool_from_caches(augmented, rows, {"S0": 1})
        assert len(pool) == 1
        assert pool[0].augmented and pool[0].variant == 1
        assert pool[0].data.shape == (4, 273)
