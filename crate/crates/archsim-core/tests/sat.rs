//! Pair scores and similarity matrices computed on small trained models:
//! exact symmetry, matrix-vs-pairwise agreement, persistence round trips,
//! and the agreement statistic.

use archsim_core::archfeat::ArchFeatureRecord;
use archsim_core::attacks::{attack_with_ids, AttackConfig};
use archsim_core::nn::train::{train, TrainConfig};
use archsim_core::nn::Model;
use archsim_core::rng::stream;
use archsim_core::sat::{
    misclassification_agreement, pair_indicator_table, sat, sat_matrix, sat_one_sided,
    subsample_stability, SatConfig, SimilarityMatrix,
};
use archsim_core::tensor::Tensor;
use archsim_core::zoo::{Dataset, Split};
use archsim_core::{LayerSpec, ModelSpec};
use rand::Rng;

/// Two-class 8x8 blobs (bright top half vs bright bottom half, plus noise).
fn blob_data(seed: u64, n_per_class: usize, split: Split) -> Dataset {
    let mut rng = stream(seed, "blobs", if split == Split::Train { 0 } else { 1 });
    let n = 2 * n_per_class;
    let mut images = vec![0.0f32; n * 64];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        for y in 0..8 {
            for x in 0..8 {
                let lit = (class == 0) == (y < 4);
                let base: f32 = if lit { 0.75 } else { 0.25 };
                images[i * 64 + y * 8 + x] = (base + rng.gen_range(-0.2f32..0.2)).clamp(0.0, 1.0);
            }
        }
        labels.push(class);
    }
    Dataset {
        name: format!("blobs-{seed}-{split:?}"),
        images: Tensor::new(vec![n, 8, 8, 1], images).unwrap(),
        labels,
        num_classes: 2,
        split,
        provenance: format!("blobs seed={seed}"),
    }
}

fn mlp_spec(name: &str, res: usize, hidden: usize) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 1],
        num_classes: 2,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 2 },
        ],
        arch_features: ArchFeatureRecord::placeholder(),
    }
}

fn trained(name: &str, res: usize, hidden: usize, seed: u64) -> Model {
    let train_data = blob_data(3, 100, Split::Train);
    let eval_data = blob_data(3, 50, Split::Eval);
    let cfg = TrainConfig { seed, epochs: 6, batch_size: 16, learning_rate: 0.1, ..TrainConfig::default() };
    let model = train(mlp_spec(name, res, hidden), &train_data, &eval_data, &cfg, None).unwrap();
    assert!(model.meta().final_clean_accuracy.unwrap() > 0.9, "fixture model failed to train");
    model
}

/// Attack budget big enough that transfer on blobs is nontrivial, small
/// enough to stay quick.
fn test_cfg() -> SatConfig {
    SatConfig {
        eval_fraction: 0.5,
        seed: 42,
        attack: AttackConfig { epsilon: 0.15, step_size: 0.05, iterations: 10, ..AttackConfig::default() },
        ..SatConfig::default()
    }
}

#[test]
fn symmetry_is_exact_and_matrix_matches_pairwise_calls() {
    let a = trained("mlp-a", 8, 16, 1);
    let b = trained("mlp-b", 8, 16, 2);
    let c = trained("mlp-c", 8, 8, 3);
    let eval_set = blob_data(4, 100, Split::Eval);
    let cfg = test_cfg();

    let ab = sat(&a, &b, &eval_set, &cfg).unwrap();
    let ba = sat(&b, &a, &eval_set, &cfg).unwrap();
    assert_eq!(ab, ba, "symmetry must be exact, not approximate");

    let matrix = sat_matrix(&[&a, &b, &c], &eval_set, &cfg).unwrap();
    assert!(matrix.exclusions.is_empty());

    // Every matrix entry equals the standalone pair computation, bit for bit.
    let pairs: [(&Model, &Model, usize, usize); 3] = [(&a, &b, 0, 1), (&a, &c, 0, 2), (&b, &c, 1, 2)];
    for (x, y, i, j) in pairs {
        let s = sat(x, y, &eval_set, &cfg).unwrap();
        assert_eq!(matrix.values[i][j], s.value, "matrix[{i}][{j}] != sat({},{})", x.name(), y.name());
        assert_eq!(matrix.raw_transfer[i][j], s.raw);
    }

    // Range and symmetry across the whole matrix.
    let (lo, hi) = (cfg.epsilon_floor.ln(), 100.0_f64.ln());
    for i in 0..3 {
        for j in 0..3 {
            let v = matrix.values[i][j];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "score {v} outside range");
            assert_eq!(v, matrix.values[j][i]);
            assert!((matrix.values[i][j] - matrix.raw_transfer[i][j].ln()).abs() < 1e-12);
            assert!(matrix.pair_counts[i][j] > 0);
        }
    }
}

#[test]
fn identical_weights_score_like_the_self_pair() {
    let a = trained("twin-a", 8, 16, 7);
    let mut spec = a.spec().clone();
    spec.name = "twin-b".into();
    let b = Model::from_parts(spec, a.weights().clone(), a.meta().clone()).unwrap();

    let eval_set = blob_data(5, 80, Split::Eval);
    let matrix = sat_matrix(&[&a, &b], &eval_set, &test_cfg()).unwrap();
    // Same weights ⇒ same correct set, same adversarial images, so the
    // off-diagonal equals the diagonal exactly.
    assert_eq!(matrix.values[0][1], matrix.values[0][0]);
    assert_eq!(matrix.values[0][1], matrix.values[1][1]);
}

#[test]
fn cross_resolution_pair_uses_resize() {
    let a = trained("res8", 8, 16, 1);
    let b = trained("res12", 12, 16, 2);
    let eval_set = blob_data(6, 80, Split::Eval);
    let cfg = test_cfg();
    let s = sat(&a, &b, &eval_set, &cfg).unwrap();
    assert!(s.value >= cfg.epsilon_floor.ln() - 1e-12 && s.value <= 100.0_f64.ln() + 1e-12);
    let matrix = sat_matrix(&[&a, &b], &eval_set, &cfg).unwrap();
    assert_eq!(matrix.values[0][1], s.value);
}

#[test]
fn matrix_round_trips_through_disk() {
    let a = trained("disk-a", 8, 16, 4);
    let b = trained("disk-b", 8, 8, 5);
    let eval_set = blob_data(7, 60, Split::Eval);
    let matrix = sat_matrix(&[&a, &b], &eval_set, &test_cfg()).unwrap();

    let dir = std::env::temp_dir().join(format!("archsim-sat-test-{}", std::process::id()));
    matrix.save(&dir).unwrap();
    let back = SimilarityMatrix::load(&dir.join("sat.json")).unwrap();

    assert_eq!(back.model_names, matrix.model_names);
    assert_eq!(back.values, matrix.values, "ln values must round-trip exactly");
    assert_eq!(back.raw_transfer, matrix.raw_transfer);
    assert_eq!(back.pair_counts, matrix.pair_counts);
    assert_eq!(back.subsample, matrix.subsample);
    assert_eq!(back.config, matrix.config);

    // The CSV view carries the same numbers at six decimals.
    let csv = std::fs::read_to_string(dir.join("sat.csv")).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "model,disk-a,disk-b");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "disk-a");
    let printed: f64 = row[1].parse().unwrap();
    assert!((printed - matrix.values[0][0]).abs() < 5e-7);
}

#[test]
fn indicator_table_matches_full_run_and_restricts_cleanly() {
    let a = trained("tab-a", 8, 16, 8);
    let b = trained("tab-b", 8, 16, 9);
    let eval_set = blob_data(8, 80, Split::Eval);
    let cfg = SatConfig { eval_fraction: 1.0, ..test_cfg() };

    let table = pair_indicator_table(&a, &b, &eval_set, &cfg.attack, cfg.epsilon_floor).unwrap();
    let direct = sat(&a, &b, &eval_set, &cfg).unwrap();
    assert_eq!(table.full().unwrap(), direct, "table total must equal the direct score");

    // Restricting to the full index range changes nothing; a strict subset
    // recounts only its own rows.
    let everything: Vec<usize> = (0..eval_set.len()).collect();
    assert_eq!(table.on_subset(&everything).unwrap(), direct);

    let half: Vec<usize> = (0..eval_set.len() / 2).collect();
    let restricted = table.on_subset(&half).unwrap();
    let mut fa = 0;
    let mut fb = 0;
    let mut n = 0;
    for (k, &id) in table.ids.iter().enumerate() {
        if id < eval_set.len() / 2 {
            fa += table.fooled_a_on_adv_b[k] as usize;
            fb += table.fooled_b_on_adv_a[k] as usize;
            n += 1;
        }
    }
    let expect = archsim_core::sat::sat_from_counts(fa, fb, n, cfg.epsilon_floor).unwrap();
    assert_eq!(restricted, expect);
}

#[test]
fn stability_rows_are_deterministic_and_flag_disjointness() {
    let a = trained("stab-a", 8, 16, 10);
    let b = trained("stab-b", 8, 16, 11);
    let eval_set = blob_data(9, 100, Split::Eval); // 200 images
    let cfg = test_cfg();
    let table = pair_indicator_table(&a, &b, &eval_set, &cfg.attack, cfg.epsilon_floor).unwrap();

    let rows = subsample_stability(&table, &[40, 90], 3, 5).unwrap();
    let again = subsample_stability(&table, &[40, 90], 3, 5).unwrap();
    assert_eq!(rows, again);

    assert!(rows[0].disjoint, "3 draws of 40 fit 200 samples disjointly");
    assert!(!rows[1].disjoint, "3 draws of 90 cannot be disjoint in 200");
    for row in &rows {
        assert!(row.std_raw.is_finite() && row.std_raw >= 0.0);
        assert!(row.mean_raw >= cfg.epsilon_floor && row.mean_raw <= 100.0);
    }

    assert!(subsample_stability(&table, &[40], 1, 5).is_err(), "one draw has no spread");
    assert!(subsample_stability(&table, &[0], 3, 5).is_err());
    assert!(subsample_stability(&table, &[10_000], 3, 5).is_err());
}

#[test]
fn agreement_of_a_model_with_itself_counts_its_fooled_examples() {
    let a = trained("agree-a", 8, 16, 12);
    let eval_set = blob_data(10, 60, Split::Eval);
    // Blob classes sit 0.5 apart, so a wide-margin MLP shrugs off small
    // budgets; use one large enough to actually flip predictions.
    let mut cfg = test_cfg();
    cfg.attack.epsilon = 0.35;
    cfg.attack.step_size = 0.1;

    // Attack the model's correct subset directly.
    let correct: Vec<usize> = {
        let preds = archsim_core::nn::eval::predictions(&a, &eval_set.images).unwrap();
        preds.iter().zip(&eval_set.labels).enumerate().filter(|(_, (p, y))| p == y).map(|(i, _)| i).collect()
    };
    let clean = eval_set.images.gather(&correct);
    let labels: Vec<usize> = correct.iter().map(|&i| eval_set.labels[i]).collect();
    let ids: Vec<u64> = correct.iter().map(|&i| i as u64).collect();
    let adv = attack_with_ids(&a, &clean, &labels, &ids, &cfg.attack).unwrap();

    let agreement = misclassification_agreement(&a, &a, &adv, &adv).unwrap();
    let fooled = adv.fooled_source.iter().filter(|&&f| f).count();
    assert_eq!(agreement, fooled);
    assert!(fooled > 0, "budget 0.15 should fool a blob MLP at least once");
}

#[test]
fn one_sided_scores_match_a_manual_recount() {
    let new_model = trained("new-m", 8, 16, 13);
    let member = trained("member", 8, 16, 14);
    let eval_set = blob_data(11, 80, Split::Eval);
    let cfg = SatConfig { eval_fraction: 1.0, ..test_cfg() };

    let scores = sat_one_sided(&new_model, &[&member, &new_model], &eval_set, &cfg).unwrap();
    assert_eq!(scores.len(), 2);

    // Manual recount for the first member: attack the new model on its own
    // correct set, evaluate the member on the shared eligible part.
    let preds_new = archsim_core::nn::eval::predictions(&new_model, &eval_set.images).unwrap();
    let preds_mem = archsim_core::nn::eval::predictions(&member, &eval_set.images).unwrap();
    let correct_new: Vec<usize> = preds_new
        .iter()
        .zip(&eval_set.labels)
        .enumerate()
        .filter(|(_, (p, y))| p == y)
        .map(|(i, _)| i)
        .collect();
    let clean = eval_set.images.gather(&correct_new);
    let labels: Vec<usize> = correct_new.iter().map(|&i| eval_set.labels[i]).collect();
    let ids: Vec<u64> = correct_new.iter().map(|&i| i as u64).collect();
    let adv = attack_with_ids(&new_model, &clean, &labels, &ids, &cfg.attack).unwrap();
    let preds_on_adv = archsim_core::nn::eval::predictions(&member, &adv.adversarial).unwrap();

    let mut fooled = 0usize;
    let mut eligible = 0usize;
    for (k, &idx) in correct_new.iter().enumerate() {
        if preds_mem[idx] == eval_set.labels[idx] {
            eligible += 1;
            if preds_on_adv[k] != eval_set.labels[idx] {
                fooled += 1;
            }
        }
    }
    let expect = archsim_core::sat::sat_one_sided_from_counts(fooled, eligible, cfg.epsilon_floor).unwrap();
    assert_eq!(scores[0], expect);
}
