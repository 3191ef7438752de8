//! Scratch calibration runs for the acceptance-suite world parameters.

use std::time::Instant;

use softlabel_core::attacks::{robustness_eval, AttackConfig};
use softlabel_core::backend::ClassifierBackend;
use softlabel_core::bench::{mean_soft_entropy, SoftLabelDataset, SynthWorld, SynthWorldConfig};
use softlabel_core::metrics::{evaluate, EvalOptions};
use softlabel_core::targets::{build_provider, ResampleGranularity, TargetPolicy};
use softlabel_core::training::{
    cross_validated_run, fine_tune, kfold_split, train, OptimizerKind, TrainConfig,
};
use softlabel_core::{LabelDistribution64, ReferenceModel64};

#[derive(Clone, Copy)]
struct Recipe {
    overlap: f64,
    shift_step: f64,
    epochs: usize,
    lr: f64,
    batch: usize,
    hidden: usize,
    n_train: usize,
}

fn world_config(seed: u64, recipe: &Recipe) -> SynthWorldConfig {
    SynthWorldConfig {
        n_classes: 4,
        n_dims: 16,
        mean_radius: 1.0,
        covariance_scale: 1.0,
        overlap: recipe.overlap,
        shift_levels: (0..4).map(|i| i as f64 * recipe.shift_step).collect(),
        n_train: recipe.n_train,
        n_test: 1000,
        squash_scale: 2.0,
        seed,
    }
}

fn train_config(seed: u64, policy: TargetPolicy, recipe: &Recipe) -> TrainConfig {
    TrainConfig {
        epochs: recipe.epochs,
        learning_rate: recipe.lr,
        batch_size: recipe.batch,
        optimizer: OptimizerKind::Adam,
        seed,
        policy,
    }
}

struct PolicyStats {
    shift_ce: Vec<f64>,
    conf_c: f64,
    conf_i: f64,
    fgsm_post_ce: f64,
    pgd_final: f64,
    train_loss: f64,
}

fn run_policy(
    seed: u64,
    recipe: &Recipe,
    policy: TargetPolicy,
    train_ds: &SoftLabelDataset<f64>,
    tests: &[SoftLabelDataset<f64>],
) -> PolicyStats {
    let factory = |_fold: usize, fold_seed: u64| {
        ReferenceModel64::new(16, recipe.hidden, 4, fold_seed, OptimizerKind::Adam)
    };
    let config = train_config(seed, policy.clone(), recipe);
    let outcome =
        cross_validated_run(factory, train_ds, &policy, &config, 5, &[], &EvalOptions::default())
            .unwrap();
    let mut shift_ce = Vec::new();
    for test in tests {
        let mut ces = Vec::new();
        for fold in &outcome.folds {
            let report = evaluate(
                &fold.model,
                test.features.view(),
                &test.hard_labels,
                test.soft_labels.as_deref(),
                &test.name,
                &EvalOptions::default(),
            )
            .unwrap();
            ces.push(report.crossentropy_vs_hard);
        }
        shift_ce.push(ces.iter().sum::<f64>() / ces.len() as f64);
    }
    let split = kfold_split(train_ds.len(), 5, config.seed).unwrap();
    let mut fgsm_sum = 0.0;
    let mut pgd_sum = 0.0;
    for fold in &outcome.folds {
        let holdout = split.holdout_indices(fold.fold);
        let sample: Vec<usize> = holdout.into_iter().take(500).collect();
        let target = train_ds.subset(&sample, "attack");
        let fgsm_report = robustness_eval(&fold.model, &target, &AttackConfig::fgsm(4)).unwrap();
        let pgd_report = robustness_eval(&fold.model, &target, &AttackConfig::pgd(4, 40)).unwrap();
        fgsm_sum += fgsm_report.post_crossentropy;
        pgd_sum += *pgd_report.trace.as_ref().unwrap().mean_ce_best.last().unwrap();
    }
    PolicyStats {
        shift_ce,
        conf_c: outcome.aggregate.mean_confidence_correct.map(|s| s.mean).unwrap_or(f64::NAN),
        conf_i: outcome.aggregate.mean_confidence_incorrect.map(|s| s.mean).unwrap_or(f64::NAN),
        fgsm_post_ce: fgsm_sum / outcome.folds.len() as f64,
        pgd_final: pgd_sum / outcome.folds.len() as f64,
        train_loss: *outcome.folds[0].history.epoch_loss.last().unwrap(),
    }
}

fn sweep_shift(recipe: &Recipe) {
    let t0 = Instant::now();
    let (mut c1a, mut c1b, mut c2a, mut c5, mut c6) = (0, 0, 0, 0, 0);
    let mut conf_c_diffs = Vec::new();
    let mut entropy_sum = 0.0;
    for seed in 0..5u64 {
        let world = SynthWorld::new(world_config(seed, recipe)).unwrap();
        let (train_ds, tests) = world.make::<f64>().unwrap();
        entropy_sum += mean_soft_entropy(&train_ds).unwrap();
        let hard = run_policy(seed, recipe, TargetPolicy::OneHot, &train_ds, &tests);
        let soft = run_policy(seed, recipe, TargetPolicy::HumanSoft, &train_ds, &tests);
        let all_below =
            soft.shift_ce.iter().zip(&hard.shift_ce).all(|(s, h)| s < h);
        let gap0 = hard.shift_ce[0] - soft.shift_ce[0];
        let gap_top = hard.shift_ce[3] - soft.shift_ce[3];
        c1a += usize::from(all_below);
        c1b += usize::from(gap_top > gap0);
        c2a += usize::from(soft.conf_i < hard.conf_i);
        conf_c_diffs.push((soft.conf_c - hard.conf_c).abs());
        c5 += usize::from(soft.fgsm_post_ce < hard.fgsm_post_ce);
        c6 += usize::from(soft.pgd_final < hard.pgd_final);
        println!(
            "    seed {seed}: below={} gap {:.3}->{:.3} conf_i {:.3}/{:.3} train_loss {:.3}/{:.3}",
            all_below, gap0, gap_top, soft.conf_i, hard.conf_i,
            soft.train_loss, hard.train_loss,
        );
    }
    let conf_c_mean = conf_c_diffs.iter().sum::<f64>() / conf_c_diffs.len() as f64;
    println!(
        "  ov={} step={} ep={} lr={} b={} h={} | H={:.2} c1a={c1a}/5 c1b={c1b}/5 c2a={c2a}/5 confc_diff={conf_c_mean:.3} c5={c5}/5 c6={c6}/5 ({:?})",
        recipe.overlap, recipe.shift_step, recipe.epochs, recipe.lr, recipe.batch, recipe.hidden,
        entropy_sum / 5.0,
        t0.elapsed()
    );
}

fn eval_ce_to_oracle(
    model: &ReferenceModel64,
    ds: &SoftLabelDataset<f64>,
    idx: &[usize],
) -> f64 {
    let features = ds.features.select(ndarray::Axis(0), idx);
    let preds = model.predict_proba(features.view()).unwrap();
    let soft: Vec<LabelDistribution64> =
        idx.iter().map(|&i| ds.soft_labels.as_ref().unwrap()[i].clone()).collect();
    softlabel_core::metrics::mean_cross_entropy(&preds, &soft).unwrap()
}

fn finetune_experiment(seed: u64, ft_epochs: usize, mixup_alpha: f64) -> [f64; 5] {
    let recipe = Recipe {
        overlap: 0.6,
        shift_step: 0.25,
        epochs: 40,
        lr: 0.01,
        batch: 16,
        hidden: 64,
        n_train: 3000,
    };
    let mut wc = world_config(seed + 1000, &recipe);
    wc.mean_placement = softlabel_core::bench::MeanPlacement::Random;
    wc.overlap = 0.5;
    let world = SynthWorld::new(wc).unwrap();
    let pretrain_ds = world.generate::<f64>(3000, 0.0, 50, "pretrain").unwrap();
    let finetune_ds = world.generate::<f64>(1500, 0.0, 51, "finetune").unwrap();

    let mut pretrained = ReferenceModel64::new(16, 64, 4, seed, OptimizerKind::Adam).unwrap();
    let provider = build_provider(
        &TargetPolicy::OneHot,
        pretrain_ds.features.clone(),
        &pretrain_ds.hard_labels,
        None,
        4,
        seed,
        &[],
    )
    .unwrap();
    let config = train_config(seed, TargetPolicy::OneHot, &recipe);
    train(&mut pretrained, provider.as_ref(), &config).unwrap();

    let policies = [
        TargetPolicy::HumanSoft,
        TargetPolicy::SampledHard { granularity: ResampleGranularity::PerEpoch },
        TargetPolicy::ClassSoft,
        TargetPolicy::Mixup { alpha: mixup_alpha },
        TargetPolicy::OneHot,
    ];
    let split = kfold_split(finetune_ds.len(), 5, seed).unwrap();
    let mut out = [0.0; 5];
    for (pi, policy) in policies.iter().enumerate() {
        let mut ces = Vec::new();
        for fold in 0..5 {
            let train_idx = split.train_indices(fold);
            let holdout_idx = split.holdout_indices(fold);
            let features = finetune_ds.features.select(ndarray::Axis(0), &train_idx);
            let hard: Vec<usize> =
                train_idx.iter().map(|&i| finetune_ds.hard_labels[i]).collect();
            let soft: Vec<LabelDistribution64> = train_idx
                .iter()
                .map(|&i| finetune_ds.soft_labels.as_ref().unwrap()[i].clone())
                .collect();
            let provider =
                build_provider(policy, features, &hard, Some(&soft), 4, seed + fold as u64, &[])
                    .unwrap();
            let mut cfg = train_config(seed + fold as u64, policy.clone(), &recipe);
            cfg.epochs = ft_epochs;
            let (tuned, _) = fine_tune(&pretrained, provider.as_ref(), &cfg).unwrap();
            ces.push(eval_ce_to_oracle(&tuned, &finetune_ds, &holdout_idx));
        }
        out[pi] = ces.iter().sum::<f64>() / ces.len() as f64;
    }
    out
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "shift".to_string());
    match mode.as_str() {
        "shift" => {
            let recipes = [
                Recipe { overlap: 0.4, shift_step: 0.3, epochs: 60, lr: 0.02, batch: 16, hidden: 64, n_train: 2500 },
                Recipe { overlap: 0.42, shift_step: 0.25, epochs: 60, lr: 0.02, batch: 16, hidden: 64, n_train: 2500 },
                Recipe { overlap: 0.4, shift_step: 0.25, epochs: 50, lr: 0.02, batch: 16, hidden: 64, n_train: 2500 },
            ];
            for recipe in &recipes {
                sweep_shift(recipe);
            }
        }
        "entropy" => {
            for overlap in [0.5, 0.55, 0.6, 0.65, 0.7, 0.75] {
                let recipe = Recipe { overlap, shift_step: 0.25, epochs: 1, lr: 0.02, batch: 16, hidden: 64, n_train: 4000 };
                let world = SynthWorld::new(world_config(0, &recipe)).unwrap();
                let ds = world.generate::<f64>(4000, 0.0, 0, "t").unwrap();
                println!("overlap {overlap}: H = {:.4}", mean_soft_entropy(&ds).unwrap());
            }
        }
        "finetune" => {
            let ft_epochs: usize =
                std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(40);
            let alpha: f64 =
                std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.2);
            let mut orderings = 0;
            let mut gaps = Vec::new();
            for seed in 0..5 {
                let [hs, sh, cs, mx, oh] = finetune_experiment(seed, ft_epochs, alpha);
                let ordered = hs.max(sh) < cs && cs < mx && mx < oh;
                orderings += usize::from(ordered);
                gaps.push((hs - sh).abs());
                println!(
                    "seed {seed}: hs {hs:.4} sh {sh:.4} cs {cs:.4} mx {mx:.4} oh {oh:.4} ordered={ordered}"
                );
            }
            let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
            println!("ordering {orderings}/5, mean |hs-sh| = {gap:.4}");
        }
        other => eprintln!("unknown mode {other}"),
    }
}
