//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances and thresholds are fixed below.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use oracles::{
    confusion_oracle, coverage_oracle, gradient_check, kl_oracle, loss_gradient_check, random_labels, tiny_config,
    uniform, weighted_ce_oracle,
};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use semvae::dataset::toy_mask_seed;
use semvae_core::latent::{embed, generate_part, interpolate_part, perturb_part};
use semvae_core::loss::{kl_loss, weighted_cross_entropy_grad};
use semvae_core::mask::{compute_class_weights, compute_label_stats, one_hot_encode};
use semvae_core::metrics::dataset_metrics;
use semvae_core::model::LatentDistribution;
use semvae_core::toy::{generate_toy_labels, ToyConfig};
use semvae_core::train::{evaluate, run_ablation, standard_ablation_grid, train, TrainConfig, Trainer};
use semvae_core::loss::LossConfig;
use semvae_core::{ClassEmbeddings, ClassWeights, LabelMap, MaskVae, ModelConfig, SemanticMask};

const LOSS_TOL: f64 = 1e-6;
const KL_UNIT_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const WEIGHT_SUM_TOL: f64 = 1e-9;
const METRIC_PAIRS: usize = 200;

const TOY_CLASSES: usize = 6;
const TOY_SIZE: usize = 64;
const TOY_TRAIN: usize = 2000;
const TOY_HELD_OUT: usize = 200;
const TOY_EPOCHS: usize = 20;
const TOY_MIOU: f64 = 0.80;
const TOY_BUDGET: Duration = Duration::from_secs(30 * 60);

const ABLATION_TRAIN: usize = 640;
const ABLATION_EPOCHS: usize = 10;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

const LATENT_SEEDS: u64 = 100;
const E2E_BUDGET: Duration = Duration::from_secs(35 * 60);

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn loss_oracles(r: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 2 + (seed % 3) as usize;
        let h = 1 + (seed % 8) as usize;
        let w = 1 + ((seed / 8) % 8) as usize;
        let maps: Vec<LabelMap> = (0..2).map(|s| random_labels(seed * 3 + s, h, w, c)).collect();
        let refs: Vec<&LabelMap> = maps.iter().collect();
        let logits: Vec<f64> = (0..2 * c * h * w).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
        let weights: Vec<f64> = (0..c).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let (got, _) = weighted_cross_entropy_grad(&logits, &refs, &ClassWeights { w: weights.clone() }).unwrap();
        worst = worst.max((got - weighted_ce_oracle(&logits, &refs, c, &weights)).abs());

        let n = 1 + (seed as usize % 64);
        let mu: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let lv: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let d = LatentDistribution { class_count: 1, dim: n, mu: mu.clone(), logvar: lv.clone() };
        worst = worst.max((kl_loss(&d) - kl_oracle(&mu, &lv)).abs());
        cases += 1;
    }
    r.line(
        "loss oracles",
        worst < LOSS_TOL,
        format!("{cases} random cases up to 8x8x4, max abs diff {worst:.2e} (tol {LOSS_TOL:.0e})"),
    );

    let unit = |m: f64, lv: f64| {
        let d = LatentDistribution { class_count: 2, dim: 4, mu: vec![m; 8], logvar: vec![lv; 8] };
        kl_loss(&d)
    };
    let (k0, k1) = (unit(0.0, 0.0), unit(1.0, 0.0));
    let ok = k0.abs() < KL_UNIT_TOL && (k1 - 0.5).abs() < KL_UNIT_TOL;
    r.line("KL unit cases", ok, format!("KL(0,1) = {k0:e}, KL(1,1) = {k1} per element (tol {KL_UNIT_TOL:.0e})"));
}

fn gradient_checks(r: &mut Report) {
    let start = Instant::now();
    let configs = [
        ("bidirectional", tiny_config(3)),
        ("unidirectional", tiny_config(3).with_lstm(3, false)),
        ("per-class encoders", ModelConfig { per_class_encoders: true, ..tiny_config(3) }),
        ("no recurrent block", tiny_config(2).with_lstm(0, false)),
    ];
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (i, (name, cfg)) in configs.into_iter().enumerate() {
        let g = gradient_check(cfg, i as u64 + 1);
        checked += g.checked;
        if g.worst > worst.0 {
            worst = (g.worst, format!("{name}: {}", g.worst_at));
        }
    }
    for seed in 0..10 {
        let e = loss_gradient_check(seed);
        if e > worst.0 {
            worst = (e, "loss inputs".into());
        }
    }
    let elapsed = start.elapsed();
    r.line(
        "gradient checks",
        worst.0 < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "{checked} parameter entries plus logits/mu/logvar, worst rel err {:.2e} (tol {GRAD_TOL:.0e}) at {}, {:.1}s",
            worst.0,
            if worst.1.is_empty() { "-" } else { &worst.1 },
            elapsed.as_secs_f64()
        ),
    );
}

fn class_weights(r: &mut Report) {
    let fill = |c: usize, l: u8| LabelMap::filled(16, 16, c, l).unwrap();
    let mut half = vec![1u8; 256];
    half[128..].fill(2);
    let fixtures: Vec<(Vec<LabelMap>, Vec<f64>)> = vec![
        (vec![fill(3, 0), LabelMap::new(16, 16, 3, half).unwrap()], vec![0.5, 0.75, 0.75]),
        ((0..4).map(|k| fill(5, k)).collect(), vec![0.75, 0.75, 0.75, 0.75, 1.0]),
        (vec![fill(2, 1)], vec![1.0, 0.0]),
    ];
    let exact = fixtures
        .iter()
        .all(|(maps, want)| compute_class_weights(&compute_label_stats(maps).unwrap()).w == *want);

    let mut worst: f64 = 0.0;
    let mut coverage_diff: f64 = 0.0;
    for seed in 0..200u64 {
        let c = 2 + (seed % 18) as usize;
        let maps: Vec<LabelMap> = (0..1 + seed % 5).map(|s| random_labels(seed * 10 + s, 16, 32, c)).collect();
        let stats = compute_label_stats(&maps).unwrap();
        for (a, b) in stats.per_class_mean_coverage.iter().zip(coverage_oracle(&maps, c)) {
            coverage_diff = coverage_diff.max((a - b).abs());
        }
        let w = compute_class_weights(&stats);
        worst = worst.max((w.w.iter().map(|v| 1.0 - v).sum::<f64>() - 1.0).abs());
    }
    r.line(
        "class weights",
        exact && worst < WEIGHT_SUM_TOL && coverage_diff < WEIGHT_SUM_TOL,
        format!(
            "hand-built fixtures exact: {exact}; 200 random datasets: max |sum(1-w) - 1| {worst:.2e}, coverage vs oracle {coverage_diff:.2e} (tol {WEIGHT_SUM_TOL:.0e})"
        ),
    );
}

fn metric_oracle(r: &mut Report) {
    let c = 6;
    let preds: Vec<LabelMap> = (0..METRIC_PAIRS as u64).map(|s| random_labels(s, 32, 32, c)).collect();
    let gts: Vec<LabelMap> = (0..METRIC_PAIRS as u64).map(|s| random_labels(s + 10_000, 32, 32, c)).collect();
    let pairs: Vec<(&LabelMap, &LabelMap)> = preds.iter().zip(&gts).collect();
    let mut all_equal = true;
    for p in &pairs {
        let got = dataset_metrics([*p], c).unwrap();
        let want = confusion_oracle(&[*p], c);
        all_equal &= got.pixel_accuracy == want.accuracy && got.per_class_iou == want.iou && got.mean_iou == want.miou;
    }
    let got = dataset_metrics(pairs.iter().copied(), c).unwrap();
    let want = confusion_oracle(&pairs, c);
    all_equal &= got.pixel_accuracy == want.accuracy && got.per_class_iou == want.iou && got.mean_iou == want.miou;
    r.line(
        "metric oracle",
        all_equal,
        format!("{METRIC_PAIRS} random 32x32 pairs, per pair and pooled, exact equality: {all_equal}"),
    );
}

fn toy_set(seed: u64, n: usize, size: usize) -> Vec<LabelMap> {
    let cfg = ToyConfig { class_count: TOY_CLASSES, height: size, width: size };
    (0..n as u64).map(|i| generate_toy_labels(toy_mask_seed(seed, i), &cfg).unwrap()).collect()
}

fn toy_training(r: &mut Report) -> MaskVae<f32> {
    let train_set = toy_set(0, TOY_TRAIN, TOY_SIZE);
    let held_out = toy_set(1, TOY_HELD_OUT, TOY_SIZE);
    let weights = compute_class_weights(&compute_label_stats(&train_set).unwrap());
    let cfg = TrainConfig { epochs: TOY_EPOCHS, batch_size: 16, learning_rate: 1e-4, seed: 0, ..TrainConfig::default() };
    let model = MaskVae::<f32>::new(ModelConfig::toy(TOY_CLASSES, TOY_SIZE), 0).unwrap();
    let mut trainer = Trainer::new(model, LossConfig::new(weights), cfg).unwrap();

    let start = Instant::now();
    let report = train(&mut trainer, &train_set, &held_out, |_, log| {
        eprintln!("  toy epoch {:>2} total {:.5} ({:.0}s)", log.epoch, log.mean.total, start.elapsed().as_secs_f64());
        Ok(())
    })
    .unwrap();
    let elapsed = start.elapsed();

    let losses: Vec<f64> = report.epochs.iter().map(|e| e.mean.total).collect();
    let decreasing = losses[..5].windows(2).all(|w| w[1] < w[0]);
    let miou = report.eval.as_ref().map(|m| m.mean_iou).unwrap_or(0.0);
    let train_miou = evaluate(&trainer.model, &train_set[..TOY_HELD_OUT], 16).unwrap().mean_iou;
    r.line(
        "toy training run",
        decreasing && miou >= TOY_MIOU && elapsed <= TOY_BUDGET,
        format!(
            "first 5 epoch losses {:?} strictly decreasing: {decreasing}; held-out mIoU {miou:.4} (>= {TOY_MIOU}); {:.1} min (<= 30)",
            losses[..5].iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            elapsed.as_secs_f64() / 60.0
        ),
    );
    println!("     train-subset mIoU {train_miou:.4} vs held-out {miou:.4}");
    trainer.model
}

fn ablation_direction(r: &mut Report) {
    let train_set = toy_set(2, ABLATION_TRAIN, TOY_SIZE);
    let held_out = toy_set(1, TOY_HELD_OUT, TOY_SIZE);
    let weights = compute_class_weights(&compute_label_stats(&train_set).unwrap());
    let grid = standard_ablation_grid();
    let variants = [grid[2].clone(), grid[5].clone()];
    let cfg = TrainConfig { epochs: ABLATION_EPOCHS, batch_size: 16, learning_rate: 1e-4, ..TrainConfig::default() };
    let start = Instant::now();
    let rows = run_ablation::<f32>(
        &ModelConfig::toy(TOY_CLASSES, TOY_SIZE),
        &variants,
        &train_set,
        &held_out,
        &cfg,
        &weights,
        semvae_core::loss::DEFAULT_KL_WEIGHT,
        &ABLATION_SEEDS,
        |v, seed, log| {
            if log.epoch == ABLATION_EPOCHS {
                eprintln!("  {} seed {seed} done ({:.0}s)", v.name, start.elapsed().as_secs_f64());
            }
        },
    )
    .unwrap();
    let per_seed = |i: usize| rows[i].runs.iter().map(|r| format!("{:.4}", r.metrics.mean_iou)).collect::<Vec<_>>().join("/");
    let (plain, full) = (rows[0].median_miou(), rows[1].median_miou());
    r.line(
        "ablation direction",
        full >= plain,
        format!(
            "median mIoU full model {full:.4} [{}] vs 3 LSTMs w/o bidir w/o weighted CE {plain:.4} [{}]; {ABLATION_TRAIN} masks x {ABLATION_EPOCHS} epochs, seeds {ABLATION_SEEDS:?}",
            per_seed(1),
            per_seed(0)
        ),
    );
}

fn is_one_hot(labels: &LabelMap) -> bool {
    let Ok(mask) = one_hot_encode(labels) else { return false };
    let plane = labels.pixel_count();
    let per_pixel_ok = (0..plane).all(|p| (0..labels.class_count()).map(|c| mask.channel(c)[p] as u32).sum::<u32>() == 1);
    per_pixel_ok && SemanticMask::new(mask.class_count(), mask.height(), mask.width(), mask.channels().to_vec()).is_ok()
}

fn changed_rows(a: &ClassEmbeddings<f32>, b: &ClassEmbeddings<f32>) -> Vec<usize> {
    (0..a.class_count)
        .filter(|&k| a.row(k).iter().zip(b.row(k)).any(|(x, y)| x.to_bits() != y.to_bits()))
        .collect()
}

fn latent_ops(r: &mut Report, model: &MaskVae<f32>) {
    let masks = toy_set(1, TOY_HELD_OUT, TOY_SIZE);
    let decode = |z: &ClassEmbeddings<f32>| model.synthesize(z).unwrap().to_labels();
    let mut sigma0 = 0;
    let mut alpha0 = 0;
    let mut alpha1 = 0;
    let mut one_hot = 0;
    let mut local = 0;
    let mut outputs = 0;
    for seed in 0..LATENT_SEEDS {
        let i = seed as usize % masks.len();
        let src = embed(model, &masks[i]).unwrap();
        let tgt = embed(model, &masks[(i + 1) % masks.len()]).unwrap();
        let class = seed as usize % TOY_CLASSES;
        let recon = decode(&src);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let p0 = perturb_part(&src, class, 0.0, &mut rng).unwrap();
        sigma0 += (decode(&p0) == recon) as usize;

        let a0 = interpolate_part(&src, &tgt, class, 0.0).unwrap();
        alpha0 += (decode(&a0) == recon) as usize;

        let a1 = interpolate_part(&src, &tgt, class, 1.0).unwrap();
        let mut swapped = src.clone();
        swapped.row_mut(class).copy_from_slice(tgt.row(class));
        alpha1 += (decode(&a1) == decode(&swapped)) as usize;

        let edits = [
            generate_part(&src, class, None, &mut rng).unwrap(),
            perturb_part(&src, class, 1.0, &mut rng).unwrap(),
            interpolate_part(&src, &tgt, class, 0.5).unwrap(),
        ];
        for e in &edits {
            outputs += 1;
            one_hot += is_one_hot(&decode(e)) as usize;
            local += (changed_rows(&src, e) == [class]) as usize;
        }
    }
    let n = LATENT_SEEDS as usize;
    r.line(
        "latent-op identities",
        sigma0 == n && alpha0 == n && alpha1 == n && one_hot == outputs,
        format!(
            "{n} seeds: zero-noise perturb == reconstruction {sigma0}/{n}, alpha=0 == reconstruction {alpha0}/{n}, alpha=1 == part swap {alpha1}/{n}, one-hot outputs {one_hot}/{outputs}"
        ),
    );
    r.line(
        "edit locality",
        local == outputs,
        format!("{local}/{outputs} generate/perturb/interpolate edits changed exactly the edited row (bitwise)"),
    );
}

fn cli_e2e(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("e2e.sh");
    let start = Instant::now();
    let out = Command::new("sh")
        .arg(&script)
        .arg(env!("CARGO_BIN_EXE_semvae"))
        .arg(dir.path())
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    let ok = out.status.success() && String::from_utf8_lossy(&out.stdout).contains("roundtrip ok");
    if !ok {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    r.line(
        "CLI end to end",
        ok && elapsed <= E2E_BUDGET,
        format!(
            "synth-data, train, eval, edit, export-sis, ingest via tests/e2e.sh: exit {:?}, byte-exact roundtrip: {ok}, {:.1} min (<= 35)",
            out.status.code(),
            elapsed.as_secs_f64() / 60.0
        ),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    loss_oracles(&mut r);
    gradient_checks(&mut r);
    class_weights(&mut r);
    metric_oracle(&mut r);
    let model = toy_training(&mut r);
    latent_ops(&mut r, &model);
    ablation_direction(&mut r);
    cli_e2e(&mut r);
    println!("{} criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
