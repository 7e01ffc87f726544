//! Acceptance runner: one line per criterion, non-zero exit if any hard
//! criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use railscan::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use railscan::commands::{cmd_eval, cmd_gen_data, cmd_train, REPORT_FILE, SCORES_FILE};
use railscan::config::RunConfig;
use railscan::dataset::{load_mask, Manifest, Split};
use railscan::inference::{saliency, ScoreVariant};
use railscan::metrics::{auprc, auroc, eer, pr_curve, roc_curve, ScoredLabelSet};
use railscan::model::{build_networks, ArchConfig};
use railscan::Error;

use common::gradcheck::{discriminator_trial, latent_trial, perceptual_trial, pixel_trial, worst_of, TOL};
use common::{pairwise_auroc, random_scored_set, recount};

const GATE_EPOCHS: usize = 15;
const GATE_AUROC: f64 = 0.85;
const LOCALIZATION_RATE: f64 = 0.80;
const ORDERING_SLACK: f64 = 0.02;
const GRAD_TRIALS: usize = 25;
const METRIC_SETS: usize = 1000;

#[derive(Default)]
struct Tally {
    failed: Vec<&'static str>,
}

impl Tally {
    fn record(&mut self, id: &'static str, pass: bool, detail: String, started: Instant) {
        let status = if pass { "PASS" } else { "FAIL" };
        println!("[{status}] {id}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(id);
        }
    }
}

/// (C, H, W) of every layer output, encoder then decoder then discriminator.
const LAYER_TABLE: [(usize, usize, usize); 15] = [
    (32, 62, 62),
    (64, 29, 29),
    (128, 14, 14),
    (256, 5, 5),
    (512, 1, 1),
    (256, 5, 5),
    (128, 14, 14),
    (64, 29, 29),
    (32, 62, 62),
    (3, 128, 128),
    (32, 62, 62),
    (64, 29, 29),
    (128, 14, 14),
    (256, 5, 5),
    (1, 1, 1),
];

fn shapes(t: &mut Tally) {
    let started = Instant::now();
    let nets = build_networks(0, &ArchConfig::default());
    let mut got = Vec::new();
    for net in [&nets.encoder, &nets.decoder, &nets.discriminator] {
        for s in net.stage_shapes(1).unwrap() {
            got.push((s.c, s.h, s.w));
        }
    }
    let matching = got.iter().zip(&LAYER_TABLE).filter(|(a, b)| a == b).count();
    let pass = got.len() == LAYER_TABLE.len() && matching == LAYER_TABLE.len() && started.elapsed().as_secs_f64() < 1.0;
    t.record(
        "1 shape conformance",
        pass,
        format!("{matching}/{} layer outputs match", LAYER_TABLE.len()),
        started,
    );
}

fn gradients(t: &mut Tally) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let worst = [
        ("pixel", worst_of(&mut rng, GRAD_TRIALS, pixel_trial)),
        ("perceptual", worst_of(&mut rng, GRAD_TRIALS, perceptual_trial)),
        ("discriminator", worst_of(&mut rng, GRAD_TRIALS, discriminator_trial)),
        ("latent", worst_of(&mut rng, GRAD_TRIALS, latent_trial)),
    ];
    let pass = worst.iter().all(|(_, e)| *e < TOL) && started.elapsed().as_secs_f64() < 60.0;
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    t.record(
        "2 gradient checks",
        pass,
        format!("worst relative error over {GRAD_TRIALS} trials: {detail} (limit {TOL:.0e})"),
        started,
    );
}

fn metric_oracles(t: &mut Tally) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut tied_sets = 0;
    for _ in 0..METRIC_SETS {
        let (scores, labels) = random_scored_set(&mut rng, 200);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied_sets += 1;
        }
        let s = ScoredLabelSet::new(scores.clone(), labels.clone()).unwrap();
        worst = worst.max((auroc(&s).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64 - p;
        for pt in roc_curve(&s).unwrap().points.iter().skip(1) {
            let (tp, fp) = recount(&scores, &labels, pt.threshold);
            if pt.y != tp as f64 / p || pt.x != fp as f64 / n {
                mismatches += 1;
            }
        }
        for pt in pr_curve(&s).unwrap().points {
            let (tp, fp) = recount(&scores, &labels, pt.threshold);
            if pt.x != tp as f64 / p || pt.y != tp as f64 / (tp + fp) as f64 {
                mismatches += 1;
            }
        }
    }
    let labels: Vec<bool> = (0..579).map(|i| i < 316).collect();
    let tied = ScoredLabelSet::new(vec![0.5; 579], labels).unwrap();
    let tied_eer = eer(&roc_curve(&tied).unwrap()).unwrap();
    let tied_ap = auprc(&tied).unwrap();
    let pass = worst < 1e-9
        && mismatches == 0
        && tied_sets > 0
        && tied_eer == 0.5
        && (tied_ap - 316.0 / 579.0).abs() < 1e-12
        && started.elapsed().as_secs_f64() < 60.0;
    t.record(
        "3 metric oracles",
        pass,
        format!(
            "{METRIC_SETS} sets ({tied_sets} with ties): max |auroc - oracle| {worst:.1e}, {mismatches} curve mismatches; \
             diagonal EER {tied_eer}, all-tied AP {tied_ap:.4}"
        ),
        started,
    );
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn gate(t: &mut Tally, root: &Path) {
    let started = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.train.epochs = GATE_EPOCHS;
    cfg.train.dataset = root.join("data");
    cfg.train.checkpoint = root.join("run/model.ckpt");
    let eval_dir = root.join("eval");

    let run = (|| -> railscan::Result<_> {
        cmd_gen_data(&cfg, &cfg.train.dataset)?;
        cmd_train(&cfg, |r| {
            eprintln!("  epoch {:>2}  loss_d {:.4}  loss_eg {:.3}", r.epoch, r.loss_d, r.loss_eg)
        })?;
        cmd_eval(&cfg, &eval_dir)
    })();
    let out = match run {
        Ok(out) => out,
        Err(e) => {
            for id in ["4 end-to-end gate", "5 localization gate", "6 score ordering"] {
                t.record(id, false, format!("pipeline error: {e}"), started);
            }
            return;
        }
    };
    let minutes = started.elapsed().as_secs_f64() / 60.0;

    let by = |v: ScoreVariant| out.summary.by_variant.iter().find(|r| r.variant == v).unwrap().metrics.auroc;
    let enc = by(ScoreVariant::Encoded);
    let l1 = by(ScoreVariant::L1);
    let scores: Vec<f64> = out.scored.iter().map(|s| s.scores.get(ScoreVariant::Encoded)).collect();
    let abn = mean(scores.iter().zip(&out.labels).filter(|p| *p.1).map(|p| *p.0));
    let nor = mean(scores.iter().zip(&out.labels).filter(|p| !*p.1).map(|p| *p.0));
    t.record(
        "4 end-to-end gate",
        enc >= GATE_AUROC && abn > nor && minutes <= 60.0,
        format!(
            "encoded AUROC {enc:.4} (need >= {GATE_AUROC}), mean score abnormal {abn:.4} vs normal {nor:.4}, {minutes:.1} min; \
             l1 {l1:.4}, l2 {:.4}, bottleneck {:.4}",
            by(ScoreVariant::L2),
            by(ScoreVariant::Bottleneck)
        ),
        started,
    );

    let loc_started = Instant::now();
    let manifest = Manifest::read(&cfg.train.dataset).unwrap();
    let (mut hits, mut total) = (0, 0);
    for (row, s) in manifest.split(Split::Test).iter().zip(&out.scored) {
        let Some(mask_path) = &row.mask_path else { continue };
        let truth = load_mask(&cfg.train.dataset.join(mask_path)).unwrap();
        let sal = saliency(&s.difference);
        let inside = mean(sal.iter().zip(&truth).filter(|p| *p.1).map(|p| *p.0 as f64));
        let outside = mean(sal.iter().zip(&truth).filter(|p| !*p.1).map(|p| *p.0 as f64));
        total += 1;
        if inside > outside {
            hits += 1;
        }
    }
    let rate = hits as f64 / total as f64;
    t.record(
        "5 localization gate",
        rate >= LOCALIZATION_RATE,
        format!("mean |M| inside > outside on {hits}/{total} abnormal images (need >= {:.0}%)", LOCALIZATION_RATE * 100.0),
        loc_started,
    );

    let ord_started = Instant::now();
    let soft_ok = enc >= l1 - ORDERING_SLACK;
    t.record(
        "6 score ordering",
        enc >= 0.5,
        format!(
            "encoded {enc:.4} vs l1 {l1:.4}: soft gate (encoded >= l1 - {ORDERING_SLACK}) {}",
            if soft_ok { "met" } else { "not met" }
        ),
        ord_started,
    );
}

fn small_config(root: &Path, run: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.train_normal = 8;
    cfg.data.test_normal = 3;
    cfg.data.test_abnormal = 3;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.dataset = root.join("data");
    cfg.train.checkpoint = root.join(run).join("model.ckpt");
    cfg
}

fn determinism(t: &mut Tally, root: &Path) {
    let started = Instant::now();
    let result = (|| -> railscan::Result<bool> {
        // the checkpoint embeds its config, output path included, so both
        // runs write to the same place
        let a = small_config(root, "a");
        cmd_gen_data(&a, &a.train.dataset)?;
        cmd_train(&a, |_| {})?;
        let first = root.join("first.ckpt");
        fs::rename(&a.train.checkpoint, &first).map_err(|source| Error::Io { path: first.clone(), source })?;
        cmd_train(&a, |_| {})?;
        let same_ckpt = fs::read(&first).ok() == fs::read(&a.train.checkpoint).ok();
        cmd_eval(&a, &root.join("eval_a"))?;
        cmd_eval(&a, &root.join("eval_b"))?;
        let same_eval = [REPORT_FILE, SCORES_FILE]
            .iter()
            .all(|f| fs::read(root.join("eval_a").join(f)).ok() == fs::read(root.join("eval_b").join(f)).ok());
        Ok(same_ckpt && same_eval)
    })();
    match result {
        Ok(pass) => t.record(
            "7 determinism",
            pass,
            format!("checkpoints and eval reports {}", if pass { "byte-identical" } else { "differ" }),
            started,
        ),
        Err(e) => t.record("7 determinism", false, format!("pipeline error: {e}"), started),
    }
}

fn checkpoint_round_trip(t: &mut Tally, root: &Path) {
    let started = Instant::now();
    let path = small_config(root, "a").train.checkpoint;
    let result = (|| -> railscan::Result<(bool, bool, usize)> {
        let ckpt = load_checkpoint(&path)?;
        let copy = root.join("copy.ckpt");
        save_checkpoint(&copy, &ckpt)?;
        let reloaded = load_checkpoint(&copy)?;
        let nets = |c: &railscan::training::Checkpoint| {
            let n = &c.networks;
            let mut v = n.encoder.named_tensors();
            v.extend(n.decoder.named_tensors());
            v.extend(n.discriminator.named_tensors());
            v.into_iter()
                .map(|t| (t.name, t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()))
                .collect::<Vec<_>>()
        };
        let map_bits = |c: &railscan::training::Checkpoint| {
            c.error_map.as_ref().map(|m| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        };
        let exact = nets(&ckpt) == nets(&reloaded)
            && map_bits(&reloaded).is_some()
            && map_bits(&ckpt) == map_bits(&reloaded)
            && ckpt.config == reloaded.config
            && fs::read(&path).ok() == fs::read(&copy).ok();

        let bytes = encode_checkpoint(&ckpt)?;
        let mut rejected = true;
        let mut probes = 0;
        for pos in [0, 5, bytes.len() / 3, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x5a;
            probes += 1;
            rejected &= matches!(
                decode_checkpoint(&bad),
                Err(Error::CorruptContainer(_) | Error::VersionMismatch { .. })
            );
        }
        rejected &= matches!(decode_checkpoint(&bytes[..bytes.len() - 7]), Err(Error::CorruptContainer(_)));
        Ok((exact, rejected, probes + 1))
    })();
    match result {
        Ok((exact, rejected, probes)) => t.record(
            "8 checkpoint round trip",
            exact && rejected,
            format!(
                "tensors and error map {}, {probes} corrupted variants {}",
                if exact { "bit-exact" } else { "differ" },
                if rejected { "all rejected" } else { "not all rejected" }
            ),
            started,
        ),
        Err(e) => t.record("8 checkpoint round trip", false, format!("error: {e}"), started),
    }
}

fn main() {
    let mut t = Tally::default();
    shapes(&mut t);
    gradients(&mut t);
    metric_oracles(&mut t);
    let small = tempfile::tempdir().unwrap();
    determinism(&mut t, small.path());
    checkpoint_round_trip(&mut t, small.path());
    let gate_dir = tempfile::tempdir().unwrap();
    gate(&mut t, gate_dir.path());

    if t.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", t.failed.len(), t.failed.join(", "));
        std::process::exit(1);
    }
}
