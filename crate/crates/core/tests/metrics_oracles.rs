mod common;

use common::{pairwise_auroc, random_scored_set, recount};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use railscan::inference::min_max_scale;
use railscan::metrics::{
    auprc, auroc, eer, eer_point, gaussian_kernel, kde, pr_curve, roc_curve, Bandwidth, ScoredLabelSet,
};

#[test]
fn auroc_equals_pairwise_oracle_and_curves_match_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1200 {
        let (scores, labels) = random_scored_set(&mut rng, 200);
        let s = ScoredLabelSet::new(scores.clone(), labels.clone()).unwrap();
        let oracle = pairwise_auroc(&scores, &labels);
        assert!((auroc(&s).unwrap() - oracle).abs() < 1e-9);

        let p = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64 - p;
        let roc = roc_curve(&s).unwrap();
        for pt in roc.points.iter().skip(1) {
            let (tp, fp) = recount(&scores, &labels, pt.threshold);
            assert_eq!(pt.y, tp as f64 / p);
            assert_eq!(pt.x, fp as f64 / n);
        }
        for pt in pr_curve(&s).unwrap().points {
            let (tp, fp) = recount(&scores, &labels, pt.threshold);
            assert_eq!(pt.x, tp as f64 / p);
            assert_eq!(pt.y, tp as f64 / (tp + fp) as f64);
        }
    }
}

#[test]
fn all_tied_scores_give_chance_level_metrics() {
    let labels: Vec<bool> = (0..579).map(|i| i < 316).collect();
    let s = ScoredLabelSet::new(vec![0.7; 579], labels).unwrap();
    let ap = auprc(&s).unwrap();
    assert!((ap - 316.0 / 579.0).abs() < 1e-12);
    assert!((ap - 0.546).abs() < 5e-4);
    let roc = roc_curve(&s).unwrap();
    let xy: Vec<_> = roc.points.iter().map(|p| (p.x, p.y)).collect();
    assert_eq!(xy, vec![(0.0, 0.0), (1.0, 1.0)]);
    assert_eq!(eer(&roc).unwrap(), 0.5);
    assert_eq!(auroc(&s).unwrap(), 0.5);
}

#[test]
fn eer_point_lies_on_the_anti_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let (scores, labels) = random_scored_set(&mut rng, 60);
        let s = ScoredLabelSet::new(scores, labels).unwrap();
        let roc = roc_curve(&s).unwrap();
        let e = eer(&roc).unwrap();
        assert!((0.0..=1.0).contains(&e));
        let (fpr, tpr) = eer_point(&roc).unwrap();
        assert!((fpr - (1.0 - tpr)).abs() <= 1e-12);
        assert!((e - fpr).abs() <= 1e-12);
    }
}

#[test]
fn kde_of_two_points_is_a_two_gaussian_mixture() {
    let values = [0.2, 1.1];
    let h = 0.3;
    let grid = kde(&values, Bandwidth::Fixed(h)).unwrap();
    for (&x, &d) in grid.x.iter().zip(&grid.density) {
        let expected = (gaussian_kernel((x - 0.2) / h) + gaussian_kernel((x - 1.1) / h)) / (2.0 * h);
        assert!((d - expected).abs() < 1e-9);
    }
    let auto = kde(&[0.1, 0.4, 0.45, 0.9, 1.3, 2.0], Bandwidth::Auto).unwrap();
    assert!((auto.integral() - 1.0).abs() < 0.01);
    let single = kde(&[3.0], Bandwidth::Auto).unwrap();
    let peak = single.density.iter().cloned().fold(f64::MIN, f64::max);
    let at = single.x[single.density.iter().position(|&d| d == peak).unwrap()];
    assert!((at - 3.0).abs() <= (single.x[1] - single.x[0]));
}

fn tie_free_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
        .prop_perturb(|(n, labels), mut rng| {
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 3.0).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                scores.swap(i, j);
            }
            (scores, labels)
        })
}

proptest! {
    #[test]
    fn auroc_is_invariant_to_increasing_transforms((scores, labels) in tie_free_set()) {
        let s = ScoredLabelSet::new(scores.clone(), labels.clone()).unwrap();
        let t = ScoredLabelSet::new(scores.iter().map(|v| (v * 0.5).exp() + 3.0 * v).collect(), labels).unwrap();
        prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
    }

    #[test]
    fn negated_scores_complement_auroc((scores, labels) in tie_free_set()) {
        let s = ScoredLabelSet::new(scores.clone(), labels.clone()).unwrap();
        let neg = ScoredLabelSet::new(scores.iter().map(|v| -v).collect(), labels).unwrap();
        prop_assert!((auroc(&s).unwrap() + auroc(&neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone((scores, labels) in tie_free_set()) {
        let s = ScoredLabelSet::new(scores, labels).unwrap();
        let roc = roc_curve(&s).unwrap();
        for w in roc.points.windows(2) {
            prop_assert!(w[1].x >= w[0].x && w[1].y >= w[0].y);
        }
        let last = roc.points.last().unwrap();
        prop_assert_eq!((last.x, last.y), (1.0, 1.0));
    }

    #[test]
    fn min_max_scale_preserves_order(v in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
        let scaled = min_max_scale(&v);
        prop_assert!(scaled.iter().all(|s| (0.0..=1.0).contains(s)));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(scaled[i] <= scaled[j]);
                }
            }
        }
    }
}
