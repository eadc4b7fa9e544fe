use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TtpError};
use crate::features::ItemFeatureTable;
use crate::instance::TtpInstance;
use crate::knapsack::PackingPlan;
use crate::objective::{evaluate, EvalCounter};

/// Basis over the two standardized item features used to score items.
/// Named by genotype length: the listed terms each carry a weight, plus
/// one packing-percent parameter at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    /// ipr, rdist
    T3,
    /// ipr, rdist, ipr*rdist
    T4,
    /// ipr, rdist, ipr*rdist, ipr^2
    T5A,
    /// ipr, rdist, ipr*rdist, rdist^2
    T5B,
    /// ipr, rdist, ipr*rdist, ipr^2, rdist^2
    T6,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [
        FeatureSet::T3,
        FeatureSet::T4,
        FeatureSet::T5A,
        FeatureSet::T5B,
        FeatureSet::T6,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FeatureSet::T3 => "3T",
            FeatureSet::T4 => "4T",
            FeatureSet::T5A => "5T0",
            FeatureSet::T5B => "5T1",
            FeatureSet::T6 => "6T",
        }
    }

    pub fn from_tag(s: &str) -> Option<FeatureSet> {
        match s.trim().to_ascii_uppercase().as_str() {
            "3T" | "T3" => Some(FeatureSet::T3),
            "4T" | "T4" => Some(FeatureSet::T4),
            "5T0" | "T5A" => Some(FeatureSet::T5A),
            "5T1" | "T5B" => Some(FeatureSet::T5B),
            "6T" | "T6" => Some(FeatureSet::T6),
            _ => None,
        }
    }

    /// Number of scoring weights (genotype length minus the percent).
    pub fn weight_count(self) -> usize {
        match self {
            FeatureSet::T3 => 2,
            FeatureSet::T4 => 3,
            FeatureSet::T5A | FeatureSet::T5B => 4,
            FeatureSet::T6 => 5,
        }
    }

    pub fn term_names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::T3 => &["ipr", "rdist"],
            FeatureSet::T4 => &["ipr", "rdist", "ipr*rdist"],
            FeatureSet::T5A => &["ipr", "rdist", "ipr*rdist", "ipr^2"],
            FeatureSet::T5B => &["ipr", "rdist", "ipr*rdist", "rdist^2"],
            FeatureSet::T6 => &["ipr", "rdist", "ipr*rdist", "ipr^2", "rdist^2"],
        }
    }

    pub fn basis(self, x0: f64, x1: f64) -> Vec<f64> {
        match self {
            FeatureSet::T3 => vec![x0, x1],
            FeatureSet::T4 => vec![x0, x1, x0 * x1],
            FeatureSet::T5A => vec![x0, x1, x0 * x1, x0 * x0],
            FeatureSet::T5B => vec![x0, x1, x0 * x1, x1 * x1],
            FeatureSet::T6 => vec![x0, x1, x0 * x1, x0 * x0, x1 * x1],
        }
    }
}

/// Scoring weights plus the packing percent. The percent is always the
/// last entry; `weights()` strips it.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotype {
    pub feature_set: FeatureSet,
    pub values: Vec<f64>,
}

impl Genotype {
    pub fn new(feature_set: FeatureSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != feature_set.weight_count() + 1 {
            return Err(TtpError::InvalidArgument(format!(
                "{} genotype needs {} values, got {}",
                feature_set.tag(),
                feature_set.weight_count() + 1,
                values.len()
            )));
        }
        Ok(Genotype { feature_set, values })
    }

    pub fn weights(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn percent(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Scale weights to unit squared norm so genotypes compare across
    /// instances. Scores order items identically either way.
    pub fn normalize_weights(&mut self) -> Result<()> {
        let k = self.values.len() - 1;
        let norm = self.values[..k].iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TtpError::InvalidArgument(
                "cannot normalize an all-zero weight vector".into(),
            ));
        }
        for w in &mut self.values[..k] {
            *w /= norm;
        }
        Ok(())
    }
}

/// Per-item scores from a weighted basis over the standardized features.
pub fn score_items(
    feature_set: FeatureSet,
    table: &ItemFeatureTable,
    weights: &[f64],
) -> Result<Vec<f64>> {
    if weights.len() != feature_set.weight_count() {
        return Err(TtpError::InvalidArgument(format!(
            "{} scoring needs {} weights, got {}",
            feature_set.tag(),
            feature_set.weight_count(),
            weights.len()
        )));
    }
    Ok((0..table.len())
        .map(|i| {
            feature_set
                .basis(table.ipr_std[i], table.rdist_std[i])
                .iter()
                .zip(weights)
                .map(|(b, w)| b * w)
                .sum()
        })
        .collect())
}

/// Pack items in descending score order into `percent` of the capacity.
/// Items that would overshoot the target are skipped and the scan keeps
/// going, so lighter low-score items can still squeeze in. Ties break
/// toward the lower item id.
pub fn pack_by_percent(inst: &TtpInstance, scores: &[f64], percent: f64) -> PackingPlan {
    assert_eq!(scores.len(), inst.n_items(), "score per item required");
    let target = (percent.clamp(0.0, 1.0) * inst.capacity as f64).floor() as u64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("item scores must not be NaN")
            .then(a.cmp(&b))
    });
    let mut plan = PackingPlan::empty(inst);
    for id in order {
        if plan.total_weight() + inst.item(id).weight <= target {
            plan.set(inst, id, true);
        }
    }
    plan
}

#[derive(Debug, Clone)]
pub struct PackingEaOutcome {
    pub plan: PackingPlan,
    pub objective: f64,
    pub evals: u64,
}

/// (1+1) EA over packing bitstrings: start empty, flip each bit with
/// probability 1/m (redrawing the mask until some bit flips), keep the
/// offspring only on strict improvement. Overweight offspring are
/// discarded without an evaluation but still use up their generation.
pub fn packing_ea(
    inst: &TtpInstance,
    tour: &[usize],
    generations: u64,
    seed: u64,
) -> Result<PackingEaOutcome> {
    let m = inst.n_items();
    let mut counter = EvalCounter::new();
    let mut parent = PackingPlan::empty(inst);
    let mut parent_obj = evaluate(inst, tour, &parent, &mut counter)?;
    if m == 0 {
        return Ok(PackingEaOutcome { plan: parent, objective: parent_obj, evals: counter.count() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_flip = 1.0 / m as f64;
    let mut flips: Vec<usize> = Vec::new();
    for _ in 0..generations {
        flips.clear();
        while flips.is_empty() {
            for id in 0..m {
                if rng.random::<f64>() < p_flip {
                    flips.push(id);
                }
            }
        }
        let mut child = parent.clone();
        for &id in &flips {
            child.flip(inst, id);
        }
        if child.total_weight() > inst.capacity {
            continue;
        }
        let child_obj = evaluate(inst, tour, &child, &mut counter)?;
        if child_obj > parent_obj {
            parent = child;
            parent_obj = child_obj;
        }
    }
    Ok(PackingEaOutcome { plan: parent, objective: parent_obj, evals: counter.count() })
}

#[derive(Debug, Clone)]
pub struct MetaEaOutcome {
    pub genotype: Genotype,
    pub objective: f64,
    pub evals: u64,
}

/// (1+1) EA over the scoring genotype for one instance. Weights start at
/// zero and move by N(0,1) steps; the percent starts at 0.5, moves by
/// N(0,0.1), and is clamped to [0,1]. Acceptance is strict improvement.
/// The returned genotype has unit-norm weights unless the search never
/// left the zero vector.
pub fn meta_ea(
    inst: &TtpInstance,
    tour: &[usize],
    feature_set: FeatureSet,
    generations: u64,
    seed: u64,
) -> Result<MetaEaOutcome> {
    let table = crate::features::compute_features(inst, tour);
    let k = feature_set.weight_count();
    let mut counter = EvalCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight_step = Normal::new(0.0, 1.0).unwrap();
    let percent_step = Normal::new(0.0, 0.1).unwrap();

    let mut parent = vec![0.0; k + 1];
    parent[k] = 0.5;
    let score = |values: &[f64], counter: &mut EvalCounter| -> Result<f64> {
        let scores = score_items(feature_set, &table, &values[..k])?;
        let plan = pack_by_percent(inst, &scores, values[k]);
        evaluate(inst, tour, &plan, counter)
    };
    let mut parent_obj = score(&parent, &mut counter)?;

    for _ in 0..generations {
        let mut child = parent.clone();
        for w in &mut child[..k] {
            *w += weight_step.sample(&mut rng);
        }
        child[k] = (child[k] + percent_step.sample(&mut rng)).clamp(0.0, 1.0);
        let child_obj = score(&child, &mut counter)?;
        if child_obj > parent_obj {
            parent = child;
            parent_obj = child_obj;
        }
    }

    let mut genotype = Genotype::new(feature_set, parent)?;
    if genotype.weights().iter().any(|w| *w != 0.0) {
        genotype.normalize_weights()?;
    }
    Ok(MetaEaOutcome { genotype, objective: parent_obj, evals: counter.count() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, synthetic_coords, CoordLayout, KpType};

    fn small_instance(seed: u64) -> crate::instance::TtpInstance {
        let coords = synthetic_coords(CoordLayout::Uniform { span: 100.0 }, 6, seed);
        generate_instance("small", coords, 2, KpType::Uncorr, 5, seed ^ 0xabcd).unwrap()
    }

    #[test]
    fn basis_terms_match_definitions() {
        assert_eq!(FeatureSet::T3.basis(2.0, 3.0), vec![2.0, 3.0]);
        assert_eq!(FeatureSet::T4.basis(2.0, 3.0), vec![2.0, 3.0, 6.0]);
        assert_eq!(FeatureSet::T5A.basis(2.0, 3.0), vec![2.0, 3.0, 6.0, 4.0]);
        assert_eq!(FeatureSet::T5B.basis(2.0, 3.0), vec![2.0, 3.0, 6.0, 9.0]);
        assert_eq!(FeatureSet::T6.basis(2.0, 3.0), vec![2.0, 3.0, 6.0, 4.0, 9.0]);
    }

    #[test]
    fn score_rejects_wrong_arity() {
        let inst = small_instance(1);
        let tour = crate::tour::reference_tour(&inst);
        let table = crate::features::compute_features(&inst, &tour);
        let err = score_items(FeatureSet::T3, &table, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, TtpError::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn pack_by_percent_skips_and_continues() {
        use crate::instance::{EdgeWeightKind, Item, TtpInstance};
        let inst = TtpInstance::new(
            "t",
            KpType::Uncorr,
            EdgeWeightKind::Ceil2d,
            vec![(0.0, 0.0), (1.0, 0.0)],
            vec![
                Item { id: 0, city: 2, profit: 1, weight: 5 },
                Item { id: 1, city: 2, profit: 1, weight: 4 },
                Item { id: 2, city: 2, profit: 1, weight: 3 },
            ],
            10,
            1.0,
            0.1,
            1.0,
        )
        .unwrap();
        // target is 8: item 0 fits, item 1 would hit 9, item 2 lands on 8
        let plan = pack_by_percent(&inst, &[3.0, 2.0, 1.0], 0.8);
        assert_eq!(plan.ids(), vec![0, 2]);
        assert_eq!(plan.total_weight(), 8);
    }

    #[test]
    fn pack_by_percent_zero_packs_nothing() {
        let inst = small_instance(2);
        let scores = vec![1.0; inst.n_items()];
        assert_eq!(pack_by_percent(&inst, &scores, 0.0).count(), 0);
    }

    #[test]
    fn packing_ea_stays_feasible_and_improves() {
        let inst = small_instance(3);
        let tour = crate::tour::reference_tour(&inst);
        let out = packing_ea(&inst, &tour, 500, 42).unwrap();
        assert!(out.plan.total_weight() <= inst.capacity);
        assert!(out.evals <= 501);
        let empty = PackingPlan::empty(&inst);
        let mut c = EvalCounter::new();
        let empty_obj = evaluate(&inst, &tour, &empty, &mut c).unwrap();
        assert!(out.objective >= empty_obj);
    }

    #[test]
    fn packing_ea_is_deterministic() {
        let inst = small_instance(4);
        let tour = crate::tour::reference_tour(&inst);
        let a = packing_ea(&inst, &tour, 300, 7).unwrap();
        let b = packing_ea(&inst, &tour, 300, 7).unwrap();
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn meta_ea_zero_generations_keeps_seed_genotype() {
        let inst = small_instance(5);
        let tour = crate::tour::reference_tour(&inst);
        let out = meta_ea(&inst, &tour, FeatureSet::T4, 0, 9).unwrap();
        assert_eq!(out.genotype.weights(), &[0.0, 0.0, 0.0]);
        assert_eq!(out.genotype.percent(), 0.5);
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn meta_ea_normalizes_nonzero_weights() {
        let inst = small_instance(6);
        let tour = crate::tour::reference_tour(&inst);
        let out = meta_ea(&inst, &tour, FeatureSet::T3, 200, 11).unwrap();
        let norm: f64 = out.genotype.weights().iter().map(|w| w * w).sum();
        assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
        assert!((0.0..=1.0).contains(&out.genotype.percent()));
        assert_eq!(out.evals, 201);
    }

    #[test]
    fn normalization_preserves_packing() {
        let inst = small_instance(7);
        let tour = crate::tour::reference_tour(&inst);
        let table = crate::features::compute_features(&inst, &tour);
        let mut geno = Genotype::new(FeatureSet::T3, vec![2.0, -3.0, 0.6]).unwrap();
        let before = pack_by_percent(
            &inst,
            &score_items(FeatureSet::T3, &table, geno.weights()).unwrap(),
            geno.percent(),
        );
        geno.normalize_weights().unwrap();
        let after = pack_by_percent(
            &inst,
            &score_items(FeatureSet::T3, &table, geno.weights()).unwrap(),
            geno.percent(),
        );
        assert_eq!(before, after);
    }
}
