use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TtpError};
use crate::evolution::{score_items, FeatureSet, Genotype};
use crate::instance::{KpType, TtpInstance};
use crate::knapsack::PackingPlan;
use crate::objective::{evaluate, EvalCounter};
use crate::sr::Expr;

/// One fitted curve: genotype parameter value as a function of the
/// capacity factor.
#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    Linear { intercept: f64, slope: f64 },
    /// Sorted breakpoints, linearly interpolated, clamped at the ends.
    Pwl { points: Vec<(f64, f64)> },
    /// Expression over x0 = capacity factor.
    Expr { expr: Expr },
}

impl Curve {
    pub fn value_at(&self, c: f64) -> f64 {
        match self {
            Curve::Linear { intercept, slope } => intercept + slope * c,
            Curve::Pwl { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                if c <= points[0].0 {
                    return points[0].1;
                }
                for pair in points.windows(2) {
                    let (x0, y0) = pair[0];
                    let (x1, y1) = pair[1];
                    if c <= x1 {
                        if x1 == x0 {
                            return y1;
                        }
                        return y0 + (y1 - y0) * (c - x0) / (x1 - x0);
                    }
                }
                points.last().unwrap().1
            }
            Curve::Expr { expr } => expr.eval_row(&[c]),
        }
    }
}

/// Versioned collection of fitted curves keyed by feature set, knapsack
/// type, and genotype slot (weights first, packing percent last).
#[derive(Debug, Clone, Default)]
pub struct ParameterModel {
    entries: BTreeMap<(String, String, usize), (Curve, bool)>,
}

pub const MODEL_FORMAT: &str = "ttp-model v1";

impl ParameterModel {
    pub fn new() -> Self {
        ParameterModel::default()
    }

    pub fn insert(
        &mut self,
        feature_set: FeatureSet,
        kp_type: KpType,
        param: usize,
        curve: Curve,
        anomalous: bool,
    ) {
        self.entries.insert(
            (feature_set.tag().to_string(), kp_type.tag().to_string(), param),
            (curve, anomalous),
        );
    }

    pub fn curve(&self, feature_set: FeatureSet, kp_type: KpType, param: usize) -> Option<&Curve> {
        self.entries
            .get(&(feature_set.tag().to_string(), kp_type.tag().to_string(), param))
            .map(|(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_sets(&self) -> Vec<FeatureSet> {
        let mut out: Vec<FeatureSet> = Vec::new();
        for (fs, _, _) in self.entries.keys() {
            if let Some(f) = FeatureSet::from_tag(fs) {
                if !out.contains(&f) {
                    out.push(f);
                }
            }
        }
        out
    }

    /// Genotype for an instance class at a (real-valued) capacity factor.
    /// The percent slot is clamped to [0,1].
    pub fn predict_genotype(
        &self,
        feature_set: FeatureSet,
        kp_type: KpType,
        capacity_factor: f64,
    ) -> Result<Genotype> {
        let k = feature_set.weight_count();
        let mut values = Vec::with_capacity(k + 1);
        for param in 0..=k {
            let curve = self.curve(feature_set, kp_type, param).ok_or_else(|| {
                TtpError::ModelMissing(format!(
                    "{} {} param {param}",
                    feature_set.tag(),
                    kp_type.tag()
                ))
            })?;
            values.push(curve.value_at(capacity_factor));
        }
        values[k] = values[k].clamp(0.0, 1.0);
        let mut genotype = Genotype::new(feature_set, values)?;
        genotype.normalize_weights()?;
        Ok(genotype)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MODEL_FORMAT);
        out.push('\n');
        out.push_str("# feature_set,kp_type,param,flag,kind,payload\n");
        for ((fs, kp, param), (curve, anomalous)) in &self.entries {
            let flag = if *anomalous { "anomalous" } else { "ok" };
            let (kind, payload) = match curve {
                Curve::Linear { intercept, slope } => ("linear", format!("{intercept};{slope}")),
                Curve::Pwl { points } => (
                    "pwl",
                    points
                        .iter()
                        .map(|(x, y)| format!("{x}:{y}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
                Curve::Expr { expr } => ("expr", expr.to_prefix()),
            };
            out.push_str(&format!("{fs},{kp},{param},{flag},{kind},{payload}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<ParameterModel> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| TtpError::Parse {
            line: 1,
            msg: "empty model file".into(),
        })?;
        if header.trim() != MODEL_FORMAT {
            return Err(TtpError::Parse {
                line: 1,
                msg: format!("expected `{MODEL_FORMAT}` header, got {header:?}"),
            });
        }
        let mut model = ParameterModel::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(6, ',').collect();
            if fields.len() != 6 {
                return Err(TtpError::Parse {
                    line: line_no,
                    msg: format!("expected 6 comma fields, got {}", fields.len()),
                });
            }
            let fs = FeatureSet::from_tag(fields[0]).ok_or_else(|| TtpError::Parse {
                line: line_no,
                msg: format!("unknown feature set {:?}", fields[0]),
            })?;
            let kp = KpType::from_tag(fields[1]).ok_or_else(|| TtpError::Parse {
                line: line_no,
                msg: format!("unknown knapsack type {:?}", fields[1]),
            })?;
            let param: usize = fields[2].parse().map_err(|_| TtpError::Parse {
                line: line_no,
                msg: format!("bad param index {:?}", fields[2]),
            })?;
            let anomalous = match fields[3] {
                "ok" => false,
                "anomalous" => true,
                other => {
                    return Err(TtpError::Parse {
                        line: line_no,
                        msg: format!("unknown flag {other:?}"),
                    })
                }
            };
            let bad_num = |tok: &str| TtpError::Parse {
                line: line_no,
                msg: format!("bad number {tok:?}"),
            };
            let curve = match fields[4] {
                "linear" => {
                    let (a, b) = fields[5].split_once(';').ok_or_else(|| TtpError::Parse {
                        line: line_no,
                        msg: "linear payload needs `intercept;slope`".into(),
                    })?;
                    Curve::Linear {
                        intercept: a.parse().map_err(|_| bad_num(a))?,
                        slope: b.parse().map_err(|_| bad_num(b))?,
                    }
                }
                "pwl" => {
                    let mut points = Vec::new();
                    for part in fields[5].split(';') {
                        let (x, y) = part.split_once(':').ok_or_else(|| TtpError::Parse {
                            line: line_no,
                            msg: format!("pwl point {part:?} needs `x:y`"),
                        })?;
                        points.push((
                            x.parse().map_err(|_| bad_num(x))?,
                            y.parse().map_err(|_| bad_num(y))?,
                        ));
                    }
                    Curve::Pwl { points }
                }
                "expr" => Curve::Expr { expr: Expr::parse_prefix(fields[5])? },
                other => {
                    return Err(TtpError::Parse {
                        line: line_no,
                        msg: format!("unknown curve kind {other:?}"),
                    })
                }
            };
            model.insert(fs, kp, param, curve, anomalous);
        }
        Ok(model)
    }
}

/// Greedy capacity-filtered packing order: items sorted by score
/// descending (ties to the lower id), keeping only those that still fit
/// when reached. Every prefix of the result is a feasible plan.
pub fn packable_sequence(inst: &TtpInstance, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("item scores must not be NaN")
            .then(a.cmp(&b))
    });
    let mut seq = Vec::new();
    let mut weight = 0u64;
    for id in order {
        let w = inst.item(id).weight;
        if weight + w <= inst.capacity {
            weight += w;
            seq.push(id);
        }
    }
    seq
}

#[derive(Debug, Clone)]
pub struct DoublingOutcome {
    pub best_count: usize,
    pub best_objective: f64,
    pub best_plan: PackingPlan,
    /// Every evaluated probe in order: (prefix length, objective).
    pub probes: Vec<(usize, f64)>,
}

/// Search over prefix lengths of a packable sequence, doubling outward
/// from the start. Each direction begins with step 1; an improving probe
/// moves there and doubles the step, a failing probe keeps position and
/// shrinks the step to an eighth (at least 1), and a failure at step 1
/// ends the direction. Probes that clamp onto the current position end
/// the direction without costing an evaluation. Directions alternate,
/// forward first, until a whole cycle brings no improvement, so the
/// final cutoff has both neighbors probed and worse: a doubling jump
/// past a peak always gets walked back.
pub fn doubling_search(
    inst: &TtpInstance,
    tour: &[usize],
    seq: &[usize],
    start_count: usize,
    counter: &mut EvalCounter,
) -> Result<DoublingOutcome> {
    let plan_at = |k: usize| -> Result<PackingPlan> {
        PackingPlan::from_ids(inst, &seq[..k])
    };
    let max = seq.len();
    let mut current = start_count.min(max);
    let mut best_plan = plan_at(current)?;
    let mut best = evaluate(inst, tour, &best_plan, counter)?;
    let mut probes = vec![(current, best)];

    loop {
        let mut improved_cycle = false;
        for forward in [true, false] {
            let mut step: usize = 1;
            loop {
                let target = if forward {
                    (current + step).min(max)
                } else {
                    current.saturating_sub(step)
                };
                if target == current {
                    break;
                }
                let plan = plan_at(target)?;
                let obj = evaluate(inst, tour, &plan, counter)?;
                probes.push((target, obj));
                if obj > best {
                    current = target;
                    best = obj;
                    best_plan = plan;
                    step *= 2;
                    improved_cycle = true;
                } else {
                    if step == 1 {
                        break;
                    }
                    step = (step / 8).max(1);
                }
            }
        }
        if !improved_cycle {
            break;
        }
    }

    Ok(DoublingOutcome { best_count: current, best_objective: best, best_plan, probes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PEstimateMode {
    /// Jump is large when it exceeds band * current estimate.
    RelativeBand,
    /// Jump is large when it exceeds the band outright.
    AbsoluteBand,
}

/// Move the percent estimate toward an observed packed fraction: adopt
/// the sample outright when it is close, average when it jumps.
pub fn update_p_estimate(current: f64, sample: f64, band: f64, mode: PEstimateMode) -> f64 {
    let threshold = match mode {
        PEstimateMode::RelativeBand => band * current,
        PEstimateMode::AbsoluteBand => band,
    };
    if (sample - current).abs() > threshold {
        (sample + current) / 2.0
    } else {
        sample
    }
}

#[derive(Debug, Clone)]
pub struct HeuristicConfig {
    pub feature_set: FeatureSet,
    /// Weight-refinement EA generations after the cutoff search.
    pub generations: u64,
    pub noise_sigma: f64,
    pub update_band: f64,
    pub p_estimate_mode: PEstimateMode,
    /// Also update the percent estimate from rejected individuals.
    pub update_on_rejected: bool,
    pub seed: u64,
}

impl HeuristicConfig {
    pub fn new(feature_set: FeatureSet, seed: u64) -> Self {
        HeuristicConfig {
            feature_set,
            generations: 250,
            noise_sigma: 0.5,
            update_band: 0.1,
            p_estimate_mode: PEstimateMode::RelativeBand,
            update_on_rejected: true,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeuristicOutcome {
    pub plan: PackingPlan,
    pub objective: f64,
    pub evals: u64,
    /// Final weights and percent estimate after refinement.
    pub genotype: Genotype,
}

/// Model-initialized packing: predict a genotype for the instance class,
/// locate that individual's best cutoff with the doubling search, then
/// refine the weights with an elitist (1+1) EA. Every individual is scored
/// by its own doubling search, starting from the current percent estimate,
/// and the estimate tracks the packed fraction of each search result.
pub fn run_heuristic(
    inst: &TtpInstance,
    tour: &[usize],
    model: &ParameterModel,
    config: &HeuristicConfig,
) -> Result<HeuristicOutcome> {
    let table = crate::features::compute_features(inst, tour);
    let genotype =
        model.predict_genotype(config.feature_set, inst.kp_type, inst.capacity_factor())?;
    let mut weights = genotype.weights().to_vec();
    let mut p_est = genotype.percent();
    let mut counter = EvalCounter::new();

    let search_one =
        |w: &[f64], p: f64, counter: &mut EvalCounter| -> Result<DoublingOutcome> {
            let scores = score_items(config.feature_set, &table, w)?;
            let seq = packable_sequence(inst, &scores);
            let target = (p.clamp(0.0, 1.0) * inst.capacity as f64).floor() as u64;
            let mut start_count = 0;
            let mut acc = 0u64;
            for (k, &id) in seq.iter().enumerate() {
                acc += inst.item(id).weight;
                if acc > target {
                    break;
                }
                start_count = k + 1;
            }
            doubling_search(inst, tour, &seq, start_count, counter)
        };
    let packed_fraction = |plan: &PackingPlan| -> f64 {
        if inst.capacity > 0 {
            plan.total_weight() as f64 / inst.capacity as f64
        } else {
            0.0
        }
    };

    let first = search_one(&weights, p_est, &mut counter)?;
    let mut best_obj = first.best_objective;
    p_est = update_p_estimate(
        p_est,
        packed_fraction(&first.best_plan),
        config.update_band,
        config.p_estimate_mode,
    );
    let mut best_plan = first.best_plan;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).expect("finite sigma");
    for _ in 0..config.generations {
        let mut child = weights.clone();
        for w in child.iter_mut() {
            *w += noise.sample(&mut rng);
        }
        let out = search_one(&child, p_est, &mut counter)?;
        let accepted = out.best_objective > best_obj;
        if accepted || config.update_on_rejected {
            p_est = update_p_estimate(
                p_est,
                packed_fraction(&out.best_plan),
                config.update_band,
                config.p_estimate_mode,
            );
        }
        if accepted {
            weights = child;
            best_obj = out.best_objective;
            best_plan = out.best_plan;
        }
    }

    let mut values = weights;
    values.push(p_est.clamp(0.0, 1.0));
    Ok(HeuristicOutcome {
        plan: best_plan,
        objective: best_obj,
        evals: counter.count(),
        genotype: Genotype::new(config.feature_set, values)?,
    })
}
