use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use ttp_core::baselines::{insertion, pack_iterative};
use ttp_core::evolution::FeatureSet;
use ttp_core::features::median;
use ttp_core::heuristics::{run_heuristic, HeuristicConfig, ParameterModel};
use ttp_core::instance::TtpInstance;
use ttp_core::objective::EvalCounter;
use ttp_core::tour::reference_tour;

use crate::charts::rank_chart;
use crate::files::{ensure_dir, sorted_files, stem};
use crate::seeds::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    Genotype(FeatureSet),
    PackIterative,
    Insertion,
}

pub const ALL_KINDS: [HeuristicKind; 7] = [
    HeuristicKind::Genotype(FeatureSet::T3),
    HeuristicKind::Genotype(FeatureSet::T4),
    HeuristicKind::Genotype(FeatureSet::T5A),
    HeuristicKind::Genotype(FeatureSet::T5B),
    HeuristicKind::Genotype(FeatureSet::T6),
    HeuristicKind::PackIterative,
    HeuristicKind::Insertion,
];

impl HeuristicKind {
    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Genotype(FeatureSet::T3) => "T3",
            HeuristicKind::Genotype(FeatureSet::T4) => "T4",
            HeuristicKind::Genotype(FeatureSet::T5A) => "T5A",
            HeuristicKind::Genotype(FeatureSet::T5B) => "T5B",
            HeuristicKind::Genotype(FeatureSet::T6) => "T6",
            HeuristicKind::PackIterative => "packIterative",
            HeuristicKind::Insertion => "insertion",
        }
    }

    pub fn from_tag(tag: &str) -> Option<HeuristicKind> {
        let lower = tag.to_ascii_lowercase();
        match lower.as_str() {
            "packiterative" => return Some(HeuristicKind::PackIterative),
            "insertion" => return Some(HeuristicKind::Insertion),
            _ => {}
        }
        FeatureSet::from_tag(tag)
            .or_else(|| match lower.as_str() {
                "t3" => Some(FeatureSet::T3),
                "t4" => Some(FeatureSet::T4),
                "t5a" => Some(FeatureSet::T5A),
                "t5b" => Some(FeatureSet::T5B),
                "t6" => Some(FeatureSet::T6),
                _ => None,
            })
            .map(HeuristicKind::Genotype)
    }
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    /// Directory of .ttp instance files
    #[arg(long)]
    pub instances: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Parameter model file, required by the genotype heuristics
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Heuristics to run
    #[arg(long, value_delimiter = ',', default_value = "T3,T4,T5A,T5B,T6,packIterative,insertion")]
    pub heuristics: Vec<String>,

    /// Repeats per (instance, heuristic); deterministic heuristics run
    /// once and the row is repeated
    #[arg(long, default_value_t = 10)]
    pub trials: u32,

    /// Refinement generations for the genotype heuristics
    #[arg(long, default_value_t = 250)]
    pub budget: u64,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub instance: String,
    pub heuristic: &'static str,
    pub seed: u64,
    pub objective: f64,
    pub evals: u64,
    pub wall_ms: u128,
}

pub fn parse_heuristics(tags: &[String]) -> Result<Vec<HeuristicKind>> {
    let mut requested = Vec::new();
    for tag in tags {
        let kind = HeuristicKind::from_tag(tag)
            .with_context(|| format!("unknown heuristic {tag:?}"))?;
        if !requested.contains(&kind) {
            requested.push(kind);
        }
    }
    // canonical order keeps every report stable no matter how the flag
    // was spelled
    Ok(ALL_KINDS.into_iter().filter(|k| requested.contains(k)).collect())
}

/// Ranks with 1 as the best (highest) value; tied values share the mean
/// of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn run_baseline(inst: &TtpInstance, tour: &[usize], kind: HeuristicKind) -> Result<(f64, u64)> {
    let mut counter = EvalCounter::new();
    let out = match kind {
        HeuristicKind::PackIterative => pack_iterative(inst, tour, &mut counter)?,
        HeuristicKind::Insertion => insertion(inst, tour, &mut counter)?,
        HeuristicKind::Genotype(_) => unreachable!("genotype runs go through the model path"),
    };
    Ok((out.objective, out.evals))
}

pub fn run(args: &CompareArgs) -> Result<()> {
    let kinds = parse_heuristics(&args.heuristics)?;
    if kinds.is_empty() {
        bail!("no heuristics requested");
    }
    let needs_model = kinds.iter().any(|k| matches!(k, HeuristicKind::Genotype(_)));
    let model = match (&args.model, needs_model) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            Some(ParameterModel::parse(&text)?)
        }
        (None, true) => bail!("the genotype heuristics need --model"),
        (None, false) => None,
    };
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }

    let files = sorted_files(&args.instances, "ttp")?;
    if files.is_empty() {
        bail!("no .ttp files in {}", args.instances.display());
    }
    let instances: Vec<(String, TtpInstance, Vec<usize>)> = files
        .par_iter()
        .map(|path| -> Result<_> {
            let text = fs::read_to_string(path)?;
            let inst = ttp_core::instance::parse_ttp(&text)
                .with_context(|| format!("cannot parse {}", path.display()))?;
            let tour = reference_tour(&inst);
            Ok((stem(path), inst, tour))
        })
        .collect::<Result<_>>()?;

    enum Task {
        Stochastic { inst: usize, kind_idx: usize, trial: u32 },
        Deterministic { inst: usize, kind_idx: usize },
    }
    let mut tasks = Vec::new();
    for inst in 0..instances.len() {
        for (kind_idx, kind) in kinds.iter().enumerate() {
            match kind {
                HeuristicKind::Genotype(_) => {
                    for trial in 0..args.trials {
                        tasks.push(Task::Stochastic { inst, kind_idx, trial });
                    }
                }
                _ => tasks.push(Task::Deterministic { inst, kind_idx }),
            }
        }
    }

    let records: Vec<Vec<TrialRecord>> = tasks
        .par_iter()
        .map(|task| -> Result<Vec<TrialRecord>> {
            match *task {
                Task::Stochastic { inst, kind_idx, trial } => {
                    let (name, instance, tour) = &instances[inst];
                    let kind = kinds[kind_idx];
                    let fs = match kind {
                        HeuristicKind::Genotype(fs) => fs,
                        _ => unreachable!(),
                    };
                    let seed = mix(args.seed, &[inst as u64, kind_idx as u64, trial as u64]);
                    let mut config = HeuristicConfig::new(fs, seed);
                    config.generations = args.budget;
                    let started = Instant::now();
                    let out =
                        run_heuristic(instance, tour, model.as_ref().unwrap(), &config)?;
                    Ok(vec![TrialRecord {
                        instance: name.clone(),
                        heuristic: kind.name(),
                        seed,
                        objective: out.objective,
                        evals: out.evals,
                        wall_ms: started.elapsed().as_millis(),
                    }])
                }
                Task::Deterministic { inst, kind_idx } => {
                    let (name, instance, tour) = &instances[inst];
                    let kind = kinds[kind_idx];
                    let started = Instant::now();
                    let (objective, evals) = run_baseline(instance, tour, kind)?;
                    let wall_ms = started.elapsed().as_millis();
                    Ok((0..args.trials)
                        .map(|trial| TrialRecord {
                            instance: name.clone(),
                            heuristic: kind.name(),
                            seed: mix(args.seed, &[inst as u64, kind_idx as u64, trial as u64]),
                            objective,
                            evals,
                            wall_ms,
                        })
                        .collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<TrialRecord> = records.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (&a.instance, a.heuristic, a.seed).cmp(&(&b.instance, b.heuristic, b.seed))
    });

    ensure_dir(&args.out)?;
    write_reports(&args.out, &kinds, &instances, &records)?;
    Ok(())
}

fn write_reports(
    out: &std::path::Path,
    kinds: &[HeuristicKind],
    instances: &[(String, TtpInstance, Vec<usize>)],
    records: &[TrialRecord],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(out.join("trials.csv"))?;
    writer.write_record(["instance", "heuristic", "seed", "objective", "evals", "wall_ms"])?;
    for r in records {
        writer.write_record([
            r.instance.clone(),
            r.heuristic.to_string(),
            r.seed.to_string(),
            format!("{}", r.objective),
            r.evals.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    writer.flush()?;

    let mean = |name: &str, kind: HeuristicKind| -> f64 {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.instance == name && r.heuristic == kind.name())
            .map(|r| r.objective)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };

    let mut rank_rows = Vec::new();
    let mut rank_bins = vec![vec![0u64; kinds.len()]; kinds.len()];
    let mut rank_sums = vec![0.0; kinds.len()];
    let mut rank1_counts = vec![0u64; kinds.len()];
    for (name, _, _) in instances {
        let means: Vec<f64> = kinds.iter().map(|&k| mean(name, k)).collect();
        let ranks = average_ranks(&means);
        for (ki, kind) in kinds.iter().enumerate() {
            rank_rows.push(vec![
                name.clone(),
                kind.name().to_string(),
                format!("{}", means[ki]),
                format!("{}", ranks[ki]),
            ]);
            let bin = (ranks[ki].round() as usize).clamp(1, kinds.len()) - 1;
            rank_bins[ki][bin] += 1;
            rank_sums[ki] += ranks[ki];
            if ranks[ki] <= 1.0 {
                rank1_counts[ki] += 1;
            }
        }
    }

    let mut writer = csv::Writer::from_path(out.join("ranks.csv"))?;
    writer.write_record(["instance", "heuristic", "mean_objective", "rank"])?;
    for row in &rank_rows {
        writer.write_record(row)?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(out.join("summary.csv"))?;
    writer.write_record([
        "heuristic",
        "mean_rank",
        "rank1_count",
        "rank1_share",
        "median_objective",
        "median_evals",
    ])?;
    let n_inst = instances.len() as f64;
    for (ki, kind) in kinds.iter().enumerate() {
        let objectives: Vec<f64> = records
            .iter()
            .filter(|r| r.heuristic == kind.name())
            .map(|r| r.objective)
            .collect();
        let evals: Vec<f64> = records
            .iter()
            .filter(|r| r.heuristic == kind.name())
            .map(|r| r.evals as f64)
            .collect();
        writer.write_record([
            kind.name().to_string(),
            format!("{}", rank_sums[ki] / n_inst),
            rank1_counts[ki].to_string(),
            format!("{}", rank1_counts[ki] as f64 / n_inst),
            format!("{}", median(&objectives)),
            format!("{}", median(&evals)),
        ])?;
        println!(
            "{}: mean rank {:.3}, rank-1 on {}/{} instances, median evals {}",
            kind.name(),
            rank_sums[ki] / n_inst,
            rank1_counts[ki],
            instances.len(),
            median(&evals),
        );
    }
    writer.flush()?;

    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    fs::write(out.join("ranks.svg"), rank_chart(&names, &rank_bins))?;

    println!("compare: {} trial rows -> {}", records.len(), out.display());
    Ok(())
}
