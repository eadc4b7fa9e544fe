use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ttp_core::instance::parse_ttp;
use ttp_core::knapsack::PackingPlan;
use ttp_core::objective::{evaluate, EvalCounter};
use ttp_core::tour::{reference_tour, tour_length, validate_tour};

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// A .ttp instance file
    #[arg(long)]
    pub instance: PathBuf,

    /// Tour as whitespace-separated 1-based city ids; defaults to the
    /// nearest-neighbor + 2-opt reference tour
    #[arg(long)]
    pub tour: Option<PathBuf>,

    /// Packing as whitespace-separated 1-based item ids; defaults to
    /// packing nothing
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

fn read_numbers(path: &PathBuf) -> Result<Vec<usize>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.split_whitespace()
        .map(|tok| tok.parse::<usize>().with_context(|| format!("bad id {tok:?}")))
        .collect()
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.instance)
        .with_context(|| format!("cannot read {}", args.instance.display()))?;
    let inst = parse_ttp(&text)?;

    let tour = match &args.tour {
        Some(path) => {
            let tour = read_numbers(path)?;
            validate_tour(&inst, &tour)?;
            tour
        }
        None => reference_tour(&inst),
    };

    let mut plan = PackingPlan::empty(&inst);
    if let Some(path) = &args.plan {
        for id in read_numbers(path)? {
            anyhow::ensure!(
                (1..=inst.n_items()).contains(&id),
                "item {id} out of range 1..={}",
                inst.n_items()
            );
            plan.set(&inst, id - 1, true);
        }
    }

    let mut counter = EvalCounter::new();
    let objective = evaluate(&inst, &tour, &plan, &mut counter)?;

    println!("instance {}", inst.name);
    println!("cities {}", inst.n_cities());
    println!("items {}", inst.n_items());
    println!("tour_length {}", tour_length(&inst, &tour));
    println!("packed_items {}", plan.count());
    println!("packed_weight {} / {}", plan.total_weight(), inst.capacity);
    println!("objective {}", objective);
    Ok(())
}
