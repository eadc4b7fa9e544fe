use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ttp_core::instance::{
    generate_instance, serialize_ttp, synthetic_coords, CoordLayout, KpType,
};
use ttp_core::tour::read_tsp_coords;

use crate::files::ensure_dir;
use crate::seeds::mix;

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// Directory for the instance files and manifest
    #[arg(long)]
    pub out: PathBuf,

    /// Base name of the instance set
    #[arg(long, default_value = "desk51")]
    pub name: String,

    /// City count for the synthetic layouts
    #[arg(long, default_value_t = 51)]
    pub cities: usize,

    /// Synthetic coordinate layout: uniform or clustered
    #[arg(long, default_value = "uniform")]
    pub layout: String,

    /// Side length of the coordinate square
    #[arg(long, default_value_t = 70.0)]
    pub span: f64,

    /// Blob count for the clustered layout
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,

    /// Blob spread for the clustered layout
    #[arg(long, default_value_t = 4.0)]
    pub spread: f64,

    /// TSPLIB coordinate file; overrides the synthetic layout
    #[arg(long)]
    pub coords: Option<PathBuf>,

    /// Items per city, one instance per value
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub item_factors: Vec<u32>,

    /// Knapsack type tags (bsc, usw, unc)
    #[arg(long, value_delimiter = ',', default_value = "bsc,usw,unc")]
    pub kp_types: Vec<String>,

    /// Capacity factors, each 1..=10
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub capacity_factors: Vec<u32>,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let coords = match &args.coords {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            read_tsp_coords(&text)?
        }
        None => {
            let layout = match args.layout.as_str() {
                "uniform" => CoordLayout::Uniform { span: args.span },
                "clustered" => CoordLayout::Clustered {
                    span: args.span,
                    clusters: args.clusters,
                    spread: args.spread,
                },
                other => bail!("unknown layout {other:?}, expected uniform or clustered"),
            };
            synthetic_coords(layout, args.cities, mix(args.seed, &[0]))
        }
    };

    let mut kp_types = Vec::new();
    for tag in &args.kp_types {
        match KpType::from_tag(tag) {
            Some(kp) => kp_types.push(kp),
            None => bail!("unknown knapsack type tag {tag:?}, expected bsc, usw, or unc"),
        }
    }

    ensure_dir(&args.out)?;
    let mut manifest = Vec::new();
    for &kp in &kp_types {
        let kp_rank = KpType::ALL.iter().position(|k| *k == kp).unwrap() as u64;
        for &f in &args.item_factors {
            for &c in &args.capacity_factors {
                let instance_seed = mix(args.seed, &[1 + kp_rank, f as u64, c as u64]);
                let stem = format!("{}_{}_f{f:02}_c{c:02}", args.name, kp.tag());
                let inst =
                    generate_instance(stem.clone(), coords.clone(), f, kp, c, instance_seed)?;
                let path = args.out.join(format!("{stem}.ttp"));
                fs::write(&path, serialize_ttp(&inst))
                    .with_context(|| format!("cannot write {}", path.display()))?;
                manifest.push([
                    format!("{stem}.ttp"),
                    stem,
                    kp.tag().to_string(),
                    f.to_string(),
                    c.to_string(),
                    instance_seed.to_string(),
                    inst.n_cities().to_string(),
                    inst.n_items().to_string(),
                    inst.capacity.to_string(),
                    format!("{}", inst.renting_ratio),
                ]);
            }
        }
    }
    manifest.sort();

    let mut writer = csv::Writer::from_path(args.out.join("manifest.csv"))?;
    writer.write_record([
        "file",
        "name",
        "kp_type",
        "item_factor",
        "capacity_factor",
        "seed",
        "cities",
        "items",
        "capacity",
        "renting_ratio",
    ])?;
    for row in &manifest {
        writer.write_record(row)?;
    }
    writer.flush()?;

    println!("wrote {} instances to {}", manifest.len(), args.out.display());
    Ok(())
}
