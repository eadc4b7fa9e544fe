use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use rayon::prelude::*;
use ttp_core::evolution::{meta_ea, packing_ea, FeatureSet};
use ttp_core::features::{analysis_mask, compute_features, median};
use ttp_core::heuristics::{Curve, ParameterModel};
use ttp_core::instance::{parse_ttp, KpType, TtpInstance};
use ttp_core::sr::{evolve, monomial_name, Expr, FunctionSet, SrConfig, SrDataset, SrTask};
use ttp_core::tour::reference_tour;

use crate::files::{ensure_dir, sorted_files, stem};
use crate::seeds::mix;

#[derive(Subcommand, Debug, Clone)]
pub enum PipelineCmd {
    /// Run the packing EA on each instance and dump per-item feature rows
    EaData(EaDataArgs),
    /// Evolve packed/unpacked classifiers from EA data and tally their term sets
    Nlbc(NlbcArgs),
    /// Search genotypes per instance with the meta EA
    MetaData(MetaDataArgs),
    /// Fit per-parameter curves over the capacity factor and write the model
    FitModel(FitModelArgs),
}

pub fn run(cmd: &PipelineCmd) -> Result<()> {
    match cmd {
        PipelineCmd::EaData(args) => run_ea_data(args),
        PipelineCmd::Nlbc(args) => run_nlbc(args),
        PipelineCmd::MetaData(args) => run_meta_data(args),
        PipelineCmd::FitModel(args) => run_fit_model(args),
    }
}

fn load_instances(dir: &Path) -> Result<Vec<(String, TtpInstance)>> {
    let files = sorted_files(dir, "ttp")?;
    if files.is_empty() {
        bail!("no .ttp files in {}", dir.display());
    }
    files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let inst = parse_ttp(&text)
                .with_context(|| format!("cannot parse {}", path.display()))?;
            Ok((stem(path), inst))
        })
        .collect()
}

#[derive(Args, Debug, Clone)]
pub struct EaDataArgs {
    /// Directory of .ttp instance files
    #[arg(long)]
    pub instances: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Packing EA generations per instance
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run_ea_data(args: &EaDataArgs) -> Result<()> {
    let instances = load_instances(&args.instances)?;
    ensure_dir(&args.out)?;

    let mut summaries: Vec<Vec<String>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (name, inst))| -> Result<Vec<String>> {
            let tour = reference_tour(inst);
            let outcome = packing_ea(inst, &tour, args.budget, mix(args.seed, &[i as u64]))?;
            let table = compute_features(inst, &tour);
            let mask = analysis_mask(&table);

            let mut writer =
                csv::Writer::from_path(args.out.join(format!("{name}.items.csv")))?;
            writer.write_record([
                "item", "city", "profit", "weight", "ipr", "rdist", "ipr_std", "rdist_std",
                "packed", "masked",
            ])?;
            for item in inst.items() {
                let id = item.id;
                writer.write_record([
                    (id + 1).to_string(),
                    item.city.to_string(),
                    item.profit.to_string(),
                    item.weight.to_string(),
                    format!("{}", table.ipr[id]),
                    format!("{}", table.rdist[id]),
                    format!("{}", table.ipr_std[id]),
                    format!("{}", table.rdist_std[id]),
                    (outcome.plan.is_selected(id) as u8).to_string(),
                    (mask[id] as u8).to_string(),
                ])?;
            }
            writer.flush()?;

            Ok(vec![
                name.clone(),
                args.budget.to_string(),
                format!("{}", outcome.objective),
                outcome.evals.to_string(),
                outcome.plan.count().to_string(),
                outcome.plan.total_weight().to_string(),
            ])
        })
        .collect::<Result<_>>()?;
    summaries.sort();

    let mut writer = csv::Writer::from_path(args.out.join("ea_summary.csv"))?;
    writer.write_record([
        "instance",
        "generations",
        "objective",
        "evals",
        "packed_count",
        "packed_weight",
    ])?;
    for row in &summaries {
        writer.write_record(row)?;
    }
    writer.flush()?;

    println!("ea-data: {} instances -> {}", summaries.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct NlbcArgs {
    /// Directory of .items.csv files from the ea-data stage
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Independent runs per instance
    #[arg(long, default_value_t = 5)]
    pub runs: u32,

    #[arg(long, default_value_t = 300)]
    pub generations: u64,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn load_item_dataset(path: &Path) -> Result<Option<SrDataset>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} lacks column {name}", path.display()))
    };
    let (ci, cr, cp, cm) = (col("ipr_std")?, col("rdist_std")?, col("packed")?, col("masked")?);

    let mut ipr = Vec::new();
    let mut rdist = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(cm) != Some("1") {
            continue;
        }
        ipr.push(record.get(ci).unwrap().parse::<f64>()?);
        rdist.push(record.get(cr).unwrap().parse::<f64>()?);
        y.push(if record.get(cp) == Some("1") { 1.0 } else { 0.0 });
    }
    if y.is_empty() {
        return Ok(None);
    }
    Ok(Some(SrDataset::new(vec![ipr, rdist], y, SrTask::BinaryBce)?))
}

pub fn run_nlbc(args: &NlbcArgs) -> Result<()> {
    let files = sorted_files(&args.data, "csv")?;
    let item_files: Vec<&PathBuf> =
        files.iter().filter(|p| p.to_string_lossy().ends_with(".items.csv")).collect();
    if item_files.is_empty() {
        bail!("no .items.csv files in {} (run the ea-data stage first)", args.data.display());
    }

    let mut datasets = Vec::new();
    for path in &item_files {
        let name = stem(path).trim_end_matches(".items").to_string();
        match load_item_dataset(path)? {
            Some(ds) => datasets.push((name, ds)),
            None => eprintln!("nlbc: {name} has no rows inside the feature window, skipped"),
        }
    }

    let tasks: Vec<(usize, u32)> = (0..datasets.len())
        .flat_map(|i| (0..args.runs).map(move |r| (i, r)))
        .collect();
    let mut fronts: Vec<(String, u32, Vec<(f64, usize, String, String)>)> = tasks
        .par_iter()
        .map(|&(i, r)| -> Result<_> {
            let (name, ds) = &datasets[i];
            let mut config = SrConfig::new(mix(args.seed, &[i as u64, r as u64]));
            config.generations = args.generations;
            config.function_set = FunctionSet::Polynomial;
            let result = evolve(ds, &config)?;
            let entries = result
                .pareto
                .iter()
                .map(|e| {
                    let set = e
                        .terms
                        .iter()
                        .map(|t| monomial_name(t))
                        .collect::<Vec<_>>()
                        .join("+");
                    (e.loss, e.term_count(), set, e.expr.to_prefix())
                })
                .collect();
            Ok((name.clone(), r, entries))
        })
        .collect::<Result<_>>()?;
    fronts.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

    ensure_dir(&args.out)?;
    let mut writer = csv::Writer::from_path(args.out.join("pareto.csv"))?;
    writer.write_record(["instance", "run", "loss", "term_count", "term_set", "expr"])?;
    let mut counts: std::collections::BTreeMap<(usize, String), u64> = Default::default();
    for (name, run, entries) in &fronts {
        for (loss, term_count, set, expr) in entries {
            writer.write_record([
                name.clone(),
                run.to_string(),
                format!("{loss}"),
                term_count.to_string(),
                set.clone(),
                expr.clone(),
            ])?;
            *counts.entry((*term_count, set.clone())).or_insert(0) += 1;
        }
    }
    writer.flush()?;

    let mut count_rows: Vec<(&(usize, String), &u64)> = counts.iter().collect();
    count_rows.sort_by(|a, b| (a.0 .0, std::cmp::Reverse(*a.1), &a.0 .1).cmp(&(
        b.0 .0,
        std::cmp::Reverse(*b.1),
        &b.0 .1,
    )));
    let mut writer = csv::Writer::from_path(args.out.join("term_sets.csv"))?;
    writer.write_record(["size", "term_set", "count"])?;
    for ((size, set), count) in count_rows {
        writer.write_record([size.to_string(), set.clone(), count.to_string()])?;
    }
    writer.flush()?;

    println!(
        "nlbc: {} runs over {} instances -> {}",
        fronts.len(),
        datasets.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct MetaDataArgs {
    /// Directory of .ttp instance files
    #[arg(long)]
    pub instances: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Feature set tags to search (3T, 4T, 5T0, 5T1, 6T)
    #[arg(long, value_delimiter = ',', default_value = "3T,4T,5T0,5T1,6T")]
    pub feature_sets: Vec<String>,

    /// Independent runs per (instance, feature set); the best one is kept
    #[arg(long, default_value_t = 4)]
    pub runs: u32,

    /// Meta EA generations per run
    #[arg(long, default_value_t = 1000)]
    pub budget: u64,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub const META_COLUMNS: [&str; 18] = [
    "instance", "kp_type", "feature_set", "x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7",
    "objective", "w0", "w1", "w2", "w3", "w4", "percent",
];

pub fn instance_descriptors(inst: &TtpInstance) -> [f64; 8] {
    [
        inst.n_cities() as f64,
        inst.n_items() as f64,
        inst.renting_ratio,
        inst.capacity as f64,
        inst.n_items() as f64 / (inst.n_cities() - 1) as f64,
        inst.v_max,
        inst.v_min,
        inst.capacity_factor(),
    ]
}

pub fn parse_feature_sets(tags: &[String]) -> Result<Vec<FeatureSet>> {
    tags.iter()
        .map(|tag| {
            FeatureSet::from_tag(tag)
                .with_context(|| format!("unknown feature set tag {tag:?}"))
        })
        .collect()
}

pub fn run_meta_data(args: &MetaDataArgs) -> Result<()> {
    let instances = load_instances(&args.instances)?;
    let feature_sets = parse_feature_sets(&args.feature_sets)?;

    let mut rows: Vec<Vec<String>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (name, inst))| -> Result<Vec<Vec<String>>> {
            let tour = reference_tour(inst);
            let xs = instance_descriptors(inst);
            let mut instance_rows = Vec::new();
            for (fi, &fs) in feature_sets.iter().enumerate() {
                let mut best: Option<ttp_core::evolution::MetaEaOutcome> = None;
                for r in 0..args.runs {
                    let outcome = meta_ea(
                        inst,
                        &tour,
                        fs,
                        args.budget,
                        mix(args.seed, &[i as u64, fi as u64, r as u64]),
                    )?;
                    if best.as_ref().map(|b| outcome.objective > b.objective).unwrap_or(true) {
                        best = Some(outcome);
                    }
                }
                let best = best.expect("at least one run");
                let mut row = vec![
                    name.clone(),
                    inst.kp_type.tag().to_string(),
                    fs.tag().to_string(),
                ];
                row.extend(xs.iter().map(|x| format!("{x}")));
                row.push(format!("{}", best.objective));
                let weights = best.genotype.weights();
                for slot in 0..5 {
                    row.push(
                        weights.get(slot).map(|w| format!("{w}")).unwrap_or_default(),
                    );
                }
                row.push(format!("{}", best.genotype.percent()));
                instance_rows.push(row);
            }
            Ok(instance_rows)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort();

    ensure_dir(&args.out)?;
    let mut writer = csv::Writer::from_path(args.out.join("meta.csv"))?;
    writer.write_record(META_COLUMNS)?;
    for row in &rows {
        writer.write_record(row)?;
    }
    writer.flush()?;

    println!("meta-data: {} rows -> {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct FitModelArgs {
    /// meta.csv produced by the meta-data stage
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Independent runs per fitted curve
    #[arg(long, default_value_t = 10)]
    pub runs: u32,

    #[arg(long, default_value_t = 300)]
    pub generations: u64,

    /// Curve family: sr, pwl, or linear. Only sr produces the
    /// variable-frequency report.
    #[arg(long, default_value = "sr")]
    pub fit: String,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MetaRow {
    pub instance: String,
    pub kp_type: KpType,
    pub feature_set: FeatureSet,
    pub xs: [f64; 8],
    pub objective: f64,
    /// Weights then percent, genotype order.
    pub params: Vec<f64>,
}

pub fn load_meta_rows(path: &Path) -> Result<Vec<MetaRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(META_COLUMNS) {
        bail!("{} does not look like a meta-data file", path.display());
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let kp = KpType::from_tag(field(1))
            .with_context(|| format!("bad kp_type {:?}", field(1)))?;
        let fs = FeatureSet::from_tag(field(2))
            .with_context(|| format!("bad feature_set {:?}", field(2)))?;
        let mut xs = [0.0; 8];
        for (k, slot) in xs.iter_mut().enumerate() {
            *slot = field(3 + k).parse()?;
        }
        let mut params = Vec::new();
        for slot in 0..fs.weight_count() {
            params.push(field(12 + slot).parse()?);
        }
        params.push(field(17).parse()?);
        rows.push(MetaRow {
            instance: field(0).to_string(),
            kp_type: kp,
            feature_set: fs,
            xs,
            objective: field(11).parse()?,
            params,
        });
    }
    Ok(rows)
}

/// Descriptor columns with desk-scale variance; the rest are constant
/// across a generated suite and would only bloat the search space.
pub const FREQ_VARS: [(usize, &str); 5] =
    [(1, "x1"), (2, "x2"), (3, "x3"), (4, "x4"), (7, "x7")];

fn param_name(fs: FeatureSet, idx: usize) -> String {
    if idx == fs.weight_count() {
        "percent".to_string()
    } else {
        format!("w{idx}")
    }
}

fn ols_linear(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

fn pwl_through_medians(cs: &[f64], ys: &[f64]) -> Curve {
    let mut buckets: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for (&c, &y) in cs.iter().zip(ys) {
        buckets.entry(c.round() as i64).or_default().push(y);
    }
    let points = buckets
        .into_iter()
        .map(|(c, vals)| (c as f64, median(&vals)))
        .collect();
    Curve::Pwl { points }
}

struct FitCell {
    feature_set: FeatureSet,
    kp_type: KpType,
    param: usize,
    cs: Vec<f64>,
    ys: Vec<f64>,
    instances: Vec<String>,
    freq_cols: Vec<Vec<f64>>,
}

pub fn run_fit_model(args: &FitModelArgs) -> Result<()> {
    if !["sr", "pwl", "linear"].contains(&args.fit.as_str()) {
        bail!("unknown fit kind {:?}, expected sr, pwl, or linear", args.fit);
    }
    let rows = load_meta_rows(&args.data)?;
    if rows.is_empty() {
        bail!("{} holds no rows", args.data.display());
    }

    let mut cells: Vec<FitCell> = Vec::new();
    let mut feature_sets: Vec<FeatureSet> = rows.iter().map(|r| r.feature_set).collect();
    feature_sets.sort_by_key(|fs| fs.tag());
    feature_sets.dedup();
    for &fs in &feature_sets {
        for kp in KpType::ALL {
            let group: Vec<&MetaRow> = rows
                .iter()
                .filter(|r| r.feature_set == fs && r.kp_type == kp)
                .collect();
            if group.is_empty() {
                continue;
            }
            for param in 0..=fs.weight_count() {
                cells.push(FitCell {
                    feature_set: fs,
                    kp_type: kp,
                    param,
                    cs: group.iter().map(|r| r.xs[7]).collect(),
                    ys: group.iter().map(|r| r.params[param]).collect(),
                    instances: group.iter().map(|r| r.instance.clone()).collect(),
                    freq_cols: FREQ_VARS
                        .iter()
                        .map(|&(xi, _)| group.iter().map(|r| r.xs[xi]).collect())
                        .collect(),
                });
            }
        }
    }

    struct CellFit {
        curve: Curve,
        frequencies: Option<Vec<f64>>,
    }
    let fits: Vec<CellFit> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, cell)| -> Result<CellFit> {
            if args.fit == "pwl" {
                return Ok(CellFit { curve: pwl_through_medians(&cell.cs, &cell.ys), frequencies: None });
            }
            if args.fit == "linear" {
                let (intercept, slope) = ols_linear(&cell.cs, &cell.ys);
                return Ok(CellFit { curve: Curve::Linear { intercept, slope }, frequencies: None });
            }

            let freq_ds = SrDataset::new(
                cell.freq_cols.clone(),
                cell.ys.clone(),
                SrTask::RegressionMae,
            )?;
            let mut freq_results = Vec::new();
            for r in 0..args.runs {
                let mut config = SrConfig::new(mix(args.seed, &[ci as u64, r as u64, 1]));
                config.generations = args.generations;
                config.function_set = FunctionSet::Rational;
                freq_results.push(evolve(&freq_ds, &config)?);
            }
            let frequencies =
                ttp_core::sr::variable_frequency(&freq_results, FREQ_VARS.len());

            let curve_ds = SrDataset::new(
                vec![cell.cs.clone()],
                cell.ys.clone(),
                SrTask::RegressionMae,
            )?;
            let mut best: Option<(f64, Expr)> = None;
            for r in 0..args.runs {
                let mut config = SrConfig::new(mix(args.seed, &[ci as u64, r as u64, 2]));
                config.generations = args.generations;
                config.function_set = FunctionSet::Rational;
                let result = evolve(&curve_ds, &config)?;
                if best.as_ref().map(|(loss, _)| result.best_loss < *loss).unwrap_or(true) {
                    best = Some((result.best_loss, result.best));
                }
            }
            let (_, expr) = best.expect("at least one run");
            Ok(CellFit { curve: Curve::Expr { expr }, frequencies: Some(frequencies) })
        })
        .collect::<Result<_>>()?;

    // A fitted curve can score well on its training loss yet trace a wild
    // shape; flag curves whose residuals stand far out from the rest of
    // this invocation and fall back to a straight line for them.
    let residuals: Vec<f64> = cells
        .iter()
        .zip(&fits)
        .map(|(cell, fit)| {
            let devs: Vec<f64> = cell
                .cs
                .iter()
                .zip(&cell.ys)
                .map(|(&c, &y)| (fit.curve.value_at(c) - y).abs())
                .collect();
            median(&devs)
        })
        .collect();
    let threshold = 3.0 * median(&residuals) + 1e-12;

    let mut model = ParameterModel::new();
    let mut curve_rows = Vec::new();
    let mut point_rows = Vec::new();
    let mut freq_rows = Vec::new();
    for ((cell, fit), med_res) in cells.iter().zip(&fits).zip(&residuals) {
        let anomalous = args.fit == "sr" && *med_res > threshold;
        let curve = if anomalous {
            let (intercept, slope) = ols_linear(&cell.cs, &cell.ys);
            Curve::Linear { intercept, slope }
        } else {
            fit.curve.clone()
        };

        let name = param_name(cell.feature_set, cell.param);
        let is_percent = cell.param == cell.feature_set.weight_count();
        let mut c = 1.0;
        while c <= 10.0 + 1e-9 {
            let mut v = curve.value_at(c);
            if is_percent {
                v = v.clamp(0.0, 1.0);
            }
            curve_rows.push(vec![
                cell.feature_set.tag().to_string(),
                cell.kp_type.tag().to_string(),
                name.clone(),
                format!("{c}"),
                format!("{v}"),
            ]);
            c += 0.25;
        }
        for ((inst, &c), &y) in cell.instances.iter().zip(&cell.cs).zip(&cell.ys) {
            point_rows.push(vec![
                cell.feature_set.tag().to_string(),
                cell.kp_type.tag().to_string(),
                name.clone(),
                inst.clone(),
                format!("{c}"),
                format!("{y}"),
            ]);
        }
        if let Some(freq) = &fit.frequencies {
            let mut row = vec![
                cell.feature_set.tag().to_string(),
                cell.kp_type.tag().to_string(),
                name.clone(),
            ];
            row.extend(freq.iter().map(|f| format!("{f}")));
            freq_rows.push(row);
        }

        model.insert(cell.feature_set, cell.kp_type, cell.param, curve, anomalous);
    }

    ensure_dir(&args.out)?;
    fs::write(args.out.join("model.txt"), model.to_text())?;

    let mut writer = csv::Writer::from_path(args.out.join("curves.csv"))?;
    writer.write_record(["feature_set", "kp_type", "param", "c", "value"])?;
    for row in &curve_rows {
        writer.write_record(row)?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(args.out.join("points.csv"))?;
    writer.write_record(["feature_set", "kp_type", "param", "instance", "c", "value"])?;
    for row in &point_rows {
        writer.write_record(row)?;
    }
    writer.flush()?;

    if !freq_rows.is_empty() {
        let mut writer = csv::Writer::from_path(args.out.join("variable_frequency.csv"))?;
        let mut header = vec!["feature_set", "kp_type", "param"];
        header.extend(FREQ_VARS.iter().map(|&(_, name)| name));
        writer.write_record(&header)?;
        for row in &freq_rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
    }

    println!("fit-model: {} curves -> {}", cells.len(), args.out.display());
    Ok(())
}
