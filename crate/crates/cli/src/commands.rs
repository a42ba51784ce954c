use std::io::BufReader;
use std::path::Path;

use mbplan_core::memory::{self, coefficient_of_variation, flops_estimate, items_to_bytes, profile_network};
use mbplan_core::planner::{plan_schedule, PlanMode, ReferenceConfig, PUBLISHED_SCHEDULE};
use mbplan_core::predictor::{self, Dataset, PredictorModel, ScorePredictor, SyntheticOracle};
use mbplan_core::search::{self, SearchConstraint, SearchParams};
use mbplan_core::space::{self, rng_from_seed};
use mbplan_core::{MemoryProfile, Precision, SubnetConfig, SupernetSpace};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::output::{read_json, to_json, CliError, Run};
use crate::{Cli, Command, CompareArgs, EvoArgs, ModeArg, PlanArgs, ProfileArgs, SampleArgs, ScorerArgs, SearchArgs, SweepArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Profile(a) => profile(cli, a),
        Command::Plan(a) => plan(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::TrainPredictor(a) => train(cli, a),
        Command::Search(a) => search_cmd(cli, a),
        Command::Sweep(a) => sweep_cmd(cli, a),
        Command::Compare(a) => compare(cli, a),
    }
}

fn load_space(path: Option<&Path>, run: &mut Run) -> Result<SupernetSpace, CliError> {
    let space = match path {
        Some(p) => {
            run.input(p);
            read_json::<SupernetSpace>(p)?
        }
        None => SupernetSpace::moofa(),
    };
    space.validate()?;
    Ok(space)
}

fn load_config(path: &Path, space: &SupernetSpace, run: &mut Run) -> Result<SubnetConfig, CliError> {
    run.input(path);
    let config: SubnetConfig = read_json(path)?;
    space::validate(&config, space).map_err(mbplan_core::SpaceError::Validation)?;
    Ok(config)
}

fn profile_of(config: &SubnetConfig, space: &SupernetSpace, include_classifier: bool) -> Result<(MemoryProfile, u64), CliError> {
    let mut skeleton = space::resolve(config, space)?;
    skeleton.include_classifier = include_classifier;
    let shape_err = |e: mbplan_core::ShapeError| CliError::Validation(e.to_string());
    let profile = profile_network(&skeleton).map_err(shape_err)?;
    let flops = flops_estimate(&skeleton).map_err(shape_err)?;
    Ok((profile, flops))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(buf)
}

#[derive(Serialize)]
struct ProfileSummary {
    peak_items: u64,
    peak_layer: String,
    avg_items: f64,
    std_items: f64,
    mflops: f64,
    layers: usize,
    classifier_excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    peak_bytes_f32: Option<u64>,
}

fn profile(cli: &Cli, args: &ProfileArgs) -> Result<(), CliError> {
    let mut run = Run::new("profile", cli.seed);
    let space = load_space(cli.space.as_deref(), &mut run)?;
    let config = load_config(&args.config, &space, &mut run)?;
    let (profile, flops) = profile_of(&config, &space, args.include_classifier)?;

    let summary = ProfileSummary {
        peak_items: profile.peak_items,
        peak_layer: profile.records[profile.peak_index].label.clone(),
        avg_items: profile.avg_items,
        std_items: profile.std_items,
        mflops: memory::mflops(flops),
        layers: profile.counted().count(),
        classifier_excluded: profile.classifier_excluded,
        peak_bytes_f32: args.bytes.then(|| items_to_bytes(profile.peak_items, Precision::Float32)),
    };
    println!("peak      {} items ({})", summary.peak_items, summary.peak_layer);
    println!("average   {:.1} ± {:.1} items", summary.avg_items, summary.std_items);
    if args.bytes {
        let to_b = |x: f64| x * Precision::Float32.width() as f64;
        println!("peak      {} bytes (float32)", items_to_bytes(profile.peak_items, Precision::Float32));
        println!("average   {:.1} ± {:.1} bytes (float32)", to_b(profile.avg_items), to_b(profile.std_items));
    }
    println!("flops     {} M", summary.mflops);

    if let Some(path) = &args.csv {
        let bytes = csv_bytes(|buf| profile.write_csv(buf))?;
        run.emit(Some(path), &bytes)?;
    }
    if cli.out.is_some() {
        run.emit(cli.out.as_deref(), &to_json(&summary))?;
    }
    Ok(())
}

fn plan(cli: &Cli, args: &PlanArgs) -> Result<(), CliError> {
    let mut run = Run::new("plan", cli.seed);
    let (reference, num_stages) = match cli.space.as_deref() {
        Some(p) => {
            let space = load_space(Some(p), &mut run)?;
            (space.reference_config(), space.num_stages)
        }
        None => (ReferenceConfig::default(), 5),
    };
    let mode = match args.mode {
        ModeArg::ClosedForm => PlanMode::ClosedForm,
        ModeArg::Numeric => PlanMode::NumericBalance,
    };
    if let ModeArg::ClosedForm = args.mode {
        eprintln!(
            "warning: the printed depthwise-dominated closed form does not balance the peaks it is derived from \
             (it shrinks widths that direct balancing grows); prefer --mode numeric"
        );
    }
    let report = plan_schedule(reference, args.stem, args.divisor, mode, num_stages)?;
    let schedule = &report.schedule;

    eprintln!("stage  input  width  peak_items");
    eprintln!("{:<6} {:>5}  {:>5}  {:>10}", "stem", reference.resolution / 2, schedule.stem_width, report.stem_stage_peak);
    for t in &report.transitions {
        let name = if t.stage > num_stages { "head".to_string() } else { t.stage.to_string() };
        eprintln!("{:<6} {:>5}  {:>5}  {:>10}", name, t.input_size, t.width, t.peak_items);
    }
    let peaks = report.stage_peaks();
    let max = peaks.iter().copied().max().unwrap_or(0);
    let min = peaks.iter().copied().min().unwrap_or(0);
    if max > 0 {
        eprintln!("stage peaks span {:.1}% of the largest", 100.0 * (max - min) as f64 / max as f64);
    }

    if num_stages == 5 {
        let planned: Vec<Option<u32>> = std::iter::once(Some(schedule.stem_width))
            .chain(schedule.stage_widths.iter().map(|&w| Some(w)))
            .chain([Some(schedule.head_width), None])
            .collect();
        let names = ["stem", "stage1", "stage2", "stage3", "stage4", "stage5", "head", "final"];
        eprintln!("entry    planned  published  deviation");
        for ((name, p), published) in names.iter().zip(&planned).zip(PUBLISHED_SCHEDULE) {
            match p {
                Some(p) => eprintln!("{name:<8} {p:>7}  {published:>9}  {:>+9}", *p as i64 - published as i64),
                None => eprintln!("{name:<8} {:>7}  {published:>9}  {:>9}", "-", "n/a"),
            }
        }
    }
    run.emit(cli.out.as_deref(), &to_json(schedule))
}

fn sample(cli: &Cli, args: &SampleArgs) -> Result<(), CliError> {
    let mut run = Run::new("sample", cli.seed);
    let space = load_space(cli.space.as_deref(), &mut run)?;
    let oracle = SyntheticOracle {
        sigma: args.sigma,
        ..SyntheticOracle::new(cli.seed)
    };
    let ds = predictor::balanced_sample(&space, args.n, args.buckets, cli.seed, &oracle)?;
    eprintln!("bucket edges {:?}", ds.bucket_edges);
    eprintln!("occupancy    {:?}", ds.occupancy(&ds.bucket_edges));
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    run.emit(cli.out.as_deref(), &buf)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let mut run = Run::new("train-predictor", cli.seed);
    let space = load_space(cli.space.as_deref(), &mut run)?;
    run.input(&args.dataset);
    let file = std::fs::File::open(&args.dataset).map_err(|e| CliError::Io(format!("{}: {e}", args.dataset.display())))?;
    let ds = Dataset::read_jsonl(BufReader::new(file)).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::Validation(format!("{}: {e}", args.dataset.display())),
        _ => CliError::Io(format!("{}: {e}", args.dataset.display())),
    })?;
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::Validation(format!("holdout must lie in [0, 1), got {}", args.holdout)));
    }
    let mut order: Vec<usize> = (0..ds.rows.len()).collect();
    order.shuffle(&mut rng_from_seed(cli.seed));
    let held = (ds.rows.len() as f64 * args.holdout).round() as usize;
    let (test_idx, train_idx) = order.split_at(held.min(ds.rows.len().saturating_sub(1)));
    let pick = |idx: &[usize]| Dataset {
        rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
        bucket_edges: Vec::new(),
    };
    let model = predictor::train(&pick(train_idx), &space, args.l2, cli.seed)?;
    if !test_idx.is_empty() {
        let test = pick(test_idx);
        let pred = test
            .rows
            .iter()
            .map(|r| predictor::predict(&model, &r.config, &space))
            .collect::<Result<Vec<_>, _>>()?;
        let truth: Vec<f64> = test.rows.iter().map(|r| r.score).collect();
        eprintln!(
            "held-out rank correlation {:.4} over {} rows (trained on {})",
            predictor::rank_correlation(&pred, &truth),
            test.rows.len(),
            model.rows
        );
    }
    run.emit(cli.out.as_deref(), &to_json(&model))
}

fn scorer(cli: &Cli, args: &ScorerArgs, space: &SupernetSpace, run: &mut Run) -> Result<Box<dyn ScorePredictor>, CliError> {
    match &args.model {
        Some(path) => {
            run.input(path);
            let model: PredictorModel = read_json(path)?;
            let expected = predictor::feature_len(space);
            if model.weights.len() != expected {
                return Err(CliError::Validation(format!(
                    "model has {} weights, space needs {expected}",
                    model.weights.len()
                )));
            }
            Ok(Box::new(model))
        }
        None => Ok(Box::new(SyntheticOracle {
            sigma: args.sigma,
            ..SyntheticOracle::new(cli.seed)
        })),
    }
}

fn params(cli: &Cli, evo: &EvoArgs) -> SearchParams {
    SearchParams {
        population: evo.population,
        generations: evo.generations,
        parent_fraction: evo.parent_fraction,
        mutation_prob: evo.mutation_prob,
        mutation_fraction: evo.mutation_fraction,
        seed: cli.seed,
        freeze_resolution: evo.freeze_resolution,
        ..SearchParams::default()
    }
}

fn search_cmd(cli: &Cli, args: &SearchArgs) -> Result<(), CliError> {
    let mut run = Run::new("search", cli.seed);
    let space = load_space(cli.space.as_deref(), &mut run)?;
    let predictor = scorer(cli, &args.scorer, &space, &mut run)?;
    let constraint = SearchConstraint {
        max_peak_items: args.max_peak,
        exclude_classifier: !args.include_classifier,
    };
    let result = search::search(&space, &constraint, predictor.as_ref(), &params(cli, &args.evo))?;
    eprintln!(
        "best score {:.6} at peak {} items after {} evaluations",
        result.best_score, result.best_peak_items, result.evaluations
    );
    run.emit(cli.out.as_deref(), &to_json(&result))
}

fn sweep_cmd(cli: &Cli, args: &SweepArgs) -> Result<(), CliError> {
    let mut run = Run::new("sweep", cli.seed);
    let space = load_space(cli.space.as_deref(), &mut run)?;
    let predictor = scorer(cli, &args.scorer, &space, &mut run)?;
    let points = search::sweep(&space, &args.constraints, predictor.as_ref(), &params(cli, &args.evo))?;
    for p in &points {
        match &p.outcome {
            Ok(r) => eprintln!("{:>9}  score {:.6}  peak {}", p.constraint_items, r.best_score, r.best_peak_items),
            Err(e) => eprintln!("{:>9}  {e}", p.constraint_items),
        }
    }
    let bytes = csv_bytes(|buf| search::write_sweep_csv(&points, buf))?;
    run.emit(cli.out.as_deref(), &bytes)
}

fn compare(cli: &Cli, args: &CompareArgs) -> Result<(), CliError> {
    let mut run = Run::new("compare", cli.seed);
    let space_a = load_space(cli.space.as_deref(), &mut run)?;
    let space_b = match &args.space_b {
        Some(p) => load_space(Some(p), &mut run)?,
        None => space_a.clone(),
    };
    let config_a = load_config(&args.a, &space_a, &mut run)?;
    let config_b = load_config(&args.b, &space_b, &mut run)?;
    let (pa, _) = profile_of(&config_a, &space_a, args.include_classifier)?;
    let (pb, _) = profile_of(&config_b, &space_b, args.include_classifier)?;

    for (name, config, space) in [("a", &config_a, &space_a), ("b", &config_b, &space_b)] {
        let block_peaks = space::resolve(config, space)?
            .block_peaks()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        eprintln!("{name}: block-peak coefficient of variation {:.4}", coefficient_of_variation(&block_peaks));
    }

    let ra: Vec<_> = pa.counted().map(|(_, r)| r).collect();
    let rb: Vec<_> = pb.counted().map(|(_, r)| r).collect();
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["index", "label_a", "total_items_a", "label_b", "total_items_b"])?;
        for i in 0..ra.len().max(rb.len()) {
            let cell = |r: Option<&&mbplan_core::LayerMemory>| match r {
                Some(r) => (r.label.clone(), r.total_items.to_string()),
                None => (String::new(), String::new()),
            };
            let (la, ta) = cell(ra.get(i));
            let (lb, tb) = cell(rb.get(i));
            w.write_record([i.to_string(), la, ta, lb, tb])?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.emit(cli.out.as_deref(), &bytes)
}
