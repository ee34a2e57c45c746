use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sfm_regkit::io::{
    read_descriptors, read_match_table, read_pgm, read_submission, rows_to_scenes, scene_to_rows,
    write_distance_matrix, write_submission,
};
use sfm_regkit::maa::{default_thresholds, merge_with_registration, normalized, MaaError};
use sfm_regkit::metrics::{MetricSource, NamedImage};
use sfm_regkit::ordering::{tsp_exact_path, tsp_heuristic_path, OrderingError, EXACT_MAX_NODES};
use sfm_regkit::pairs::exhaustive_pairs;
use sfm_regkit::{
    build_distance_matrix, build_similarity_graph, chain_order, maa, mst, propose_pairs, tsp_exact, tsp_heuristic,
    DistanceMatrix, MaaReport, MatchTable, Metric, MetricConfig, Scene, Tour,
};

const THREADS_ENV: &str = "SFM_REGKIT_THREADS";

const EXIT_PARSE: u8 = 2;
const EXIT_GEOMETRY: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "sfm-regkit",
    version,
    about = "Camera registration scoring, view ordering and pair selection"
)]
struct Cli {
    /// Seed for randomized solvers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the result here instead of stdout (for `score`, the JSON report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a predicted submission against ground truth.
    Score {
        pred: PathBuf,
        gt: PathBuf,
        /// Comma-separated, strictly ascending registration thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Rescale ground truth to unit RMS camera radius before scoring.
        #[arg(long)]
        normalize: bool,
    },
    /// Order images (a directory of PGM files) or a match table into a capture sequence.
    Order {
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        /// Defaults to exact up to 13 images, heuristic above.
        #[arg(long, value_enum)]
        solver: Option<Solver>,
        /// Solve for an open path instead of a cycle.
        #[arg(long)]
        path: bool,
    },
    /// Propose image pairs for matching.
    Pairs {
        descriptors: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PairMode::Threshold)]
        mode: PairMode,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        min_per_image: usize,
        /// Number of images for exhaustive mode without a descriptor file.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Align scene B onto scene A and merge B's extra cameras.
    Align {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Write the pairwise distance matrix as CSV.
    Metrics {
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Pixel,
    Ssim,
    Flow,
    Matches,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Pixel => Metric::Pixel,
            MetricArg::Ssim => Metric::Ssim,
            MetricArg::Flow => Metric::Flow,
            MetricArg::Matches => Metric::Matches,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Exact,
    Heuristic,
    Chain,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PairMode {
    Threshold,
    Mst,
    Exhaustive,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn parse_err(error: impl Into<anyhow::Error>) -> Failure {
    fail(EXIT_PARSE, error)
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    fail(EXIT_USAGE, anyhow!("{msg}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|()| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| fail(1, e))
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Score {
            pred,
            gt,
            thresholds,
            normalize,
        } => cmd_score(pred, gt, thresholds.as_deref(), *normalize, out),
        Command::Order {
            input,
            metric,
            solver,
            path,
        } => cmd_order(input, *metric, *solver, *path, cli.seed, out),
        Command::Pairs {
            descriptors,
            mode,
            threshold,
            min_per_image,
            count,
        } => cmd_pairs(descriptors.as_deref(), *mode, *threshold, *min_per_image, *count, out),
        Command::Align { a, b, threshold } => cmd_align(a, b, *threshold, out),
        Command::Metrics { input, metric } => cmd_metrics(input, *metric, out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| parse_err(anyhow!(e).context(format!("cannot read {}", path.display()))))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| fail(1, anyhow!(e).context(format!("cannot write {}", path.display()))))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let text = read_text(path)?;
    read_submission(&text)
        .and_then(|rows| rows_to_scenes(&rows))
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(parse_err)
}

#[derive(Serialize)]
struct SceneScore {
    dataset: String,
    scene: String,
    maa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<MaaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct DatasetScore {
    dataset: String,
    maa: f64,
    scenes: usize,
}

#[derive(Serialize)]
struct ScoreReport {
    thresholds: Vec<f64>,
    normalized: bool,
    scenes: Vec<SceneScore>,
    datasets: Vec<DatasetScore>,
    maa: f64,
}

fn cmd_score(pred: &Path, gt: &Path, thresholds: Option<&[f64]>, normalize: bool, out: Option<&Path>) -> Result<()> {
    let thresholds = thresholds.map_or_else(default_thresholds, <[f64]>::to_vec);
    if thresholds.is_empty() || thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(usage("thresholds must be positive and finite"));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("thresholds must be strictly ascending"));
    }
    let pred_scenes = load_scenes(pred)?;
    let gt_scenes = load_scenes(gt)?;
    let key = |s: &Scene| (s.dataset_id.clone(), s.scene_id.clone());
    let pred_by_key: BTreeMap<_, _> = pred_scenes.iter().map(|s| (key(s), s)).collect();
    let gt_by_key: BTreeMap<_, _> = gt_scenes.iter().map(|s| (key(s), s)).collect();
    if !gt_by_key.keys().any(|k| pred_by_key.contains_key(k)) {
        return Err(parse_err(anyhow!(
            "{} and {} share no (dataset, scene)",
            pred.display(),
            gt.display()
        )));
    }
    for k in pred_by_key.keys().filter(|k| !gt_by_key.contains_key(*k)) {
        log::warn!("scene {}/{} has no ground truth, ignored", k.0, k.1);
    }

    let mut scenes = Vec::with_capacity(gt_by_key.len());
    let mut failures = 0;
    for ((dataset, scene), g) in &gt_by_key {
        let gt_scene = if normalize { normalized(g) } else { (*g).clone() };
        let result = match pred_by_key.get(&(dataset.clone(), scene.clone())) {
            Some(p) => maa(p, &gt_scene, &thresholds),
            None => Err(MaaError::TooFewCameras { found: 0 }),
        };
        let entry = match result {
            Ok(report) => SceneScore {
                dataset: dataset.clone(),
                scene: scene.clone(),
                maa: report.maa,
                report: Some(report),
                error: None,
            },
            Err(MaaError::InvalidThresholds(msg)) => return Err(usage(msg)),
            Err(e) => {
                failures += 1;
                SceneScore {
                    dataset: dataset.clone(),
                    scene: scene.clone(),
                    maa: 0.0,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        scenes.push(entry);
    }
    if failures == scenes.len() {
        let msgs: Vec<_> = scenes
            .iter()
            .map(|s| format!("{}/{}: {}", s.dataset, s.scene, s.error.as_deref().unwrap_or("")))
            .collect();
        return Err(fail(
            EXIT_GEOMETRY,
            anyhow!("no scene could be scored ({})", msgs.join("; ")),
        ));
    }

    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &scenes {
        grouped.entry(&s.dataset).or_default().push(s.maa);
    }
    let datasets: Vec<_> = grouped
        .into_iter()
        .map(|(dataset, v)| DatasetScore {
            dataset: dataset.to_owned(),
            maa: v.iter().sum::<f64>() / v.len() as f64,
            scenes: v.len(),
        })
        .collect();
    let overall = datasets.iter().map(|d| d.maa).sum::<f64>() / datasets.len() as f64;
    let report = ScoreReport {
        thresholds,
        normalized: normalize,
        scenes,
        datasets,
        maa: overall,
    };

    print!("{}", render_score(&report));
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| fail(1, e))?;
        fs::write(path, json + "\n")
            .map_err(|e| fail(1, anyhow!(e).context(format!("cannot write {}", path.display()))))?;
    }
    Ok(())
}

fn render_score(r: &ScoreReport) -> String {
    let mut s = String::new();
    for sc in &r.scenes {
        match (&sc.report, &sc.error) {
            (Some(rep), _) => {
                let _ = writeln!(
                    s,
                    "{}/{}: maa {:.6} ({} cameras)",
                    sc.dataset, sc.scene, sc.maa, rep.n_cameras
                );
                for t in &rep.per_threshold {
                    let _ = writeln!(s, "  t={:<10.6} {}/{}", t.threshold, t.registered, rep.n_cameras);
                }
            }
            (None, err) => {
                let _ = writeln!(
                    s,
                    "{}/{}: maa 0.000000 (failed: {})",
                    sc.dataset,
                    sc.scene,
                    err.as_deref().unwrap_or("")
                );
            }
        }
    }
    for d in &r.datasets {
        let _ = writeln!(s, "dataset {}: maa {:.6} over {} scenes", d.dataset, d.maa, d.scenes);
    }
    let _ = writeln!(s, "overall: maa {:.6}", r.maa);
    s
}

enum Input {
    Images(Vec<NamedImage>),
    Matches(MatchTable),
}

fn load_input(path: &Path) -> Result<Input> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| parse_err(anyhow!(e).context(format!("cannot list {}", path.display()))))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(parse_err(anyhow!("no .pgm files in {}", path.display())));
        }
        let images = files
            .iter()
            .map(|f| {
                let bytes =
                    fs::read(f).map_err(|e| parse_err(anyhow!(e).context(format!("cannot read {}", f.display()))))?;
                let image = read_pgm(&bytes)
                    .with_context(|| format!("parsing {}", f.display()))
                    .map_err(parse_err)?;
                let id = f
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(NamedImage { id, image })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Input::Images(images))
    } else {
        let text = read_text(path)?;
        let table = read_match_table(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(parse_err)?;
        Ok(Input::Matches(table))
    }
}

fn distance_matrix(input: &Input, metric: Option<MetricArg>) -> Result<DistanceMatrix> {
    let cfg = MetricConfig::default();
    let (source, metric) = match (input, metric) {
        (Input::Images(images), m) => {
            let m = m.unwrap_or(MetricArg::Ssim);
            if m == MetricArg::Matches {
                return Err(usage("the matches metric needs a match table, not an image directory"));
            }
            (MetricSource::Images(images), m)
        }
        (Input::Matches(table), None | Some(MetricArg::Matches)) => (MetricSource::Matches(table), MetricArg::Matches),
        (Input::Matches(_), Some(_)) => return Err(usage("image metrics need a directory of PGM images")),
    };
    build_distance_matrix(source, metric.into(), &cfg).map_err(parse_err)
}

fn cmd_order(
    input: &Path,
    metric: Option<MetricArg>,
    solver: Option<Solver>,
    path: bool,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let data = load_input(input)?;
    let (tour, labels) = if solver == Some(Solver::Chain) {
        let Input::Matches(table) = &data else {
            return Err(usage("the chain solver needs a match table"));
        };
        if metric.is_some_and(|m| m != MetricArg::Matches) {
            return Err(usage("the chain solver works on match counts only"));
        }
        (chain_order(table, table.labels()), table.labels().to_vec())
    } else {
        let d = distance_matrix(&data, metric)?;
        let limit = if path { EXACT_MAX_NODES - 1 } else { EXACT_MAX_NODES };
        let exact = match solver {
            Some(Solver::Exact) => true,
            Some(_) => false,
            None => d.len() <= limit,
        };
        let tour = match (exact, path) {
            (true, false) => tsp_exact(&d),
            (true, true) => tsp_exact_path(&d),
            (false, false) => tsp_heuristic(&d, seed),
            (false, true) => tsp_heuristic_path(&d, seed),
        }
        .map_err(|e| match e {
            OrderingError::TooLarge { .. } => usage(e),
            OrderingError::Infeasible | OrderingError::Empty => fail(EXIT_SOLVER, e),
        })?;
        (tour, d.labels().to_vec())
    };
    emit(&render_tour(&tour, &labels), out)
}

fn render_tour(tour: &Tour, labels: &[String]) -> String {
    let kind = if tour.cyclic { "cycle" } else { "path" };
    let mut s = format!("# {kind} cost={}\n", tour.cost);
    for &i in &tour.order {
        s.push_str(&labels[i]);
        s.push('\n');
    }
    s
}

fn cmd_pairs(
    descriptors: Option<&Path>,
    mode: PairMode,
    threshold: f64,
    min_per_image: usize,
    count: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let Some(path) = descriptors else {
        return match (mode, count) {
            (PairMode::Exhaustive, Some(n)) => {
                let mut s = String::from("image_a,image_b\n");
                for (i, j) in exhaustive_pairs(n) {
                    let _ = writeln!(s, "{i},{j}");
                }
                emit(&s, out)
            }
            (PairMode::Exhaustive, None) => Err(usage("exhaustive mode needs a descriptor file or --count")),
            _ => Err(usage("this mode needs a descriptor file")),
        };
    };
    if count.is_some() {
        return Err(usage("--count only applies without a descriptor file"));
    }
    let text = read_text(path)?;
    let set = read_descriptors(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(parse_err)?;
    let g = build_similarity_graph(&set);
    let mut edges = match mode {
        PairMode::Threshold => propose_pairs(&g, threshold, min_per_image),
        PairMode::Mst => mst(&g).edges,
        PairMode::Exhaustive => g.edges.clone(),
    };
    if mode != PairMode::Threshold {
        edges.sort_by_key(|e| (e.i, e.j));
    }
    let labels = set.labels();
    let mut s = String::from("image_a,image_b,similarity\n");
    for e in edges {
        let _ = writeln!(s, "{},{},{}", labels[e.i], labels[e.j], e.similarity);
    }
    emit(&s, out)
}

fn single_scene(path: &Path) -> Result<Scene> {
    let mut scenes = load_scenes(path)?;
    if scenes.len() != 1 {
        return Err(parse_err(anyhow!(
            "{} holds {} scenes, expected exactly one",
            path.display(),
            scenes.len()
        )));
    }
    Ok(scenes.remove(0))
}

fn cmd_align(a: &Path, b: &Path, threshold: f64, out: Option<&Path>) -> Result<()> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    let base = single_scene(a)?;
    let other = single_scene(b)?;
    let (merged, reg) = merge_with_registration(&base, &other, threshold).map_err(|e| match e {
        MaaError::InvalidThresholds(_) => usage(e),
        _ => fail(EXIT_GEOMETRY, e),
    })?;
    let t = &reg.transform;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    println!("scale {}", t.scale());
    println!("rotation {}", join(&t.rotation().to_row_major()));
    println!("translation {}", join(t.translation().as_slice()));
    println!("registered {}/{}", reg.registered_count(), base.len());
    if let Some(path) = out {
        let text = write_submission(&scene_to_rows(&merged)).map_err(|e| fail(1, e))?;
        fs::write(path, text).map_err(|e| fail(1, anyhow!(e).context(format!("cannot write {}", path.display()))))?;
    }
    Ok(())
}

fn cmd_metrics(input: &Path, metric: Option<MetricArg>, out: Option<&Path>) -> Result<()> {
    let data = load_input(input)?;
    let d = distance_matrix(&data, metric)?;
    let text = write_distance_matrix(&d).map_err(|e| fail(1, e))?;
    emit(&text, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn thresholds_split_on_commas() {
        let cli = Cli::try_parse_from(["sfm-regkit", "score", "p.csv", "g.csv", "--thresholds", "0.1,0.2"]).unwrap();
        let Command::Score { thresholds, .. } = cli.command else {
            panic!()
        };
        assert_eq!(thresholds, Some(vec![0.1, 0.2]));
        assert_eq!(cli.seed, 0);
    }

    #[test]
    fn negative_pair_threshold_parses() {
        let cli = Cli::try_parse_from(["sfm-regkit", "pairs", "d.csv", "--threshold", "-1"]).unwrap();
        let Command::Pairs { threshold, .. } = cli.command else {
            panic!()
        };
        assert_eq!(threshold, -1.0);
    }

    #[test]
    fn tour_rendering() {
        let labels = ["a".to_owned(), "b".to_owned(), "c".to_owned()];
        let tour = Tour {
            order: vec![0, 2, 1],
            cyclic: true,
            cost: 1.5,
        };
        assert_eq!(render_tour(&tour, &labels), "# cycle cost=1.5\na\nc\nb\n");
    }
}
