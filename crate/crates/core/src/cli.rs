//! Command-line surface. Data goes to files or stdout, summaries to stderr.
//!
//! Exit status: 0 on success, 2 for input or validation errors, 3 for shape
//! errors. Errors are printed to stderr as `error[<kind>]: <message>`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::conditioning::{
    band_association, concat_features, condition_features, proposal_node_features, soft_mapping,
    AssociationPolicy, MappingPolicy, NodeFeatures, DEFAULT_D_PRIME, DEFAULT_SIGMA,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::files;
use crate::ingest::{load_coco, load_native, save_native, Corpus};
use crate::layout::ProposalBatch;
use crate::matrix::Matrix;
use crate::prior::{
    build_prior, build_prior_parallel, BandConfig, CoOccurrenceGraphSet, GRAPH_SCHEMA_VERSION,
};
use crate::render::render_svg;
use crate::rescore::{rescore_corpus, LogitsSidecar, RescoreConfig};
use crate::synth::{generate, soft_detections, GeneratorSpec};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (graph schema 1)");

#[derive(Debug, Parser)]
#[command(name = "layout-prior", version = VERSION, about = "Band co-occurrence priors for UI layout detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count per-band class co-occurrences and write the normalized graphs.
    BuildPrior(BuildPriorArgs),
    /// Condition proposal features on a graph file.
    Condition(ConditionArgs),
    /// Blend detection class distributions with the graph prior.
    Rescore(RescoreArgs),
    /// COCO-style detection metrics of detections against ground truth.
    Eval(EvalArgs),
    /// Sample clean and label-noised corpora from a generator spec.
    Synth(SynthArgs),
    /// Write the built-in two-band generator spec.
    DemoSpec(DemoSpecArgs),
    /// Draw one layout as SVG.
    Render(RenderArgs),
    /// Split a corpus by an id list or at random.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct CorpusInput {
    /// Corpus file (native JSON, or COCO images JSON with --coco-annotations).
    pub corpus: PathBuf,
    /// COCO annotations file; treats CORPUS as the COCO images file.
    #[arg(long)]
    pub coco_annotations: Option<PathBuf>,
}

impl CorpusInput {
    fn load(&self) -> Result<Corpus> {
        match &self.coco_annotations {
            Some(ann) => load_coco(&self.corpus, ann),
            None => load_native(&self.corpus),
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildPriorArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// Number of bands.
    #[arg(long, default_value_t = 10)]
    pub bands: usize,
    /// Band height as a fraction of the layout height; defaults to 1/bands.
    #[arg(long)]
    pub band_width: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also store the raw integer counts.
    #[arg(long)]
    pub raw: bool,
    /// Write a Graphviz rendering of the graphs.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Smallest edge weight drawn in the Graphviz output.
    #[arg(long, default_value_t = 0.05)]
    pub dot_threshold: f64,
    /// Accumulate counts with the rayon thread pool.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AssocArg {
    Gauss,
    Single,
    Equal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MapArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct AssocArgs {
    /// Proposal-to-band association policy.
    #[arg(long, value_enum, default_value_t = AssocArg::Gauss)]
    pub assoc: AssocArg,
    /// Gaussian spread over normalized displacement.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    /// Gaussian mean over normalized displacement.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
}

impl AssocArgs {
    fn policy(&self) -> Result<AssociationPolicy> {
        match self.assoc {
            AssocArg::Gauss => AssociationPolicy::gaussian(self.mu, self.sigma),
            AssocArg::Single => Ok(AssociationPolicy::Single),
            AssocArg::Equal => Ok(AssociationPolicy::Equal),
        }
    }
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    /// Proposal batch JSON.
    pub proposals: PathBuf,
    /// Graph file.
    pub graphs: PathBuf,
    /// Classifier-weight node features (MTX JSON, C x K); class-averaged
    /// proposal features are used when absent.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Embedding (MTX JSON, K x D'); a seeded random embedding when absent.
    #[arg(long)]
    pub embed: Option<PathBuf>,
    /// Width of the random embedding.
    #[arg(long, default_value_t = DEFAULT_D_PRIME)]
    pub d_prime: usize,
    /// Seed of the random embedding.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub assoc: AssocArgs,
    /// Category-to-proposal mapping.
    #[arg(long = "map", value_enum, default_value_t = MapArg::Soft)]
    pub mapping: MapArg,
    /// Prepend the original proposal features.
    #[arg(long)]
    pub concat: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    /// Detection corpus (native JSON).
    pub detections: PathBuf,
    /// Graph file.
    pub graphs: PathBuf,
    /// Blend strength in [0, 1]; 0 keeps the detector distribution.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Per-layout logits sidecar; distributions are built from labels and scores when absent.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[command(flatten)]
    pub assoc: AssocArgs,
    /// Floor for propagated probabilities.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the blended log-probabilities.
    #[arg(long)]
    pub out_logits: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection corpus (native JSON, scored components).
    pub detections: PathBuf,
    /// Ground-truth corpus (native JSON).
    pub ground_truth: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Row label in table output.
    #[arg(long, default_value = "detections")]
    pub label: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec JSON.
    pub spec: PathBuf,
    /// Number of layouts.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec noise rate.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out_clean: PathBuf,
    #[arg(long)]
    pub out_noisy: PathBuf,
    /// Also write soft detections derived from the noisy labels.
    #[arg(long, requires = "out_logits")]
    pub out_detections: Option<PathBuf>,
    /// Logits sidecar for the soft detections.
    #[arg(long, requires = "out_detections")]
    pub out_logits: Option<PathBuf>,
    /// Logit margin of the observed label.
    #[arg(long, default_value_t = 2.0)]
    pub logit_scale: f64,
    /// Standard deviation of Gaussian logit noise.
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
}

#[derive(Debug, Args)]
pub struct DemoSpecArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    pub layout_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// File with one layout id per line selecting the test part.
    #[arg(long, conflicts_with = "test_fraction")]
    pub ids: Option<PathBuf>,
    /// Random test fraction.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildPrior(a) => build_prior_cmd(a),
        Command::Condition(a) => condition_cmd(a),
        Command::Rescore(a) => rescore_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::DemoSpec(a) => GeneratorSpec::two_band_demo(a.seed).save(&a.out),
        Command::Render(a) => {
            let corpus = a.input.load()?;
            files::write_bytes(&a.out, render_svg(&corpus, &a.layout_id)?.as_bytes())
        }
        Command::Split(a) => split_cmd(a),
    }
}

/// Parses `args`, runs, and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                Error::Io { .. } => "io",
                Error::Parse(_) => "parse",
                Error::Invalid(_) => "invalid",
                Error::Shape { .. } => "shape",
            };
            eprintln!("error[{kind}]: {e}");
            e.exit_code()
        }
    }
}

fn build_prior_cmd(a: BuildPriorArgs) -> Result<()> {
    let corpus = a.input.load()?;
    let width = a.band_width.unwrap_or(1.0 / a.bands.max(1) as f64);
    let config = BandConfig::new(a.bands, width)?;
    let graphs = if a.parallel {
        build_prior_parallel(&corpus, &config, a.raw)?
    } else {
        build_prior(&corpus, &config, a.raw)?
    };
    graphs.save(&a.out)?;
    if let Some(dot) = &a.dot {
        files::write_bytes(dot, graphs.to_dot(a.dot_threshold).as_bytes())?;
    }
    eprintln!(
        "{} layouts, {} components, {} bands (schema {GRAPH_SCHEMA_VERSION})",
        corpus.len(),
        corpus.n_components(),
        graphs.n_graphs()
    );
    for (j, edges) in graphs.edge_counts().iter().enumerate() {
        eprintln!("band {j}: {edges} edges");
    }
    Ok(())
}

fn condition_cmd(a: ConditionArgs) -> Result<()> {
    let proposals = ProposalBatch::load(&a.proposals)?;
    let graphs = CoOccurrenceGraphSet::load(&a.graphs)?;
    if proposals.logits.cols() != graphs.n_classes() {
        return Err(Error::shape(
            "proposal logits vs graph classes",
            proposals.logits.shape(),
            (graphs.n_classes(), graphs.n_classes()),
        ));
    }
    let alpha = band_association(&proposals, &graphs.bands(), a.assoc.policy()?)?;
    let mapping = match a.mapping {
        MapArg::Soft => MappingPolicy::Soft,
        MapArg::Hard => MappingPolicy::Hard,
    };
    let s = soft_mapping(&proposals.logits, mapping);
    let nodes = match &a.nodes {
        Some(path) => NodeFeatures::classifier_weights(Matrix::load(path)?),
        None => {
            let features = proposals.features.as_ref().ok_or_else(|| {
                Error::Invalid("proposal features are required when --nodes is not given".into())
            })?;
            proposal_node_features(features, &s)?
        }
    };
    let embed = match &a.embed {
        Some(path) => Matrix::load(path)?,
        None => {
            let k = nodes.dim();
            let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
            Matrix::random_normal(
                k,
                a.d_prime,
                (2.0 / (k + a.d_prime) as f64).sqrt(),
                &mut rng,
            )
        }
    };
    let f_prime = condition_features(&s, &alpha, &graphs, &nodes, &embed)?;
    let out = if a.concat {
        let f = proposals
            .features
            .as_ref()
            .ok_or_else(|| Error::Invalid("--concat needs proposal features".into()))?;
        concat_features(f, &f_prime)?
    } else {
        f_prime
    };
    eprintln!(
        "conditioned {} proposals into {} columns",
        out.rows(),
        out.cols()
    );
    out.save(&a.out)
}

fn rescore_cmd(a: RescoreArgs) -> Result<()> {
    let config = RescoreConfig::new(a.lambda, a.assoc.policy()?, a.epsilon)?;
    let detections = load_native(&a.detections)?;
    let graphs = CoOccurrenceGraphSet::load(&a.graphs)?;
    let sidecar = a.logits.as_deref().map(LogitsSidecar::load).transpose()?;
    let (rescored, logits) = rescore_corpus(&detections, sidecar.as_ref(), &graphs, &config)?;
    let changed = detections
        .layouts
        .iter()
        .zip(&rescored.layouts)
        .flat_map(|(a, b)| a.components.iter().zip(&b.components))
        .filter(|(x, y)| x.class_id != y.class_id)
        .count();
    eprintln!(
        "rescored {} detections in {} layouts; {changed} labels changed",
        rescored.n_components(),
        rescored.len()
    );
    save_native(&rescored, &a.out)?;
    if let Some(path) = &a.out_logits {
        logits.save(path)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let dets = load_native(&a.detections)?;
    let gts = load_native(&a.ground_truth)?;
    let report = evaluate(&dets, &gts, &EvalConfig::default())?;
    let text = match a.format {
        ReportFormat::Table => report.to_table(&a.label),
        ReportFormat::Json => files::to_json_string(&report)?,
    };
    match &a.out {
        Some(path) => files::write_bytes(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut spec = GeneratorSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(noise) = a.noise {
        spec.noise = noise;
    }
    let (clean, noisy) = generate(&spec, a.n)?;
    save_native(&clean, &a.out_clean)?;
    save_native(&noisy, &a.out_noisy)?;
    if let (Some(dets_path), Some(logits_path)) = (&a.out_detections, &a.out_logits) {
        // Detection jitter uses its own seed so it does not track the layout streams.
        let (dets, logits) =
            soft_detections(&noisy, a.logit_scale, a.jitter, spec.seed.wrapping_add(1))?;
        save_native(&dets, dets_path)?;
        logits.save(logits_path)?;
    }
    eprintln!(
        "generated {} layouts with {} components (seed {}, noise {})",
        clean.len(),
        clean.n_components(),
        spec.seed,
        spec.noise
    );
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(files::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let corpus = a.input.load()?;
    let (test, train) = match (&a.ids, a.test_fraction) {
        (Some(path), _) => corpus.split_by_ids(&read_ids(path)?)?,
        (None, Some(fraction)) => {
            let (train, test) = corpus.split_random(fraction, a.seed)?;
            (test, train)
        }
        (None, None) => {
            return Err(Error::Invalid(
                "split needs --ids or --test-fraction".into(),
            ))
        }
    };
    save_native(&train, &a.out_train)?;
    save_native(&test, &a.out_test)?;
    eprintln!("train {} layouts, test {} layouts", train.len(), test.len());
    Ok(())
}
