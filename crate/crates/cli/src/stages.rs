//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from the data source and from earlier artifacts in the output directory,
//! and records what it read and wrote in a [`Ledger`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fips_core::data::{generate_synthetic_world, load_export_flows, write_export_flows, ActivationSet, DigitLevel};
use fips_core::embedding::{tsne_embed, FipsEmbedding};
use fips_core::metrics::{auc_roc, best_f1, evaluate_on_activations, EvaluationSet, MetricReport};
use fips_core::models::{
    explainer_complexity, explainer_complexity_curve, fit_logit, fitness_complexity, logit_cv_predict,
    mean_log_complexity, ComplexityCurve, ExplainerWeighting,
};
use fips_core::network::{collapse_multiedges, macro_category, pmfg, restore_directions, SectorImportanceMatrix};
use fips_core::pipeline::{activation_candidates, run_explainers, run_forecast, ExplainerMatrix, Window};
use fips_core::{CompetitivenessSeries, Error, ExportTensor};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    read_json, read_matrix, write_json, write_manifest, write_matrix, write_table, LabelledMatrix, Ledger,
};
use crate::config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: missing inputs, inconsistent artifacts.
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Forecast,
    Explainers,
    Embed,
    PredictFips,
    Logit,
    Evaluate,
    Complexity,
    Network,
    SweepNn,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Forecast => "forecast",
            Stage::Explainers => "explainers",
            Stage::Embed => "embed",
            Stage::PredictFips => "predict-fips",
            Stage::Logit => "logit",
            Stage::Evaluate => "evaluate",
            Stage::Complexity => "complexity",
            Stage::Network => "network",
            Stage::SweepNn => "sweep-nn",
        }
    }
}

/// Order of `all`.
pub const PIPELINE: [Stage; 9] = [
    Stage::Ingest,
    Stage::Forecast,
    Stage::Explainers,
    Stage::Embed,
    Stage::PredictFips,
    Stage::Logit,
    Stage::Evaluate,
    Stage::Complexity,
    Stage::Network,
];

/// Explicit inputs of `evaluate`.
#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub scores: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub activations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepArgs {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    ledger: Ledger,
}

/// Runs one stage and writes its manifest; errors carry the stage name.
pub fn run_stage(
    stage: Stage,
    cfg: &RunConfig,
    out: &Path,
    eval: &EvaluateArgs,
    sweep: SweepArgs,
) -> std::result::Result<PathBuf, (Stage, Failure)> {
    let started = Instant::now();
    let mut run = Run { cfg, out, ledger: Ledger::default() };
    let tag = |e| (stage, e);
    match stage {
        Stage::Synth => run.synth(),
        Stage::Ingest => run.ingest(),
        Stage::Forecast => run.forecast(),
        Stage::Explainers => run.explainers(),
        Stage::Embed => run.embed(),
        Stage::PredictFips => run.predict_fips(),
        Stage::Logit => run.logit(),
        Stage::Evaluate => run.evaluate(eval),
        Stage::Complexity => run.complexity(),
        Stage::Network => run.network(),
        Stage::SweepNn => run.sweep_nn(sweep),
    }
    .map_err(tag)?;
    let manifest = write_manifest(out, stage.name(), cfg, &run.ledger).map_err(|e| tag(e.into()))?;
    log::info!("{} finished in {:.2?}", stage.name(), started.elapsed());
    Ok(manifest)
}

/// Target and sector competitiveness over the configured window.
struct Data {
    targets: CompetitivenessSeries,
    features: CompetitivenessSeries,
    window: Window,
}

impl Data {
    fn truth(&self) -> Outcome<&Array2<u8>> {
        Ok(&self.targets.m(self.window.yf)?.entries)
    }

    /// Competitiveness in the last year a forecast may look at.
    fn last_seen(&self) -> Outcome<&Array2<u8>> {
        Ok(&self.targets.m(self.window.test_feature_year())?.entries)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingArtifact {
    products: Vec<String>,
    embedding: FipsEmbedding<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FipsReport {
    sigma: f64,
    /// Requested average nearest-neighbour count, when σ was tuned.
    target_avg_nn: Option<usize>,
    avg_nn: f64,
    exclude_self: bool,
}

#[derive(Debug, Serialize)]
struct Term {
    term: &'static str,
    estimate: f64,
    std_error: f64,
    z: f64,
}

#[derive(Debug, Serialize)]
struct LogitModelReport {
    model: &'static str,
    terms: Vec<Term>,
    log_likelihood: f64,
    pseudo_r2: f64,
    converged: bool,
    iterations: usize,
    /// Out-of-fold metrics on the activation rows.
    cv_auc_roc: f64,
    cv_best_f1: f64,
    cv_threshold: f64,
}

#[derive(Debug, Serialize)]
struct LogitReport {
    n_rows: usize,
    n_pos: usize,
    n_folds: usize,
    models: Vec<LogitModelReport>,
}

#[derive(Debug, Serialize)]
struct ComplexityEntry {
    code: String,
    /// Mean of the yearly log-complexities over the years the product was ranked.
    log_complexity: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TargetComplexity {
    code: String,
    log_complexity: Option<f64>,
    explainer_complexity: Option<f64>,
    explainer_complexity_weighted: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ComplexityReport {
    years: (i32, i32),
    features: Vec<ComplexityEntry>,
    targets: Vec<TargetComplexity>,
    /// Targets without a complexity in any year, left out of the curves.
    n_unranked_targets: usize,
    curves: Vec<ComplexityCurve<f64>>,
}

#[derive(Debug, Serialize)]
struct NetworkNode {
    code: String,
    category: &'static str,
}

fn missing(path: &Path, producer: &str) -> Failure {
    Failure::Usage(format!("missing input {}; run `fips {producer}` first", path.display()))
}

fn level_name(level: DigitLevel) -> &'static str {
    match level {
        DigitLevel::Two => "2-digit",
        DigitLevel::Six => "6-digit",
    }
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// An artifact of an earlier stage, recorded as an input.
    fn upstream(&mut self, name: &str, producer: &str) -> Outcome<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(missing(&p, producer));
        }
        self.ledger.input(&p);
        Ok(p)
    }

    fn exports(&mut self) -> Outcome<ExportTensor> {
        match &self.cfg.data.flows {
            Some(path) => {
                if !path.is_file() {
                    return Err(Failure::Usage(format!("missing flows file {}", path.display())));
                }
                self.ledger.input(path);
                Ok(load_export_flows(path, self.cfg.data.flows_level)?)
            }
            None => Ok(generate_synthetic_world(&self.cfg.world_params())?.exports),
        }
    }

    fn data(&mut self) -> Outcome<Data> {
        let raw = self.exports()?;
        let sectors = match raw.level() {
            DigitLevel::Six => raw.aggregate_to_sectors()?,
            DigitLevel::Two => raw.clone(),
        };
        let thr = self.cfg.data.rca_threshold;
        let features = sectors.competitiveness(thr)?;
        let targets = match self.cfg.forecast.target_level {
            DigitLevel::Two => features.clone(),
            DigitLevel::Six => raw.competitiveness(thr)?,
        };
        let window = self.cfg.forecast_config().window(&targets)?;
        for y in window.y0..=window.yf {
            targets.year_index(y)?;
        }
        Ok(Data { targets, features, window })
    }

    fn activations(&self, data: &Data) -> Outcome<ActivationSet> {
        Ok(activation_candidates(&data.targets, &self.cfg.forecast_config(), self.cfg.data.activation_threshold)?)
    }

    fn write_scores(&mut self, name: &str, data: &Data, scores: &Array2<f64>) -> Outcome {
        let p = self.path(name);
        write_matrix(&p, "country", &data.targets.countries, &data.targets.products, scores)?;
        self.ledger.output(&p);
        Ok(())
    }

    /// A score matrix from an earlier stage, checked against the data labels.
    fn read_scores(&mut self, name: &str, producer: &str, data: &Data) -> Outcome<Array2<f64>> {
        let p = self.upstream(name, producer)?;
        let m: LabelledMatrix<f64> = read_matrix(&p)?;
        if m.rows != data.targets.countries || m.cols != data.targets.products {
            return Err(Failure::Usage(format!("{} does not match the configured data", p.display())));
        }
        Ok(m.values)
    }

    fn read_explainers(&mut self, name: &str) -> Outcome<ExplainerMatrix<f64>> {
        let p = self.upstream(name, "explainers")?;
        Ok(read_json(&p)?)
    }

    fn synth(&mut self) -> Outcome {
        let w = generate_synthetic_world::<f64>(&self.cfg.world_params())?;
        let flows = self.path("flows.csv");
        write_export_flows(&w.exports, &flows)?;
        self.ledger.output(&flows);
        let world = self.path("world.json");
        write_json(&world, &w.world)?;
        self.ledger.output(&world);
        Ok(())
    }

    fn ingest(&mut self) -> Outcome {
        let data = self.data()?;
        let dir = self.path("m");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        for (series, kind) in [(&data.targets, "targets"), (&data.features, "sectors")] {
            for y in data.window.y0..=data.window.yf {
                let p = dir.join(format!("{kind}_{y}.csv"));
                write_matrix(&p, "country", &series.countries, &series.products, &series.m(y)?.entries)?;
                self.ledger.output(&p);
            }
        }
        let mask = self.activations(&data)?;
        let p = self.path("activations.csv");
        write_matrix(&p, "country", &data.targets.countries, &data.targets.products, &mask.mask.mapv(u8::from))?;
        self.ledger.output(&p);
        let p = self.path("truth.csv");
        write_matrix(&p, "country", &data.targets.countries, &data.targets.products, data.truth()?)?;
        self.ledger.output(&p);
        let rca = data.targets.rca(data.window.test_feature_year())?.values.clone();
        self.write_scores("rca_scores.csv", &data, &rca)?;
        log::info!(
            "{} countries, {} {} targets, {} sectors, window {}–{}, {} activation candidates",
            data.targets.countries.len(),
            data.targets.products.len(),
            level_name(self.cfg.forecast.target_level),
            data.features.products.len(),
            data.window.y0,
            data.window.yf,
            mask.len()
        );
        Ok(())
    }

    fn forecast(&mut self) -> Outcome {
        let data = self.data()?;
        let s = run_forecast(&data.features, &data.targets, &self.cfg.forecast_config())?;
        self.write_scores("rf_scores.csv", &data, &s.scores)
    }

    fn explainers(&mut self) -> Outcome {
        let data = self.data()?;
        let ex = run_explainers(&data.features, &data.targets, &self.cfg.forecast_config())?;
        self.write_explainers(&ex, "explainers")
    }

    fn write_explainers(&mut self, ex: &ExplainerMatrix<f64>, stem: &str) -> Outcome {
        let p = self.path(&format!("{stem}.json"));
        write_json(&p, ex)?;
        self.ledger.output(&p);
        let p = self.path(&format!("{stem}.csv"));
        write_matrix(&p, "target", &ex.targets, &ex.features, &ex.matrix())?;
        self.ledger.output(&p);
        let kept: usize = ex.rows.iter().map(|r| r.n_validated()).sum();
        log::info!("{kept} validated explainers over {} targets", ex.targets.len());
        Ok(())
    }

    fn embed(&mut self) -> Outcome {
        let ex = self.read_explainers("explainers.json")?;
        let embedding = tsne_embed(ex.matrix().view(), &self.cfg.tsne, self.cfg.seeds().tsne)?;
        log::info!("t-SNE KL divergence {:.4}", embedding.kl_divergence);
        let p = self.path("embedding.csv");
        let rows = ex.targets.iter().zip(embedding.coords.rows()).map(|(code, xy)| {
            [code.clone(), xy[0].to_string(), xy[1].to_string(), macro_category(code).to_string()]
        });
        write_table(&p, &["product", "x", "y", "category"], rows)?;
        self.ledger.output(&p);
        let p = self.path("embedding.json");
        write_json(&p, &EmbeddingArtifact { products: ex.targets, embedding })?;
        self.ledger.output(&p);
        Ok(())
    }

    fn read_embedding(&mut self, data: &Data) -> Outcome<FipsEmbedding<f64>> {
        let p = self.upstream("embedding.json", "embed")?;
        let a: EmbeddingArtifact = read_json(&p)?;
        if a.products != data.targets.products {
            return Err(Failure::Usage(format!("{} does not match the configured targets", p.display())));
        }
        Ok(a.embedding)
    }

    fn predict_fips(&mut self) -> Outcome {
        let data = self.data()?;
        let emb = self.read_embedding(&data)?;
        let fips = &self.cfg.fips;
        let (sigma, target) = match fips.sigma {
            Some(s) => (s, None),
            None => {
                let nn = fips.avg_nn_for(data.targets.products.len());
                (emb.tune_sigma(nn)?, Some(nn))
            }
        };
        let scores = emb.predict(sigma, data.last_seen()?.view(), fips.exclude_self)?;
        self.write_scores("fips_scores.csv", &data, &scores)?;
        let report = FipsReport {
            sigma,
            target_avg_nn: target,
            avg_nn: emb.avg_nearest_neighbors(sigma),
            exclude_self: fips.exclude_self,
        };
        log::info!("σ = {sigma:.4}, average nearest neighbours {:.2}", report.avg_nn);
        let p = self.path("fips.json");
        write_json(&p, &report)?;
        self.ledger.output(&p);
        Ok(())
    }

    fn logit(&mut self) -> Outcome {
        let data = self.data()?;
        let fips = self.read_scores("fips_scores.csv", "predict-fips", &data)?;
        let mask = self.activations(&data)?;
        let rca = &data.targets.rca(data.window.test_feature_year())?.values;
        let truth = data.truth()?;
        let pairs: Vec<(usize, usize)> = mask.pairs().collect();
        let y: Vec<u8> = pairs.iter().map(|&ix| truth[ix]).collect();
        let both = Array2::from_shape_fn((pairs.len(), 2), |(i, j)| if j == 0 { rca[pairs[i]] } else { fips[pairs[i]] });
        let lc = &self.cfg.logit;
        let seed = self.cfg.seeds().logit;
        let mut models = Vec::new();
        let mut combined = Array2::zeros(truth.dim());
        for (model, cols, names) in [
            ("rca+fips", vec![0, 1], vec!["rca", "fips"]),
            ("rca", vec![0], vec!["rca"]),
            ("fips", vec![1], vec!["fips"]),
        ] {
            let x = both.select(Axis(1), &cols);
            let fit = fit_logit(x.view(), &y, &lc.fit)?;
            if !fit.converged {
                log::warn!("logit {model} stopped after {} iterations without converging", fit.iterations);
            }
            let cv = logit_cv_predict(x.view(), &y, lc.n_folds, &lc.fit, seed)?;
            let ev = EvaluationSet::new(cv.clone(), y.clone())?;
            let (f1, threshold) = best_f1(&ev)?;
            let z = fit.z_scores();
            let terms = std::iter::once("intercept")
                .chain(names)
                .enumerate()
                .map(|(k, term)| Term { term, estimate: fit.coefficients[k], std_error: fit.std_errors[k], z: z[k] })
                .collect();
            if model == "rca+fips" {
                for (&ix, &v) in pairs.iter().zip(&cv) {
                    combined[ix] = v;
                }
            }
            models.push(LogitModelReport {
                model,
                terms,
                log_likelihood: fit.log_likelihood,
                pseudo_r2: fit.pseudo_r2,
                converged: fit.converged,
                iterations: fit.iterations,
                cv_auc_roc: auc_roc(&ev)?,
                cv_best_f1: f1,
                cv_threshold: threshold,
            });
        }
        let report = LogitReport { n_rows: y.len(), n_pos: y.iter().filter(|&&v| v == 1).count(), n_folds: lc.n_folds, models };
        let p = self.path("logit.json");
        write_json(&p, &report)?;
        self.ledger.output(&p);
        self.write_scores("logit_scores.csv", &data, &combined)
    }

    fn evaluate(&mut self, args: &EvaluateArgs) -> Outcome {
        let k = self.cfg.metrics.k;
        let mut reports: Vec<(String, Vec<MetricReport>)> = Vec::new();
        match (&args.scores, &args.truth, &args.activations) {
            (Some(s), Some(t), Some(a)) => {
                for p in [s, t, a] {
                    if !p.is_file() {
                        return Err(Failure::Usage(format!("missing input {}", p.display())));
                    }
                    self.ledger.input(p);
                }
                let scores: LabelledMatrix<f64> = read_matrix(s)?;
                let truth: LabelledMatrix<u8> = read_matrix(t)?;
                let act: LabelledMatrix<u8> = read_matrix(a)?;
                for other in [(&truth.rows, &truth.cols), (&act.rows, &act.cols)] {
                    if (&scores.rows, &scores.cols) != other {
                        return Err(Failure::Usage("scores, truth and activations are labelled differently".into()));
                    }
                }
                if act.values.iter().any(|&v| v > 1) {
                    return Err(Error::Format(format!("{}: activations must be 0/1", a.display())).into());
                }
                let mask = ActivationSet { mask: act.values.mapv(|v| v == 1), training_window: (0, 0), target_year: 0 };
                let name = s.file_stem().map_or("scores".into(), |n| n.to_string_lossy().into_owned());
                reports.push((name, evaluate_on_activations(scores.values.view(), truth.values.view(), &mask, k)?));
            }
            (None, None, None) => {
                let data = self.data()?;
                let mask = self.activations(&data)?;
                let truth = data.truth()?;
                let rca = &data.targets.rca(data.window.test_feature_year())?.values;
                reports.push(("rca".into(), evaluate_on_activations(rca.view(), truth.view(), &mask, k)?));
                let mut found = false;
                for (name, file) in [("rf", "rf_scores.csv"), ("fips", "fips_scores.csv"), ("logit", "logit_scores.csv")] {
                    if self.path(file).is_file() {
                        let s = self.read_scores(file, "", &data)?;
                        reports.push((name.into(), evaluate_on_activations(s.view(), truth.view(), &mask, k)?));
                        found = true;
                    }
                }
                if !found {
                    log::warn!("no score files in {}; only the RCA baseline was evaluated", self.out.display());
                }
            }
            _ => return Err(Failure::Usage("--scores, --truth and --activations go together".into())),
        }
        for (name, r) in &reports {
            for m in r {
                log::info!("{name}: {} = {:.4}", m.metric, m.value);
            }
        }
        let doc: serde_json::Map<String, serde_json::Value> = reports
            .into_iter()
            .map(|(n, r)| Ok((n, serde_json::to_value(r)?)))
            .collect::<Result<_, serde_json::Error>>()
            .map_err(Error::from)?;
        let p = self.path("evaluation.json");
        write_json(&p, &doc)?;
        self.ledger.output(&p);
        Ok(())
    }

    fn complexity(&mut self) -> Outcome {
        let data = self.data()?;
        let ex = self.read_explainers("explainers.json")?;
        if ex.targets != data.targets.products || ex.features != data.features.products {
            return Err(Failure::Usage("explainers.json does not match the configured data".into()));
        }
        let years = (data.window.y0, data.window.yf);
        let feature_c = self.log_complexity(&data.features, years)?;
        let target_c = self.log_complexity(&data.targets, years)?;

        let m = ex.matrix();
        // a sector never ranked never exports, so it cannot be an explainer
        let mut fc = Vec::with_capacity(feature_c.len());
        for (j, c) in feature_c.iter().enumerate() {
            match c {
                Some(v) => fc.push(*v),
                None if m.column(j).iter().all(|&v| v == 0.0) => fc.push(0.0),
                None => return Err(Error::Data(format!("explainer {} has no complexity", ex.features[j])).into()),
            }
        }
        let ranked: Vec<usize> = (0..target_c.len()).filter(|&i| target_c[i].is_some()).collect();
        let sub = m.select(Axis(0), &ranked);
        let tc: Vec<f64> = ranked.iter().map(|&i| target_c[i].expect("ranked")).collect();
        let n_explained = sub.rows().into_iter().filter(|r| r.iter().any(|&v| v > 0.0)).count();
        let curves = if n_explained == 0 {
            log::warn!("no ranked target has a validated explainer; the curves are empty");
            Vec::new()
        } else {
            let n_bins = self.cfg.n_bins().min(n_explained);
            [ExplainerWeighting::Uniform, ExplainerWeighting::Importance]
                .into_iter()
                .map(|w| explainer_complexity_curve(sub.view(), &fc, &tc, n_bins, w))
                .collect::<Result<Vec<_>, _>>()?
        };
        let uniform = explainer_complexity(m.view(), &fc, ExplainerWeighting::Uniform)?;
        let weighted = explainer_complexity(m.view(), &fc, ExplainerWeighting::Importance)?;

        let report = ComplexityReport {
            years,
            features: ex
                .features
                .iter()
                .zip(&feature_c)
                .map(|(code, &c)| ComplexityEntry { code: code.clone(), log_complexity: c })
                .collect(),
            targets: (0..ex.targets.len())
                .map(|i| TargetComplexity {
                    code: ex.targets[i].clone(),
                    log_complexity: target_c[i],
                    explainer_complexity: uniform[i],
                    explainer_complexity_weighted: weighted[i],
                })
                .collect(),
            n_unranked_targets: target_c.len() - ranked.len(),
            curves,
        };
        let p = self.path("complexity.json");
        write_json(&p, &report)?;
        self.ledger.output(&p);

        let p = self.path("complexity_curve.csv");
        let rows = report.curves.iter().flat_map(|c| {
            let name = match c.weighting {
                ExplainerWeighting::Uniform => "uniform",
                ExplainerWeighting::Importance => "importance",
            };
            c.bins.iter().map(move |b| {
                [name.to_string(), b.center.to_string(), b.mean.to_string(), b.se.to_string(), b.n.to_string()]
            })
        });
        write_table(&p, &["weighting", "center", "mean", "se", "n"], rows)?;
        self.ledger.output(&p);
        Ok(())
    }

    /// Per product, the mean log-complexity over the years it was ranked.
    fn log_complexity(&self, s: &CompetitivenessSeries, (y0, yf): (i32, i32)) -> Outcome<Vec<Option<f64>>> {
        let n = s.products.len();
        let mut yearly: Vec<Vec<Option<f64>>> = Vec::new();
        for y in y0..=yf {
            let fc = fitness_complexity::<f64>(s.m(y)?.entries.view(), &self.cfg.complexity.fitness)?;
            if !fc.converged {
                log::warn!("fitness-complexity for {y} stopped after {} iterations", fc.iterations);
            }
            yearly.push(fc.complexity_by_product(n));
        }
        (0..n)
            .map(|p| {
                let series: Vec<Vec<f64>> = yearly.iter().filter_map(|q| q[p]).map(|q| vec![q]).collect();
                if series.is_empty() {
                    Ok(None)
                } else {
                    Ok(Some(mean_log_complexity(&series)?[0]))
                }
            })
            .collect()
    }

    fn network(&mut self) -> Outcome {
        // sector → sector explainers: reuse the main run when it is at that level
        let ex = match self.cfg.forecast.target_level {
            DigitLevel::Two => self.read_explainers("explainers.json")?,
            DigitLevel::Six => {
                let data = self.data()?;
                let mut cfg = self.cfg.forecast_config();
                cfg.target_level = DigitLevel::Two;
                let ex = run_explainers(&data.features, &data.features, &cfg)?;
                self.write_explainers(&ex, "sector_explainers")?;
                ex
            }
        };
        let f = SectorImportanceMatrix::from_explainers(&ex)?;
        let p = self.path("sector_importance.csv");
        write_matrix(&p, "sector", &f.sectors, &f.sectors, &f.f)?;
        self.ledger.output(&p);
        let filtered = pmfg(&collapse_multiedges(&f))?;
        let edges = restore_directions(&filtered, &f)?;
        log::info!("PMFG kept {} edges, rejected {}", filtered.edges.len(), filtered.n_rejected);

        let p = self.path("network_edges.csv");
        let rows = edges.iter().map(|e| {
            let dir = if e.bidirectional { "both" } else { "forward" };
            [f.sectors[e.source].clone(), f.sectors[e.target].clone(), e.weight.to_string(), dir.to_string()]
        });
        write_table(&p, &["source", "target", "weight", "direction"], rows)?;
        self.ledger.output(&p);
        let nodes: Vec<NetworkNode> =
            f.sectors.iter().map(|s| NetworkNode { code: s.clone(), category: macro_category(s) }).collect();
        let p = self.path("network_nodes.json");
        write_json(&p, &nodes)?;
        self.ledger.output(&p);
        Ok(())
    }

    fn sweep_nn(&mut self, args: SweepArgs) -> Outcome {
        if args.min == 0 || args.step == 0 || args.min > args.max {
            return Err(Error::Parameter("sweep needs 1 ≤ min ≤ max and step ≥ 1".into()).into());
        }
        let data = self.data()?;
        let emb = self.read_embedding(&data)?;
        let mask = self.activations(&data)?;
        let truth = data.truth()?;
        let m = data.last_seen()?;
        let n = data.targets.products.len();
        let k = self.cfg.metrics.k;
        let p = self.path("sweep_nn.csv");
        let mut rows: Vec<[String; 6]> = Vec::new();
        for nn in (args.min..=args.max.min(n - 1)).step_by(args.step) {
            let sigma = match emb.tune_sigma(nn) {
                Ok(s) => s,
                Err(e @ Error::Search(_)) => {
                    log::warn!("avg_nn {nn} skipped: {e}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let scores = emb.predict(sigma, m.view(), self.cfg.fips.exclude_self)?;
            let r = evaluate_on_activations(scores.view(), truth.view(), &mask, k)?;
            rows.push([
                nn.to_string(),
                sigma.to_string(),
                emb.avg_nearest_neighbors(sigma).to_string(),
                r[1].value.to_string(),
                r[2].value.to_string(),
                r[0].value.to_string(),
            ]);
        }
        let pk = format!("mean_precision_at_{k}");
        write_table(&p, &["avg_nn", "sigma", "realized_avg_nn", "best_f1", &pk, "auc_roc"], rows)?;
        self.ledger.output(&p);
        Ok(())
    }
}
