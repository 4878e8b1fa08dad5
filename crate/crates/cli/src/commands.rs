//! The five subcommands as library functions.

use std::fmt::Write as _;
use std::path::Path;

use reptile_core::data::{
    generate_dataset, holdout_speakers, kfold_by_speaker, size_sweep, GeneratorConfig,
};
use reptile_core::gradcheck::{finite_diff_report, Objective};
use reptile_core::model::{encode, init_params, BatchObjective, Utterance};
use reptile_core::stats::{format_sig, mean, median, paired_t_test, std_dev, PairedSample};
use reptile_core::tape::ComputeTape;
use reptile_core::{Error, GradientSet, ParameterSet, Tensor};
use serde::Serialize;

use crate::config::{validate_fractions, ExperimentConfig, Method};
use crate::error::{CliError, CliResult};
use crate::runner::{run_many, run_one, write_json, write_text, RunSummary, Splits};

/// Relative-error threshold for a passing gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central-difference step used by `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Utterances per gradient-check batch.
pub const GRADCHECK_BATCH: usize = 2;

/// Fits `config.method` once with seed `config.seed`.
pub fn cmd_train(config: &ExperimentConfig, out: Option<&Path>) -> CliResult<RunSummary> {
    config.validate()?;
    let splits = Splits::prepare(config)?;
    let run = run_one(
        config,
        config.method,
        config.seed,
        &splits.train,
        &splits.val,
        &splits.test,
        out,
    )?;
    Ok(run.summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub mean_test_acc: f64,
    pub sd_test_acc: f64,
    /// Median validation-curve smoothness over the runs that have one.
    pub median_smoothness: Option<f64>,
    /// One summary per seed, in seed order.
    pub runs: Vec<RunSummary>,
}

impl MethodResult {
    fn new(method: Method, runs: Vec<RunSummary>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let smoothness: Vec<f64> = runs.iter().filter_map(|r| r.val_smoothness).collect();
        MethodResult {
            method,
            mean_test_acc: mean(&accs),
            sd_test_acc: if accs.len() > 1 { std_dev(&accs) } else { 0.0 },
            median_smoothness: (!smoothness.is_empty()).then(|| median(&smoothness)),
            runs,
        }
    }

    pub fn test_accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_acc).collect()
    }
}

/// Paired t-test of `second − first` over per-seed test accuracies.
#[derive(Debug, Clone, Serialize)]
pub struct PairedTest {
    pub first: Method,
    pub second: Method,
    pub n: usize,
    pub mean_diff: f64,
    pub t: Option<f64>,
    pub df: Option<usize>,
    pub p: Option<f64>,
    /// Why no statistic was computed.
    pub note: Option<String>,
}

impl PairedTest {
    fn compute(first: &MethodResult, second: &MethodResult) -> CliResult<Self> {
        let a = second.test_accuracies();
        let b = first.test_accuracies();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut test = PairedTest {
            first: first.method,
            second: second.method,
            n: a.len(),
            mean_diff: mean(&diffs),
            t: None,
            df: None,
            p: None,
            note: None,
        };
        if a.len() < 2 {
            test.note = Some("n/a (needs at least 2 runs)".into());
            return Ok(test);
        }
        match paired_t_test(&PairedSample::new(a, b)?) {
            Ok(r) => {
                test.t = Some(r.t);
                test.df = Some(r.df);
                test.p = Some(r.p);
            }
            Err(Error::DegenerateSample(_)) => test.note = Some("n/a (zero variance)".into()),
            Err(e) => return Err(e.into()),
        }
        Ok(test)
    }

    /// `n,t,df,p`, or the reason the test was not computed.
    pub fn line(&self) -> String {
        match (self.t, self.df, self.p) {
            (Some(t), Some(df), Some(p)) => {
                format!(
                    "{},{},{},{}",
                    self.n,
                    format_sig(t, 6),
                    df,
                    format_sig(p, 6)
                )
            }
            _ => self.note.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodResult>,
    /// Every later method against the first one.
    pub tests: Vec<PairedTest>,
}

impl CompareReport {
    fn new(seeds: Vec<u64>, methods: Vec<MethodResult>) -> CliResult<Self> {
        let tests = methods
            .iter()
            .skip(1)
            .map(|m| PairedTest::compute(&methods[0], m))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(CompareReport {
            seeds,
            methods,
            tests,
        })
    }

    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Mean test accuracy of `second` minus that of `first`.
    pub fn gap(&self, first: Method, second: Method) -> Option<f64> {
        Some(self.method(second)?.mean_test_acc - self.method(first)?.mean_test_acc)
    }

    /// One row per seed: the seed and each method's test accuracy.
    pub fn paired_rows(&self) -> Vec<(u64, Vec<f64>)> {
        self.seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| {
                (
                    seed,
                    self.methods.iter().map(|m| m.runs[i].test_acc).collect(),
                )
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<10} {:>5} {:>14} {:>10} {:>18}",
            "method", "runs", "mean_test_acc", "sd", "median_smoothness"
        )
        .unwrap();
        for m in &self.methods {
            let smoothness = m
                .median_smoothness
                .map_or_else(|| "n/a".to_string(), |v| format_sig(v, 6));
            writeln!(
                s,
                "{:<10} {:>5} {:>14} {:>10} {:>18}",
                m.method.name(),
                m.runs.len(),
                format_sig(m.mean_test_acc, 6),
                format_sig(m.sd_test_acc, 6),
                smoothness
            )
            .unwrap();
        }
        s.push('\n');
        let header: Vec<&str> = self.methods.iter().map(|m| m.method.name()).collect();
        writeln!(s, "seed,{}", header.join(",")).unwrap();
        for (seed, accs) in self.paired_rows() {
            let cells: Vec<String> = accs.iter().map(|a| format_sig(*a, 6)).collect();
            writeln!(s, "{seed},{}", cells.join(",")).unwrap();
        }
        for t in &self.tests {
            writeln!(s, "\npaired t-test: {} - {}", t.second, t.first).unwrap();
            writeln!(s, "n,t,df,p").unwrap();
            writeln!(s, "{}", t.line()).unwrap();
        }
        s
    }
}

fn compare_on(
    config: &ExperimentConfig,
    splits: &Splits,
    methods: &[Method],
    seeds: &[u64],
    out: Option<&Path>,
) -> CliResult<CompareReport> {
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs_dir = out.map(|d| d.join("runs"));
    let mut results = run_many(config, &jobs, splits, runs_dir.as_deref())?.into_iter();
    let per_method = methods
        .iter()
        .map(|&m| {
            let runs = results
                .by_ref()
                .take(seeds.len())
                .map(|r| r.summary)
                .collect();
            MethodResult::new(m, runs)
        })
        .collect();
    let report = CompareReport::new(seeds.to_vec(), per_method)?;
    if let Some(dir) = out {
        write_text(&dir.join("compare.txt"), &report.to_text())?;
        write_json(&dir.join("compare.json"), &report)?;
    }
    Ok(report)
}

/// Runs each method over the same seeds on identical data and reports
/// accuracies and paired t-tests against the first method.
pub fn cmd_compare(
    config: &ExperimentConfig,
    methods: &[Method],
    runs: usize,
    out: Option<&Path>,
) -> CliResult<CompareReport> {
    config.validate()?;
    if methods.is_empty() {
        return Err(CliError::Config("no methods to compare".into()));
    }
    if runs == 0 {
        return Err(CliError::Config("runs must be ≥ 1".into()));
    }
    let splits = Splits::prepare(config)?;
    compare_on(config, &splits, methods, &config.seeds(runs), out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub train_speakers: usize,
    pub train_utterances: usize,
    pub report: CompareReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// `fraction,method,seed,test_acc` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,method,seed,test_acc\n");
        for p in &self.points {
            for m in &p.report.methods {
                for r in &m.runs {
                    writeln!(
                        s,
                        "{},{},{},{}",
                        p.fraction,
                        m.method,
                        r.seed,
                        format_sig(r.test_acc, 6)
                    )
                    .unwrap();
                }
            }
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.points
            .iter()
            .map(|p| p.report.methods.iter().map(|m| m.runs.len()).sum::<usize>())
            .sum()
    }

    /// Mean accuracy gap `second − first` at each fraction.
    pub fn gaps(&self, first: Method, second: Method) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| Some((p.fraction, p.report.gap(first, second)?)))
            .collect()
    }
}

/// Repeats the comparison on nested training subsets obtained by removing
/// whole speakers; validation and test speakers are unchanged.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    fractions: &[f64],
    methods: &[Method],
    runs: usize,
    out: Option<&Path>,
) -> CliResult<SweepReport> {
    config.validate()?;
    validate_fractions(fractions)?;
    if methods.is_empty() || runs == 0 {
        return Err(CliError::Config(
            "sweep needs at least one method and one run".into(),
        ));
    }
    let full = Splits::prepare(config)?;
    let subsets = size_sweep(&full.train, fractions, config.sweep.seed)?;
    let seeds = config.seeds(runs);
    let mut points = Vec::with_capacity(fractions.len());
    for (&fraction, train) in fractions.iter().zip(subsets) {
        let splits = Splits {
            train,
            val: full.val.clone(),
            test: full.test.clone(),
        };
        let dir = out.map(|d| d.join(format!("fraction_{fraction}")));
        let report = compare_on(config, &splits, methods, &seeds, dir.as_deref())?;
        points.push(SweepPoint {
            fraction,
            train_speakers: splits.train.speakers().len(),
            train_utterances: splits.train.len(),
            report,
        });
    }
    let report = SweepReport { points };
    if let Some(dir) = out {
        write_text(&dir.join("sweep.csv"), &report.to_csv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out_speakers: Vec<u32>,
    pub mean_test_acc: f64,
    /// One summary per repeat.
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub method: Method,
    pub folds: Vec<FoldResult>,
    /// Mean of the fold means.
    pub mean_test_acc: f64,
}

impl CvReport {
    pub fn runs(&self) -> impl Iterator<Item = &RunSummary> {
        self.folds.iter().flat_map(|f| f.runs.iter())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("fold,held_out_speakers,mean_test_acc\n");
        for f in &self.folds {
            let speakers: Vec<String> = f.held_out_speakers.iter().map(u32::to_string).collect();
            writeln!(
                s,
                "{},{},{}",
                f.fold,
                speakers.join(" "),
                format_sig(f.mean_test_acc, 6)
            )
            .unwrap();
        }
        writeln!(s, "mean,,{}", format_sig(self.mean_test_acc, 6)).unwrap();
        s
    }
}

/// Speaker-grouped k-fold cross-validation: each fold is held out once as the
/// test set, the remaining speakers are split again for early stopping, and
/// every fold is trained `cv.repeats` times with consecutive seeds.
pub fn cmd_cv(
    config: &ExperimentConfig,
    method: Method,
    folds: usize,
    out: Option<&Path>,
) -> CliResult<CvReport> {
    config.validate()?;
    if folds < 2 {
        return Err(CliError::Config("cv needs at least 2 folds".into()));
    }
    let data = generate_dataset(&config.generator())?;
    let seeds = config.seeds(config.cv.repeats);
    let mut results = Vec::with_capacity(folds);
    for (fold, (rest, held_out)) in kfold_by_speaker(&data, folds)?.into_iter().enumerate() {
        let (train, val) = holdout_speakers(&rest, config.cv.val_fraction, config.split.seed)?;
        let splits = Splits {
            train,
            val,
            test: held_out,
        };
        let jobs: Vec<(Method, u64)> = seeds.iter().map(|&s| (method, s)).collect();
        let dir = out.map(|d| d.join(format!("fold{fold}")));
        let runs: Vec<RunSummary> = run_many(config, &jobs, &splits, dir.as_deref())?
            .into_iter()
            .map(|r| r.summary)
            .collect();
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        results.push(FoldResult {
            fold,
            held_out_speakers: splits.test.speakers().iter().map(|s| s.0).collect(),
            mean_test_acc: mean(&accs),
            runs,
        });
    }
    let fold_means: Vec<f64> = results.iter().map(|f| f.mean_test_acc).collect();
    let report = CvReport {
        method,
        mean_test_acc: mean(&fold_means),
        folds: results,
    };
    if let Some(dir) = out {
        write_text(&dir.join("cv.csv"), &report.to_text())?;
        write_json(&dir.join("cv.json"), &report)?;
    }
    Ok(report)
}

/// Which graph `gradcheck` differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradcheckPath {
    /// Stacked GRU, max-pool and decoder.
    #[default]
    Full,
    /// Decoder only, on fixed embeddings.
    DecoderOnly,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckOptions {
    pub path: GradcheckPath,
    /// Adds a constant to one analytic gradient tensor. Exists so tests can
    /// confirm that a broken backward pass is caught.
    pub corrupt_adjoint: bool,
}

/// Result for one seeded model instance.
#[derive(Debug, Clone, Serialize)]
pub struct SeedCheck {
    pub seed: u64,
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst coordinate.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub per_seed: Vec<SeedCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("seed,max_rel_error,worst,analytic,numeric\n");
        for c in &self.per_seed {
            writeln!(
                s,
                "{},{},{},{},{}",
                c.seed,
                format_sig(c.max_rel_error, 6),
                c.worst,
                format_sig(c.analytic, 6),
                format_sig(c.numeric, 6)
            )
            .unwrap();
        }
        writeln!(
            s,
            "max,{} ({} tolerance {})",
            format_sig(self.max_rel_error, 6),
            if self.passed { "within" } else { "exceeds" },
            format_sig(self.tolerance, 6)
        )
        .unwrap();
        s
    }
}

/// A few utterances from one fresh speaker of the configured benchmark.
fn gradcheck_batch(generator: &GeneratorConfig, seed: u64) -> CliResult<Vec<Utterance>> {
    let generator = GeneratorConfig {
        num_speakers: 1,
        utterances_per_speaker_per_intent: 1,
        seed,
        ..generator.clone()
    };
    let data = generate_dataset(&generator)?;
    Ok(data
        .utterances()
        .iter()
        .take(GRADCHECK_BATCH)
        .cloned()
        .collect())
}

struct Corrupted<'a> {
    inner: &'a dyn Objective,
}

impl Objective for Corrupted<'_> {
    fn loss(&self, params: &ParameterSet) -> reptile_core::Result<f64> {
        self.inner.loss(params)
    }

    fn gradient(&self, params: &ParameterSet) -> reptile_core::Result<GradientSet> {
        let mut g = self.inner.gradient(params)?;
        if let Some((_, last)) = g.iter_mut().last() {
            *last = last.map(|v| v + 0.5);
        }
        Ok(g)
    }
}

/// Cross-entropy of the decoder alone on fixed embeddings.
struct DecoderObjective {
    embeddings: Tensor,
    labels: Vec<usize>,
}

impl DecoderObjective {
    fn graph(
        &self,
        params: &ParameterSet,
    ) -> reptile_core::Result<(ComputeTape, reptile_core::tape::Var)> {
        let mut tape = ComputeTape::new();
        let mut vars = Vec::new();
        for (name, t) in params.iter() {
            vars.push(tape.param(name, t.clone())?);
        }
        let [w1, b1, w2, b2] = vars[..] else {
            return Err(Error::Contract(
                "decoder objective expects four tensors".into(),
            ));
        };
        let e = tape.constant(self.embeddings.clone())?;
        let rows = (0..self.labels.len())
            .map(|i| {
                let x = tape.row(e, i)?;
                let a = tape.matmul(x, w1)?;
                let a = tape.add(a, b1)?;
                let a = tape.relu(a)?;
                let o = tape.matmul(a, w2)?;
                tape.add(o, b2)
            })
            .collect::<reptile_core::Result<Vec<_>>>()?;
        let logits = tape.stack_rows(&rows)?;
        let loss = tape.softmax_cross_entropy(logits, &self.labels)?;
        Ok((tape, loss))
    }
}

impl Objective for DecoderObjective {
    fn loss(&self, params: &ParameterSet) -> reptile_core::Result<f64> {
        let (tape, loss) = self.graph(params)?;
        Ok(tape.value(loss).data()[0])
    }

    fn gradient(&self, params: &ParameterSet) -> reptile_core::Result<GradientSet> {
        let (tape, loss) = self.graph(params)?;
        tape.backward(loss)
    }
}

fn check_one(
    config: &ExperimentConfig,
    seed: u64,
    options: &GradcheckOptions,
) -> CliResult<SeedCheck> {
    let model = &config.model();
    let params = init_params(model, seed)?;
    let batch = gradcheck_batch(&config.generator(), seed)?;
    let objective: Box<dyn Objective> = match options.path {
        GradcheckPath::Full => Box::new(BatchObjective {
            config: *model,
            batch,
        }),
        GradcheckPath::DecoderOnly => {
            let rows = batch
                .iter()
                .map(|u| encode(&params, model, u).map(Tensor::into_data))
                .collect::<reptile_core::Result<Vec<_>>>()?;
            Box::new(DecoderObjective {
                embeddings: Tensor::from_rows(&rows)?,
                labels: batch.iter().map(Utterance::label).collect(),
            })
        }
    };
    let params = match options.path {
        GradcheckPath::Full => params,
        GradcheckPath::DecoderOnly => {
            let mut decoder = ParameterSet::new();
            for (name, t) in params.iter().filter(|(n, _)| n.starts_with("dec.")) {
                decoder.insert(name, t.clone())?;
            }
            decoder
        }
    };
    let report = if options.corrupt_adjoint {
        finite_diff_report(
            &Corrupted {
                inner: objective.as_ref(),
            },
            &params,
            GRADCHECK_STEP,
            seed,
        )?
    } else {
        finite_diff_report(objective.as_ref(), &params, GRADCHECK_STEP, seed)?
    };
    let worst = report
        .worst
        .ok_or_else(|| CliError::CheckFailed("gradient check probed no coordinates".into()))?;
    Ok(SeedCheck {
        seed,
        max_rel_error: report.max_rel_error,
        worst: format!("{}[{}]", worst.tensor, worst.index),
        analytic: worst.analytic,
        numeric: worst.numeric,
    })
}

/// Finite-difference check of the model gradient for each seed: fresh
/// initialization and a fresh small batch per seed.
pub fn cmd_gradcheck(
    config: &ExperimentConfig,
    seeds: &[u64],
    options: &GradcheckOptions,
    out: Option<&Path>,
) -> CliResult<GradcheckReport> {
    config.validate()?;
    let per_seed = seeds
        .iter()
        .map(|&s| check_one(config, s, options))
        .collect::<CliResult<Vec<_>>>()?;
    let max_rel_error = per_seed.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let report = GradcheckReport {
        per_seed,
        max_rel_error,
        tolerance: GRADCHECK_TOLERANCE,
        passed: max_rel_error < GRADCHECK_TOLERANCE,
    };
    if let Some(dir) = out {
        write_text(&dir.join("gradcheck.csv"), &report.to_text())?;
    }
    Ok(report)
}
