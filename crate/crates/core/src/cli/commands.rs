use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use choicelab::analysis::{
    analyze_all, learning_curve, read_index_reports, read_rows, render_panels, scatter_rows,
    summary_panels, write_rows, CurveRow, IndexReport,
};
use choicelab::data::{
    read_datasets, read_schedule, write_datasets, write_schedule, ChoiceFormat, Provenance,
    ReturnPair, SubjectDataset, DEFAULT_SLACK,
};
use choicelab::harness::prompts::SESSION_ROUNDS;
use choicelab::harness::{
    run_decision_session, run_recommendation_session, ChatBackend, SessionStatus, Transcript,
    Treatment, TreatmentKind,
};
use choicelab::simulation::{
    generate_budgets, jitter_tokens, read_params_file, sample_params, simulate_subject,
    write_params_file, REPRESENTATIVE_BOX,
};
use choicelab::stats::RobustCov;
use choicelab::{Error, Result};

use super::{Exit, Run};

/// `KEY=PATH` argument.
#[derive(Debug, Clone)]
pub struct Labelled<K> {
    pub key: K,
    pub path: PathBuf,
}

impl<K: FromStr> FromStr for Labelled<K>
where
    K::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (k, p) = s.split_once('=').ok_or_else(|| format!("expected KEY=PATH, got `{s}`"))?;
        let key = k.parse().map_err(|e| format!("bad key `{k}`: {e}"))?;
        if p.is_empty() {
            return Err(format!("empty path in `{s}`"));
        }
        Ok(Self { key, path: p.into() })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Layout {
    /// `r_a,r_b,t_a,t_b`
    Tokens,
    /// `p_a,p_b,x_a,x_b`
    Prices,
}

impl From<Layout> for ChoiceFormat {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Tokens => ChoiceFormat::Tokens,
            Layout::Prices => ChoiceFormat::Prices,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `subject_id,beta,rho` file. Without it, parameters are drawn from
    /// the representative box.
    #[arg(long, conflicts_with = "subjects")]
    pub params: Option<PathBuf>,
    /// Number of subjects to draw when no parameter file is given.
    #[arg(long, default_value_t = 100)]
    pub subjects: usize,
    /// Rounds per subject when no schedule is given.
    #[arg(long, default_value_t = 175)]
    pub rounds: usize,
    /// Token-layout file whose returns are used as the budget schedule.
    #[arg(long, conflicts_with = "rounds")]
    pub schedule: Option<PathBuf>,
    /// Uniform noise amplitude in points added to `t_a`.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, value_enum, default_value_t = Layout::Tokens)]
    pub layout: Layout,
}

pub fn simulate(run: &mut Run, a: &SimulateArgs) -> Result<Exit> {
    let base = run.global.seed;
    let params = match &a.params {
        Some(p) => {
            run.input(p);
            read_params_file(p)?
        }
        None => {
            if a.subjects == 0 {
                return Err(Error::Validation("--subjects must be positive".into()));
            }
            let seed = run.seed("params", base.wrapping_add(1));
            sample_params(seed, a.subjects, REPRESENTATIVE_BOX)
        }
    };
    let schedule: Vec<ReturnPair> = match &a.schedule {
        Some(p) => {
            run.input(p);
            read_schedule(p)?
        }
        None => generate_budgets(run.seed("schedule", base), a.rounds)?.rounds,
    };
    if !(a.jitter >= 0.0 && a.jitter <= 100.0) {
        return Err(Error::Validation(format!("--jitter must lie in [0, 100], got {}", a.jitter)));
    }
    let jitter_seed = run.seed("jitter", base.wrapping_add(2));
    let datasets = params
        .par_iter()
        .enumerate()
        .map(|(i, (id, p))| {
            let ds = simulate_subject(id, *p, &schedule)?.dataset;
            if a.jitter > 0.0 {
                jitter_tokens(&ds, a.jitter, jitter_seed.wrapping_add(i as u64))
            } else {
                Ok(ds)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let choices = run.out("choices.csv");
    write_datasets(&datasets, &choices, a.layout.into())?;
    let truth = run.out("params.csv");
    write_params_file(&params, &truth)?;
    let sched = run.out("schedule.csv");
    write_schedule(&schedule, "schedule", &sched)?;
    for p in [&choices, &truth, &sched] {
        run.output(p);
    }
    println!("simulated {} subjects x {} rounds -> {}", datasets.len(), schedule.len(), choices.display());
    Ok(Exit::Success)
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Choice file in either layout.
    pub input: PathBuf,
    /// Maximum deviation of a token sum from 100.
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    pub slack: f64,
}

pub fn analyze(run: &mut Run, a: &AnalyzeArgs) -> Result<Exit> {
    run.input(&a.input);
    let datasets = read_datasets(&a.input, Provenance::Human, a.slack)?;
    let reports = analyze_all(&datasets, &run.config.estimation())?;
    let out = run.table("indices");
    write_rows(&reports, &out, run.format())?;
    run.output(&out);
    let flagged = reports.iter().filter(|r| r.has_flags()).count();
    println!("analyzed {} subjects -> {} ({flagged} flagged)", reports.len(), out.display());
    Ok(if flagged > 0 { Exit::Partial } else { Exit::Success })
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// decision, recommendation or personalized.
    #[arg(long)]
    pub treatment: TreatmentKind,
    /// Sessions to run for the decision and recommendation treatments.
    #[arg(long, default_value_t = 1)]
    pub sessions: usize,
    /// Token-layout file with the 25 budgets shown in every session. Without
    /// it each session gets its own schedule.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Choice file whose subjects are shown to the model (personalized only).
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Rounds of each sample subject shown in the prompt.
    #[arg(long, default_value_t = 25)]
    pub sample_size: usize,
    /// Sessions per sample subject, named `SUBJECT@k`.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
}

struct Plan {
    id: String,
    treatment: Treatment,
    schedule: Vec<ReturnPair>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionRow {
    session_id: String,
    status: String,
    parsed_rounds: usize,
    flagged_rounds: usize,
    resumed: bool,
}

fn plan_sessions(run: &mut Run, a: &ExperimentArgs) -> Result<Vec<Plan>> {
    let fixed = match &a.schedule {
        Some(p) => {
            run.input(p);
            let s = read_schedule(p)?;
            if s.len() != SESSION_ROUNDS {
                return Err(Error::Validation(format!(
                    "{}: sessions need {SESSION_ROUNDS} budgets, found {}",
                    p.display(),
                    s.len()
                )));
            }
            Some(s)
        }
        None => None,
    };
    let base = run.seed("schedule", run.global.seed);
    let schedule_for = |i: usize| -> Result<Vec<ReturnPair>> {
        match &fixed {
            Some(s) => Ok(s.clone()),
            None => Ok(generate_budgets(base.wrapping_add(i as u64), SESSION_ROUNDS)?.rounds),
        }
    };
    let mut plans = Vec::new();
    match a.treatment {
        TreatmentKind::Decision | TreatmentKind::Recommendation => {
            if a.sample.is_some() {
                return Err(Error::Validation("--sample applies to the personalized treatment".into()));
            }
            if a.sessions == 0 {
                return Err(Error::Validation("--sessions must be positive".into()));
            }
            let (prefix, treatment) = match a.treatment {
                TreatmentKind::Decision => ("d", Treatment::decision()),
                _ => ("r", Treatment::recommendation()),
            };
            let width = a.sessions.to_string().len().max(3);
            for i in 0..a.sessions {
                plans.push(Plan {
                    id: format!("{prefix}{:0width$}", i + 1),
                    treatment: treatment.clone(),
                    schedule: schedule_for(i)?,
                });
            }
        }
        TreatmentKind::PersonalizedRecommendation => {
            let sample = a.sample.as_ref().ok_or_else(|| {
                Error::Validation("the personalized treatment needs --sample".into())
            })?;
            run.input(sample);
            if a.replicates == 0 {
                return Err(Error::Validation("--replicates must be positive".into()));
            }
            let subjects = read_datasets(sample, Provenance::Human, DEFAULT_SLACK)?;
            let mut i = 0;
            for ds in &subjects {
                let treatment = Treatment::personalized(ds, a.sample_size)?;
                for k in 1..=a.replicates {
                    plans.push(Plan {
                        id: format!("{}@{k}", ds.subject_id()),
                        treatment: treatment.clone(),
                        schedule: schedule_for(i)?,
                    });
                    i += 1;
                }
            }
        }
    }
    Ok(plans)
}

fn run_session(backend: &dyn ChatBackend, plan: &Plan, path: &Path) -> Result<(Transcript, bool)> {
    if path.exists() {
        if let Ok(t) = Transcript::load(path) {
            if t.is_complete() && t.session_id() == Some(plan.id.as_str()) {
                return Ok((t, true));
            }
        }
    }
    let t = match plan.treatment.kind() {
        TreatmentKind::Decision => run_decision_session(backend, &plan.id, &plan.schedule, Some(path))?,
        _ => run_recommendation_session(backend, &plan.id, &plan.treatment, &plan.schedule, Some(path))?,
    };
    Ok((t, false))
}

pub fn experiment(run: &mut Run, a: &ExperimentArgs) -> Result<Exit> {
    let plans = plan_sessions(run, a)?;
    let backend = run.config.backend.build(&run.config.estimation())?;
    let dir = run.out("transcripts");
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Validation(format!("cannot create {}: {e}", dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(backend.max_concurrency().max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let backend: &dyn ChatBackend = backend.as_ref();
    let results = pool.install(|| {
        plans
            .par_iter()
            .map(|p| run_session(backend, p, &dir.join(format!("{}.jsonl", p.id))))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    let mut datasets: Vec<SubjectDataset> = Vec::new();
    let (mut failed, mut flagged) = (0, 0);
    for (plan, (t, resumed)) in plans.iter().zip(&results) {
        let status = t.status();
        if status != Some(SessionStatus::Complete) {
            failed += 1;
        }
        flagged += t.anomaly_count();
        rows.push(SessionRow {
            session_id: plan.id.clone(),
            status: match status {
                Some(SessionStatus::Complete) => "complete",
                Some(SessionStatus::BackendError) => "backend_error",
                None => "incomplete",
            }
            .into(),
            parsed_rounds: t.parsed().iter().filter(|p| p.allocation().is_some()).count(),
            flagged_rounds: t.anomaly_count(),
            resumed: *resumed,
        });
        if let Some(ds) = t.to_dataset()? {
            datasets.push(ds);
        }
    }
    rows.sort_by(|x, y| x.session_id.cmp(&y.session_id));
    datasets.sort_by(|x, y| x.subject_id().cmp(y.subject_id()));

    let choices = run.out("choices.csv");
    write_datasets(&datasets, &choices, ChoiceFormat::Tokens)?;
    let sessions = run.table("sessions");
    write_rows(&rows, &sessions, run.format())?;
    run.output(&dir);
    run.output(&choices);
    run.output(&sessions);
    let resumed = rows.iter().filter(|r| r.resumed).count();
    println!(
        "{} sessions ({resumed} resumed, {failed} failed, {flagged} flagged rounds) on {} -> {}",
        rows.len(),
        backend.describe(),
        choices.display()
    );
    Ok(if failed > 0 {
        Exit::Backend
    } else if flagged > 0 {
        Exit::Partial
    } else {
        Exit::Success
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovArg {
    Hc0,
    Hc1,
}

#[derive(Debug, Args)]
pub struct LearningCurveArgs {
    /// `subject_id,beta,rho` file with the true parameters.
    #[arg(long)]
    pub truth: PathBuf,
    /// Index report for one sample size, as `S=PATH`. Repeat per size.
    #[arg(long = "estimates", required = true)]
    pub estimates: Vec<Labelled<usize>>,
    /// Robust covariance estimator.
    #[arg(long, value_enum, default_value_t = CovArg::Hc1)]
    pub cov: CovArg,
}

pub fn learning_curve_cmd(run: &mut Run, a: &LearningCurveArgs) -> Result<Exit> {
    run.input(&a.truth);
    let truth = read_params_file(&a.truth)?;
    let mut by_s = Vec::new();
    for e in &a.estimates {
        run.input(&e.path);
        let reports = read_index_reports(&e.path)?;
        let est = reports
            .into_iter()
            .map(|r| (r.subject_id, r.beta_hat, r.rho_hat))
            .collect();
        by_s.push((e.key, est));
    }
    let cov = match a.cov {
        CovArg::Hc0 => RobustCov::Hc0,
        CovArg::Hc1 => RobustCov::Hc1,
    };
    let rows = learning_curve(&truth, &by_s, cov)?;
    let out = run.table("learning_curve");
    write_rows(&rows, &out, run.format())?;
    run.output(&out);
    for r in &rows {
        println!("s={:<4} {:<4} gamma={:.4} (se {:.4})", r.s, r.parameter, r.gamma, r.se_gamma);
    }
    Ok(Exit::Success)
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Index report as `LABEL=PATH`. Repeat for several datasets.
    #[arg(long = "index", required = true)]
    pub index: Vec<Labelled<String>>,
    /// Choice file as `LABEL=PATH` for the price-ratio scatter.
    #[arg(long = "choices")]
    pub choices: Vec<Labelled<String>>,
    /// Learning-curve table for the gamma-versus-s plot data.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Maximum deviation of a token sum from 100 when reading choices.
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    pub slack: f64,
}

#[derive(Debug, Serialize)]
struct CurvePoint {
    parameter: String,
    s: usize,
    gamma: f64,
    lower: f64,
    upper: f64,
}

pub fn report(run: &mut Run, a: &ReportArgs) -> Result<Exit> {
    let mut sets: Vec<(String, Vec<IndexReport>)> = Vec::new();
    for l in &a.index {
        if sets.iter().any(|(k, _)| *k == l.key) {
            return Err(Error::Validation(format!("duplicate label `{}`", l.key)));
        }
        run.input(&l.path);
        sets.push((l.key.clone(), read_index_reports(&l.path)?));
    }
    let panels = summary_panels(&sets)?;
    let out = run.table("summary");
    write_rows(&panels, &out, run.format())?;
    run.output(&out);
    let text = render_panels(&panels);
    let txt = run.out("summary.txt");
    std::fs::write(&txt, &text).map_err(|e| Error::Validation(format!("{}: {e}", txt.display())))?;
    run.output(&txt);
    print!("{text}");

    if !a.choices.is_empty() {
        let mut rows = Vec::new();
        let mut sorted: Vec<&Labelled<String>> = a.choices.iter().collect();
        sorted.sort_by(|x, y| x.key.cmp(&y.key));
        for l in sorted {
            run.input(&l.path);
            rows.extend(scatter_rows(&l.key, &read_datasets(&l.path, Provenance::Human, a.slack)?));
        }
        let out = run.table("scatter");
        write_rows(&rows, &out, run.format())?;
        run.output(&out);
    }
    if let Some(p) = &a.curve {
        run.input(p);
        let mut curve: Vec<CurveRow> = read_rows(p, None)?;
        curve.sort_by(|x, y| x.parameter.cmp(&y.parameter).then(x.s.cmp(&y.s)));
        let points: Vec<CurvePoint> = curve
            .into_iter()
            .map(|r| CurvePoint {
                lower: r.gamma - 1.96 * r.se_gamma,
                upper: r.gamma + 1.96 * r.se_gamma,
                parameter: r.parameter,
                s: r.s,
                gamma: r.gamma,
            })
            .collect();
        let out = run.table("gamma_curve");
        write_rows(&points, &out, run.format())?;
        run.output(&out);
    }
    Ok(Exit::Success)
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}
