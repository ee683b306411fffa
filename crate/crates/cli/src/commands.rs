use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recmatch::approx::{solve_ipfp_approx, ApproxConfig, ApproxEquilibrium};
use recmatch::bench::{bench as run_bench, BenchConfig};
use recmatch::container;
use recmatch::equilibrium::{recover_transfers, solve_ipfp, ReciprocalWeights, SolveDiagnostics, SolverConfig};
use recmatch::fusion::{fuse, fuse_matrix, FusionKind};
use recmatch::market::{load_feedback, load_roster, Direction, FeedbackFormat, Market, ScoreMatrix, Side, Transfers};
use recmatch::metrics::gini_counts;
use recmatch::mf::{logistic, objective, score_matrix, training_examples, FactorModel};
use recmatch::oracle::{check_equilibrium, tatonnement_equilibrium};
use recmatch::pipeline::{rank_from_models, train_both, PipelineConfig, Solution};
use recmatch::recommend::{exposure_metrics, recommend_all_by, write_recommendations_csv, RankKey, RecommendationList};
use recmatch::simgen::{generate_market, SimConfig};
use recmatch::Matrix;
use serde_json::{json, Value};

use crate::config::FileConfig;
use crate::{FeedbackArgs, Failure, Report, SolverArgs, EXIT_DATA};

pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

impl Context {
    fn solver(&self, args: &SolverArgs) -> SolverConfig {
        let mut c = self.file.solver.clone();
        c.tol = args.tol.unwrap_or(c.tol);
        c.max_sweeps = args.max_sweeps.unwrap_or(c.max_sweeps);
        c.damping = args.damping.unwrap_or(c.damping);
        c.rebalance &= !args.no_rebalance;
        c
    }

    fn approx(&self, args: &SolverArgs) -> Option<ApproxConfig> {
        if args.exact {
            return None;
        }
        let mut a = args.approx.clone().or_else(|| self.file.approx.clone())?;
        a.seed = self.seed;
        Some(a)
    }

    fn k(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.k).unwrap_or(10)
    }
}

pub struct TrainOverrides {
    pub d: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub negative_rate: Option<f64>,
    pub explicit_negatives: bool,
}

fn ok(value: Value) -> Report {
    Report { value, converged: true }
}

fn read_feedback(input: &FeedbackArgs) -> Result<Market, Failure> {
    let format = input.format.unwrap_or_else(|| FeedbackFormat::from_path(&input.feedback));
    at(&input.feedback, |path| load_feedback(path, format, input.roster.as_deref()))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", dir.display()),
    })
}

fn side_summary(market: &Market) -> Result<Value, Failure> {
    let gini = |side| gini_counts(&market.like_in_degree(side));
    Ok(json!({
        "n_x": market.n_x(),
        "n_y": market.n_y(),
        "events": market.feedback().len(),
        "like_gini_x": gini(Side::X)?,
        "like_gini_y": gini(Side::Y)?,
    }))
}

pub fn ingest(input: &FeedbackArgs, dir: Option<&Path>) -> Result<Report, Failure> {
    let market = read_feedback(input)?;
    let mut actions: BTreeMap<&str, u64> = BTreeMap::new();
    for ev in market.feedback() {
        *actions.entry(ev.action.as_str()).or_default() += 1;
    }
    let mut report = side_summary(&market)?;
    report["actions"] = json!(actions);
    if let Some(dir) = dir {
        create_dir(dir)?;
        market.write_feedback(&dir.join("feedback.csv"), FeedbackFormat::Csv)?;
        market.write_roster(&dir.join("roster.csv"))?;
        report["dir"] = json!(dir);
    }
    Ok(ok(report))
}

pub fn train(
    ctx: &Context,
    input: &FeedbackArgs,
    models: &Path,
    o: &TrainOverrides,
    json_copy: bool,
) -> Result<Report, Failure> {
    let market = read_feedback(input)?;
    let (mut xy, mut yx) = ctx.file.train_configs();
    for c in [&mut xy, &mut yx] {
        c.d = o.d.unwrap_or(c.d);
        c.epochs = o.epochs.unwrap_or(c.epochs);
        c.learning_rate = o.learning_rate.unwrap_or(c.learning_rate);
        c.l2 = o.l2.unwrap_or(c.l2);
        c.negative_sampling_rate = o.negative_rate.unwrap_or(c.negative_sampling_rate);
        c.use_explicit_negatives |= o.explicit_negatives;
    }
    let config = PipelineConfig {
        seed: ctx.seed,
        train_xy: xy.clone(),
        train_yx: yx.clone(),
        ..Default::default()
    };
    let start = Instant::now();
    let (mxy, myx) = train_both(&market, &config)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    create_dir(models)?;
    container::write_model(&models.join("model_xy.bin"), &mxy)?;
    container::write_model(&models.join("model_yx.bin"), &myx)?;
    market.write_roster(&models.join("roster.csv"))?;
    if json_copy {
        container::write_model_json(&models.join("model_xy.json"), &mxy)?;
        container::write_model_json(&models.join("model_yx.json"), &myx)?;
    }
    let fit = |m: &FactorModel, c: &recmatch::mf::TrainConfig| {
        objective(m, &training_examples(&market, m.direction, c.use_explicit_negatives), c.l2)
    };
    let mut report = side_summary(&market)?;
    report["d"] = json!(xy.d);
    report["objective_xy"] = json!(fit(&mxy, &xy));
    report["objective_yx"] = json!(fit(&myx, &yx));
    report["wall_ms"] = json!(wall_ms);
    report["models"] = json!(models);
    Ok(ok(report))
}

type PairFn<'a> = Box<dyn Fn(usize, usize) -> f64 + Sync + 'a>;

/// Names the file in bare I/O errors.
fn at<T>(path: &Path, read: impl FnOnce(&Path) -> recmatch::Result<T>) -> Result<T, Failure> {
    read(path).map_err(|e| match e {
        recmatch::Error::Io(_) | recmatch::Error::Csv(_) => Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        },
        other => other.into(),
    })
}

/// Roster and both direction models from a `train` output directory.
fn load_models(dir: &Path) -> Result<(Market, FactorModel, FactorModel), Failure> {
    let market = at(&dir.join("roster.csv"), load_roster)?;
    let mxy = at(&dir.join("model_xy.bin"), container::read_model)?;
    let myx = at(&dir.join("model_yx.bin"), container::read_model)?;
    for (m, dir) in [(&mxy, Direction::XToY), (&myx, Direction::YToX)] {
        if m.direction != dir || m.n_x() != market.n_x() || m.n_y() != market.n_y() {
            return Err(recmatch::Error::DimensionMismatch(format!(
                "model {dir} is {}x{} ({}) but the roster is {}x{}",
                m.n_x(),
                m.n_y(),
                m.direction,
                market.n_x(),
                market.n_y()
            ))
            .into());
        }
    }
    Ok((market, mxy, myx))
}

pub fn fuse_scores(models: &Path, kind: FusionKind, csv_path: Option<&Path>) -> Result<Report, Failure> {
    let (market, mxy, myx) = load_models(models)?;
    let fused = fuse_matrix(kind, &score_matrix(&mxy, &myx)?)?;
    if let Some(path) = csv_path {
        write_pairs_csv(path, &market, &fused)?;
    }
    let v = fused.as_slice();
    Ok(ok(json!({
        "fusion": kind.to_string(),
        "n_x": market.n_x(),
        "n_y": market.n_y(),
        "mean": v.iter().sum::<f64>() / v.len() as f64,
        "min": v.iter().copied().fold(f64::INFINITY, f64::min),
        "max": v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })))
}

fn write_pairs_csv(path: &Path, market: &Market, values: &Matrix) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(recmatch::Error::from)?;
    let mut write = || -> Result<(), csv::Error> {
        w.write_record(["x_id", "y_id", "score"])?;
        for (x, xid) in market.men().iter().enumerate() {
            for (y, yid) in market.women().iter().enumerate() {
                w.write_record([xid.as_str(), yid.as_str(), &values[(x, y)].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| recmatch::Error::from(e).into())
}

fn approx_summary(sol: &ApproxEquilibrium, config: &ApproxConfig) -> Value {
    let r = &sol.report;
    json!({
        "approx": config.to_string(),
        "audit_residual": r.audit_residual,
        "rows_audited": r.rows_audited,
        "cols_audited": r.cols_audited,
        "exact_rows": r.exact_rows,
        "exact_cols": r.exact_cols,
        "terms_per_row": r.terms_per_row,
        "terms_per_col": r.terms_per_col,
        "final_variance": r.b_variance.last(),
        "setup_ms": r.setup_ms,
        "sweep_ms": r.sweep_ms,
    })
}

pub fn solve(
    ctx: &Context,
    models: &Path,
    args: &SolverArgs,
    equilibrium: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<Report, Failure> {
    let (market, mxy, myx) = load_models(models)?;
    let solver = ctx.solver(args);
    let start = Instant::now();
    let (mut report, converged) = match ctx.approx(args) {
        None => {
            let scores = score_matrix(&mxy, &myx)?;
            let matching = solve_ipfp(&ReciprocalWeights::from_scores(&scores), &solver)?;
            let transfers = recover_transfers(&scores, &matching)?;
            let diag = SolveDiagnostics::of(&matching, start.elapsed().as_secs_f64() * 1e3);
            if let Some(path) = equilibrium {
                container::write_equilibrium(path, &matching, &transfers)?;
            }
            if let Some(path) = csv_path {
                container::write_equilibrium_csv(
                    path,
                    market.men(),
                    market.women(),
                    |x, y| matching.mu[(x, y)],
                    |x, y| transfers.tau[(x, y)],
                )?;
            }
            let mut v = json!(diag);
            v["mode"] = json!("exact");
            (v, matching.converged)
        }
        Some(aconfig) => {
            let sol = solve_ipfp_approx(&mxy, &myx, &solver, &aconfig)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            if let Some(path) = equilibrium {
                let (n_x, n_y) = (sol.n_x(), sol.n_y());
                let tau = Matrix::from_fn(n_x, n_y, |x, y| sol.transfer(x, y));
                container::write_equilibrium(path, &sol.to_matching(), &Transfers { tau })?;
            }
            if let Some(path) = csv_path {
                container::write_equilibrium_csv(
                    path,
                    market.men(),
                    market.women(),
                    |x, y| sol.mu(x, y),
                    |x, y| sol.transfer(x, y),
                )?;
            }
            let mut v = approx_summary(&sol, &aconfig);
            v["mode"] = json!("approx");
            v["sweeps"] = json!(sol.sweeps);
            v["residual"] = json!(sol.residual);
            v["converged"] = json!(sol.converged);
            v["wall_ms"] = json!(wall_ms);
            (v, sol.converged)
        }
    };
    report["n_x"] = json!(market.n_x());
    report["n_y"] = json!(market.n_y());
    Ok(Report {
        value: report,
        converged,
    })
}

pub fn recommend(
    ctx: &Context,
    models: &Path,
    key: Option<RankKey>,
    k: Option<usize>,
    args: &SolverArgs,
    user: Option<&str>,
    csv_path: Option<&Path>,
) -> Result<Report, Failure> {
    let (market, mxy, myx) = load_models(models)?;
    let rank_key = match key {
        Some(key) => key,
        None => ctx.file.rank_key().map_err(Failure::usage)?.unwrap_or(RankKey::Mtrs),
    };
    let config = PipelineConfig {
        seed: ctx.seed,
        solver: ctx.solver(args),
        approx: ctx.approx(args),
        rank_key,
        k: ctx.k(k),
        ..Default::default()
    };
    if let Some(id) = user {
        market.user(id)?;
    }
    let out = rank_from_models(&market, mxy, myx, &config)?;
    let converged = out.solution.as_ref().is_none_or(Solution::converged);
    let mut lists = out.lists_x;
    lists.extend(out.lists_y);
    if let Some(id) = user {
        lists.retain(|l| l.user == id);
    }
    if let Some(path) = csv_path {
        write_recommendations_csv(path, &lists)?;
    }
    let mut report = json!({
        "rank_key": rank_key.to_string(),
        "k": config.k,
        "lists": lists.len(),
        "converged": converged,
    });
    if user.is_some() {
        report["ranked"] = json!(lists[0].ranked);
    }
    Ok(Report {
        value: report,
        converged,
    })
}

pub fn verify(ctx: &Context, models: Option<&Path>, random: Option<(usize, usize)>, tol: f64) -> Result<Report, Failure> {
    let scores = match (models, random) {
        (Some(dir), _) => {
            let (_, mxy, myx) = load_models(dir)?;
            score_matrix(&mxy, &myx)?
        }
        (None, Some((n_x, n_y))) => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let p_xy = Matrix::from_fn(n_x, n_y, |_, _| rng.random());
            let p_yx = Matrix::from_fn(n_x, n_y, |_, _| rng.random());
            ScoreMatrix::new(p_xy, p_yx)?
        }
        (None, None) => return Err(Failure::usage("verify needs --models or --random")),
    };
    let oracle = tatonnement_equilibrium(&scores, &ctx.file.oracle)?;
    let ipfp = solve_ipfp(&ReciprocalWeights::from_scores(&scores), &ctx.file.solver)?;
    let tau = recover_transfers(&scores, &ipfp)?;
    let linf = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let gap = ipfp
        .mu
        .max_abs_diff(&oracle.matching.mu)
        .max(linf(&ipfp.mu_x0, &oracle.matching.mu_x0))
        .max(linf(&ipfp.mu_y0, &oracle.matching.mu_y0));
    let ipfp_check = check_equilibrium(&scores, &ipfp, &tau, tol)?;
    let oracle_check = check_equilibrium(&scores, &oracle.matching, &oracle.transfers, tol)?;
    let passed = gap <= 1e-6 && ipfp_check.passed && oracle_check.passed;
    let (n_x, n_y) = scores.shape();
    Ok(Report {
        value: json!({
            "n_x": n_x,
            "n_y": n_y,
            "mu_linf_vs_oracle": gap,
            "ipfp_sweeps": ipfp.iterations,
            "oracle_iterations": oracle.gap_history.len(),
            "ipfp_check": ipfp_check,
            "oracle_check": oracle_check,
            "passed": passed,
        }),
        converged: passed,
    })
}

pub fn simulate(config: &SimConfig, dir: &Path, format: FeedbackFormat) -> Result<Report, Failure> {
    let sim = generate_market(config)?;
    create_dir(dir)?;
    let feedback: PathBuf = dir.join(match format {
        FeedbackFormat::Csv => "feedback.csv",
        FeedbackFormat::Jsonl => "feedback.jsonl",
    });
    sim.market.write_feedback(&feedback, format)?;
    sim.market.write_roster(&dir.join("roster.csv"))?;
    container::write_scores(&dir.join("truth.bin"), &sim.truth)?;
    let mut report = side_summary(&sim.market)?;
    report["feedback"] = json!(feedback);
    report["seed"] = json!(config.seed);
    Ok(ok(report))
}

/// Mass `Σ μ[x, y]` over the pairs shown in `lists`.
fn listed_mass(market: &Market, lists: &[RecommendationList], mu: &(impl Fn(usize, usize) -> f64 + ?Sized)) -> Result<f64, Failure> {
    let mut total = 0.0;
    for list in lists {
        let (side, i) = market.user(&list.user)?;
        for (cand, _) in &list.ranked {
            let (_, j) = market.user(cand)?;
            total += match side {
                Side::X => mu(i, j),
                Side::Y => mu(j, i),
            };
        }
    }
    Ok(total)
}

pub fn metrics(ctx: &Context, models: &Path, keys: &[RankKey], k: Option<usize>, args: &SolverArgs) -> Result<Report, Failure> {
    let (market, mxy, myx) = load_models(models)?;
    let k = ctx.k(k);
    if k == 0 {
        return Err(Failure::usage("k must be at least 1"));
    }
    let solver = ctx.solver(args);
    let p_xy = |x, y| logistic(mxy.affinity(x, y));
    let p_yx = |x, y| logistic(myx.affinity(x, y));

    // one equilibrium serves every ranking and the listed-mass figures
    let (mu, tau, converged, total): (PairFn, PairFn, bool, f64) =
        match ctx.approx(args) {
            None => {
                let scores = score_matrix(&mxy, &myx)?;
                let matching = solve_ipfp(&ReciprocalWeights::from_scores(&scores), &solver)?;
                let transfers = recover_transfers(&scores, &matching)?;
                let total = matching.mu.as_slice().iter().sum();
                let converged = matching.converged;
                (
                    Box::new(move |x, y| matching.mu[(x, y)]),
                    Box::new(move |x, y| transfers.tau[(x, y)]),
                    converged,
                    total,
                )
            }
            Some(aconfig) => {
                let sol = std::sync::Arc::new(solve_ipfp_approx(&mxy, &myx, &solver, &aconfig)?);
                let total = (0..sol.n_x()).map(|x| sol.mu_row(x).iter().sum::<f64>()).sum();
                let (a, b) = (sol.clone(), sol.clone());
                (Box::new(move |x, y| a.mu(x, y)), Box::new(move |x, y| b.transfer(x, y)), sol.converged, total)
            }
        };

    let mut rankings = Vec::with_capacity(keys.len());
    for &key in keys {
        let mut sides = serde_json::Map::new();
        for side in [Side::X, Side::Y] {
            let lists = match key {
                RankKey::Mtrs => recommend_all_by(&market, &mu, side, k)?,
                RankKey::Transfer => match side {
                    Side::X => recommend_all_by(&market, |x, y| p_xy(x, y) - tau(x, y), side, k)?,
                    Side::Y => recommend_all_by(&market, |x, y| p_yx(x, y) + tau(x, y), side, k)?,
                },
                RankKey::Fused(kind) => {
                    // logistic scores lie strictly inside (0, 1), so every fusion is defined
                    recommend_all_by(&market, |x, y| fuse(kind, p_xy(x, y), p_yx(x, y)).unwrap_or(0.0), side, k)?
                }
            };
            let exposure = exposure_metrics(&market, &lists, None)?;
            let name = match side {
                Side::X => "x_lists",
                Side::Y => "y_lists",
            };
            sides.insert(
                name.into(),
                json!({
                    "gini": exposure.gini,
                    "max_exposure": exposure.exposure.iter().max(),
                    "unexposed": exposure.exposure.iter().filter(|&&e| e == 0).count(),
                    "listed_mass": listed_mass(&market, &lists, &mu)?,
                }),
            );
        }
        sides.insert("rank_key".into(), json!(key.to_string()));
        rankings.push(Value::Object(sides));
    }
    Ok(Report {
        value: json!({
            "k": k,
            "expected_matches": total,
            "converged": converged,
            "rankings": rankings,
        }),
        converged,
    })
}

pub fn bench(config: &BenchConfig) -> Result<Report, Failure> {
    Ok(ok(serde_json::to_value(run_bench(config)?).map_err(recmatch::Error::from)?))
}
