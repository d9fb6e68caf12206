use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use isolab_core::functionals::{
    marginal_density_at_zero, marginal_l_surrogate, moment_iq, q_mean_width, support_zp, BallBody,
    BodyOracle, CentroidBody, DirectionGrid, EstimateCI, MarginalLInterval,
};
use isolab_core::laplace::{
    default_fd_step, lambda_p_gauge, tilt_derivative_check, LogLaplaceOracle,
};
use isolab_core::measures::{
    isotropic_constant_bracket, IsotropicConstantBracket, MeasureModel, MeasureSpec,
};
use isolab_core::parameters::{
    hereditary, q_minus_c, q_star, r_sharp, HereditaryParam, ParamEstimate, SectionBudget,
};
use isolab_core::verify::{
    constants_by_n, fit_constant, run_grid, trend_slope, RelationId, RelationReport, Verdict,
};
use isolab_core::{draw, Seed, Subspace};
use serde::Serialize;

use crate::config::{load_config, resolve, search_config, Overrides, RunConfig};
use crate::output::{read_records, sibling, RecordSink};
use crate::{usage, Cli, Command, EstimateArgs, Outcome, ParamArgs, ParamName, Quantity};

struct Ctx {
    rc: RunConfig,
    base_dir: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn seed(&self) -> Seed {
        Seed::new(self.rc.seed)
    }

    fn spec(&self, text: &str) -> Result<MeasureSpec> {
        Ok(MeasureSpec::parse(text)?)
    }

    fn measure(&self, text: &str) -> Result<MeasureModel> {
        let spec = self.spec(text)?;
        if spec.dim.is_none() {
            return Err(usage(format!(
                "measure {text:?} needs a dimension, e.g. {}:4",
                spec.family.name()
            )));
        }
        self.build(&spec)
    }

    fn build(&self, spec: &MeasureSpec) -> Result<MeasureModel> {
        Ok(spec.build(
            self.base_dir.as_deref(),
            self.rc.chain,
            self.seed().derive("build", 0),
        )?)
    }

    fn sink(&self) -> Result<RecordSink> {
        RecordSink::open(self.out.as_deref(), self.rc.digest())
    }

    fn section_budget(&self) -> SectionBudget {
        SectionBudget {
            subspaces: self.rc.budget.subspaces,
            directions: self.rc.budget.directions,
            ..Default::default()
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!(e))?;
    }
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => BTreeMap::new(),
    };
    let flags = Overrides {
        seed: cli.seed,
        samples: cli.samples,
        burnin: cli.burnin,
        thinning: cli.thinning,
        quick: cli.quick,
    };
    let rc = resolve(&file, &flags, serde_json::to_value(&cli.command)?)?;
    let ctx = Ctx {
        rc,
        base_dir: cli.base_dir,
        out: cli.out,
    };
    match &cli.command {
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Param(a) => param(&ctx, a),
        Command::Laplace(a) => {
            let m = ctx.measure(&a.measure)?;
            let xi = parse_vec(&a.xi, m.dim())?;
            let oracle = LogLaplaceOracle::new(
                &m,
                ctx.rc.budget.laplace_samples,
                ctx.seed().derive("laplace", 0),
            )?;
            let v = oracle.evaluate(&xi)?;
            ctx.sink()?.emit("log-laplace", &v)?;
            eprintln!("Lambda({}) = {}", a.xi, show(&v));
            Ok(Outcome::Ok)
        }
        Command::Tiltcheck(a) => {
            let m = ctx.measure(&a.measure)?;
            let x = parse_vec(&a.x, m.dim())?;
            let b = &ctx.rc.budget;
            let oracle =
                LogLaplaceOracle::new(&m, b.tilt_samples, ctx.seed().derive("laplace", 0))?;
            let h = a.h.unwrap_or_else(|| default_fd_step(&x));
            let rep = tilt_derivative_check(
                &oracle,
                &x,
                h,
                b.tilt_samples,
                ctx.seed().derive("tilt", 0),
            )?;
            ctx.sink()?.emit("tilt-derivatives", &rep)?;
            let ok = rep.grad_gap <= 0.05 && rep.hess_gap <= 0.10;
            eprintln!(
                "gradient gap {:.4} (<= 0.05), Hessian gap {:.4} (<= 0.10): {}",
                rep.grad_gap,
                rep.hess_gap,
                if ok { "pass" } else { "fail" }
            );
            Ok(if ok { Outcome::Ok } else { Outcome::Fail })
        }
        Command::Lambdagauge(a) => {
            let m = ctx.measure(&a.measure)?;
            let oracle = LogLaplaceOracle::new(
                &m,
                ctx.rc.budget.laplace_samples,
                ctx.seed().derive("laplace", 0),
            )?;
            let grid = DirectionGrid::random(m.dim(), a.dirs, ctx.seed().derive("gauge-dirs", 0))?;
            let mut sink = ctx.sink()?;
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for theta in grid.directions() {
                let g = lambda_p_gauge(&oracle, a.p, theta)?;
                lo = lo.min(g.t);
                hi = hi.max(g.t);
                sink.emit(
                    "lambda-gauge",
                    &GaugeRow {
                        theta,
                        p: a.p,
                        gauge: g,
                    },
                )?;
            }
            eprintln!("t* over {} directions in [{lo:.6}, {hi:.6}]", grid.len());
            Ok(Outcome::Ok)
        }
        Command::Check(a) => check(&ctx, &a.relation, &a.measures, a.nmin, a.nmax),
        Command::Scan(a) => scan(&ctx, a),
        Command::Report(a) => report(&ctx, &a.input, a.csv),
    }
}

#[derive(Serialize)]
struct GaugeRow<'a> {
    theta: &'a [f64],
    p: f64,
    #[serde(flatten)]
    gauge: isolab_core::laplace::LevelSetGauge,
}

fn show(v: &EstimateCI) -> String {
    let mut s = format!(
        "{:.6} ± {:.2e} ({:?}, {} samples)",
        v.value, v.stderr, v.method, v.sample_count
    );
    if !v.flags.is_empty() {
        let _ = write!(s, " [{}]", v.flags.join(", "));
    }
    s
}

fn parse_vec(text: &str, n: usize) -> Result<Vec<f64>> {
    let v = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("bad vector entry {t:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if v.len() != n {
        return Err(usage(format!(
            "vector {text:?} has {} entries, measure has dimension {n}",
            v.len()
        )));
    }
    Ok(v)
}

fn direction(arg: Option<&str>, n: usize, seed: Seed) -> Result<Vec<f64>> {
    match arg {
        None | Some("random") => Ok(
            DirectionGrid::random(n, 1, seed.derive("cli-direction", 0))?.directions()[0].clone(),
        ),
        Some(text) => {
            let v = parse_vec(text, n)?;
            let r = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(usage("direction must be non-zero"));
            }
            Ok(v.into_iter().map(|t| t / r).collect())
        }
    }
}

fn subspace(arg: &str, n: usize, seed: Seed) -> Result<Subspace> {
    let e = if let Some(k) = arg.strip_prefix("random:") {
        let k: usize = k
            .parse()
            .map_err(|e| usage(format!("bad subspace dimension {k:?}: {e}")))?;
        Subspace::haar(n, k, seed.derive("cli-subspace", 0))?
    } else {
        let text = std::fs::read_to_string(arg)
            .map_err(|e| usage(format!("reading frame file {arg}: {e}")))?;
        Subspace::parse_frame_text(&text)?
    };
    if e.ambient() != n {
        return Err(usage(format!(
            "subspace lives in R^{}, measure in R^{n}",
            e.ambient()
        )));
    }
    Ok(e)
}

#[derive(Serialize)]
#[serde(untagged)]
enum EstimateOut {
    Ci(EstimateCI),
    Bracket(IsotropicConstantBracket),
    Marginal(MarginalLInterval),
}

impl EstimateOut {
    fn describe(&self) -> String {
        match self {
            EstimateOut::Ci(v) => show(v),
            EstimateOut::Bracket(b) => format!("[{:.6}, {:.6}] exact {:?}", b.lo, b.hi, b.exact),
            EstimateOut::Marginal(b) => format!("[{:.6}, {:.6}] exact {:?}", b.lo, b.hi, b.exact),
        }
    }

    /// `value, stderr, lo, hi, method, flags` for CSV.
    fn row(&self) -> String {
        match self {
            EstimateOut::Ci(v) => format!(
                "{},{},,,{:?},{}",
                v.value,
                v.stderr,
                v.method,
                v.flags.join(";")
            ),
            EstimateOut::Bracket(b) => {
                format!(
                    "{},{},{},{},bracket,",
                    b.exact.unwrap_or(b.lo),
                    b.lo_stderr,
                    b.lo,
                    b.hi
                )
            }
            EstimateOut::Marginal(b) => {
                format!(
                    "{},{},{},{},bracket,",
                    b.exact.unwrap_or(b.lo),
                    b.lo_stderr,
                    b.lo,
                    b.hi
                )
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Ctx,
    m0: &MeasureModel,
    quantity: Quantity,
    q: Option<f64>,
    p: Option<f64>,
    dir: Option<&str>,
    sub: Option<&str>,
    dirs: usize,
) -> Result<EstimateOut> {
    let seed = ctx.seed();
    let b = &ctx.rc.budget;
    let e = sub.map(|s| subspace(s, m0.dim(), seed)).transpose()?;
    let need =
        |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("{quantity:?} needs --{name}")));
    let view = || -> Result<MeasureModel> {
        Ok(match &e {
            Some(e) => m0.marginal(e)?,
            None => m0.clone(),
        })
    };
    Ok(match quantity {
        Quantity::Iq => {
            let m = view()?;
            let batch = draw(&m, b.samples, seed.derive("cli-batch", 0))?;
            EstimateOut::Ci(moment_iq(&m, need(q, "q")?, &batch)?)
        }
        Quantity::SupportZp => {
            let m = view()?;
            let theta = direction(dir, m.dim(), seed)?;
            let batch = draw(&m, b.samples, seed.derive("cli-batch", 0))?;
            EstimateOut::Ci(support_zp(&m, need(p, "p")?, &theta, &batch)?)
        }
        Quantity::WidthQ => {
            let m = view()?;
            let (q, p) = (need(q, "q")?, need(p, "p")?);
            let body: Box<dyn BodyOracle> = match m.profile().zp_radius(p) {
                Some(r) => Box::new(BallBody {
                    dim: m.dim(),
                    radius: r,
                }),
                None => Box::new(CentroidBody::new(
                    p,
                    draw(&m, b.samples, seed.derive("cli-batch", 0))?.into(),
                )?),
            };
            let grid = DirectionGrid::random(m.dim(), dirs, seed.derive("cli-grid", 0))?;
            EstimateOut::Ci(q_mean_width(body.as_ref(), q, &grid)?)
        }
        Quantity::FZero => {
            let e = e.as_ref().ok_or_else(|| usage("fZero needs --subspace"))?;
            EstimateOut::Ci(marginal_density_at_zero(
                m0,
                e,
                b.directions,
                seed.derive("cli-fzero", 0),
            )?)
        }
        Quantity::LBracket => match &e {
            Some(e) => EstimateOut::Marginal(marginal_l_surrogate(
                m0,
                e,
                b.directions,
                seed.derive("cli-fzero", 0),
            )?),
            None => EstimateOut::Bracket(isotropic_constant_bracket(
                m0,
                b.samples,
                seed.derive("cli-bracket", 0),
            )?),
        },
    })
}

fn estimate(ctx: &Ctx, a: &EstimateArgs) -> Result<Outcome> {
    let m = ctx.measure(&a.measure)?;
    let out = evaluate(
        ctx,
        &m,
        a.quantity,
        a.q,
        a.p,
        a.dir.as_deref(),
        a.subspace.as_deref(),
        a.dirs,
    )?;
    ctx.sink()?.emit("estimate", &out)?;
    eprintln!("{:?} of {} = {}", a.quantity, m.label(), out.describe());
    Ok(Outcome::Ok)
}

fn param_value(ctx: &Ctx, m: &MeasureModel, a: &ParamArgs) -> Result<ParamEstimate> {
    let b = &ctx.rc.budget;
    let seed = ctx.seed().derive("param", 0);
    let cfg = search_config(b, a.restarts, a.haar);
    let delta = || a.delta.ok_or_else(|| usage("this parameter needs --delta"));
    let big_a = || a.a.ok_or_else(|| usage("this parameter needs --A"));
    Ok(match a.name {
        ParamName::Qmc => q_minus_c(m, delta()?, &ctx.section_budget(), seed)?,
        ParamName::Qstar => q_star(m, b.samples, b.grid_directions, seed)?,
        ParamName::Rsharp => r_sharp(m, big_a()?, &cfg, seed)?,
        ParamName::QmcH => hereditary(
            HereditaryParam::QMinusC { delta: delta()? },
            m,
            &cfg,
            &ctx.section_budget(),
            seed,
        )?,
        ParamName::RsharpH => hereditary(
            HereditaryParam::RSharp { a: big_a()? },
            m,
            &cfg,
            &ctx.section_budget(),
            seed,
        )?,
    })
}

fn param(ctx: &Ctx, a: &ParamArgs) -> Result<Outcome> {
    let m = ctx.measure(&a.measure)?;
    let est = param_value(ctx, &m, a)?;
    let mut sink = ctx.sink()?;
    sink.emit("param", &est)?;
    if let (Some(w), Some(path)) = (&est.witness, sink.path()) {
        let frame = sibling(path, "witness.frame");
        std::fs::write(&frame, w.to_frame_text())?;
        eprintln!("witness subspace written to {}", frame.display());
    }
    eprintln!(
        "{} of {} = {} ({:?}) {}",
        est.name,
        m.label(),
        est.value,
        est.bound_kind,
        est.flags.join(", ")
    );
    Ok(if est.is_indeterminate() {
        Outcome::Indeterminate
    } else {
        Outcome::Ok
    })
}

fn point_label(r: &RelationReport) -> String {
    let g = &r.grid_point;
    let mut parts = Vec::new();
    if let Some(k) = g.k {
        parts.push(format!("k={k}"));
    }
    for (name, v) in [("p", g.p), ("q", g.q), ("delta", g.delta), ("A", g.a)] {
        if let Some(v) = v {
            parts.push(format!("{name}={v}"));
        }
    }
    parts.join(",")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |c| format!("{c:.4}"))
}

fn check(ctx: &Ctx, relation: &str, measures: &str, nmin: usize, nmax: usize) -> Result<Outcome> {
    let relations: Vec<RelationId> = if relation.eq_ignore_ascii_case("all") {
        RelationId::ALL.to_vec()
    } else {
        vec![relation
            .parse()
            .map_err(|e: isolab_core::Error| usage(e.to_string()))?]
    };
    let specs = measures
        .split(',')
        .map(|s| ctx.spec(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if nmin == 0 || nmax < nmin {
        return Err(usage(format!("need 1 <= nmin <= nmax, got {nmin}..{nmax}")));
    }
    let ns: Vec<usize> = (nmin..=nmax).collect();
    let mut sink = ctx.sink()?;
    let (mut fails, mut indet) = (0usize, 0usize);
    eprintln!(
        "{:<20} {:<28} {:>3} {:<18} {:>10} verdict",
        "relation", "measure", "n", "point", "constant"
    );
    for rel in relations {
        let outcome = match run_grid(
            rel,
            &specs,
            &ns,
            &ctx.rc.budget,
            ctx.seed(),
            ctx.base_dir.as_deref(),
        ) {
            Ok(o) => o,
            Err(isolab_core::Error::Usage(msg)) => {
                eprintln!("{:<20} skipped: {msg}", rel.tag());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for r in &outcome.reports {
            sink.emit("relation-report", r)?;
            eprintln!(
                "{:<20} {:<28} {:>3} {:<18} {:>10} {:?}",
                rel.tag(),
                r.measure_spec,
                r.grid_point.n,
                point_label(r),
                fmt_opt(r.fitted_constant),
                r.verdict
            );
        }
        for f in &outcome.failures {
            sink.emit("grid-error", f)?;
            eprintln!(
                "{:<20} {:<28} {:>3} error: {}",
                rel.tag(),
                f.measure_spec,
                f.grid_point.n,
                f.error
            );
        }
        sink.emit(
            "grid-summary",
            &serde_json::json!({ "relation": rel, "summary": outcome.summary }),
        )?;
        let s = &outcome.summary;
        eprintln!(
            "{:<20} summary: pass {} fail {} indeterminate {} errors {}, constant {}, trend slope {}",
            rel.tag(),
            s.pass,
            s.fail,
            s.indeterminate,
            s.errors,
            fmt_opt(s.max_fitted_constant),
            fmt_opt(s.trend_slope)
        );
        fails += s.fail + s.errors;
        indet += s.indeterminate;
    }
    Ok(if fails > 0 {
        Outcome::Fail
    } else if indet > 0 {
        Outcome::Indeterminate
    } else {
        Outcome::Ok
    })
}

fn scan(ctx: &Ctx, a: &crate::ScanArgs) -> Result<Outcome> {
    let spec = ctx.spec(&a.measure)?;
    if a.nmin == 0 || a.nmax < a.nmin {
        return Err(usage(format!(
            "need 1 <= nmin <= nmax, got {}..{}",
            a.nmin, a.nmax
        )));
    }
    let mut csv = String::from("n,value,stderr,lo,hi,method,flags\n");
    let mut indeterminate = false;
    for n in a.nmin..=a.nmax {
        let m = ctx.build(&spec.with_dim(n))?;
        let line = match (a.quantity, a.param) {
            (Some(qty), None) => {
                evaluate(ctx, &m, qty, a.q, a.p, None, a.subspace.as_deref(), a.dirs)?.row()
            }
            (None, Some(name)) => {
                let pa = ParamArgs {
                    measure: String::new(),
                    name,
                    delta: a.delta,
                    a: a.a,
                    restarts: None,
                    haar: None,
                };
                let est = param_value(ctx, &m, &pa)?;
                indeterminate |= est.is_indeterminate();
                let se = est.evidence.as_ref().map_or(0.0, |e| e.stderr);
                format!(
                    "{},{},,,{:?},{}",
                    est.value,
                    se,
                    est.bound_kind,
                    est.flags.join(";")
                )
            }
            _ => return Err(usage("scan needs exactly one of --quantity or --param")),
        };
        let _ = writeln!(csv, "{n},{line}");
        eprintln!("n = {n}: {line}");
    }
    match &ctx.out {
        Some(p) => std::fs::write(p, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(if indeterminate {
        Outcome::Indeterminate
    } else {
        Outcome::Ok
    })
}

fn report(ctx: &Ctx, input: &Path, as_csv: bool) -> Result<Outcome> {
    let records = read_records(input).map_err(|e| usage(format!("{e:#}")))?;
    let mut by_rel: BTreeMap<RelationId, Vec<RelationReport>> = BTreeMap::new();
    let mut errors = 0usize;
    for r in records {
        match r.kind.as_str() {
            "relation-report" => {
                let rep: RelationReport = serde_json::from_value(r.payload)?;
                by_rel.entry(rep.relation).or_default().push(rep);
            }
            "grid-error" => errors += 1,
            _ => {}
        }
    }
    if by_rel.is_empty() {
        return Err(usage(format!(
            "{} holds no relation reports",
            input.display()
        )));
    }
    let mut text = String::new();
    if as_csv {
        text.push_str("relation,n,constant\n");
    }
    for (rel, reps) in &by_rel {
        let per_n = constants_by_n(*rel, reps);
        if as_csv {
            for (n, c) in &per_n {
                let _ = writeln!(text, "{},{n},{c}", rel.tag());
            }
            continue;
        }
        let count = |v: Verdict| reps.iter().filter(|r| r.verdict == v).count();
        let fitted = fit_constant(*rel, reps).ok().map(|f| f.constant);
        let _ = writeln!(
            text,
            "{}  pass {} fail {} indeterminate {}  constant {}  trend slope {}",
            rel.tag(),
            count(Verdict::Pass),
            count(Verdict::Fail),
            count(Verdict::Indeterminate),
            fmt_opt(fitted),
            fmt_opt(trend_slope(&per_n))
        );
        for (n, c) in &per_n {
            let _ = writeln!(text, "    n = {n:>3}  {c:.6}");
        }
    }
    if errors > 0 && !as_csv {
        let _ = writeln!(text, "{errors} grid points ended in errors");
    }
    match &ctx.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(Outcome::Ok)
}
