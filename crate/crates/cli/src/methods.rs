//! Method names and the dispatch from (method, flags, instance) to a solver.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use otwb::agd::{self, AgdOptions};
use otwb::hpd::TraceRow;
use otwb::instances::{Instance, OtInstance, WbInstance};
use otwb::ot::{self, OtOptions, Variant};
use otwb::penalized::{self, Penalty, UnbalancedOtInstance};
use otwb::wb;
use otwb::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// `[gamma-]hpd[-ls][-fm]`.
    Hpd {
        variant: Variant,
        linesearch: bool,
        fixed_marginal: bool,
    },
    /// Regularized linesearch HPD with the scaled-entropy kernel.
    Scaled,
    /// Accelerated gradient baseline on the scaled-entropy dual.
    Agd,
}

pub const METHOD_NAMES: &str =
    "hpd, hpd-ls, hpd-fm, hpd-ls-fm, gamma-hpd, gamma-hpd-ls, gamma-hpd-fm, gamma-hpd-ls-fm, hpd-scaled, agd-scaled";

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let unknown = || format!("unknown method `{s}` (expected one of: {METHOD_NAMES})");
        match s {
            "hpd-scaled" => return Ok(Method::Scaled),
            "agd-scaled" => return Ok(Method::Agd),
            _ => {}
        }
        let (variant, rest) = match s.strip_prefix("gamma-") {
            Some(rest) => (Variant::Regularized, rest),
            None => (Variant::Plain, s),
        };
        let rest = rest.strip_prefix("hpd").ok_or_else(unknown)?;
        let (linesearch, rest) = match rest.strip_prefix("-ls") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let fixed_marginal = match rest {
            "" => false,
            "-fm" => true,
            _ => return Err(unknown()),
        };
        Ok(Method::Hpd {
            variant,
            linesearch,
            fixed_marginal,
        })
    }
}

/// `auto` or an explicit positive value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaArg {
    Auto,
    Value(f64),
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(GammaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(GammaArg::Value(v)),
            _ => Err(format!("`{s}` is neither `auto` nor a positive number")),
        }
    }
}

impl GammaArg {
    pub fn value(self) -> Option<f64> {
        match self {
            GammaArg::Auto => None,
            GammaArg::Value(v) => Some(v),
        }
    }
}

/// Solver knobs shared by `solve` and `bench`.
#[derive(Debug, Clone)]
pub struct Flags {
    pub eps: f64,
    pub gamma: GammaArg,
    pub beta1_mult: Option<f64>,
    pub rho: f64,
    pub delta: Option<f64>,
    pub penalty: Option<Penalty>,
    pub fixed_marginal: bool,
    pub max_iter: usize,
    pub gap_every: Option<usize>,
}

/// Everything a run reports; written as JSON by `solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub problem: String,
    pub n: usize,
    pub m: Option<usize>,
    pub eps: f64,
    /// `gap_rounded ≤ eps`.
    pub certified: bool,
    pub converged: bool,
    pub value: f64,
    pub dual_bound: f64,
    pub gap_rounded: f64,
    pub gap_raw: f64,
    pub iterations: usize,
    pub inner_total: usize,
    pub support_fraction: Option<f64>,
    pub gamma_reg: f64,
    pub penalty: Option<Penalty>,
    pub wall_s: f64,
    pub config: serde_json::Value,
    pub barycenter: Option<Vec<f64>>,
    pub plan: Option<Vec<Vec<f64>>>,
}

pub struct Outcome {
    pub report: Report,
    pub trace: Vec<TraceRow>,
}

fn ot_options(flags: &Flags, linesearch: bool, fixed_marginal: bool, delta: Option<f64>) -> OtOptions {
    OtOptions {
        linesearch,
        fixed_marginal: fixed_marginal || flags.fixed_marginal,
        delta,
        rho: flags.rho,
        beta_mult: flags.beta1_mult,
        gamma_reg: flags.gamma.value(),
        max_iter: flags.max_iter,
        gap_every: flags.gap_every,
        ..OtOptions::default()
    }
}

fn config_json<T: Serialize>(c: &T) -> serde_json::Value {
    serde_json::to_value(c).expect("config serializes")
}

struct Base<'a> {
    name: &'a str,
    flags: &'a Flags,
    n: usize,
    start: Instant,
}

impl Base<'_> {
    #[allow(clippy::too_many_arguments)]
    fn report(&self, problem: &str, m: Option<usize>, value: f64, bound: f64, gap: f64, raw: f64, converged: bool) -> Report {
        Report {
            method: self.name.to_string(),
            problem: problem.to_string(),
            n: self.n,
            m,
            eps: self.flags.eps,
            certified: gap <= self.flags.eps,
            converged,
            value,
            dual_bound: bound,
            gap_rounded: gap,
            gap_raw: raw,
            iterations: 0,
            inner_total: 0,
            support_fraction: None,
            gamma_reg: 0.0,
            penalty: self.flags.penalty,
            wall_s: self.start.elapsed().as_secs_f64(),
            config: serde_json::Value::Null,
            barycenter: None,
            plan: None,
        }
    }
}

/// Runs `method` on `inst`. `with_plan` embeds the final plan (OT only) in the report.
pub fn run(name: &str, method: Method, flags: &Flags, inst: &Instance, with_plan: bool) -> Result<Outcome> {
    let base = Base {
        name,
        flags,
        n: match inst {
            Instance::Ot(o) => o.n(),
            Instance::Wb(w) => w.n(),
        },
        start: Instant::now(),
    };
    match (inst, flags.penalty) {
        (Instance::Ot(o), None) => run_ot(&base, method, o, with_plan),
        (Instance::Ot(o), Some(p)) => run_unbalanced_ot(&base, method, o, p, with_plan),
        (Instance::Wb(w), None) => run_wb(&base, method, w),
        (Instance::Wb(w), Some(p)) => run_unbalanced_wb(&base, method, w, p),
    }
}

fn hpd_parts(method: Method, what: &str) -> Result<(Variant, bool, bool)> {
    match method {
        Method::Hpd {
            variant,
            linesearch,
            fixed_marginal,
        } => Ok((variant, linesearch, fixed_marginal)),
        _ => Err(Error::InvalidConfig(format!("{what} supports only the hpd family of methods"))),
    }
}

fn run_ot(base: &Base, method: Method, inst: &OtInstance, with_plan: bool) -> Result<Outcome> {
    let flags = base.flags;
    let (sol, trace) = match method {
        Method::Agd => {
            let opts = AgdOptions {
                gamma: flags.gamma.value(),
                delta: flags.delta.unwrap_or(AgdOptions::default().delta),
                max_iter: flags.max_iter,
                ..AgdOptions::default()
            };
            let s = agd::solve_agd(inst, flags.eps, &opts)?;
            let mut r = base.report("ot", None, s.value, s.dual_bound, s.gap_certificate, s.gap_certificate, s.converged);
            r.iterations = s.iterations;
            r.inner_total = s.evaluations;
            r.support_fraction = Some(s.support_fraction);
            r.gamma_reg = s.gamma;
            r.config = config_json(&opts);
            r.plan = with_plan.then(|| s.plan.to_rows());
            return Ok(Outcome { report: r, trace: s.trace });
        }
        Method::Scaled => {
            let opts = ot_options(flags, true, false, Some(flags.delta.unwrap_or(0.01)));
            if opts.fixed_marginal {
                return Err(Error::InvalidConfig("hpd-scaled cannot be combined with --fixed-marginal".into()));
            }
            let s = ot::solve_eps(inst, flags.eps, Variant::Regularized, &opts)?;
            let t = s.trace.clone();
            (s, t)
        }
        Method::Hpd {
            variant,
            linesearch,
            fixed_marginal,
        } => {
            if flags.delta.is_some() {
                return Err(Error::InvalidConfig("--delta applies only to hpd-scaled and agd-scaled".into()));
            }
            let opts = ot_options(flags, linesearch, fixed_marginal, None);
            let s = ot::solve_eps(inst, flags.eps, variant, &opts)?;
            let t = s.trace.clone();
            (s, t)
        }
    };
    let mut r = base.report("ot", None, sol.value, sol.dual_bound, sol.gap_certificate, sol.raw_gap, sol.converged);
    r.iterations = sol.iterations;
    r.inner_total = sol.total_inner;
    r.support_fraction = Some(sol.support_fraction);
    r.gamma_reg = sol.gamma_reg;
    r.config = config_json(&sol.config);
    r.plan = with_plan.then(|| sol.plan.to_rows());
    Ok(Outcome { report: r, trace })
}

fn run_unbalanced_ot(base: &Base, method: Method, inst: &OtInstance, p: Penalty, with_plan: bool) -> Result<Outcome> {
    let (variant, linesearch, _) = hpd_parts(method, "--penalty")?;
    let opts = ot_options(base.flags, linesearch, true, None);
    let u = UnbalancedOtInstance::from(inst);
    let s = penalized::solve_unbalanced_ot(&u, p, base.flags.eps, variant, &opts)?;
    let mut r = base.report("unbalanced-ot", None, s.value, s.dual_bound, s.gap_certificate, s.raw_gap, s.converged);
    r.iterations = s.iterations;
    r.inner_total = s.total_inner;
    r.support_fraction = Some(s.support_fraction);
    r.gamma_reg = s.gamma_reg;
    r.config = config_json(&s.config);
    r.plan = with_plan.then(|| s.plan.to_rows());
    Ok(Outcome { report: r, trace: s.trace })
}

fn run_wb(base: &Base, method: Method, inst: &WbInstance) -> Result<Outcome> {
    let (variant, linesearch, fm) = hpd_parts(method, "a barycenter instance")?;
    let opts = ot_options(base.flags, linesearch, fm, None);
    let s = wb::solve_wb(inst, base.flags.eps, variant, &opts)?;
    let mut r = base.report("wb", Some(inst.m()), s.value, s.dual_bound, s.gap_certificate, s.raw_gap, s.converged);
    r.iterations = s.iterations;
    r.inner_total = s.total_inner;
    r.gamma_reg = s.gamma_reg;
    r.config = config_json(&s.config);
    r.barycenter = Some(s.barycenter.as_slice().to_vec());
    Ok(Outcome { report: r, trace: s.trace })
}

fn run_unbalanced_wb(base: &Base, method: Method, inst: &WbInstance, p: Penalty) -> Result<Outcome> {
    let (variant, linesearch, _) = hpd_parts(method, "--penalty")?;
    let opts = ot_options(base.flags, linesearch, true, None);
    let s = penalized::solve_unbalanced_wb(inst, &[p], base.flags.eps, variant, &opts)?;
    let mut r = base.report("unbalanced-wb", Some(inst.m()), s.value, s.dual_bound, s.gap_certificate, s.raw_gap, s.converged);
    r.iterations = s.iterations;
    r.inner_total = s.total_inner;
    r.gamma_reg = s.gamma_reg;
    r.config = config_json(&s.config);
    r.barycenter = Some(s.barycenter.clone());
    Ok(Outcome { report: r, trace: s.trace })
}
