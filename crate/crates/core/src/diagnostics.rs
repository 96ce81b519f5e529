//! The gradient-check suite behind `smokeseg gradcheck`.

use serde::Serialize;

use crate::autograd::gradcheck::{check_ops, GradCheckConfig, GradCheckReport, DEFAULT_TOLERANCE};
use crate::autograd::OpKind;
use crate::error::Result;
use crate::net::{check_network, NetConfig, Variant};
use crate::trainer::check_bce;

/// Width scale and input size of the whole-network checks.
pub const NETWORK_CHECK_WIDTH: f64 = 1.0 / 16.0;
pub const NETWORK_CHECK_SIZE: usize = 16;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Add whole-network checks of the default and deconv-add variants.
    pub full: bool,
    /// Flip the sign of this op's adjoint, to show the suite catches it.
    pub mutation: Option<OpKind>,
    /// Coordinates sampled per tensor in the network checks.
    pub network_coords: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            full: false,
            mutation: None,
            network_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

impl CheckLine {
    fn new(name: String, r: &GradCheckReport) -> Self {
        CheckLine {
            name,
            max_rel_error: r.max_rel_error,
            max_abs_error: r.max_abs_error,
            failures: r.failures.len(),
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
            passed: r.passed(DEFAULT_TOLERANCE),
        }
    }
}

pub fn network_check(variant: Variant, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig {
        max_coords_per_tensor: Some(opts.network_coords),
        seed: opts.seed,
        mutation: opts.mutation,
        ..Default::default()
    };
    let net = NetConfig::variant(variant, NETWORK_CHECK_WIDTH, opts.seed);
    check_network(&net, NETWORK_CHECK_SIZE, NETWORK_CHECK_SIZE, &cfg)
}

pub fn gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<CheckLine>> {
    let cfg = GradCheckConfig {
        seed: opts.seed,
        mutation: opts.mutation,
        ..Default::default()
    };
    let mut lines: Vec<CheckLine> = check_ops(&cfg)?
        .iter()
        .map(|c| CheckLine::new(format!("{} [{}]", c.op, c.case), &c.report))
        .collect();
    lines.push(CheckLine::new("bce_loss".into(), &check_bce(&cfg)?));
    if opts.full {
        for v in [Variant::Full, Variant::DeconvAdd] {
            let r = network_check(v, opts)?;
            lines.push(CheckLine::new(
                format!("network {} 1x3x16x16", v.label()),
                &r,
            ));
        }
    }
    Ok(lines)
}

pub fn format_lines(lines: &[CheckLine]) -> String {
    let width = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for l in lines {
        out.push_str(&format!(
            "{:<width$}  max_rel {:.3e}  max_abs {:.3e}  checked {:>5}  over_tol {:>3}  kinks {:>3}  {}\n",
            l.name,
            l.max_rel_error,
            l.max_abs_error,
            l.checked,
            l.failures,
            l.skipped_kinks,
            if l.passed { "ok" } else { "FAIL" }
        ));
    }
    out
}
