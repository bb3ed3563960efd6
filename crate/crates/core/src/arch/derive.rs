//! Search for per-stage widths reproducing reference parameter and FLOP totals.
//!
//! The final width follows from the parameter delta between a K-class and a
//! (K-1)-class model: only the classifier depends on K, so the delta is F + 1.
//! Earlier widths are enumerated as monotone progressions that satisfy the
//! grouped pointwise divisibility rule, crossed with the counting-scope choices
//! (which convolutions carry a bias, per-channel or scalar GRN).

use std::cmp::Ordering;
use std::fmt::Write as _;

use super::analysis::analyze;
use super::config::{ArchConfig, BiasRole, BiasSet, GrnShape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DeriveConstraints {
    pub stem_channels: usize,
    pub stage_depths: [usize; 4],
    pub num_classes: usize,
    /// Reference total at `num_classes`.
    pub params: usize,
    /// Reference total at `num_classes - 1`.
    pub params_fewer_classes: usize,
    /// Reference FLOPs at given input sizes; used to rank near misses.
    pub flops: Vec<((usize, usize), u64)>,
    /// Upper bound for every searched width.
    pub max_width: usize,
    /// Also search which convolutions carry a bias and the GRN shape.
    pub search_scope: bool,
    /// Number of nearest misses kept in the report.
    pub keep: usize,
}

impl Default for DeriveConstraints {
    fn default() -> Self {
        DeriveConstraints {
            stem_channels: 40,
            stage_depths: [5, 5, 5, 4],
            num_classes: 5,
            params: 37_685,
            params_fewer_classes: 37_444,
            flops: vec![((240, 240), 35_930_000), ((224, 224), 31_380_000)],
            max_width: 480,
            search_scope: true,
            keep: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub config: ArchConfig,
    pub params: usize,
    pub params_fewer_classes: usize,
    pub flops: Vec<u64>,
    pub params_rel_err: f64,
    pub flops_rel_err: Vec<f64>,
    /// Largest relative error over params and every FLOP reference.
    pub score: f64,
}

impl Candidate {
    pub fn exact(&self) -> bool {
        self.params_rel_err == 0.0
    }

    fn key(&self) -> (usize, [usize; 4], u8, GrnShape) {
        (self.config.bias.len(), self.config.stage_out_channels, self.config.bias.bits(), self.config.grn_shape)
    }

    fn rank(&self, other: &Candidate) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| self.key().cmp(&other.key()))
    }
}

#[derive(Clone, Debug)]
pub struct DeriveReport {
    pub constraints: DeriveConstraints,
    pub final_channels: usize,
    pub evaluated: usize,
    /// Every candidate whose parameter count matches exactly, best first.
    pub exact: Vec<Candidate>,
    /// Best-ranked candidates overall.
    pub nearest: Vec<Candidate>,
}

impl DeriveReport {
    /// The exact hit ranked first, or the nearest miss.
    pub fn best(&self) -> &Candidate {
        self.exact.first().unwrap_or(&self.nearest[0])
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.best().params_rel_err <= tolerance
    }

    /// Human-readable summary plus a per-layer breakdown of the chosen config.
    pub fn render(&self) -> Result<String> {
        let c = &self.constraints;
        let best = self.best();
        let mut s = String::new();
        let _ = writeln!(s, "final width from class delta: {} - {} = {} -> F = {}", c.params, c.params_fewer_classes, c.params - c.params_fewer_classes, self.final_channels);
        let _ = writeln!(s, "candidates evaluated: {}", self.evaluated);
        let _ = writeln!(s, "exact parameter matches: {}", self.exact.len());
        let _ = writeln!(s, "nearest:");
        for cand in &self.nearest {
            let _ = writeln!(s, "  {}", describe(cand));
        }
        let _ = writeln!(s, "chosen: {}", describe(best));
        let gap = best.params as i64 - c.params as i64;
        let _ = writeln!(s, "parameter gap: {gap:+} ({:+.3}%)", 100.0 * gap as f64 / c.params as f64);
        let a = analyze(&best.config)?;
        let _ = writeln!(s, "per-layer (params > 0 or flops > 0):");
        let _ = writeln!(s, "  {:<28} {:>9} {:>12} {:>6}", "layer", "params", "flops", "bias");
        for l in &a.layers {
            if l.params == 0 && l.flops == 0 {
                continue;
            }
            let _ = writeln!(s, "  {:<28} {:>9} {:>12} {:>6}", l.name, l.params, l.flops, l.bias_params);
        }
        let _ = writeln!(s, "scope levers (params each toggle would add/remove):");
        for role in BiasRole::ALL {
            let n: usize = a
                .layers
                .iter()
                .filter(|l| l.bias_role == Some(role))
                .map(|l| l.out_shape[0])
                .sum();
            let sign = if best.config.bias.has(role) { '-' } else { '+' };
            let _ = writeln!(s, "  bias {:<16} {sign}{n}", role.name());
        }
        Ok(s)
    }
}

fn describe(c: &Candidate) -> String {
    let flops: Vec<String> = c
        .flops
        .iter()
        .zip(&c.flops_rel_err)
        .map(|(f, e)| format!("{f} ({:+.2}%)", 100.0 * e))
        .collect();
    format!(
        "widths={:?} bias={} grn={} params={} ({:+.2}%) params@K-1={} flops={}",
        c.config.stage_out_channels,
        c.config.bias,
        c.config.grn_shape.name(),
        c.params,
        100.0 * c.params_rel_err,
        c.params_fewer_classes,
        flops.join(" / ")
    )
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want) / want
}

/// Widths for stage `s` given the stage input `a`: multiples of the
/// pointwise group count in `[a, max]`.
fn next_widths(a: usize, last: usize, max: usize) -> Vec<usize> {
    let pw_in = 2 * a;
    let g = pw_in / 4;
    if g == 0 || pw_in % g != 0 {
        return Vec::new();
    }
    let hi = if last > 0 { last } else { max };
    (a..=hi).filter(|c| c % g == 0).collect()
}

/// Enumerates candidate widths and counting scopes and ranks them.
pub fn derive_channel_config(c: &DeriveConstraints) -> Result<DeriveReport> {
    if c.num_classes < 3 {
        return Err(Error::Invalid("need at least 3 classes for a class-count delta".into()));
    }
    let delta = c
        .params
        .checked_sub(c.params_fewer_classes)
        .filter(|d| *d >= 2)
        .ok_or_else(|| Error::Invalid("reference totals must decrease with one class fewer".into()))?;
    let f = delta - 1;
    let scopes: Vec<(BiasSet, GrnShape)> = if c.search_scope {
        (0..1u8 << BiasRole::ALL.len())
            .flat_map(|b| [GrnShape::PerChannel, GrnShape::Scalar].map(|g| (BiasSet::from_bits(b), g)))
            .collect()
    } else {
        let d = ArchConfig::default();
        vec![(d.bias, d.grn_shape)]
    };
    let base = ArchConfig {
        stem_channels: c.stem_channels,
        stage_depths: c.stage_depths,
        num_classes: c.num_classes,
        ..Default::default()
    };
    let mut all = Vec::new();
    let mut evaluated = 0usize;
    for c1 in next_widths(c.stem_channels, 0, c.max_width.min(f)) {
        for c2 in next_widths(c1, 0, c.max_width.min(f)) {
            for c3 in next_widths(c2, 0, c.max_width.min(f)) {
                if !next_widths(c3, f, f).contains(&f) {
                    continue;
                }
                for &(bias, grn_shape) in &scopes {
                    let cfg = ArchConfig {
                        stage_out_channels: [c1, c2, c3, f],
                        bias,
                        grn_shape,
                        ..base.clone()
                    };
                    if cfg.validate().is_err() {
                        continue;
                    }
                    evaluated += 1;
                    all.push(score(&cfg, c)?);
                }
            }
        }
    }
    if all.is_empty() {
        return Err(Error::Empty(format!(
            "no width progression with final width {f} satisfies the divisibility rule below {}",
            c.max_width
        )));
    }
    all.sort_by(Candidate::rank);
    let exact: Vec<Candidate> = all.iter().filter(|x| x.exact()).cloned().collect();
    all.truncate(c.keep.max(1));
    Ok(DeriveReport {
        constraints: c.clone(),
        final_channels: f,
        evaluated,
        exact,
        nearest: all,
    })
}

/// Parameter and FLOP errors of one configuration against the references.
pub(crate) fn score(cfg: &ArchConfig, c: &DeriveConstraints) -> Result<Candidate> {
    let a = analyze(cfg)?;
    let params = a.total_params();
    let fewer = analyze(&ArchConfig { num_classes: cfg.num_classes - 1, ..cfg.clone() })?.total_params();
    let mut flops = Vec::new();
    for &(hw, _) in &c.flops {
        flops.push(if hw == cfg.input_size { a.total_flops() } else { super::analysis::count_flops(cfg, hw)? });
    }
    let params_rel_err = rel(params as f64, c.params as f64).abs();
    let flops_rel_err: Vec<f64> = flops.iter().zip(&c.flops).map(|(g, (_, w))| rel(*g as f64, *w as f64)).collect();
    let score = flops_rel_err.iter().map(|e| e.abs()).fold(params_rel_err, f64::max);
    Ok(Candidate {
        config: cfg.clone(),
        params,
        params_fewer_classes: fewer,
        flops,
        params_rel_err,
        flops_rel_err,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_width_from_class_delta() {
        let c = DeriveConstraints { search_scope: false, ..Default::default() };
        let r = derive_channel_config(&c).unwrap();
        assert_eq!(r.final_channels, 240);
        for cand in &r.nearest {
            assert_eq!(cand.params - cand.params_fewer_classes, 241);
        }
    }

    #[test]
    fn uniform_narrow_widths_miss_widely() {
        let cfg = ArchConfig { stage_out_channels: [40, 40, 40, 40], ..Default::default() };
        let cand = score(&cfg, &DeriveConstraints::default()).unwrap();
        assert!(cand.params_rel_err > 0.3, "{}", cand.params_rel_err);
    }

    #[test]
    fn width_steps_respect_groups() {
        assert_eq!(next_widths(40, 0, 100), vec![40, 60, 80, 100]);
        assert_eq!(next_widths(160, 240, 240), vec![160, 240]);
    }
}
