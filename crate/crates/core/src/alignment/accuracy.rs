use super::align::AlignmentPlan;
use crate::error::{dim_err, Result};
use crate::numerics::GridMeta;
use crate::pyramid::Scale;

/// Where a per-query match came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchSource {
    Single(Scale),
    Merged,
}

/// Per-query match selection rules that are scored against each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMethod {
    /// Fixed-scale baseline: 4× queries against 4× keys only.
    Ca,
    /// Most confident single-to-multi-scale match.
    Sa,
    /// Merged multi-scale match.
    Ma,
    /// Flexible: the most confident of the single-to-multi and merged matches.
    Fa,
}

impl MatchMethod {
    pub const ALL: [MatchMethod; 4] = [MatchMethod::Ca, MatchMethod::Sa, MatchMethod::Ma, MatchMethod::Fa];

    pub fn label(self) -> &'static str {
        match self {
            MatchMethod::Ca => "CA",
            MatchMethod::Sa => "SA",
            MatchMethod::Ma => "MA",
            MatchMethod::Fa => "FA",
        }
    }
}

/// A chosen match: source, key cell on that source's key grid, confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub source: MatchSource,
    pub key: usize,
    pub confidence: f64,
}

/// Centre of grid cell `cell` in pixel coordinates of a `(hr_h, hr_w)` image.
pub fn cell_centre_hr(cell: usize, grid: &GridMeta, hr_h: usize, hr_w: usize) -> (f64, f64) {
    let (gy, gx) = (cell / grid.gw, cell % grid.gw);
    let cy = (gy * grid.stride + grid.patch / 2) as f64 - grid.pad as f64;
    let cx = (gx * grid.stride + grid.patch / 2) as f64 - grid.pad as f64;
    let (sy, sx) = (hr_h as f64 / grid.height as f64, hr_w as f64 / grid.width as f64);
    ((cy + 0.5) * sy - 0.5, (cx + 0.5) * sx - 0.5)
}

impl AlignmentPlan {
    pub fn sa_candidate(&self, s: Scale, query: usize) -> Candidate {
        Candidate {
            source: MatchSource::Single(s),
            key: self.sa.idx.get(s).idx[query],
            confidence: self.sa.weights.get(s).w.data()[query],
        }
    }

    pub fn ma_candidate(&self, query: usize) -> Candidate {
        Candidate { source: MatchSource::Merged, key: self.ma.merged.idx[query], confidence: self.ma.weight.w.data()[query] }
    }

    /// Most confident single-to-multi-scale match, finest scale first on ties.
    pub fn best_sa(&self, query: usize) -> Candidate {
        [Scale::X4, Scale::X2, Scale::X1]
            .into_iter()
            .map(|s| self.sa_candidate(s, query))
            .reduce(|a, b| if b.confidence > a.confidence { b } else { a })
            .expect("three scales")
    }

    /// Flexible choice: the most confident of all single-to-multi and merged
    /// matches.
    pub fn best_flexible(&self, query: usize) -> Candidate {
        let sa = self.best_sa(query);
        let ma = self.ma_candidate(query);
        if ma.confidence > sa.confidence {
            ma
        } else {
            sa
        }
    }

    pub fn pick(&self, method: MatchMethod, query: usize) -> Candidate {
        match method {
            MatchMethod::Ca => self.sa_candidate(Scale::X4, query),
            MatchMethod::Sa => self.best_sa(query),
            MatchMethod::Ma => self.ma_candidate(query),
            MatchMethod::Fa => self.best_flexible(query),
        }
    }

    /// Centre of a candidate's key cell in `(hr_h, hr_w)` pixel coordinates.
    pub fn key_position(&self, c: Candidate, hr_h: usize, hr_w: usize) -> (f64, f64) {
        cell_centre_hr(c.key, self.key_grid(c.source), hr_h, hr_w)
    }

    /// Key grid a candidate indexes into.
    pub fn key_grid(&self, source: MatchSource) -> &GridMeta {
        match source {
            MatchSource::Single(s) => self.sa.key_grids.get(s),
            MatchSource::Merged => &self.ma.grids.x4,
        }
    }

    pub fn num_queries(&self) -> usize {
        self.ma.merged.len()
    }
}

/// Fraction of correct matches per method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchAccuracy {
    /// Fixed-scale baseline: 4× queries against 4× keys only.
    pub ca: f64,
    pub sa: f64,
    pub ma: f64,
    pub fa: f64,
    /// Queries that were scored.
    pub queries: usize,
}

impl MatchAccuracy {
    pub fn get(&self, method: MatchMethod) -> f64 {
        match method {
            MatchMethod::Ca => self.ca,
            MatchMethod::Sa => self.sa,
            MatchMethod::Ma => self.ma,
            MatchMethod::Fa => self.fa,
        }
    }
}

/// Chebyshev distance within `tol`.
pub fn is_hit(found: (f64, f64), truth: (f64, f64), tol: f64) -> bool {
    (found.0 - truth.0).abs().max((found.1 - truth.1).abs()) <= tol
}

/// Scores each method against ground-truth positions (HR pixel coordinates,
/// `None` for queries to skip). A match counts when its key centre lies
/// within `tol` pixels (Chebyshev) of the truth.
pub fn score_matches(
    plan: &AlignmentPlan,
    truth: &[Option<(f64, f64)>],
    hr_h: usize,
    hr_w: usize,
    tol: f64,
) -> Result<MatchAccuracy> {
    if truth.len() != plan.num_queries() {
        return Err(dim_err!("{} ground-truth entries for {} queries", truth.len(), plan.num_queries()));
    }
    let mut counts = [0usize; 4];
    let mut n = 0;
    for (i, t) in truth.iter().enumerate() {
        let Some(t) = *t else { continue };
        n += 1;
        for (c, m) in counts.iter_mut().zip(MatchMethod::ALL) {
            *c += usize::from(is_hit(plan.key_position(plan.pick(m, i), hr_h, hr_w), t, tol));
        }
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(MatchAccuracy { ca: frac(counts[0]), sa: frac(counts[1]), ma: frac(counts[2]), fa: frac(counts[3]), queries: n })
}
