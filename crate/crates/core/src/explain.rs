//! Per-factor force explanations: mean, per-axis std and a density grid.

use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::dynamics::{FactorKind, ForceDistribution, ForceModel, SamplingMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::rollout::WindowRollout;
use crate::Vec2;

/// Std below which a grid collapses to a one-hot cell.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Force-space window `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Extent {
    /// Mean ± `n_std` std per axis; axes with no spread get ±1.
    pub fn around(mean: Vec2, std: Vec2, n_std: f64) -> Self {
        let half = |s: f64| if s > DEGENERATE_STD { n_std * s } else { 1.0 };
        Extent {
            x: [mean.x - half(std.x), mean.x + half(std.x)],
            y: [mean.y - half(std.y), mean.y + half(std.y)],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.x[1] > self.x[0] && self.y[1] > self.y[0]) {
            return Err(Error::Validation("extent must have positive width and height".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtentRule {
    Fixed(Extent),
    /// Per factor, mean ± n std.
    Std(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorExplanation {
    pub kind: FactorKind,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    /// `grid[row][col]`; rows run along y, columns along x, cell centers.
    pub grid: Vec<Vec<f64>>,
    pub extent: Extent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepExplanation {
    pub step: usize,
    pub position: [f64; 2],
    pub factors: Vec<FactorExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub window_id: usize,
    pub goal: [f64; 2],
    pub grid_size: usize,
    pub steps: Vec<StepExplanation>,
}

/// Sums distributions of one kind: means add, stds add in quadrature.
pub fn combine(dists: &[ForceDistribution], kind: FactorKind) -> Option<(Vec2, Vec2)> {
    let mut any = false;
    let mut mean = Vec2::zeros();
    let mut var = Vec2::zeros();
    for d in dists.iter().filter(|d| d.kind == kind) {
        any = true;
        mean += d.mean_force();
        let s = d.axis_std();
        var += s.component_mul(&s);
    }
    any.then(|| (mean, var.map(f64::sqrt)))
}

fn cell_of(value: f64, range: [f64; 2], g: usize) -> usize {
    let t = ((value - range[0]) / (range[1] - range[0]) * g as f64).floor();
    t.clamp(0.0, (g - 1) as f64) as usize
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Density of the independent per-axis Gaussian at the `g × g` cell centers.
pub fn density_grid(mean: Vec2, std: Vec2, extent: &Extent, g: usize) -> Result<Vec<Vec<f64>>> {
    if g == 0 {
        return Err(Error::Validation("grid size must be at least 1".into()));
    }
    extent.validate()?;
    let mut grid = vec![vec![0.0; g]; g];
    if std.x < DEGENERATE_STD || std.y < DEGENERATE_STD {
        grid[cell_of(mean.y, extent.y, g)][cell_of(mean.x, extent.x, g)] = 1.0;
        return Ok(grid);
    }
    let cx = |i: usize| extent.x[0] + (i as f64 + 0.5) * (extent.x[1] - extent.x[0]) / g as f64;
    let cy = |i: usize| extent.y[0] + (i as f64 + 0.5) * (extent.y[1] - extent.y[0]) / g as f64;
    let px: Vec<f64> = (0..g).map(|i| normal_pdf(cx(i), mean.x, std.x)).collect();
    for (r, row) in grid.iter_mut().enumerate() {
        let py = normal_pdf(cy(r), mean.y, std.y);
        for (c, v) in row.iter_mut().enumerate() {
            *v = px[c] * py;
        }
    }
    Ok(grid)
}

pub fn explain_factor(kind: FactorKind, mean: Vec2, std: Vec2, g: usize, rule: &ExtentRule) -> Result<FactorExplanation> {
    let extent = match rule {
        ExtentRule::Fixed(e) => *e,
        ExtentRule::Std(n) => Extent::around(mean, std, *n),
    };
    Ok(FactorExplanation {
        kind,
        mean: [mean.x, mean.y],
        std: [std.x, std.y],
        grid: density_grid(mean, std, &extent, g)?,
        extent,
    })
}

/// Explanations along the mean rollout toward `goal`.
pub fn explain<M: ForceModel>(model: &M, window: &Window, goal: Vec2, g: usize, rule: &ExtentRule) -> Result<Explanation> {
    let mut r = rng::rollout_stream(0, window.id, 0);
    let mut cursor = WindowRollout::new(model, window, goal)?;
    let mut steps = Vec::with_capacity(cursor.horizon());
    while !cursor.done() {
        let dists = cursor.forces(&mut r)?;
        let mut factors = Vec::new();
        for kind in [FactorKind::Goal, FactorKind::Collision, FactorKind::Environment] {
            if let Some((mean, std)) = combine(&dists, kind) {
                factors.push(explain_factor(kind, mean, std, g, rule)?);
            }
        }
        let out = cursor.sample(&dists, SamplingMode::Mean, &mut r)?;
        let drift = out.state.position - out.residual;
        steps.push(StepExplanation {
            step: cursor.step,
            position: [cursor.state.position.x, cursor.state.position.y],
            factors,
        });
        cursor.commit(crate::data::AgentState::new(drift, out.state.velocity));
    }
    Ok(Explanation {
        window_id: window.id,
        goal: [goal.x, goal.y],
        grid_size: g,
        steps,
    })
}

/// Two per-axis stds as `[sx, sy]` with two decimals.
pub fn format_std(std: [f64; 2]) -> String {
    format!("[{:.2}, {:.2}]", std[0], std[1])
}
