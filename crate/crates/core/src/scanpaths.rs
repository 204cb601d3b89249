//! 2D-to-1D serialization of token grids.
//!
//! Grid cells are addressed by the flat index `row * width + col`. A
//! [`ScanPlan`] is a permutation `order` of those indices plus its inverse;
//! scanning reads `grid[order[t]]` into position `t`, and the reverse scan
//! writes position `t` back to `order[t]`.
//!
//! Global directions: row-major, column-major, and the full reversal of each.
//! Local directions visit non-overlapping windows in row-major order and the
//! cells inside each window in row-major order; the backward local direction
//! is the full reversal of the forward one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{FeatureMap, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanDirection {
    RowFwd,
    RowBwd,
    ColFwd,
    ColBwd,
    LocalFwd,
    LocalBwd,
}

impl ScanDirection {
    /// Directions of the single-modality block.
    pub const GLOBAL: [ScanDirection; 4] = [Self::RowFwd, Self::RowBwd, Self::ColFwd, Self::ColBwd];

    /// Directions of the cross-modal block: the four global ones plus two local.
    pub const CROSS: [ScanDirection; 6] = [
        Self::RowFwd,
        Self::RowBwd,
        Self::ColFwd,
        Self::ColBwd,
        Self::LocalFwd,
        Self::LocalBwd,
    ];

    pub fn is_local(self) -> bool {
        matches!(self, Self::LocalFwd | Self::LocalBwd)
    }
}

/// Largest admissible local window extent along an axis of `grid` cells.
pub fn max_window(grid: usize) -> usize {
    grid.div_ceil(3)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPlan {
    grid_h: usize,
    grid_w: usize,
    direction: ScanDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<(usize, usize)>,
    order: Vec<usize>,
    inverse: Vec<usize>,
}

/// Checks a local window against a grid: each extent must be positive, divide
/// the grid extent, and not exceed one third of it (rounded up).
pub fn check_window(grid_h: usize, grid_w: usize, window: (usize, usize)) -> Result<()> {
    let (wh, ww) = window;
    for (axis, g, w) in [("height", grid_h, wh), ("width", grid_w, ww)] {
        if w == 0 {
            return Err(Error::geom(format!("window {axis} must be positive")));
        }
        if g % w != 0 {
            return Err(Error::geom(format!(
                "window {axis} {w} does not divide grid {axis} {g}"
            )));
        }
        if w > max_window(g) {
            return Err(Error::geom(format!(
                "window {axis} {w} exceeds ceil({g}/3) = {}",
                max_window(g)
            )));
        }
    }
    Ok(())
}

impl ScanPlan {
    /// Builds the plan for `direction`. Local directions require `window`;
    /// global directions ignore it.
    pub fn build(
        grid_h: usize,
        grid_w: usize,
        direction: ScanDirection,
        window: Option<(usize, usize)>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::geom("scan grid must be non-empty"));
        }
        let (order, window) = match direction {
            ScanDirection::RowFwd | ScanDirection::RowBwd => ((0..grid_h * grid_w).collect::<Vec<_>>(), None),
            ScanDirection::ColFwd | ScanDirection::ColBwd => (
                (0..grid_w)
                    .flat_map(|c| (0..grid_h).map(move |r| r * grid_w + c))
                    .collect(),
                None,
            ),
            ScanDirection::LocalFwd | ScanDirection::LocalBwd => {
                let win = window.ok_or_else(|| Error::geom("local scan requires a window"))?;
                check_window(grid_h, grid_w, win)?;
                (local_order(grid_h, grid_w, win), Some(win))
            }
        };
        let order = match direction {
            ScanDirection::RowBwd | ScanDirection::ColBwd | ScanDirection::LocalBwd => {
                order.into_iter().rev().collect()
            }
            _ => order,
        };
        Ok(Self::from_parts(grid_h, grid_w, direction, window, order))
    }

    fn from_parts(
        grid_h: usize,
        grid_w: usize,
        direction: ScanDirection,
        window: Option<(usize, usize)>,
        order: Vec<usize>,
    ) -> Self {
        let mut inverse = vec![0; order.len()];
        for (t, &pos) in order.iter().enumerate() {
            inverse[pos] = t;
        }
        Self {
            grid_h,
            grid_w,
            direction,
            window,
            order,
            inverse,
        }
    }

    /// The plans used by a block: all `directions`, with `window` for the local ones.
    pub fn build_set(
        grid_h: usize,
        grid_w: usize,
        directions: &[ScanDirection],
        window: (usize, usize),
    ) -> Result<Vec<ScanPlan>> {
        directions
            .iter()
            .map(|&d| ScanPlan::build(grid_h, grid_w, d, d.is_local().then_some(window)))
            .collect()
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn direction(&self) -> ScanDirection {
        self.direction
    }

    pub fn window(&self) -> Option<(usize, usize)> {
        self.window
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Checks that `order` is a permutation of `0..H·W` and `inverse` undoes it.
    pub fn verify(&self) -> Result<()> {
        let n = self
            .grid_h
            .checked_mul(self.grid_w)
            .ok_or_else(|| Error::geom("grid size overflows"))?;
        if n == 0 {
            return Err(Error::geom("scan grid must be non-empty"));
        }
        if self.order.len() != n || self.inverse.len() != n {
            return Err(Error::geom(format!(
                "plan has {} entries for a {}x{} grid",
                self.order.len(),
                self.grid_h,
                self.grid_w
            )));
        }
        let mut seen = vec![false; n];
        for &pos in &self.order {
            if pos >= n || std::mem::replace(&mut seen[pos], true) {
                return Err(Error::geom(format!("order is not a permutation (index {pos})")));
            }
        }
        if let Some(t) = (0..n).find(|&t| self.inverse[self.order[t]] != t) {
            return Err(Error::geom(format!("inverse does not undo order at position {t}")));
        }
        if let Some(win) = self.window {
            check_window(self.grid_h, self.grid_w, win)?;
        }
        Ok(())
    }

    /// Swaps two entries of `order` without touching `inverse`, producing an
    /// inconsistent plan. Exists so verification suites can be mutation-tested.
    #[doc(hidden)]
    pub fn corrupt_swap(&mut self, i: usize, j: usize) {
        self.order.swap(i, j);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// Parses and verifies a plan exported by [`to_json`](Self::to_json).
    pub fn from_json(s: &str) -> Result<Self> {
        let plan: ScanPlan =
            serde_json::from_str(s).map_err(|e| Error::parse(Some(e.line()), e.to_string()))?;
        if plan.direction.is_local() != plan.window.is_some() {
            return Err(Error::geom("window must be present exactly for local directions"));
        }
        plan.verify()?;
        Ok(plan)
    }
}

fn local_order(grid_h: usize, grid_w: usize, (wh, ww): (usize, usize)) -> Vec<usize> {
    let mut order = Vec::with_capacity(grid_h * grid_w);
    for wr in (0..grid_h).step_by(wh) {
        for wc in (0..grid_w).step_by(ww) {
            for r in wr..wr + wh {
                for c in wc..wc + ww {
                    order.push(r * grid_w + c);
                }
            }
        }
    }
    order
}

fn check_grid(grid: &FeatureMap, plan: &ScanPlan) -> Result<()> {
    if grid.height() != plan.grid_h || grid.width() != plan.grid_w {
        return Err(Error::geom(format!(
            "plan is for a {}x{} grid, got {}x{}",
            plan.grid_h,
            plan.grid_w,
            grid.height(),
            grid.width()
        )));
    }
    Ok(())
}

/// `sequence[t] = grid[plan.order[t]]`.
pub fn apply_scan(grid: &FeatureMap, plan: &ScanPlan) -> Result<TokenSequence> {
    check_grid(grid, plan)?;
    let ch = grid.channels();
    let mut data = Vec::with_capacity(plan.len() * ch);
    for &pos in &plan.order {
        data.extend_from_slice(grid.cell(pos));
    }
    TokenSequence::new(plan.len(), ch, data)
}

/// Exact inverse of [`apply_scan`]: `grid[plan.order[t]] = sequence[t]`.
pub fn reverse_scan(seq: &TokenSequence, plan: &ScanPlan) -> Result<FeatureMap> {
    if seq.len() != plan.len() {
        return Err(Error::geom(format!(
            "sequence has {} tokens, plan covers {}",
            seq.len(),
            plan.len()
        )));
    }
    let mut grid = FeatureMap::zeros(plan.grid_h, plan.grid_w, seq.channels());
    for (t, &pos) in plan.order.iter().enumerate() {
        grid.cell_mut(pos).copy_from_slice(seq.row(t));
    }
    Ok(grid)
}

/// Elementwise sum of the per-direction grids, accumulated in list order.
/// Blocks merge either 4 (single-modality) or 6 (cross-modal) directions.
pub fn merge_directions(grids: &[FeatureMap]) -> Result<FeatureMap> {
    if grids.len() != 4 && grids.len() != 6 {
        return Err(Error::dim(format!(
            "merge expects 4 or 6 direction grids, got {}",
            grids.len()
        )));
    }
    let mut acc = grids[0].clone();
    for g in &grids[1..] {
        acc = acc.add(g)?;
    }
    Ok(acc)
}
