//! Binary evanescent-coupler splitter trees.
//!
//! A 1-to-2^depth waveguide splitter is a complete binary tree of 2x2
//! couplers stored in heap order (root at 0, children of `i` at `2i+1` and
//! `2i+2`). Each coupler sends fraction `r` of its input to the left
//! child. Leaf `k` (0-based) receives the product of the fractions along
//! its root-to-leaf path, so the leaf vector always sums to 1 and the map
//! from couplers to leaf powers is exactly invertible from subtree sums.
//!
//! Thermal drift is modeled per coupler as a linear shift of `r` with
//! temperature, clamped away from the lossless-tree poles at 0 and 1.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp bound keeping effective split fractions inside (0, 1).
pub const SPLIT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupler {
    /// Fraction of input power routed to the left child at the reference
    /// temperature.
    pub split_fraction: f64,
    /// Linear drift of `split_fraction` per degree Celsius.
    #[serde(rename = "thermal_coeff_per_c", default)]
    pub thermal_coeff: f64,
}

impl Coupler {
    pub fn balanced() -> Self {
        Coupler { split_fraction: 0.5, thermal_coeff: 0.0 }
    }

    /// Effective split fraction at temperature `temp`.
    pub fn effective(&self, temp: f64, reference_temp: f64) -> f64 {
        (self.split_fraction + self.thermal_coeff * (temp - reference_temp))
            .clamp(SPLIT_CLAMP, 1.0 - SPLIT_CLAMP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitterTree {
    pub depth: usize,
    /// `2^depth - 1` couplers in heap order.
    pub couplers: Vec<Coupler>,
    #[serde(rename = "reference_temp_c")]
    pub reference_temp: f64,
    #[serde(rename = "input_mfd_m")]
    pub input_mfd: f64,
    #[serde(rename = "max_input_power_w")]
    pub max_input_power: f64,
}

impl SplitterTree {
    /// A perfectly balanced tree (every coupler 50/50, no drift).
    pub fn balanced(depth: usize) -> Result<Self> {
        if depth == 0 || depth > 16 {
            return Err(Error::Config(format!("splitter depth must be in 1..=16, got {depth}")));
        }
        Ok(SplitterTree {
            depth,
            couplers: vec![Coupler::balanced(); (1 << depth) - 1],
            reference_temp: 23.0,
            input_mfd: 4.5e-6,
            max_input_power: 2.0,
        })
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!(
                "splitter depth must be in 1..=16, got {}",
                self.depth
            )));
        }
        let want = (1usize << self.depth) - 1;
        if self.couplers.len() != want {
            return Err(Error::Config(format!(
                "depth {} tree needs {want} couplers, got {}",
                self.depth,
                self.couplers.len()
            )));
        }
        for (i, c) in self.couplers.iter().enumerate() {
            if !c.split_fraction.is_finite() || !(0.0..=1.0).contains(&c.split_fraction) {
                return Err(Error::Config(format!(
                    "coupler {i}: split fraction must be in [0, 1], got {}",
                    c.split_fraction
                )));
            }
            if !c.thermal_coeff.is_finite() {
                return Err(Error::Config(format!("coupler {i}: thermal coeff must be finite")));
            }
        }
        if !(self.input_mfd > 0.0) || !(self.max_input_power > 0.0) {
            return Err(Error::Config(
                "splitter input MFD and max input power must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_uniform_thermal_coeff(mut self, coeff: f64) -> Self {
        for c in &mut self.couplers {
            c.thermal_coeff = coeff;
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("splitter tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: SplitterTree = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("splitter tree json: {e}")))?;
        tree.validate()?;
        Ok(tree)
    }
}

/// Relative leaf powers, leaf 0 first. `normalized` records whether the
/// vector has been rescaled to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPowers {
    pub powers: Vec<f64>,
    pub normalized: bool,
}

impl LeafPowers {
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::InvalidInput("leaf power vector is empty".into()));
        }
        for (i, p) in powers.iter().enumerate() {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "leaf {} power must be finite and nonnegative, got {p}",
                    i + 1
                )));
            }
        }
        Ok(LeafPowers { powers, normalized: false })
    }

    pub fn normalize(mut self) -> Result<Self> {
        let sum: f64 = self.powers.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidInput("leaf powers sum to zero".into()));
        }
        for p in &mut self.powers {
            *p /= sum;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    /// max/min power ratio (the "spread" of the tree).
    pub fn spread(&self) -> f64 {
        let max = self.powers.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.powers.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

/// Evaluates leaf powers at temperature `temp`. Split fractions drift
/// linearly and are clamped to (0, 1); the result is renormalized so the
/// leaf vector sums to 1 even after clamping.
pub fn forward_powers(tree: &SplitterTree, temp: f64) -> Result<LeafPowers> {
    tree.validate()?;
    let n = tree.leaf_count();
    let mut powers = vec![0.0; n];
    for (leaf, slot) in powers.iter_mut().enumerate() {
        let mut p = 1.0;
        let mut node = 0usize;
        for level in (0..tree.depth).rev() {
            let r = tree.couplers[node].effective(temp, tree.reference_temp);
            let go_right = (leaf >> level) & 1 == 1;
            if go_right {
                p *= 1.0 - r;
                node = 2 * node + 2;
            } else {
                p *= r;
                node = 2 * node + 1;
            }
        }
        *slot = p;
    }
    LeafPowers { powers, normalized: false }.normalize()
}

/// Exact inverse of `forward_powers` at the reference temperature: each
/// coupler's split fraction is its left-subtree sum over its subtree sum.
/// Fitted trees carry zero thermal coefficients.
pub fn fit_tree(measured: &LeafPowers, depth: usize) -> Result<SplitterTree> {
    let n = 1usize
        .checked_shl(depth as u32)
        .filter(|_| depth >= 1 && depth <= 16)
        .ok_or_else(|| Error::SplitterFit(format!("depth {depth} out of range")))?;
    if measured.powers.len() != n {
        return Err(Error::SplitterFit(format!(
            "depth {depth} expects {n} leaf powers, got {}",
            measured.powers.len()
        )));
    }
    for (i, p) in measured.powers.iter().enumerate() {
        if !(*p > 0.0) {
            return Err(Error::SplitterFit(format!(
                "leaf {} power must be strictly positive to invert the tree, got {p}",
                i + 1
            )));
        }
    }
    let mut tree = SplitterTree::balanced(depth)?;
    fit_node(&measured.powers, 0, &mut tree.couplers);
    Ok(tree)
}

/// Returns the subtree sum; fills split fractions on the way up.
fn fit_node(leaves: &[f64], node: usize, couplers: &mut [Coupler]) -> f64 {
    if leaves.len() == 1 {
        return leaves[0];
    }
    let half = leaves.len() / 2;
    let left = fit_node(&leaves[..half], 2 * node + 1, couplers);
    let right = fit_node(&leaves[half..], 2 * node + 2, couplers);
    let total = left + right;
    couplers[node].split_fraction = left / total;
    couplers[node].thermal_coeff = 0.0;
    total
}

/// Worst-case relative leaf-power change over a temperature range,
/// evaluated at the range endpoints against the reference temperature.
pub fn thermal_sensitivity(tree: &SplitterTree, temp_range: (f64, f64)) -> Result<f64> {
    tree.validate()?;
    let (lo, hi) = temp_range;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("bad temperature range [{lo}, {hi}]")));
    }
    let reference = forward_powers(tree, tree.reference_temp)?;
    let mut worst: f64 = 0.0;
    for t in [lo, hi] {
        let shifted = forward_powers(tree, t)?;
        for (p, p0) in shifted.powers.iter().zip(&reference.powers) {
            worst = worst.max(((p - p0) / p0).abs());
        }
    }
    Ok(worst)
}

/// Finds the uniform thermal coefficient whose worst-case relative leaf
/// change over `temp_range` equals `target`, by bisection to 1e-12 in the
/// sensitivity. This is the inverse of `thermal_sensitivity` for trees in
/// the clamp-free regime.
pub fn calibrate_uniform_thermal(
    tree: &SplitterTree,
    temp_range: (f64, f64),
    target: f64,
) -> Result<SplitterTree> {
    tree.validate()?;
    if !(target > 0.0) || target >= 1.0 {
        return Err(Error::Config(format!(
            "thermal sensitivity target must be in (0, 1), got {target}"
        )));
    }
    let sens = |c: f64| -> Result<f64> {
        thermal_sensitivity(&tree.clone().with_uniform_thermal_coeff(c), temp_range)
    };
    let mut hi = 1e-4;
    while sens(hi)? < target {
        hi *= 2.0;
        if hi > 1.0 {
            return Err(Error::Config(format!(
                "sensitivity target {target} unreachable over range {temp_range:?}"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sens(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi.max(1e-30) {
            break;
        }
    }
    Ok(tree.clone().with_uniform_thermal_coeff(hi))
}

/// Reads measured leaf powers from two-column CSV (channel, relative
/// power). Channels are 1-based and must each appear exactly once; the
/// count must be a power of two.
pub fn read_measured_csv<R: Read>(r: R) -> Result<LeafPowers> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2; // header is row 1
        let rec = rec.map_err(|e| Error::InvalidInput(format!("csv row {row}: {e}")))?;
        if rec.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "csv row {row}: expected (channel, relative_power)"
            )));
        }
        let ch: usize = rec[0]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("csv row {row}: bad channel {:?}", &rec[0])))?;
        let p: f64 = rec[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("csv row {row}: bad power {:?}", &rec[1])))?;
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidInput(format!(
                "csv row {row}: channel {ch} power must be strictly positive, got {p}"
            )));
        }
        rows.push((ch, p));
    }
    let n = rows.len();
    if n < 2 || n & (n - 1) != 0 {
        return Err(Error::InvalidInput(format!(
            "measured channel count must be a power of two >= 2, got {n}"
        )));
    }
    let mut powers = vec![f64::NAN; n];
    for (ch, p) in rows {
        if ch == 0 || ch > n {
            return Err(Error::InvalidInput(format!("channel {ch} outside 1..={n}")));
        }
        if !powers[ch - 1].is_nan() {
            return Err(Error::InvalidInput(format!("channel {ch} appears twice")));
        }
        powers[ch - 1] = p;
    }
    LeafPowers::new(powers)
}

pub fn read_measured_csv_file(path: &Path) -> Result<LeafPowers> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_measured_csv(std::io::BufReader::new(f))
}

/// Writes leaf powers in the measured-CSV format (channel, relative_power).
pub fn write_measured_csv<W: Write>(powers: &LeafPowers, mut w: W) -> std::io::Result<()> {
    writeln!(w, "channel,relative_power")?;
    for (i, p) in powers.powers.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, p)?;
    }
    Ok(())
}
