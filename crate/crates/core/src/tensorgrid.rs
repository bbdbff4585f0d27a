//! Collocation grids, dense row-major fields and the seeded generator used for
//! every random draw in the crate.
//!
//! All multi-dimensional data is stored row-major with the last axis varying
//! fastest. Network inputs live on the reference interval `[-1, 1]`; an
//! [`AxisMap`] carries the affine map from a physical axis onto it together
//! with the chain-rule factor applied to derivatives.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A sorted set of coordinates along one axis of a physical domain `[lo, hi]`.
///
/// Singleton grids are allowed; they describe the fixed coordinate of a
/// boundary face or the initial slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    points: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Grid1D {
    pub fn new(points: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("grid must contain at least one point"));
        }
        if !(lo <= hi) {
            return Err(Error::invalid(format!("grid bounds out of order: [{lo}, {hi}]")));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        if points.iter().any(|&p| !(p >= lo && p <= hi)) {
            return Err(Error::invalid(format!("grid points must lie in [{lo}, {hi}]")));
        }
        Ok(Self { points, lo, hi })
    }

    /// A one-point axis at `x` inside the domain `[lo, hi]`.
    pub fn singleton(x: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![x], lo, hi)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Keeps the points at `range`, preserving the domain bounds.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.points[range].to_vec(), self.lo, self.hi)
    }
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Grid1D> {
    if n < 2 {
        return Err(Error::invalid(format!("linspace needs n >= 2, got {n}")));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("linspace needs lo < hi, got [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut points: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    points[n - 1] = hi;
    Grid1D::new(points, lo, hi)
}

/// Tensor product of per-axis grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrid {
    axes: Vec<Grid1D>,
    axis_names: Vec<String>,
}

impl FactorGrid {
    pub fn new(axes: Vec<Grid1D>, axis_names: Vec<String>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("factor grid needs at least one axis"));
        }
        if axes.len() != axis_names.len() {
            return Err(Error::invalid("one name per axis required"));
        }
        Ok(Self { axes, axis_names })
    }

    /// Names the axes `x0, x1, ...`.
    pub fn unnamed(axes: Vec<Grid1D>) -> Result<Self> {
        let names = (0..axes.len()).map(|i| format!("x{i}")).collect();
        Self::new(axes, names)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Grid1D] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Grid1D {
        &self.axes[i]
    }

    pub fn axis_names(&self) -> &[String] {
        &self.axis_names
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Grid1D::len).collect()
    }

    /// Number of points in the implied tensor product.
    pub fn num_points(&self) -> usize {
        self.axes.iter().map(Grid1D::len).product()
    }

    /// Sum of axis lengths: the number of univariate evaluations a separable
    /// model needs on this grid.
    pub fn num_axis_points(&self) -> usize {
        self.axes.iter().map(Grid1D::len).sum()
    }

    pub fn with_axis(&self, i: usize, axis: Grid1D) -> Self {
        let mut out = self.clone();
        out.axes[i] = axis;
        out
    }
}

/// Materializes every point of the grid, last axis fastest.
pub fn tensor_points(grid: &FactorGrid) -> Vec<Vec<f64>> {
    let shape = grid.shape();
    let mut out = Vec::with_capacity(grid.num_points());
    for_each_index(&shape, |idx| {
        out.push(idx.iter().enumerate().map(|(a, &i)| grid.axes[a].points[i]).collect());
    });
    out
}

/// Calls `f` with every multi-index of `shape` in row-major order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Pairwise (cascade) summation. The split points depend only on the
/// length, so the result is reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Affine map of a physical interval onto `[-1, 1]`: `xi = (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    pub scale: f64,
    pub shift: f64,
}

impl AxisMap {
    pub fn identity() -> Self {
        Self { scale: 1.0, shift: 0.0 }
    }

    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!(
                "axis bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            scale: 0.5 * (hi - lo),
            shift: 0.5 * (hi + lo),
        })
    }

    #[inline]
    pub fn to_reference(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    #[inline]
    pub fn to_physical(&self, xi: f64) -> f64 {
        xi * self.scale + self.shift
    }

    /// Multiplier turning a reference-interval derivative of the given order
    /// into a physical one.
    #[inline]
    pub fn deriv_factor(&self, order: u8) -> f64 {
        match order {
            0 => 1.0,
            1 => 1.0 / self.scale,
            _ => 1.0 / (self.scale * self.scale),
        }
    }
}

/// Maps a grid onto `[-1, 1]` using its domain bounds.
pub fn normalize_axis(grid: &Grid1D) -> Result<(Grid1D, AxisMap)> {
    let map = AxisMap::from_bounds(grid.lo, grid.hi)?;
    let points = grid
        .points
        .iter()
        .map(|&x| map.to_reference(x).clamp(-1.0, 1.0))
        .collect();
    Ok((Grid1D::new(points, -1.0, 1.0)?, map))
}

/// Row-major buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseField {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::invalid(format!(
                "field of shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.offset(idx)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Selects index `i` along `axis`, dropping that axis.
    pub fn slice_axis(&self, axis: usize, i: usize) -> Result<Self> {
        if axis >= self.shape.len() || i >= self.shape[axis] {
            return Err(Error::invalid(format!(
                "slice ({axis}, {i}) out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let mut values = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + i) * inner;
            values.extend_from_slice(&self.values[base..base + inner]);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::new(shape, values)
    }

    /// Writes the text container: a `#` magic line, `key: value` header lines
    /// (including `shape`), a `data:` marker, then the values with one line
    /// per last-axis row. Values use the shortest round-trip representation,
    /// so reading the file back reproduces every bit.
    pub fn to_container(&self, header: &BTreeMap<String, String>) -> String {
        let mut s = String::from("# spikan dense-field v1\n");
        for (k, v) in header {
            if k != "shape" {
                let _ = writeln!(s, "{k}: {v}");
            }
        }
        let shape: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "shape: {}", shape.join(" "));
        s.push_str("data:\n");
        let row = self.shape.last().copied().unwrap_or(1).max(1);
        for chunk in self.values.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_container(text: &str, source_name: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "# spikan dense-field v1" => {}
            _ => return Err(Error::parse(source_name, 1, "missing dense-field magic line")),
        }
        let mut header = BTreeMap::new();
        let mut shape = None;
        let mut in_data = false;
        let mut values = Vec::new();
        for (no, line) in lines {
            let line_no = no + 1;
            if in_data {
                for tok in line.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::parse(source_name, line_no, format!("bad number {tok:?}")))?;
                    values.push(v);
                }
                continue;
            }
            if line.trim() == "data:" {
                in_data = true;
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(source_name, line_no, "expected `key: value`"))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "shape" {
                let dims = v
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::parse(source_name, line_no, "bad shape"))?;
                shape = Some(dims);
            } else {
                header.insert(k, v);
            }
        }
        let shape = shape.ok_or_else(|| Error::parse(source_name, 0, "missing shape header"))?;
        if !in_data {
            return Err(Error::parse(source_name, 0, "missing data section"));
        }
        let field = Self::new(shape, values).map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
        Ok((field, header))
    }

    pub fn write_file(&self, path: &Path, header: &BTreeMap<String, String>) -> Result<()> {
        std::fs::write(path, self.to_container(header)).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_container(&text, &path.display().to_string())
    }
}

/// SplitMix64: a scrambled 64-bit counter. Identical seeds give identical
/// streams everywhere since only integer arithmetic is involved.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw (Box-Muller, second variate cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}
