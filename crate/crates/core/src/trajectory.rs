//! Single-spin trajectories, piecewise-constant fields and their algebra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn int(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    /// Row/column index used by 2×2 kernels: `+` is 0, `−` is 1.
    pub fn index(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    pub fn from_index(i: usize) -> Sign {
        if i == 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.int() as i8
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Sign, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("sign must be +1 or -1, got {v}")),
        }
    }
}

/// Maximal interval on which a piecewise-constant function is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Piecewise-constant function on `[0, beta]`.
pub trait Piecewise {
    fn beta(&self) -> f64;
    fn segments(&self) -> impl Iterator<Item = Segment> + '_;
}

/// Cadlag `±1` path on `[0, beta]`: initial sign plus strictly increasing
/// flip times in `(0, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr")]
pub struct Trajectory {
    initial_sign: Sign,
    flips: Vec<f64>,
    beta: f64,
}

#[derive(Deserialize)]
struct TrajectoryRepr {
    initial_sign: Sign,
    flips: Vec<f64>,
    beta: f64,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;
    fn try_from(r: TrajectoryRepr) -> Result<Self> {
        Trajectory::new(r.initial_sign, r.flips, r.beta)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("beta must be positive and finite, got {beta}")))
    }
}

fn same_beta(a: f64, b: f64) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::BetaMismatch(a, b))
    }
}

impl Trajectory {
    pub fn new(initial_sign: Sign, flips: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        for (i, &t) in flips.iter().enumerate() {
            if !(t > 0.0 && t < beta) {
                return Err(Error::InvalidTrajectory(format!("flip {t} not in (0, {beta})")));
            }
            if i > 0 && flips[i - 1] >= t {
                return Err(Error::InvalidTrajectory("flips must be strictly increasing".into()));
            }
        }
        Ok(Self { initial_sign, flips, beta })
    }

    pub fn constant(sign: Sign, beta: f64) -> Result<Self> {
        Self::new(sign, Vec::new(), beta)
    }

    /// Builds a trajectory from unsorted flip times, canonicalizing
    /// measure-zero collisions: coincident pairs cancel, a flip at 0 toggles
    /// the initial sign and a flip at `beta` is dropped.
    pub fn from_flip_times(initial_sign: Sign, mut times: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if times.iter().any(|t| !(0.0..=beta).contains(t)) {
            return Err(Error::InvalidTrajectory("flip time outside [0, beta]".into()));
        }
        times.sort_by(f64::total_cmp);
        let mut sign = initial_sign;
        let mut flips: Vec<f64> = Vec::with_capacity(times.len());
        for t in times {
            if t == 0.0 {
                sign = sign.flip();
            } else if t == beta {
                continue;
            } else if flips.last() == Some(&t) {
                flips.pop();
            } else {
                flips.push(t);
            }
        }
        Ok(Self { initial_sign: sign, flips, beta })
    }

    pub fn initial_sign(&self) -> Sign {
        self.initial_sign
    }

    pub fn flips(&self) -> &[f64] {
        &self.flips
    }

    pub fn n_flips(&self) -> usize {
        self.flips.len()
    }

    /// Time of the last flip, or 0 when there is none.
    pub fn last_flip(&self) -> f64 {
        self.flips.last().copied().unwrap_or(0.0)
    }

    pub fn final_sign(&self) -> Sign {
        if self.flips.len() % 2 == 0 {
            self.initial_sign
        } else {
            self.initial_sign.flip()
        }
    }

    pub fn is_constant(&self, sign: Sign) -> bool {
        self.flips.is_empty() && self.initial_sign == sign
    }

    /// Value at `t`; at a flip time this is the post-flip value.
    pub fn evaluate(&self, t: f64) -> Result<Sign> {
        if !(0.0..=self.beta).contains(&t) {
            return Err(Error::TimeOutOfRange { t, beta: self.beta });
        }
        let n = self.flips.partition_point(|&f| f <= t);
        Ok(if n % 2 == 0 { self.initial_sign } else { self.initial_sign.flip() })
    }

    /// `sigma • 1`, the time integral of the path.
    pub fn dot_one(&self) -> f64 {
        let mut total = 0.0;
        for s in self.segments() {
            total += s.value * s.len();
        }
        total
    }
}

impl Piecewise for Trajectory {
    fn beta(&self) -> f64 {
        self.beta
    }

    fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.flips.len();
        let s0 = self.initial_sign.value();
        (0..=n).map(move |i| {
            let start = if i == 0 { 0.0 } else { self.flips[i - 1] };
            let end = if i == n { self.beta } else { self.flips[i] };
            let value = if i % 2 == 0 { s0 } else { -s0 };
            Segment { start, end, value }
        })
    }
}

/// Piecewise-constant real field on `[0, beta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseField {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    beta: f64,
}

impl PiecewiseField {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if values.is_empty() || breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidField("need one value per subinterval".into()));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != beta {
            return Err(Error::InvalidField("breakpoints must start at 0 and end at beta".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidField("breakpoints must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("values must be finite".into()));
        }
        Ok(Self { breakpoints, values, beta })
    }

    pub fn constant(value: f64, beta: f64) -> Result<Self> {
        Self::new(vec![0.0, beta], vec![value], beta)
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let segs: Vec<Segment> = traj.segments().collect();
        Self::from_segments(&segs, traj.beta)
    }

    /// Builds from contiguous segments, merging neighbours with equal values.
    fn from_segments(segs: &[Segment], beta: f64) -> Self {
        let mut breakpoints = vec![0.0];
        let mut values: Vec<f64> = Vec::with_capacity(segs.len());
        for s in segs {
            if s.end <= s.start {
                continue;
            }
            if values.last() == Some(&s.value) {
                *breakpoints.last_mut().unwrap() = s.end;
            } else {
                values.push(s.value);
                breakpoints.push(s.end);
            }
        }
        *breakpoints.last_mut().unwrap() = beta;
        Self { breakpoints, values, beta }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_pieces(&self) -> usize {
        self.values.len()
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.beta).contains(&t) {
            return Err(Error::TimeOutOfRange { t, beta: self.beta });
        }
        let i = self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1);
        Ok(self.values[i.min(self.values.len() - 1)])
    }

    /// `∫ |h|`.
    pub fn l1_norm(&self) -> f64 {
        self.segments().map(|s| s.value.abs() * s.len()).sum()
    }

    /// `h • 1`.
    pub fn integral(&self) -> f64 {
        self.segments().map(|s| s.value * s.len()).sum()
    }

    pub fn add(&self, other: &PiecewiseField) -> Result<PiecewiseField> {
        same_beta(self.beta, other.beta)?;
        let mut segs = Vec::new();
        merge(self, other, |start, end, a, b| segs.push(Segment { start, end, value: a + b }))?;
        Ok(Self::from_segments(&segs, self.beta))
    }

    pub fn scale(&self, c: f64) -> PiecewiseField {
        let segs: Vec<Segment> =
            self.segments().map(|s| Segment { value: c * s.value, ..s }).collect();
        Self::from_segments(&segs, self.beta)
    }

    /// Restriction to `[0, t]`, viewed as a field on an interval of length `t`.
    pub fn restrict_prefix(&self, t: f64) -> Result<PiecewiseField> {
        if !(t > 0.0 && t <= self.beta) {
            return Err(Error::InvalidArgument(format!("prefix length {t} not in (0, beta]")));
        }
        let segs: Vec<Segment> = self
            .segments()
            .filter(|s| s.start < t)
            .map(|s| Segment { end: s.end.min(t), ..s })
            .collect();
        Ok(Self::from_segments(&segs, t))
    }
}

impl Piecewise for PiecewiseField {
    fn beta(&self) -> f64 {
        self.beta
    }

    fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        (0..self.values.len()).map(move |i| Segment {
            start: self.breakpoints[i],
            end: self.breakpoints[i + 1],
            value: self.values[i],
        })
    }
}

/// Walks the common refinement of two partitions, calling
/// `f(start, end, a_value, b_value)` on each non-empty cell.
pub fn merge<A: Piecewise, B: Piecewise>(
    a: &A,
    b: &B,
    mut f: impl FnMut(f64, f64, f64, f64),
) -> Result<()> {
    same_beta(a.beta(), b.beta())?;
    let mut ia = a.segments();
    let mut ib = b.segments();
    let (mut sa, mut sb) = match (ia.next(), ib.next()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Ok(()),
    };
    let mut cur = 0.0;
    loop {
        let end = sa.end.min(sb.end);
        if end > cur {
            f(cur, end, sa.value, sb.value);
            cur = end;
        }
        let mut done = false;
        if sa.end <= end {
            match ia.next() {
                Some(x) => sa = x,
                None => done = true,
            }
        }
        if sb.end <= end {
            match ib.next() {
                Some(x) => sb = x,
                None => done = true,
            }
        }
        if done {
            return Ok(());
        }
    }
}

/// `∫ a(t) b(t) dt`, exact over the merged partition.
pub fn dot<A: Piecewise>(a: &A, b: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    merge(a, b, |s, e, x, y| total += x * y * (e - s))?;
    Ok(total)
}

/// `∫ |a(t) − b(t)| dt`.
pub fn l1_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    merge(a, b, |s, e, x, y| total += (x - y).abs() * (e - s))?;
    Ok(total)
}

/// `a(t) ≤ b(t)` on every cell of the merged partition.
pub fn partial_leq(a: &Trajectory, b: &Trajectory) -> Result<bool> {
    let mut ok = true;
    merge(a, b, |_, _, x, y| ok &= x <= y)?;
    Ok(ok)
}

/// Model parameters: inverse temperature, transverse field, base longitudinal
/// field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub lambda: f64,
    pub h: PiecewiseField,
}

impl ModelParams {
    pub fn new(beta: f64, lambda: f64, h: f64) -> Result<Self> {
        check_beta(beta)?;
        Self::with_field(lambda, PiecewiseField::constant(h, beta)?)
    }

    pub fn with_field(lambda: f64, h: PiecewiseField) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { beta: h.beta(), lambda, h })
    }

    /// The base field's value when it is constant.
    pub fn h_const(&self) -> Option<f64> {
        self.h.is_constant().then(|| self.h.values()[0])
    }
}

/// `h_base + Σ neighbours + extra`, with breakpoints at the union of all
/// discontinuities. Values are recomputed exactly on each cell, not
/// accumulated, so no rounding drift builds up.
pub fn assemble_field<'a>(
    params: &ModelParams,
    neighbors: impl IntoIterator<Item = &'a Trajectory>,
    extra: Option<&PiecewiseField>,
) -> Result<PiecewiseField> {
    let beta = params.beta;
    // Events: (time, neighbour delta, field index that advances).
    let mut events: Vec<(f64, i64, Option<usize>)> = Vec::new();
    let mut nsum: i64 = 0;
    for tr in neighbors {
        same_beta(beta, tr.beta)?;
        let s0 = tr.initial_sign.int();
        nsum += s0;
        for (k, &t) in tr.flips.iter().enumerate() {
            let before = if k % 2 == 0 { s0 } else { -s0 };
            events.push((t, -2 * before, None));
        }
    }
    let mut fields: Vec<&PiecewiseField> = vec![&params.h];
    if let Some(e) = extra {
        same_beta(beta, e.beta)?;
        fields.push(e);
    }
    for (fi, f) in fields.iter().enumerate() {
        for &t in &f.breakpoints[1..f.breakpoints.len() - 1] {
            events.push((t, 0, Some(fi)));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut idx = vec![0usize; fields.len()];
    let value = |idx: &[usize], nsum: i64| -> f64 {
        fields.iter().zip(idx).map(|(f, &i)| f.values[i]).sum::<f64>() + nsum as f64
    };
    let mut segs = Vec::with_capacity(events.len() + 1);
    let mut start = 0.0;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        let v = value(&idx, nsum);
        segs.push(Segment { start, end: t, value: v });
        while i < events.len() && events[i].0 == t {
            nsum += events[i].1;
            if let Some(fi) = events[i].2 {
                idx[fi] += 1;
            }
            i += 1;
        }
        start = t;
    }
    segs.push(Segment { start, end: beta, value: value(&idx, nsum) });
    Ok(PiecewiseField::from_segments(&segs, beta))
}
