//! Regularization functionals with projections onto `{R <= ρ}`, proximal maps,
//! the feasibility-transfer scaling and Bregman distances.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::forward::BoxConstraint;
use crate::grid::GridFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegularizerKind {
    /// `max |x_i - c_i|`
    Sup,
    /// h-weighted `||x - c||_2`
    L2,
    /// `w |e_1| + Σ |e_{i+1} - e_i|` with `e = x - c`
    Bv1d { anchor_weight: f64 },
}

#[derive(Debug, Clone)]
pub struct Regularizer {
    kind: RegularizerKind,
    center: Option<GridFunction>,
}

/// An element of `∂R(x)`, acting through the h-weighted inner product.
#[derive(Debug, Clone)]
pub struct SubgradientElement {
    pub xi: GridFunction,
}

impl Regularizer {
    pub fn new(kind: RegularizerKind, center: Option<GridFunction>) -> Result<Self> {
        if let RegularizerKind::Bv1d { anchor_weight } = kind {
            if !(anchor_weight >= 0.0 && anchor_weight.is_finite()) {
                return domain(format!("BV anchor weight must be finite and >= 0, got {anchor_weight}"));
            }
        }
        Ok(Self { kind, center })
    }

    pub fn sup() -> Self {
        Self { kind: RegularizerKind::Sup, center: None }
    }

    pub fn l2() -> Self {
        Self { kind: RegularizerKind::L2, center: None }
    }

    pub fn bv1d(anchor_weight: f64) -> Result<Self> {
        Self::new(RegularizerKind::Bv1d { anchor_weight }, None)
    }

    pub fn with_center(mut self, center: GridFunction) -> Self {
        self.center = Some(center);
        self
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    /// Center `c`, materialized in the space of `x`.
    pub fn center_like(&self, x: &GridFunction) -> GridFunction {
        match &self.center {
            Some(c) => c.clone(),
            None => x.like(vec![0.0; x.len()]),
        }
    }

    fn check_space(&self, x: &GridFunction) -> Result<()> {
        if let Some(c) = &self.center {
            if !c.same_space(x) {
                return domain(format!("regularizer center has {} values, argument has {}", c.len(), x.len()));
            }
        }
        Ok(())
    }

    fn offsets(&self, x: &GridFunction) -> Vec<f64> {
        match &self.center {
            Some(c) => x.values().iter().zip(c.values()).map(|(a, b)| a - b).collect(),
            None => x.values().to_vec(),
        }
    }

    fn recenter(&self, x: &GridFunction, e: Vec<f64>) -> GridFunction {
        match &self.center {
            Some(c) => x.like(e.iter().zip(c.values()).map(|(a, b)| a + b).collect()),
            None => x.like(e),
        }
    }

    pub fn value(&self, x: &GridFunction) -> f64 {
        let e = self.offsets(x);
        match self.kind {
            RegularizerKind::Sup => e.iter().fold(0.0, |m, v| m.max(v.abs())),
            RegularizerKind::L2 => l2_weighted(&e, x.weight()),
            RegularizerKind::Bv1d { anchor_weight } => bv_value(&e, anchor_weight),
        }
    }

    pub fn is_feasible(&self, x: &GridFunction, rho: f64) -> bool {
        self.value(x) <= rho + 1e-12 * rho.max(1.0)
    }

    /// Closest point of `{R <= ρ}` in the h-weighted Euclidean metric.
    pub fn project(&self, x: &GridFunction, rho: f64) -> Result<GridFunction> {
        self.project_within(x, rho, None)
    }

    /// Closest point of `{R <= ρ} ∩ box`.
    pub fn project_within(&self, x: &GridFunction, rho: f64, bounds: Option<&BoxConstraint>) -> Result<GridFunction> {
        if !(rho >= 0.0) {
            return domain(format!("projection radius must be >= 0, got {rho}"));
        }
        self.check_space(x)?;
        let c = self.center_like(x);
        let bounds = bounds.filter(|b| b.lower > f64::NEG_INFINITY || b.upper < f64::INFINITY);
        match (self.kind, bounds) {
            (RegularizerKind::Sup, _) => {
                let b = bounds.copied().unwrap_or(BoxConstraint { lower: f64::NEG_INFINITY, upper: f64::INFINITY });
                let mut out = Vec::with_capacity(x.len());
                for (xi, ci) in x.values().iter().zip(c.values()) {
                    let lo = (ci - rho).max(b.lower);
                    let hi = (ci + rho).min(b.upper);
                    if lo > hi {
                        return Err(Error::Infeasible(format!(
                            "sup ball of radius {rho} around {ci} misses the box [{}, {}]",
                            b.lower, b.upper
                        )));
                    }
                    out.push(xi.clamp(lo, hi));
                }
                Ok(x.like(out))
            }
            (RegularizerKind::L2, None) => {
                let e = self.offsets(x);
                let norm = l2_weighted(&e, x.weight());
                if norm <= rho {
                    return Ok(x.clone());
                }
                let s = rho / norm;
                Ok(self.recenter(x, e.iter().map(|v| v * s).collect()))
            }
            (RegularizerKind::L2, Some(b)) => l2_ball_box(x, &c, rho, b),
            (RegularizerKind::Bv1d { anchor_weight }, b) => {
                let e = self.offsets(x);
                let Some(b) = b else {
                    return Ok(self.recenter(x, bv_ball_project(&e, anchor_weight, rho, |z| z)?));
                };
                if !b.contains(&c) {
                    return Err(Error::Infeasible("BV center lies outside the box".into()));
                }
                let clamped = x.map(|v| b.clamp(v));
                if self.value(&clamped) <= rho {
                    return Ok(clamped);
                }
                if let Some(eb) = uniform_offset_box(&c, b) {
                    let z = bv_ball_project(&e, anchor_weight, rho, |z| z.iter().map(|&t| eb.clamp(t)).collect())?;
                    return Ok(self.recenter(x, z));
                }
                let cv = c.values().to_vec();
                let z = dykstra(
                    x.values(),
                    |v| Ok(bv_ball_project(&diff(v, &cv), anchor_weight, rho, |z| z)?.iter().zip(&cv).map(|(a, b)| a + b).collect()),
                    |v| v.iter().map(|&t| b.clamp(t)).collect(),
                )?;
                let z = x.like(z.iter().map(|&t| b.clamp(t)).collect());
                Ok(self.pull_inside(&z, &c, rho))
            }
        }
    }

    /// Scales `z` toward the center until `R(z) <= ρ` (used after iterative projections).
    fn pull_inside(&self, z: &GridFunction, c: &GridFunction, rho: f64) -> GridFunction {
        let v = self.value(z);
        if v <= rho {
            return z.clone();
        }
        let s = rho / v;
        c.axpy(s, &z.sub(c))
    }

    /// `argmin_z ½||z - x||_h^2 + t R(z)^q / q` over the optional box, `q ∈ {1, 2}`.
    pub fn prox(&self, x: &GridFunction, t: f64, power: u32, bounds: Option<&BoxConstraint>) -> Result<GridFunction> {
        if !(t >= 0.0 && t.is_finite()) {
            return domain(format!("prox step must be finite and >= 0, got {t}"));
        }
        self.check_space(x)?;
        let bounds = bounds.filter(|b| b.lower > f64::NEG_INFINITY || b.upper < f64::INFINITY);
        let e = self.offsets(x);
        let w = x.weight();
        let free: Vec<f64> = match (self.kind, power) {
            (RegularizerKind::L2, 1) => {
                let norm = l2_weighted(&e, w);
                let s = if norm > t { 1.0 - t / norm } else { 0.0 };
                e.iter().map(|v| v * s).collect()
            }
            (RegularizerKind::L2, 2) => {
                let s = 1.0 / (1.0 + t);
                let z = self.recenter(x, e.iter().map(|v| v * s).collect());
                return Ok(match bounds {
                    Some(b) => z.map(|v| b.clamp(v)),
                    None => z,
                });
            }
            (RegularizerKind::Sup, 1) => sup_prox(&e, t / w),
            (RegularizerKind::Bv1d { anchor_weight }, 1) => bv_prox(&e, anchor_weight, t / w)?,
            (kind, q) => return Err(Error::Config(format!("penalty power {q} is not supported for {kind:?}"))),
        };
        let z = self.recenter(x, free);
        let Some(b) = bounds else { return Ok(z) };
        if b.contains(&z) {
            return Ok(z);
        }
        let c = self.center_like(x);
        if let (RegularizerKind::Bv1d { .. }, Some(_)) = (self.kind, uniform_offset_box(&c, b)) {
            // clamping commutes with the 1D BV prox for a constant center inside the box
            return Ok(z.map(|v| b.clamp(v)));
        }
        let cv = c.values().to_vec();
        let kind = self.kind;
        let out = dykstra(
            x.values(),
            |v| {
                let e = diff(v, &cv);
                let p = match kind {
                    RegularizerKind::L2 => {
                        let norm = l2_weighted(&e, w);
                        let s = if norm > t { 1.0 - t / norm } else { 0.0 };
                        e.iter().map(|v| v * s).collect()
                    }
                    RegularizerKind::Sup => sup_prox(&e, t / w),
                    RegularizerKind::Bv1d { anchor_weight } => bv_prox(&e, anchor_weight, t / w)?,
                };
                Ok(p.iter().zip(&cv).map(|(a, b)| a + b).collect())
            },
            |v| v.iter().map(|&s| b.clamp(s)).collect(),
        )?;
        Ok(x.like(out.iter().map(|&s| b.clamp(s)).collect()))
    }

    /// `c + (ρ'/ρ)(x - c)`, mapping `{R <= ρ}` onto `{R <= ρ'}`.
    pub fn scale_map(&self, x: &GridFunction, rho: f64, rho_new: f64) -> Result<GridFunction> {
        if !(rho > 0.0) || !(rho_new >= 0.0) {
            return domain(format!("scale map needs ρ > 0 and ρ' >= 0, got ρ = {rho}, ρ' = {rho_new}"));
        }
        if !self.is_feasible(x, rho) {
            return domain(format!("scale map argument has R = {} > ρ = {rho}", self.value(x)));
        }
        if rho_new == rho {
            return Ok(x.clone());
        }
        let s = rho_new / rho;
        Ok(self.recenter(x, self.offsets(x).iter().map(|v| v * s).collect()))
    }

    pub fn subgradient(&self, x: &GridFunction) -> SubgradientElement {
        let e = self.offsets(x);
        let w = x.weight();
        let xi = match self.kind {
            RegularizerKind::L2 => {
                let norm = l2_weighted(&e, w);
                if norm == 0.0 {
                    vec![0.0; e.len()]
                } else {
                    e.iter().map(|v| v / norm).collect()
                }
            }
            RegularizerKind::Sup => {
                let mut xi = vec![0.0; e.len()];
                if let Some((k, v)) = e.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
                    if *v != 0.0 {
                        xi[k] = v.signum() / w;
                    }
                }
                xi
            }
            RegularizerKind::Bv1d { anchor_weight } => {
                let s: Vec<f64> = increments(&e, anchor_weight).iter().map(|d| sign0(*d)).collect();
                let n = e.len();
                (0..n)
                    .map(|k| {
                        let own = if k == 0 { anchor_weight * s[0] } else { s[k] };
                        let next = if k + 1 < n { s[k + 1] } else { 0.0 };
                        (own - next) / w
                    })
                    .collect()
            }
        };
        SubgradientElement { xi: x.like(xi) }
    }

    /// `D_ξ(x̃, x) = R(x̃) - R(x) - <ξ, x̃ - x>`.
    pub fn bregman(&self, xi: &SubgradientElement, x_tilde: &GridFunction, x: &GridFunction) -> f64 {
        self.value(x_tilde) - self.value(x) - xi.xi.inner(&x_tilde.sub(x))
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn l2_weighted(e: &[f64], weight: f64) -> f64 {
    (weight * e.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `(w e_1, e_2 - e_1, ..., e_n - e_{n-1})`
pub fn increments(e: &[f64], anchor_weight: f64) -> Vec<f64> {
    (0..e.len()).map(|i| if i == 0 { anchor_weight * e[0] } else { e[i] - e[i - 1] }).collect()
}

fn bv_value(e: &[f64], anchor_weight: f64) -> f64 {
    increments(e, anchor_weight).iter().map(|d| d.abs()).sum()
}

/// Euclidean projection onto `{d : Σ|d_i| <= radius}` by sorting magnitudes
/// and locating the soft-threshold level.
pub fn project_l1_ball(d: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius >= 0.0) {
        return domain(format!("L1 ball radius must be >= 0, got {radius}"));
    }
    let total: f64 = d.iter().map(|v| v.abs()).sum();
    if total <= radius {
        return Ok(d.to_vec());
    }
    let theta = l1_threshold(d, radius);
    Ok(d.iter().map(|&v| v.signum() * (v.abs() - theta).max(0.0)).collect())
}

/// Threshold `θ` with `Σ (|d_i| - θ)_+ = radius`; assumes `Σ|d_i| > radius`.
pub fn l1_threshold(d: &[f64], radius: f64) -> f64 {
    let mut u: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    if radius == 0.0 {
        return u.iter().fold(0.0, |m, &v| m.max(v));
    }
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - radius) / (k + 1) as f64;
        if uk > t {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// `argmin ½||z - e||^2 + μ max|z_i|` via Moreau's identity.
fn sup_prox(e: &[f64], mu: f64) -> Vec<f64> {
    let total: f64 = e.iter().map(|v| v.abs()).sum();
    if total <= mu {
        return vec![0.0; e.len()];
    }
    let theta = l1_threshold(e, mu);
    e.iter().map(|&v| v.signum() * v.abs().min(theta)).collect()
}

/// Minimizes `Σ_{k<n} (r_k - r_{k+1})^2` with `r_n = 0` and `lower <= r <= upper`.
///
/// The left end is free, so the tube is mirrored about `k = 0` and the
/// shortest path between two pinned ends is traced by the funnel method.
fn taut_string(lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    let n = lower.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return domain("empty tube in taut-string solve");
    }
    // mirrored index m in 0..=2n maps to k = |m - n|; both ends are r_n = 0
    let k_of = |m: usize| m.abs_diff(n);
    let lo = |m: usize| if m == 0 || m == 2 * n { 0.0 } else { lower[k_of(m)] };
    let hi = |m: usize| if m == 0 || m == 2 * n { 0.0 } else { upper[k_of(m)] };
    let s = funnel(2 * n, lo, hi);
    Ok((0..n).map(|k| s[n + k]).collect())
}

/// Taut string through `lo(m) <= s_m <= hi(m)`, `m = 0..=last`, with both ends
/// pinned by `lo == hi` there.
fn funnel(last: usize, lo: impl Fn(usize) -> f64, hi: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; last + 1];
    let slope = |a: (usize, f64), b: (usize, f64)| (b.1 - a.1) / (b.0 - a.0) as f64;
    let mut origin = (0usize, lo(0));
    s[0] = origin.1;
    // upper: convex chain under the upper bounds; lower: concave chain over the lower ones
    let mut upper: Vec<(usize, f64)> = Vec::with_capacity(last);
    let mut lower: Vec<(usize, f64)> = Vec::with_capacity(last);
    let mut m = 1;
    let emit = |s: &mut [f64], from: (usize, f64), to: (usize, f64)| {
        let d = slope(from, to);
        for j in from.0 + 1..=to.0 {
            s[j] = from.1 + d * (j - from.0) as f64;
        }
        s[to.0] = to.1;
    };
    while origin.0 < last {
        let pu = (m, hi(m));
        let pl = (m, lo(m));
        // the new upper point drops below the steepest lower requirement
        if !lower.is_empty() && slope(origin, pu) < slope(origin, lower[0]) {
            let v = lower[0];
            emit(&mut s, origin, v);
            origin = v;
            upper.clear();
            lower.clear();
            m = origin.0 + 1;
            continue;
        }
        if !upper.is_empty() && slope(origin, pl) > slope(origin, upper[0]) {
            let v = upper[0];
            emit(&mut s, origin, v);
            origin = v;
            upper.clear();
            lower.clear();
            m = origin.0 + 1;
            continue;
        }
        while let Some(&top) = upper.last() {
            let base = if upper.len() >= 2 { upper[upper.len() - 2] } else { origin };
            if slope(base, top) >= slope(base, pu) {
                upper.pop();
            } else {
                break;
            }
        }
        upper.push(pu);
        while let Some(&top) = lower.last() {
            let base = if lower.len() >= 2 { lower[lower.len() - 2] } else { origin };
            if slope(base, top) <= slope(base, pl) {
                lower.pop();
            } else {
                break;
            }
        }
        lower.push(pl);
        if m == last {
            // both chains now end at the pinned point; a straight run remains
            emit(&mut s, origin, (last, lo(last)));
            break;
        }
        m += 1;
    }
    s
}

/// Primal active-set solver for the same tube problem as [`taut_string`], kept as
/// a reference in tests.
#[cfg(test)]
fn taut_string_active_set(lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    #[derive(Clone, Copy, PartialEq)]
    enum At {
        Free,
        Lower,
        Upper,
    }
    let n = lower.len();
    let mut r: Vec<f64> = (0..n).map(|k| 0.0f64.clamp(lower[k], upper[k])).collect();
    let mut at: Vec<At> = (0..n)
        .map(|k| {
            if r[k] == lower[k] {
                At::Lower
            } else if r[k] == upper[k] {
                At::Upper
            } else {
                At::Free
            }
        })
        .collect();
    let scale = lower.iter().chain(upper).fold(1.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-14 * scale;
    let mut target = vec![0.0; n];
    let cap = 20 * n + 100;
    for _ in 0..cap {
        let mut k = 0;
        while k < n {
            if at[k] != At::Free {
                target[k] = r[k];
                k += 1;
                continue;
            }
            let a = k;
            while k < n && at[k] == At::Free {
                k += 1;
            }
            let right = if k < n { r[k] } else { 0.0 };
            if a == 0 {
                target[a..k].iter_mut().for_each(|t| *t = right);
            } else {
                let left = r[a - 1];
                let span = (k - a + 1) as f64;
                for (j, t) in target[a..k].iter_mut().enumerate() {
                    *t = left + (right - left) * (j + 1) as f64 / span;
                }
            }
        }
        let mut step = 1.0;
        let mut block = None;
        for k in 0..n {
            if at[k] != At::Free {
                continue;
            }
            let p = target[k] - r[k];
            if p < 0.0 && target[k] < lower[k] {
                let s = (lower[k] - r[k]) / p;
                if s < step {
                    step = s;
                    block = Some((k, At::Lower));
                }
            } else if p > 0.0 && target[k] > upper[k] {
                let s = (upper[k] - r[k]) / p;
                if s < step {
                    step = s;
                    block = Some((k, At::Upper));
                }
            }
        }
        if let Some((kb, side)) = block {
            for k in 0..n {
                if at[k] == At::Free {
                    r[k] += step * (target[k] - r[k]);
                }
            }
            at[kb] = side;
            r[kb] = if side == At::Lower { lower[kb] } else { upper[kb] };
            continue;
        }
        r.copy_from_slice(&target);
        let mut worst = eps;
        let mut release = None;
        for k in 0..n {
            if at[k] == At::Free || lower[k] == upper[k] {
                continue;
            }
            let next = if k + 1 < n { r[k + 1] } else { 0.0 };
            let g = if k == 0 { r[0] - next } else { 2.0 * r[k] - r[k - 1] - next };
            let violation = if at[k] == At::Lower { -g } else { g };
            if violation > worst {
                worst = violation;
                release = Some(k);
            }
        }
        match release {
            Some(k) => at[k] = At::Free,
            None => return Ok(r),
        }
    }
    Err(Error::SolverFailure { iterations: cap, residual: f64::NAN })
}

/// `argmin ½||z - e||^2 + λ (w |z_1| + Σ |z_{i+1} - z_i|)` exactly.
fn bv_prox(e: &[f64], anchor_weight: f64, lambda: f64) -> Result<Vec<f64>> {
    let n = e.len();
    if lambda == 0.0 || n == 0 {
        return Ok(e.to_vec());
    }
    let mut suffix = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc += e[k];
        suffix[k] = acc;
    }
    let half = |k: usize| if k == 0 { lambda * anchor_weight } else { lambda };
    let lower: Vec<f64> = (0..n).map(|k| suffix[k] - half(k)).collect();
    let upper: Vec<f64> = (0..n).map(|k| suffix[k] + half(k)).collect();
    let r = taut_string(&lower, &upper)?;
    Ok((0..n).map(|k| r[k] - if k + 1 < n { r[k + 1] } else { 0.0 }).collect())
}

/// The box seen by the offsets `x - c` when `c` is constant and inside `b`.
///
/// For such a box `clamp ∘ prox_{λBV}` is the prox of `λBV + ι_box`: clamping
/// by one monotone map keeps every increment sign, so the dual certificate of
/// the unconstrained prox still certifies the clamped point.
fn uniform_offset_box(c: &GridFunction, b: &BoxConstraint) -> Option<BoxConstraint> {
    let c0 = *c.values().first()?;
    if c.values().iter().any(|&v| v != c0) || !(b.lower <= c0 && c0 <= b.upper) {
        return None;
    }
    Some(BoxConstraint { lower: b.lower - c0, upper: b.upper - c0 })
}

/// Euclidean projection onto `{e : w|e_1| + Σ|e_{i+1} - e_i| <= ρ}`, optionally
/// intersected with a set whose prox composes as `post ∘ prox_{λBV}`: the
/// multiplier `λ` is located by bisection, keeping the feasible end.
fn bv_ball_project(e: &[f64], anchor_weight: f64, rho: f64, post: impl Fn(Vec<f64>) -> Vec<f64>) -> Result<Vec<f64>> {
    let start = post(e.to_vec());
    let v0 = bv_value(&start, anchor_weight);
    if v0 <= rho {
        return Ok(start);
    }
    if rho == 0.0 && anchor_weight > 0.0 {
        return Ok(vec![0.0; e.len()]);
    }
    // λ at which every weighted increment of the prox vanishes
    let mut acc = 0.0;
    let mut hi = 0.0f64;
    for k in (0..e.len()).rev() {
        acc += e[k];
        let b = if k == 0 { anchor_weight } else { 1.0 };
        if b > 0.0 {
            hi = hi.max(acc.abs() / b);
        }
    }
    let mut best = post(bv_prox(e, anchor_weight, hi)?);
    // g(λ) = R(x(λ)) - ρ is nonincreasing and piecewise linear while the
    // active pattern is fixed, so Illinois regula falsi lands on the root of
    // a linear piece exactly; bisection steps guard against slow sides.
    let (mut lo, mut g_lo) = (0.0, v0 - rho);
    let mut g_hi = bv_value(&best, anchor_weight) - rho;
    let tol = 1e-13 * rho.max(1.0);
    let mut side = 0i8;
    for it in 0..300 {
        let mut mid = if it % 4 == 3 || g_lo == g_hi { 0.5 * (lo + hi) } else { hi - g_hi * (hi - lo) / (g_hi - g_lo) };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                break;
            }
        }
        let z = post(bv_prox(e, anchor_weight, mid)?);
        let g = bv_value(&z, anchor_weight) - rho;
        if g <= 0.0 {
            hi = mid;
            g_hi = g;
            best = z;
            if g >= -tol {
                break;
            }
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = mid;
            g_lo = g;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        }
    }
    Ok(best)
}

/// Projection onto `{||z - c||_h <= ρ} ∩ box`: `z(λ) = clamp((x + λc)/(1 + λ))`
/// with the multiplier located by bisection.
fn l2_ball_box(x: &GridFunction, c: &GridFunction, rho: f64, b: &BoxConstraint) -> Result<GridFunction> {
    let w = x.weight();
    let at = |lambda: f64| -> Vec<f64> {
        x.values()
            .iter()
            .zip(c.values())
            .map(|(xi, ci)| b.clamp((xi + lambda * ci) / (1.0 + lambda)))
            .collect()
    };
    let dist = |z: &[f64]| l2_weighted(&diff(z, c.values()), w);
    let z0 = at(0.0);
    if dist(&z0) <= rho {
        return Ok(x.like(z0));
    }
    let zc: Vec<f64> = c.values().iter().map(|&v| b.clamp(v)).collect();
    if dist(&zc) > rho {
        return Err(Error::Infeasible(format!("L2 ball of radius {rho} misses the box [{}, {}]", b.lower, b.upper)));
    }
    let mut hi = 1.0;
    let mut best = at(hi);
    while dist(&best) > rho {
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(x.like(zc));
        }
        best = at(hi);
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let z = at(mid);
        if dist(&z) <= rho {
            hi = mid;
            best = z;
        } else {
            lo = mid;
        }
    }
    Ok(x.like(best))
}

/// Dykstra's scheme for `prox_{f + ι_box}`; `pa` is the prox of `f`, `pb` the clamp.
fn dykstra(
    x: &[f64],
    pa: impl Fn(&[f64]) -> Result<Vec<f64>>,
    pb: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let n = x.len();
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut z = x.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let cap = 100_000;
    for _ in 0..cap {
        let zp: Vec<f64> = (0..n).map(|i| z[i] + p[i]).collect();
        let y = pa(&zp)?;
        for i in 0..n {
            p[i] = zp[i] - y[i];
        }
        let yq: Vec<f64> = (0..n).map(|i| y[i] + q[i]).collect();
        let z_new = pb(&yq);
        for i in 0..n {
            q[i] = yq[i] - z_new[i];
        }
        let moved = z_new.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let gap = z_new.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        z = z_new;
        if moved <= 1e-14 * scale && gap <= 1e-12 * scale {
            return Ok(z);
        }
    }
    Err(Error::SolverFailure { iterations: cap, residual: f64::NAN })
}
