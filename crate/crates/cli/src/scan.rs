//! Rigid scans along interatomic distances.

use lmlp::conformation::{dot, sub};
use lmlp::Conformation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    /// Å
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Range {
    pub fn parse(v: &[String]) -> Result<Self, String> {
        let [s, e, n] = v else {
            return Err(format!("a range needs START END POINTS, got {} values", v.len()));
        };
        let num = |x: &str| x.parse::<f64>().map_err(|_| format!("'{x}' is not a number"));
        let r = Range {
            start: num(s)?,
            end: num(e)?,
            points: n.parse().map_err(|_| format!("'{n}' is not a point count"))?,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.points == 0 {
            return Err("a range needs at least one point".into());
        }
        if !(self.start > 0.0 && self.end > 0.0 && self.start.is_finite() && self.end.is_finite()) {
            return Err(format!("distances must be positive, got {} to {}", self.start, self.end));
        }
        if self.points > 1 && self.start == self.end {
            return Err(format!("range {} to {} has zero length", self.start, self.end));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + step * i as f64).collect()
    }
}

/// A pair of atoms whose distance is set by moving `moved` along the line to `fixed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub fixed: usize,
    pub moved: usize,
    pub range: Range,
}

fn distance(conf: &Conformation, i: usize, j: usize) -> f64 {
    let d = sub(&conf.positions[j], &conf.positions[i]);
    dot(&d, &d).sqrt()
}

/// Moves atom `axis.moved` so that its distance to `axis.fixed` becomes `r`.
/// The current distance is kept exactly when it already equals `r`.
pub fn set_distance(conf: &mut Conformation, fixed: usize, moved: usize, r: f64) {
    let d0 = distance(conf, fixed, moved);
    let u = sub(&conf.positions[moved], &conf.positions[fixed]);
    let shift = (r - d0) / d0;
    for k in 0..3 {
        conf.positions[moved][k] += shift * u[k];
    }
}

pub fn check_axes(conf: &Conformation, axes: &[Axis]) -> Result<(), String> {
    let n = conf.n_atoms();
    for ax in axes {
        if ax.fixed >= n || ax.moved >= n {
            return Err(format!("atom index out of range: the template has {n} atoms"));
        }
        if ax.fixed == ax.moved {
            return Err(format!("atom pair ({}, {}) is degenerate", ax.fixed, ax.moved));
        }
        if distance(conf, ax.fixed, ax.moved) < 1e-8 {
            return Err(format!("atoms {} and {} coincide in the template", ax.fixed, ax.moved));
        }
        ax.range.validate()?;
    }
    if let [a, b] = axes {
        if b.moved == a.fixed || b.moved == a.moved {
            return Err("the second pair must not move an atom of the first pair".into());
        }
    }
    Ok(())
}

/// Grid points in row-major order of the axes, with their distances.
pub fn grid(template: &Conformation, axes: &[Axis]) -> Result<Vec<(Vec<f64>, Conformation)>, String> {
    check_axes(template, axes)?;
    let mut out = vec![(vec![], template.clone())];
    for ax in axes {
        let mut next = Vec::with_capacity(out.len() * ax.range.points);
        for (rs, conf) in &out {
            for r in ax.range.values() {
                let mut c = conf.clone();
                set_distance(&mut c, ax.fixed, ax.moved, r);
                let mut rs = rs.clone();
                rs.push(r);
                next.push((rs, c));
            }
        }
        out = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Conformation {
        Conformation::new(vec![1, 6, 17], vec![[0.0, 0.0, 0.0], [1.1, 0.0, 0.0], [0.3, 1.7, 0.2]])
    }

    fn range(a: f64, b: f64, n: usize) -> Range {
        Range { start: a, end: b, points: n }
    }

    #[test]
    fn grid_sets_both_distances() {
        let axes = [
            Axis { fixed: 0, moved: 1, range: range(0.9, 1.5, 4) },
            Axis { fixed: 0, moved: 2, range: range(1.2, 2.0, 3) },
        ];
        let g = grid(&tri(), &axes).unwrap();
        assert_eq!(g.len(), 12);
        for (rs, c) in &g {
            assert!((distance(c, 0, 1) - rs[0]).abs() < 1e-12);
            assert!((distance(c, 0, 2) - rs[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn unchanged_distance_keeps_positions() {
        let t = tri();
        let d = distance(&t, 0, 1);
        let g = grid(&t, &[Axis { fixed: 0, moved: 1, range: range(d, d, 1) }]).unwrap();
        assert_eq!(g[0].1.positions, t.positions);
    }

    #[test]
    fn bad_axes() {
        let t = tri();
        let ok = range(1.0, 2.0, 3);
        assert!(grid(&t, &[Axis { fixed: 1, moved: 1, range: ok }]).is_err());
        assert!(grid(&t, &[Axis { fixed: 0, moved: 5, range: ok }]).is_err());
        assert!(grid(&t, &[Axis { fixed: 0, moved: 1, range: range(1.0, 1.0, 3) }]).is_err());
        assert!(grid(&t, &[Axis { fixed: 0, moved: 1, range: range(1.0, 2.0, 0) }]).is_err());
        let second_moves_first = [Axis { fixed: 0, moved: 1, range: ok }, Axis { fixed: 2, moved: 1, range: ok }];
        assert!(grid(&t, &second_moves_first).is_err());
        assert!(Range::parse(&["1".into(), "x".into(), "3".into()]).is_err());
    }
}
