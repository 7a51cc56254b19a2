use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    None,
    /// `T(I,J) = T(J,I)`
    Symmetric2,
    /// `T(I,J,B) = -T(I,B,J)`
    AntisymmetricLast2,
}

/// Grid field with 0 to 3 frame or coordinate indices, each running over 3 values.
///
/// Components are stored separately; the component of `(I, J, B)` sits at
/// `(I * 3 + J) * 3 + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub rank: usize,
    pub comps: Vec<Vec<f64>>,
    pub symmetry: Symmetry,
}

const SYM_TOL: f64 = 1e-12;

impl TensorField {
    /// Builds a field and checks the symmetry tag against the values.
    pub fn new(rank: usize, comps: Vec<Vec<f64>>, symmetry: Symmetry) -> Result<Self> {
        let t = TensorField { rank, comps, symmetry };
        t.check_shape()?;
        let viol = t.symmetry_violation();
        if viol > SYM_TOL * (1.0 + t.max_abs()) {
            return Err(Error::Invalid(format!(
                "{symmetry:?} field violates its symmetry by {viol:e}"
            )));
        }
        Ok(t)
    }

    /// Builds a field and projects it onto its symmetry class.
    pub fn projected(rank: usize, comps: Vec<Vec<f64>>, symmetry: Symmetry) -> Result<Self> {
        let mut t = TensorField { rank, comps, symmetry };
        t.check_shape()?;
        t.enforce_symmetry();
        Ok(t)
    }

    pub fn zeros(rank: usize, len: usize, symmetry: Symmetry) -> Self {
        TensorField {
            rank,
            comps: vec![vec![0.0; len]; 3usize.pow(rank as u32)],
            symmetry,
        }
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        TensorField { rank: 0, comps: vec![values], symmetry: Symmetry::None }
    }

    fn check_shape(&self) -> Result<()> {
        if self.rank > 3 || self.comps.len() != 3usize.pow(self.rank as u32) {
            return Err(Error::Invalid(format!(
                "rank {} field with {} components",
                self.rank,
                self.comps.len()
            )));
        }
        let len = self.comps[0].len();
        if self.comps.iter().any(|c| c.len() != len) {
            return Err(Error::Invalid("components of unequal length".into()));
        }
        match (self.symmetry, self.rank) {
            (Symmetry::Symmetric2, 2) | (Symmetry::AntisymmetricLast2, 3) | (Symmetry::None, _) => Ok(()),
            (s, r) => Err(Error::Invalid(format!("symmetry {s:?} needs another rank than {r}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| super::max_abs(c)).fold(0.0, f64::max)
    }

    /// Largest pointwise deviation from the tagged symmetry.
    pub fn symmetry_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        match self.symmetry {
            Symmetry::None => {}
            Symmetry::Symmetric2 => {
                for i in 0..3 {
                    for j in i + 1..3 {
                        for (a, b) in self.comps[i * 3 + j].iter().zip(&self.comps[j * 3 + i]) {
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
            Symmetry::AntisymmetricLast2 => {
                for i in 0..3 {
                    for j in 0..3 {
                        for b in j..3 {
                            let x = &self.comps[(i * 3 + j) * 3 + b];
                            let y = &self.comps[(i * 3 + b) * 3 + j];
                            for (u, v) in x.iter().zip(y) {
                                worst = worst.max((u + v).abs());
                            }
                        }
                    }
                }
            }
        }
        worst
    }

    /// Projects onto the symmetry class and returns the discarded part's max norm.
    pub fn enforce_symmetry(&mut self) -> f64 {
        let before = self.symmetry_violation();
        match self.symmetry {
            Symmetry::None => {}
            Symmetry::Symmetric2 => symmetrize(&mut self.comps),
            Symmetry::AntisymmetricLast2 => antisymmetrize_last2(&mut self.comps),
        }
        before
    }
}

pub(crate) fn symmetrize(c: &mut [Vec<f64>]) {
    for i in 0..3 {
        for j in i + 1..3 {
            let (lo, hi) = c.split_at_mut(j * 3 + i);
            let a = &mut lo[i * 3 + j];
            let b = &mut hi[0];
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let m = 0.5 * (*x + *y);
                *x = m;
                *y = m;
            }
        }
    }
}

pub(crate) fn antisymmetrize_last2(c: &mut [Vec<f64>]) {
    for i in 0..3 {
        for j in 0..3 {
            c[(i * 3 + j) * 3 + j].iter_mut().for_each(|v| *v = 0.0);
            for b in j + 1..3 {
                let p = (i * 3 + j) * 3 + b;
                let q = (i * 3 + b) * 3 + j;
                let (lo, hi) = c.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let m = 0.5 * (*x - *y);
                    *x = m;
                    *y = -m;
                }
            }
        }
    }
}
