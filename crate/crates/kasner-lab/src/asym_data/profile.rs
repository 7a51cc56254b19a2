use super::{assemble_dataset, exponents_from_u, AsymptoticDataSet, FreeData};
use crate::grid::{Scalar, SpatialGrid, Symmetry, TensorField};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One Fourier mode `amp * sin(2 pi (k . x) / delta + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amp: f64,
    pub k: [i32; 3],
    #[serde(default)]
    pub phase: f64,
}

/// Periodic profile `base + sum of modes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub base: f64,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

impl Profile {
    pub fn constant(base: f64) -> Self {
        Profile { base, modes: Vec::new() }
    }

    pub fn with_mode(mut self, amp: f64, k: [i32; 3]) -> Self {
        self.modes.push(Mode { amp, k, phase: 0.0 });
        self
    }

    pub fn eval(&self, x: [f64; 3], delta: f64) -> f64 {
        let w = 2.0 * PI / delta;
        self.modes.iter().fold(self.base, |acc, m| {
            let arg = w * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1] + m.k[2] as f64 * x[2]);
            acc + m.amp * (arg + m.phase).sin()
        })
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Scalar {
        grid.sample(|x| self.eval(x, grid.delta))
    }

    pub fn sample_slice(&self, grid: &SpatialGrid) -> Scalar {
        grid.sample_slice(|x| self.eval(x, grid.delta))
    }

    /// Adds `count` random low modes with amplitudes up to `amp` in total.
    pub fn randomized(&self, rng: &mut ChaCha8Rng, amp: f64, count: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..count {
            let mut k = [0i32; 3];
            while k == [0, 0, 0] {
                k = [rng.gen_range(-1..=1), rng.gen_range(-1..=1), rng.gen_range(-1..=1)];
            }
            out.modes.push(Mode {
                amp: rng.gen_range(-1.0..1.0) * amp / count as f64,
                k,
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    /// Solve the constraints for `c11`, `kappa_2^3`, `kappa_1^3`.
    Assemble,
    /// Take every `c_ij` as given; the constraints generally fail.
    Direct,
}

fn one() -> Profile {
    Profile::constant(1.0)
}
fn zero() -> Profile {
    Profile::constant(0.0)
}
fn two() -> Profile {
    Profile::constant(2.0)
}
fn assemble() -> Construction {
    Construction::Assemble
}

/// Recipe for a data set, as read from the `[data]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "assemble")]
    pub construction: Construction,
    #[serde(default = "two")]
    pub u: Profile,
    #[serde(default = "one")]
    pub c22: Profile,
    /// Multiply `c22` by the factor that cancels the `x1` derivatives of `p`
    /// in the `i = 1` constraint (exact when `c33` does not depend on `x1`).
    #[serde(default)]
    pub c22_balanced: bool,
    #[serde(default = "one")]
    pub c33: Profile,
    #[serde(default = "zero")]
    pub kappa12: Profile,
    #[serde(default = "one")]
    pub c11_slice: Profile,
    #[serde(default = "zero")]
    pub kappa23_slice: Profile,
    #[serde(default = "zero")]
    pub kappa13_slice: Profile,
    #[serde(default = "one")]
    pub c11: Profile,
    #[serde(default = "zero")]
    pub c12: Profile,
    #[serde(default = "zero")]
    pub c13: Profile,
    #[serde(default = "zero")]
    pub c23: Profile,
    /// Amplitude of seeded random modes added to every 3-variable profile; 0 disables.
    #[serde(default)]
    pub random_amplitude: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            construction: Construction::Assemble,
            u: two(),
            c22: one(),
            c22_balanced: false,
            c33: one(),
            kappa12: zero(),
            c11_slice: one(),
            kappa23_slice: zero(),
            kappa13_slice: zero(),
            c11: one(),
            c12: zero(),
            c13: zero(),
            c23: zero(),
            random_amplitude: 0.0,
        }
    }
}

/// Antiderivative of `2 p1'(u) / (p2 - p1)` in `u`.
pub(crate) fn balance_log_c22(u: f64) -> f64 {
    let r3 = 3.0f64.sqrt();
    (u * u + u + 1.0).ln() - (2.0 * u + 1.0).ln() - 2.0 / r3 * ((2.0 * u + 1.0) / r3).atan()
}

impl DataSpec {
    fn randomize(&self, seed: u64) -> DataSpec {
        if self.random_amplitude == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.random_amplitude;
        let mut s = self.clone();
        s.u = s.u.randomized(&mut rng, a, 3);
        s.c22 = s.c22.randomized(&mut rng, a, 3);
        s.c33 = s.c33.randomized(&mut rng, a, 3);
        s.kappa12 = s.kappa12.randomized(&mut rng, a, 3);
        s.c11 = s.c11.randomized(&mut rng, a, 3);
        s.c12 = s.c12.randomized(&mut rng, a, 3);
        s.c13 = s.c13.randomized(&mut rng, a, 3);
        s.c23 = s.c23.randomized(&mut rng, a, 3);
        s.random_amplitude = 0.0;
        s
    }

    pub fn build(&self, grid: SpatialGrid, seed: u64) -> Result<AsymptoticDataSet> {
        let spec = self.randomize(seed);
        let u = spec.u.sample(&grid);
        let p = exponents_from_u(&grid, &u)?;
        let mut c22 = spec.c22.sample(&grid);
        if spec.c22_balanced {
            let g0 = balance_log_c22(spec.u.base);
            for (c, u) in c22.iter_mut().zip(&u) {
                *c *= (balance_log_c22(*u) - g0).exp();
            }
        }
        match spec.construction {
            Construction::Assemble => {
                let free = FreeData {
                    c22,
                    c33: spec.c33.sample(&grid),
                    kappa12: spec.kappa12.sample(&grid),
                    c11_slice: spec.c11_slice.sample_slice(&grid),
                    kappa23_slice: spec.kappa23_slice.sample_slice(&grid),
                    kappa13_slice: spec.kappa13_slice.sample_slice(&grid),
                };
                assemble_dataset(grid, p, &free)
            }
            Construction::Direct => {
                let c11 = spec.c11.sample(&grid);
                let c12 = spec.c12.sample(&grid);
                let c13 = spec.c13.sample(&grid);
                let c23 = spec.c23.sample(&grid);
                let c33 = spec.c33.sample(&grid);
                let comps = vec![c11, c12.clone(), c13.clone(), c12, c22, c23.clone(), c13, c23, c33];
                let c = TensorField::new(2, comps, Symmetry::Symmetric2)?;
                AsymptoticDataSet::from_c(grid, p, c)
            }
        }
    }
}
