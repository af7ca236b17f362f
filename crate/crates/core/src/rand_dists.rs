//! Seeded sampling for standard location-scale noise families.
//!
//! All draws come from a ChaCha8 stream and are transformed with `libm`
//! routines, so a seed produces the same numbers on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Euler–Mascheroni constant, the mean of a standard Gumbel.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Deterministic random stream owned by a single worker.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent sub-stream of the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Box–Muller; the second value of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.open_uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn standard_gumbel(&mut self) -> f64 {
        -libm::log(-libm::log(self.open_uniform()))
    }

    pub fn standard_logistic(&mut self) -> f64 {
        let u = self.open_uniform();
        libm::log(u / (1.0 - u))
    }
}

/// Location-scale noise family, always in standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    Gumbel,
    Logistic,
}

impl NoiseFamily {
    pub fn mean(self) -> f64 {
        match self {
            NoiseFamily::Gaussian | NoiseFamily::Logistic => 0.0,
            NoiseFamily::Gumbel => EULER_GAMMA,
        }
    }

    pub fn variance(self) -> f64 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        match self {
            NoiseFamily::Gaussian => 1.0,
            NoiseFamily::Gumbel => pi2 / 6.0,
            NoiseFamily::Logistic => pi2 / 3.0,
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            NoiseFamily::Gaussian => normal_cdf(x),
            NoiseFamily::Gumbel => (-(-x).exp()).exp(),
            NoiseFamily::Logistic => crate::tensor::sigmoid(x),
        }
    }

    pub fn sample(self, rng: &mut SeededRng) -> f64 {
        match self {
            NoiseFamily::Gaussian => rng.standard_normal(),
            NoiseFamily::Gumbel => rng.standard_gumbel(),
            NoiseFamily::Logistic => rng.standard_logistic(),
        }
    }

    /// Fills `out` with i.i.d. standard draws.
    pub fn fill(self, rng: &mut SeededRng, out: &mut [f64]) {
        for v in out {
            *v = self.sample(rng);
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "gumbel" => Ok(NoiseFamily::Gumbel),
            "logistic" => Ok(NoiseFamily::Logistic),
            other => Err(Error::invalid(format!("unknown noise family `{other}`"))),
        }
    }
}

/// `n` i.i.d. draws from the standard form of `family`.
pub fn sample_standard(family: NoiseFamily, n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    family.fill(rng, &mut out);
    out
}

/// Standard normal CDF, via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `loc + scale * draw` recorded on the tape, differentiable in `loc` and `scale`.
pub fn reparameterize(tape: &mut Tape, loc: Var, scale: Var, draw: Var) -> Result<Var> {
    let shapes = [loc, scale, draw].map(|v| tape.value(v).shape().to_vec());
    if shapes[0] != shapes[1] || shapes[0] != shapes[2] {
        return Err(Error::shape(
            "reparameterize",
            format!("loc {:?}, scale {:?}, draw {:?}", shapes[0], shapes[1], shapes[2]),
        ));
    }
    if tape.value(scale).data().iter().any(|&s| s < 0.0) {
        return Err(Error::invalid("reparameterize: negative scale"));
    }
    let noise = tape.mul(scale, draw)?;
    tape.add(loc, noise)
}
