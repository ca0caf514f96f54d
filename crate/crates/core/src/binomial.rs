//! Binomial variates.
//!
//! The Monte Carlo null draws two binomials per station per iteration, so
//! this sits on the hot path. Large means use Hörmann's transformed
//! rejection with squeeze (BTRS); small means invert the distribution by
//! summing geometric waiting times.

use rand::Rng;

// Stirling series remainder ln(k!) - [(k + 1/2) ln(k + 1) - (k + 1) + ln(2π)/2] for k < 10.
const STIRLING_TAIL: [f64; 10] = [
    0.081_061_466_795_327_26,
    0.041_340_695_955_409_2,
    0.027_677_925_684_998_3,
    0.020_790_672_103_765_09,
    0.016_644_691_189_821_1,
    0.013_876_128_823_070_7,
    0.011_896_709_945_891_7,
    0.010_411_265_261_972_0,
    0.009_255_462_182_712_73,
    0.008_330_563_433_362_87,
];

#[inline]
fn stirling_tail(k: f64) -> f64 {
    if k < 10.0 {
        return STIRLING_TAIL[k as usize];
    }
    let kp1 = k + 1.0;
    let kp1sq = kp1 * kp1;
    (1.0 / 12.0 - (1.0 / 360.0 - 1.0 / 1260.0 / kp1sq) / kp1sq) / kp1
}

/// Draws from Binomial(`trials`, `prob`).
///
/// `prob` outside `[0, 1]` is clamped.
#[inline]
pub fn sample<R: Rng + ?Sized>(rng: &mut R, trials: u64, prob: f64) -> u64 {
    Binomial::new(trials, prob).sample(rng)
}

/// A binomial distribution with its sampling constants precomputed.
#[derive(Clone, Copy, Debug)]
pub struct Binomial {
    trials: u64,
    // Samples are reflected (`trials - k`) when the stored probability is 1 - p.
    reflect: bool,
    method: Method,
}

#[derive(Clone, Copy, Debug)]
enum Method {
    Constant(u64),
    Inversion { log_q: f64 },
    Btrs(Btrs),
}

#[derive(Clone, Copy, Debug)]
struct Btrs {
    n: f64,
    p: f64,
    spq: f64,
    a: f64,
    b: f64,
    c: f64,
    v_r: f64,
}

impl Binomial {
    #[inline]
    pub fn new(trials: u64, prob: f64) -> Self {
        if trials == 0 || prob <= 0.0 {
            return Binomial { trials, reflect: false, method: Method::Constant(0) };
        }
        if prob >= 1.0 {
            return Binomial { trials, reflect: false, method: Method::Constant(trials) };
        }
        let reflect = prob > 0.5;
        let p = if reflect { 1.0 - prob } else { prob };
        let n = trials as f64;
        let method = if n * p < 10.0 {
            Method::Inversion { log_q: (-p).ln_1p() }
        } else {
            let spq = (n * p * (1.0 - p)).sqrt();
            let b = 1.15 + 2.53 * spq;
            Method::Btrs(Btrs { n, p, spq, a: -0.0873 + 0.0248 * b + 0.01 * p, b, c: n * p + 0.5, v_r: 0.92 - 4.2 / b })
        };
        Binomial { trials, reflect, method }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let k = match &self.method {
            Method::Constant(k) => return *k,
            Method::Inversion { log_q } => inversion(rng, self.trials, *log_q),
            Method::Btrs(btrs) => btrs.sample(rng),
        };
        if self.reflect {
            self.trials - k
        } else {
            k
        }
    }
}

fn inversion<R: Rng + ?Sized>(rng: &mut R, trials: u64, log_q: f64) -> u64 {
    let mut successes = 0u64;
    let mut position = 0.0f64;
    loop {
        // 1 - u lies in (0, 1], so the log is finite.
        let u: f64 = 1.0 - rng.random::<f64>();
        position += (u.ln() / log_q).ceil().max(1.0);
        if position > trials as f64 {
            return successes;
        }
        successes += 1;
    }
}

impl Btrs {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        loop {
            let u = rng.random::<f64>() - 0.5;
            let v: f64 = rng.random();
            let us = 0.5 - u.abs();
            let k = ((2.0 * self.a / us + self.b) * u + self.c).floor();
            if k < 0.0 || k > self.n {
                continue;
            }
            if us >= 0.07 && v <= self.v_r {
                return k as u64;
            }
            if self.accept_slow(k, us, v) {
                return k as u64;
            }
        }
    }

    #[cold]
    fn accept_slow(&self, k: f64, us: f64, v: f64) -> bool {
        if v == 0.0 {
            return false;
        }
        let (n, p, a, b) = (self.n, self.p, self.a, self.b);
        let r = p / (1.0 - p);
        let alpha = (2.83 + 5.1 / b) * self.spq;
        let m = ((n + 1.0) * p).floor();
        let v = (v * alpha / (a / (us * us) + b)).ln();
        let upper = (m + 0.5) * ((m + 1.0) / (r * (n - m + 1.0))).ln()
            + (n + 1.0) * ((n - m + 1.0) / (n - k + 1.0)).ln()
            + (k + 0.5) * (r * (n - k + 1.0) / (k + 1.0)).ln()
            + stirling_tail(m)
            + stirling_tail(n - m)
            - stirling_tail(k)
            - stirling_tail(n - k);
        v <= upper
    }
}
