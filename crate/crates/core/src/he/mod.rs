//! A functional simulator of a leveled, slot-packed approximate HE scheme.
//!
//! Ciphertexts hold their slot values in the clear together with the
//! bookkeeping a real scheme would enforce: the remaining modulus bits, the
//! scale exponent and a bootstrap counter. Ciphertext multiplication consumes
//! `logDelta` bits, constant multiplication `logDeltaC` bits; additions,
//! rotations and multiplication by `i` are free. An operation that would
//! exhaust the budget fails with [`HeError::NeedsBootstrap`].
//!
//! There are no keys and no ring arithmetic; see [`NoiseModel`] for the only
//! source of approximation error.

mod dump;
mod params;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::encoding::BlockLayout;

pub use dump::{decode_ciphertext, encode_ciphertext, DUMP_MAGIC};
pub use params::{HeParams, NoiseModel, MAX_LOG_N};

#[derive(Debug, Error, PartialEq)]
pub enum HeError {
    #[error("message of {len} values does not fit in {slots} slots")]
    Oversize { len: usize, slots: usize },
    #[error("scale mismatch: 2^{left} vs 2^{right}")]
    ScaleMismatch { left: u32, right: u32 },
    #[error("needs bootstrap: {have} modulus bits left, operation needs {need}")]
    NeedsBootstrap { have: u32, need: u32 },
    #[error("ciphertexts have {left} and {right} slots")]
    SlotCount { left: usize, right: usize },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("config: {0}")]
    Config(String),
    #[error("slot dump: {0}")]
    Dump(String),
}

/// An encrypted slot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCiphertext {
    slots: Vec<Complex64>,
    level_bits: u32,
    scale_bits: u32,
    boot_count: u32,
}

impl SimCiphertext {
    pub fn level_bits(&self) -> u32 {
        self.level_bits
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn boot_count(&self) -> u32 {
        self.boot_count
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    fn with_slots(&self, slots: Vec<Complex64>, level_bits: u32) -> Self {
        Self {
            slots,
            level_bits,
            scale_bits: self.scale_bits,
            boot_count: self.boot_count,
        }
    }
}

/// Number of operations of each kind performed by an [`Evaluator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounters {
    pub enc: u64,
    pub dec: u64,
    pub add: u64,
    pub cadd: u64,
    pub mul: u64,
    pub cmul: u64,
    pub imul: u64,
    pub rotate: u64,
    pub bootstrap: u64,
}

impl OpCounters {
    fn total(&self) -> u64 {
        self.enc + self.dec + self.add + self.cadd + self.mul + self.cmul + self.imul + self.rotate + self.bootstrap
    }
}

impl std::ops::Sub for OpCounters {
    type Output = OpCounters;

    fn sub(self, rhs: Self) -> Self {
        OpCounters {
            enc: self.enc - rhs.enc,
            dec: self.dec - rhs.dec,
            add: self.add - rhs.add,
            cadd: self.cadd - rhs.cadd,
            mul: self.mul - rhs.mul,
            cmul: self.cmul - rhs.cmul,
            imul: self.imul - rhs.imul,
            rotate: self.rotate - rhs.rotate,
            bootstrap: self.bootstrap - rhs.bootstrap,
        }
    }
}

/// Performs operations under one parameter set and counts them.
///
/// Noise for the `k`-th operation is drawn from a ChaCha stream selected by
/// `k`, so a run is reproducible from the seed and the operation order alone.
#[derive(Debug, Clone)]
pub struct Evaluator {
    params: HeParams,
    seed: u64,
    counters: OpCounters,
}

impl Evaluator {
    pub fn new(params: HeParams, seed: u64) -> Result<Self, HeError> {
        params.validate()?;
        Ok(Self {
            params,
            seed,
            counters: OpCounters::default(),
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    fn perturb(&self, slots: &mut [Complex64]) {
        let NoiseModel::Gaussian { sigma_rel } = self.params.noise else {
            return;
        };
        if sigma_rel == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.counters.total());
        for s in slots {
            let e: f64 = StandardNormal.sample(&mut rng);
            *s *= 1.0 + sigma_rel * e;
        }
    }

    fn check_slots(&self, len: usize) -> Result<(), HeError> {
        let slots = self.params.slots();
        if len != slots {
            return Err(HeError::SlotCount {
                left: len,
                right: slots,
            });
        }
        Ok(())
    }

    /// Level after spending `cost` bits. At least `logDelta` bits, the base
    /// modulus holding the message, must remain.
    fn spend(&self, have: u32, cost: u32) -> Result<u32, HeError> {
        let need = cost + self.params.log_delta;
        if have < need {
            return Err(HeError::NeedsBootstrap { have, need });
        }
        Ok(have - cost)
    }

    /// Constant of slot length: a single value is broadcast, shorter vectors
    /// are zero-padded.
    fn expand(&self, c: &[f64]) -> Result<Vec<f64>, HeError> {
        let slots = self.params.slots();
        match c.len() {
            1 => Ok(vec![c[0]; slots]),
            len if len <= slots => {
                let mut v = c.to_vec();
                v.resize(slots, 0.0);
                Ok(v)
            }
            len => Err(HeError::Oversize { len, slots }),
        }
    }

    pub fn encrypt(&mut self, m: &[f64]) -> Result<SimCiphertext, HeError> {
        let c: Vec<Complex64> = m.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.encrypt_complex(&c)
    }

    /// Encrypts, zero-padding to the slot count.
    pub fn encrypt_complex(&mut self, m: &[Complex64]) -> Result<SimCiphertext, HeError> {
        let slots = self.params.slots();
        if m.len() > slots {
            return Err(HeError::Oversize { len: m.len(), slots });
        }
        let mut v = m.to_vec();
        v.resize(slots, Complex64::new(0.0, 0.0));
        self.perturb(&mut v);
        self.counters.enc += 1;
        Ok(SimCiphertext {
            slots: v,
            level_bits: self.params.log_q,
            scale_bits: self.params.log_delta,
            boot_count: 0,
        })
    }

    /// Encrypts at an explicit scale exponent.
    pub fn encrypt_at_scale(&mut self, m: &[f64], scale_bits: u32) -> Result<SimCiphertext, HeError> {
        let mut ct = self.encrypt(m)?;
        ct.scale_bits = scale_bits;
        Ok(ct)
    }

    pub fn decrypt_complex(&mut self, ct: &SimCiphertext) -> Vec<Complex64> {
        self.counters.dec += 1;
        ct.slots.clone()
    }

    /// Real parts of the slots.
    pub fn decrypt(&mut self, ct: &SimCiphertext) -> Vec<f64> {
        self.counters.dec += 1;
        ct.slots.iter().map(|c| c.re).collect()
    }

    pub fn add(&mut self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext, HeError> {
        self.check_pair(a, b)?;
        self.counters.add += 1;
        let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect();
        Ok(a.with_slots(slots, a.level_bits.min(b.level_bits)))
    }

    pub fn sub(&mut self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext, HeError> {
        self.check_pair(a, b)?;
        self.counters.add += 1;
        let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x - y).collect();
        Ok(a.with_slots(slots, a.level_bits.min(b.level_bits)))
    }

    fn check_pair(&self, a: &SimCiphertext, b: &SimCiphertext) -> Result<(), HeError> {
        if a.slots.len() != b.slots.len() {
            return Err(HeError::SlotCount {
                left: a.slots.len(),
                right: b.slots.len(),
            });
        }
        if a.scale_bits != b.scale_bits {
            return Err(HeError::ScaleMismatch {
                left: a.scale_bits,
                right: b.scale_bits,
            });
        }
        Ok(())
    }

    pub fn cadd(&mut self, a: &SimCiphertext, c: &[f64]) -> Result<SimCiphertext, HeError> {
        let c = self.expand(c)?;
        self.check_slots(a.slots.len())?;
        self.counters.cadd += 1;
        let slots = a.slots.iter().zip(&c).map(|(x, &y)| x + y).collect();
        Ok(a.with_slots(slots, a.level_bits))
    }

    /// Slotwise product followed by a rescale by `Delta`.
    pub fn mul(&mut self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext, HeError> {
        self.check_pair(a, b)?;
        let level = self.spend(a.level_bits.min(b.level_bits), self.params.log_delta)?;
        let mut slots: Vec<Complex64> = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
        self.perturb(&mut slots);
        self.counters.mul += 1;
        Ok(a.with_slots(slots, level))
    }

    /// Slotwise product with a plaintext constant encoded at `Delta_c`.
    pub fn cmul(&mut self, a: &SimCiphertext, c: &[f64]) -> Result<SimCiphertext, HeError> {
        let c = self.expand(c)?;
        self.check_slots(a.slots.len())?;
        let level = self.spend(a.level_bits, self.params.log_delta_c)?;
        let mut slots: Vec<Complex64> = a.slots.iter().zip(&c).map(|(x, &y)| x * y).collect();
        self.perturb(&mut slots);
        self.counters.cmul += 1;
        Ok(a.with_slots(slots, level))
    }

    pub fn imul(&mut self, a: &SimCiphertext) -> SimCiphertext {
        self.counters.imul += 1;
        let slots = a.slots.iter().map(|x| x * Complex64::i()).collect();
        a.with_slots(slots, a.level_bits)
    }

    /// Cyclic left rotation by `k` slots; negative `k` rotates right.
    pub fn rotate(&mut self, a: &SimCiphertext, k: isize) -> SimCiphertext {
        self.counters.rotate += 1;
        let n = a.slots.len() as isize;
        let shift = k.rem_euclid(n) as usize;
        let mut slots = a.slots.clone();
        slots.rotate_left(shift);
        a.with_slots(slots, a.level_bits)
    }

    /// Restores the level to `logQ` without changing the message.
    pub fn bootstrap(&mut self, a: &SimCiphertext) -> SimCiphertext {
        let mut slots = a.slots.clone();
        self.perturb(&mut slots);
        self.counters.bootstrap += 1;
        SimCiphertext {
            slots,
            level_bits: self.params.log_q,
            scale_bits: a.scale_bits,
            boot_count: a.boot_count + 1,
        }
    }

    /// Adds `rotate(a, step * s)` for `s = 1, 2, 4, ...` below `span`, so
    /// slot `k` ends up holding `sum_{d < span} a[k + step * d]`.
    fn rotate_and_add(
        &mut self,
        a: &SimCiphertext,
        step: usize,
        span: usize,
        sign: isize,
    ) -> Result<SimCiphertext, HeError> {
        let mut acc = a.clone();
        let mut s = 1;
        while s < span {
            let r = self.rotate(&acc, sign * (step * s) as isize);
            acc = self.add(&acc, &r)?;
            s *= 2;
        }
        Ok(acc)
    }

    /// Row sums of a row-major `m x g` block, valid in column 0 only.
    ///
    /// Other columns hold sums that wrap into the following row. Partial
    /// results from several column blocks may be added before
    /// [`Evaluator::replicate_first_column`].
    pub fn row_partial_sums(&mut self, a: &SimCiphertext, layout: &BlockLayout) -> Result<SimCiphertext, HeError> {
        self.check_layout(a, layout)?;
        self.rotate_and_add(a, 1, layout.g, 1)
    }

    /// Keeps column 0 of every row and copies it across the row. Costs one
    /// constant multiplication when `g > 1`.
    pub fn replicate_first_column(
        &mut self,
        a: &SimCiphertext,
        layout: &BlockLayout,
    ) -> Result<SimCiphertext, HeError> {
        self.check_layout(a, layout)?;
        if layout.g == 1 {
            return Ok(a.clone());
        }
        let mask = crate::encoding::column_mask(layout);
        let masked = self.cmul(a, &mask)?;
        self.rotate_and_add(&masked, 1, layout.g, -1)
    }

    /// Row sums of a packed block, replicated across each row.
    pub fn sum_col_vec(&mut self, a: &SimCiphertext, layout: &BlockLayout) -> Result<SimCiphertext, HeError> {
        let partial = self.row_partial_sums(a, layout)?;
        self.replicate_first_column(&partial, layout)
    }

    /// Column sums of a packed block, replicated down each column. Free of
    /// level cost because `m * g` covers every slot.
    pub fn sum_rows(&mut self, a: &SimCiphertext, layout: &BlockLayout) -> Result<SimCiphertext, HeError> {
        self.check_layout(a, layout)?;
        self.rotate_and_add(a, layout.g, layout.m, 1)
    }

    fn check_layout(&self, a: &SimCiphertext, layout: &BlockLayout) -> Result<(), HeError> {
        if layout.m * layout.g != a.slots.len() {
            return Err(HeError::Layout(format!(
                "{}x{} block in a ciphertext of {} slots",
                layout.m,
                layout.g,
                a.slots.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(log_n: u32) -> Evaluator {
        Evaluator::new(
            HeParams {
                log_n,
                ..Default::default()
            },
            0,
        )
        .unwrap()
    }

    fn layout(m: usize, g: usize) -> BlockLayout {
        BlockLayout::for_block(m, g)
    }

    #[test]
    fn round_trip_and_fresh_level() {
        let mut ev = small(4);
        let m = [1.5, -2.0, 0.25];
        let ct = ev.encrypt(&m).unwrap();
        assert_eq!(ct.level_bits(), 275);
        assert_eq!(ct.slot_count(), 8);
        assert_eq!(&ev.decrypt(&ct)[..3], &m);
        assert!(ev.decrypt(&ct)[3..].iter().all(|&v| v == 0.0));
        assert_eq!(ev.encrypt(&[0.0; 9]), Err(HeError::Oversize { len: 9, slots: 8 }));
    }

    #[test]
    fn noisy_round_trip_is_close() {
        let params = HeParams {
            log_n: 15,
            noise: NoiseModel::Gaussian { sigma_rel: 1e-6 },
            ..Default::default()
        };
        let mut ev = Evaluator::new(params, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.5..2.0)).collect();
        let ct = ev.encrypt(&m).unwrap();
        let out = ev.decrypt(&ct);
        let worst = m.iter().zip(&out).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "{worst}");
        assert!(worst > 0.0);
        // same seed, same op order, same noise
        let mut again = Evaluator::new(params, 42).unwrap();
        assert_eq!(again.encrypt(&m).unwrap(), ct);
    }

    #[test]
    fn add_and_levels() {
        let mut ev = small(2);
        let a = ev.encrypt(&[1.0, 2.0]).unwrap();
        let b = ev.encrypt(&[3.0, 4.0]).unwrap();
        assert_eq!(&ev.decrypt(&ev.clone().add(&a, &b).unwrap())[..2], &[4.0, 6.0]);
        let zero = ev.encrypt(&[]).unwrap();
        assert_eq!(ev.add(&a, &zero).unwrap(), a);
        let low = ev.cmul(&b, &[1.0]).unwrap();
        assert_eq!(ev.add(&a, &low).unwrap().level_bits(), 255);
        let odd = ev.encrypt_at_scale(&[1.0], 40).unwrap();
        assert_eq!(ev.add(&a, &odd), Err(HeError::ScaleMismatch { left: 30, right: 40 }));
    }

    #[test]
    fn mul_cmul_imul() {
        let mut ev = small(2);
        let a = ev.encrypt(&[1.0, 2.0]).unwrap();
        let b = ev.encrypt(&[3.0, 4.0]).unwrap();
        let p = ev.mul(&a, &b).unwrap();
        assert_eq!(&ev.decrypt(&p)[..2], &[3.0, 8.0]);
        assert_eq!(p.level_bits(), 245);
        let ones = ev.encrypt(&[1.0; 2]).unwrap();
        let same = ev.mul(&a, &ones).unwrap();
        assert_eq!(ev.decrypt(&same), ev.decrypt(&a));
        let c = ev.cmul(&a, &[1.0]).unwrap();
        assert_eq!(c.level_bits(), 255);
        assert_eq!(ev.decrypt(&c), ev.decrypt(&a));
        let neg = ev.imul(&ev.clone().imul(&a));
        assert_eq!(ev.decrypt(&neg)[..2], [-1.0, -2.0]);
        assert_eq!(neg.level_bits(), 275);
    }

    #[test]
    fn multiplication_chain_budget() {
        // k muls from fresh are possible iff logQ - k * logDelta >= logDelta
        for log_q in [60, 61, 89, 90, 275, 300] {
            let mut ev = Evaluator::new(
                HeParams {
                    log_n: 2,
                    log_q,
                    ..Default::default()
                },
                0,
            )
            .unwrap();
            let mut ct = ev.encrypt(&[1.0]).unwrap();
            let mut k = 0;
            while let Ok(next) = ev.mul(&ct, &ct) {
                ct = next;
                k += 1;
            }
            assert!(log_q as i64 - k * 30 >= 30);
            assert!(log_q as i64 - (k + 1) * 30 < 30, "logQ {log_q}: {k} muls");
            assert_eq!(
                ev.mul(&ct, &ct),
                Err(HeError::NeedsBootstrap {
                    have: ct.level_bits(),
                    need: 60
                })
            );
        }
    }

    #[test]
    fn rotation_examples() {
        let mut ev = small(3);
        let a = ev.encrypt(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ev.decrypt(&ev.clone().rotate(&a, 1)), vec![2.0, 3.0, 0.0, 1.0]);
        assert_eq!(ev.rotate(&a, 4), a);
        let two = ev.rotate(&ev.clone().rotate(&a, 1), 1);
        assert_eq!(two, ev.rotate(&a, 2));
        assert_eq!(ev.rotate(&a, -1), ev.rotate(&a, 3));
    }

    #[test]
    fn filter_extracts_first_column() {
        let mut ev = small(3);
        let a = ev.encrypt(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = crate::encoding::column_mask(&layout(2, 2));
        let c = ev.cmul(&a, &f).unwrap();
        assert_eq!(ev.decrypt(&c), vec![1.0, 0.0, 3.0, 0.0]);
        assert_eq!(c.level_bits(), 255);
    }

    #[test]
    fn sum_col_vec_examples() {
        let mut ev = small(3);
        let a = ev.encrypt(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = ev.sum_col_vec(&a, &layout(2, 2)).unwrap();
        assert_eq!(ev.decrypt(&s), vec![3.0, 3.0, 7.0, 7.0]);
        let z = ev.encrypt(&[]).unwrap();
        assert!(ev
            .decrypt(&ev.clone().sum_col_vec(&z, &layout(2, 2)).unwrap())
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(ev.sum_col_vec(&a, &layout(4, 2)), Err(HeError::Layout(_))));
        let cols = ev.sum_rows(&a, &layout(2, 2)).unwrap();
        assert_eq!(ev.decrypt(&cols), vec![4.0, 6.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_col_vec_matches_row_sums() {
        let mut ev = small(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m: Vec<f64> = (0..32).map(|_| rng.random_range(-8i32..8) as f64).collect();
        let a = ev.encrypt(&m).unwrap();
        let out = ev.decrypt(&ev.clone().sum_col_vec(&a, &layout(8, 4)).unwrap());
        for i in 0..8 {
            let want: f64 = m[i * 4..i * 4 + 4].iter().sum();
            assert!(out[i * 4..i * 4 + 4].iter().all(|&v| v == want));
        }
    }

    #[test]
    fn bootstrap_restores_level() {
        let mut ev = small(2);
        let mut ct = ev.encrypt(&[0.5, 0.25]).unwrap();
        for _ in 0..8 {
            ct = ev.mul(&ct, &ct).unwrap();
        }
        assert_eq!(ct.level_bits(), 35);
        let before = ev.decrypt(&ct);
        let fresh = ev.bootstrap(&ct);
        assert_eq!(fresh.level_bits(), 275);
        assert_eq!(fresh.boot_count(), 1);
        assert_eq!(ev.decrypt(&fresh), before);
        assert_eq!(ev.counters().bootstrap, 1);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add,
        Mul,
        Cmul(f64),
        Imul,
        Rotate(isize),
        Bootstrap,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Add),
            Just(Op::Mul),
            (-2.0f64..2.0).prop_map(Op::Cmul),
            Just(Op::Imul),
            (-20isize..20).prop_map(Op::Rotate),
            Just(Op::Bootstrap),
        ]
    }

    proptest! {
        #[test]
        fn homomorphism_and_level_ledger(
            m1 in proptest::collection::vec(-4i32..4, 8),
            m2 in proptest::collection::vec(-4i32..4, 8),
            ops in proptest::collection::vec(op(), 1..24),
        ) {
            // small integers and dyadic constants keep every product exact
            let mut ev = small(4);
            let to_c = |v: &Vec<i32>| v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect::<Vec<_>>();
            let mut plain = to_c(&m1);
            let other = to_c(&m2);
            let mut ct = ev.encrypt_complex(&plain).unwrap();
            let ct2 = ev.encrypt_complex(&other).unwrap();
            let mut spent = 0u32;
            for o in ops {
                let before = ev.counters();
                let res = match o {
                    Op::Add => ev.add(&ct, &ct2).inspect(|_| plain.iter_mut().zip(&other).for_each(|(a, b)| *a += b)),
                    Op::Mul => ev.mul(&ct, &ct2).inspect(|_| plain.iter_mut().zip(&other).for_each(|(a, b)| *a *= b)),
                    Op::Cmul(x) => {
                        let x = (x * 4.0).round() / 4.0;
                        ev.cmul(&ct, &[x]).inspect(|_| plain.iter_mut().for_each(|a| *a *= x))
                    }
                    Op::Imul => {
                        plain.iter_mut().for_each(|a| *a *= Complex64::i());
                        Ok(ev.imul(&ct))
                    },
                    Op::Rotate(k) => {
                        plain.rotate_left(k.rem_euclid(8) as usize);
                        Ok(ev.rotate(&ct, k))
                    },
                    Op::Bootstrap => Ok(ev.bootstrap(&ct)),
                };
                match res {
                    Ok(c) => {
                        let d = ev.counters() - before;
                        if d.bootstrap == 1 {
                            spent = 0;
                        }
                        spent += d.mul as u32 * 30 + d.cmul as u32 * 20;
                        ct = c;
                    }
                    Err(HeError::NeedsBootstrap { have, .. }) => prop_assert_eq!(have, ct.level_bits()),
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                prop_assert_eq!(ct.level_bits(), 275 - spent);
                prop_assert_eq!(ev.decrypt_complex(&ct), plain.clone());
            }
        }
    }
}
