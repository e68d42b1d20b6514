//! Enhanced NAG evaluated over packed ciphertexts.
//!
//! One iteration on a row block of `Z` (one ciphertext per column block):
//!
//! 1. `u = Z * W`, row sums across all column blocks, masked and replicated
//!    across each row.
//! 2. `r = 1 - p(u)` for the cubic `p`, as `(1 - c0) + u (-c1 - c3 u^2) - c2 u^2`.
//! 3. `g = sum over rows of r * Z`, replicated down the rows like `W`.
//! 4. `G = B * g` (enhanced only), then the NAG mix with public scalars.
//!
//! Full-batch mode adds the step-3 results of every row block before step 4.
//! The weight ciphertexts are refreshed whenever their level cannot carry
//! another iteration; the cost of one iteration is measured on the first.

use std::io::{Read, Write};

use ndarray::{s, Array1};
use thiserror::Error;

use crate::data::{build_z, Dataset};
use crate::encoding::{self, plan_layout, BlockLayout, EncodingError};
use crate::he::{Evaluator, HeError, HeParams, OpCounters, SimCiphertext};
use crate::optim::{self, BatchMode, InputRange, MetricsRow, NagState, OptimError, Optimizer, TrainConfig};
use crate::quadgrad::{self, QuadGradError, QuadScaler};
use crate::sigmoid::{Activation, PolyApprox};

#[derive(Debug, Error, PartialEq)]
pub enum EncTrainError {
    #[error("the exact sigmoid cannot be evaluated in the encrypted circuit; use g8 or g16")]
    ExactSigmoid,
    #[error("the circuit evaluates polynomials up to degree 3, got degree {0}")]
    Degree(usize),
    #[error("decrypted weights carry an imaginary part of {0}")]
    Imaginary(f64),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    QuadGrad(#[from] QuadGradError),
}

pub type Result<T> = std::result::Result<T, EncTrainError>;

/// Everything the client uploads.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub layout: BlockLayout,
    /// `[row block][col block]`.
    pub z: Vec<Vec<SimCiphertext>>,
    /// `[row block][col block]` in mini-batch mode, a single row otherwise.
    pub bbar: Vec<Vec<SimCiphertext>>,
    pub w0: Vec<SimCiphertext>,
    /// Plaintext scalers behind `bbar`, in the same order.
    pub scalers: Vec<QuadScaler>,
}

/// Scalers the client builds: one per row block, merged into one for full
/// batch.
pub fn client_scalers(ds: &Dataset, layout: &BlockLayout, mode: BatchMode, epsilon: f64) -> Result<Vec<QuadScaler>> {
    let per_block = (0..layout.row_blocks)
        .map(|rb| {
            let r0 = rb * layout.m;
            let rows = ds.x().slice_move(s![r0..r0 + layout.rows_in(rb), ..]);
            quadgrad::scaler_for(rows, epsilon)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(match mode {
        BatchMode::MiniBatch => per_block,
        BatchMode::FullBatch => vec![quadgrad::merge_bbar(&per_block)?],
    })
}

pub fn client_prepare(
    ev: &mut Evaluator,
    ds: &Dataset,
    layout: &BlockLayout,
    mode: BatchMode,
    optimizer: Optimizer,
    epsilon: f64,
) -> Result<ClientData> {
    let z = build_z(ds);
    let z = encoding::pack_matrix(z.view(), layout)?
        .into_iter()
        .map(|row| row.iter().map(|b| ev.encrypt(b)).collect())
        .collect::<std::result::Result<Vec<Vec<_>>, _>>()?;
    let scalers = match optimizer {
        Optimizer::EnhancedNag => client_scalers(ds, layout, mode, epsilon)?,
        Optimizer::Nag => Vec::new(),
    };
    let mut bbar = Vec::with_capacity(scalers.len());
    for s in &scalers {
        let row = encoding::replicate_rows(s.diagonal(), layout)?
            .iter()
            .map(|b| ev.encrypt(b))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        bbar.push(row);
    }
    let zeros = encoding::replicate_rows(Array1::zeros(layout.cols()).view(), layout)?;
    let w0 = zeros
        .iter()
        .map(|b| ev.encrypt(b))
        .collect::<std::result::Result<_, _>>()?;
    Ok(ClientData {
        layout: *layout,
        z,
        bbar,
        w0,
        scalers,
    })
}

fn cubic(poly: &PolyApprox) -> Result<[f64; 4]> {
    let c = poly.coefficients();
    if c.len() > 4 {
        return Err(EncTrainError::Degree(c.len() - 1));
    }
    let mut out = [0.0; 4];
    out[..c.len()].copy_from_slice(c);
    Ok(out)
}

/// Unaveraged gradient of one row block, replicated like `W`.
pub fn enc_gradient(
    ev: &mut Evaluator,
    z: &[SimCiphertext],
    w: &[SimCiphertext],
    poly: &PolyApprox,
    layout: &BlockLayout,
) -> Result<Vec<SimCiphertext>> {
    let [c0, c1, c2, c3] = cubic(poly)?;
    let mut partial: Option<SimCiphertext> = None;
    for (zc, wc) in z.iter().zip(w) {
        let prod = ev.mul(zc, wc)?;
        let sums = ev.row_partial_sums(&prod, layout)?;
        partial = Some(match partial {
            None => sums,
            Some(acc) => ev.add(&acc, &sums)?,
        });
    }
    let partial = partial.ok_or_else(|| HeError::Layout("no column blocks".into()))?;
    let u = ev.replicate_first_column(&partial, layout)?;

    let u2 = ev.mul(&u, &u)?;
    let inner = ev.cmul(&u2, &[-c3])?;
    let inner = ev.cadd(&inner, &[-c1])?;
    let mut r = ev.mul(&inner, &u)?;
    if c2 != 0.0 {
        let quad = ev.cmul(&u2, &[-c2])?;
        r = ev.add(&r, &quad)?;
    }
    let r = ev.cadd(&r, &[1.0 - c0])?;

    z.iter()
        .map(|zc| {
            let t = ev.mul(&r, zc)?;
            Ok(ev.sum_rows(&t, layout)?)
        })
        .collect()
}

/// `G = B * g`, one multiplication per column block.
pub fn enc_quad_gradient(
    ev: &mut Evaluator,
    g: &[SimCiphertext],
    bbar: &[SimCiphertext],
) -> Result<Vec<SimCiphertext>> {
    if g.len() != bbar.len() {
        return Err(HeError::Layout(format!("{} gradient blocks, {} scaler blocks", g.len(), bbar.len())).into());
    }
    g.iter().zip(bbar).map(|(a, b)| Ok(ev.mul(a, b)?)).collect()
}

/// Encrypted weights with the public NAG scalars.
#[derive(Debug, Clone)]
pub struct EncModelState {
    pub w: Vec<SimCiphertext>,
    pub v: Vec<SimCiphertext>,
    pub alpha0: f64,
    pub alpha1: f64,
    pub t: usize,
}

impl EncModelState {
    pub fn new(w0: Vec<SimCiphertext>) -> Self {
        let plain = NagState::zeros(0);
        Self {
            v: w0.clone(),
            w: w0,
            alpha0: plain.alpha0,
            alpha1: plain.alpha1,
            t: 0,
        }
    }

    pub fn eta(&self) -> f64 {
        (1.0 - self.alpha0) / self.alpha1
    }

    /// Lowest level among the weight ciphertexts.
    pub fn level_bits(&self) -> u32 {
        self.w
            .iter()
            .chain(&self.v)
            .map(SimCiphertext::level_bits)
            .min()
            .unwrap_or(0)
    }

    /// Decrypts the first row of every column block.
    pub fn decrypt_weights(&self, ev: &mut Evaluator, layout: &BlockLayout) -> Result<Array1<f64>> {
        let mut out = Vec::with_capacity(layout.cols());
        for (cb, ct) in self.w.iter().enumerate() {
            let slots = ev.decrypt_complex(ct);
            for s in &slots[..layout.cols_in(cb)] {
                if s.im.abs() > 1e-9 {
                    return Err(EncTrainError::Imaginary(s.im));
                }
                out.push(s.re);
            }
        }
        Ok(Array1::from(out))
    }
}

/// `V' = W + lr * G`, `W' = (1 - eta) V' + eta V`.
pub fn enc_nag_update(
    ev: &mut Evaluator,
    state: &EncModelState,
    dir: &[SimCiphertext],
    eta: f64,
    lr: f64,
) -> Result<EncModelState> {
    let mut w = Vec::with_capacity(state.w.len());
    let mut v = Vec::with_capacity(state.w.len());
    for ((wc, vc), gc) in state.w.iter().zip(&state.v).zip(dir) {
        let step = ev.cmul(gc, &[lr])?;
        let v_temp = ev.add(wc, &step)?;
        let keep = ev.cmul(&v_temp, &[1.0 - eta])?;
        let carry = ev.cmul(vc, &[eta])?;
        w.push(ev.add(&keep, &carry)?);
        v.push(v_temp);
    }
    Ok(EncModelState {
        w,
        v,
        alpha0: state.alpha1,
        alpha1: optim::next_alpha(state.alpha1),
        t: state.t + 1,
    })
}

/// Refreshes `W` and `V` when fewer than `needed_bits` remain. Returns the
/// number of ciphertexts bootstrapped.
pub fn bootstrap_policy(ev: &mut Evaluator, state: &mut EncModelState, needed_bits: u32) -> usize {
    if state.level_bits() >= needed_bits {
        return 0;
    }
    for ct in state.w.iter_mut().chain(state.v.iter_mut()) {
        *ct = ev.bootstrap(ct);
    }
    state.w.len() + state.v.len()
}

/// Operation counts and levels of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerRow {
    pub iteration: usize,
    pub muls: u64,
    pub cmuls: u64,
    pub rotations: u64,
    pub adds: u64,
    /// Refresh events before this iteration (0 or 1).
    pub bootstraps: u64,
    /// Ciphertexts refreshed by those events.
    pub refreshed_cts: u64,
    /// Lowest weight level when the circuit started, after any refresh.
    pub level_before: u32,
    pub level_after: u32,
}

pub const LEDGER_HEADER: [&str; 9] = [
    "iteration",
    "muls",
    "cmuls",
    "rotations",
    "adds",
    "bootstraps",
    "refreshed_cts",
    "level_before",
    "level_after",
];

pub fn write_ledger<W: Write>(rows: &[LedgerRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{}", LEDGER_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.muls,
            r.cmuls,
            r.rotations,
            r.adds,
            r.bootstraps,
            r.refreshed_cts,
            r.level_before,
            r.level_after
        )?;
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
#[error("ledger line {line}: {message}")]
pub struct LedgerParseError {
    pub line: usize,
    pub message: String,
}

pub fn read_ledger<R: Read>(mut r: R) -> std::result::Result<Vec<LedgerRow>, LedgerParseError> {
    let err = |line: usize, message: String| LedgerParseError { line, message };
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| err(0, e.to_string()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == LEDGER_HEADER.join(",") => {}
        Some((i, _)) => return Err(err(i + 1, "unexpected header".into())),
        None => return Err(err(0, "empty ledger".into())),
    }
    lines
        .map(|(i, l)| {
            let v = l
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<u64>()
                        .map_err(|_| err(i + 1, format!("bad count {f:?}")))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if v.len() != LEDGER_HEADER.len() {
                return Err(err(
                    i + 1,
                    format!("expected {} fields, found {}", LEDGER_HEADER.len(), v.len()),
                ));
            }
            let level = |x: u64| u32::try_from(x).map_err(|_| err(i + 1, format!("level {x} out of range")));
            let iteration = usize::try_from(v[0]).map_err(|_| err(i + 1, "iteration out of range".into()))?;
            Ok(LedgerRow {
                iteration,
                muls: v[1],
                cmuls: v[2],
                rotations: v[3],
                adds: v[4],
                bootstraps: v[5],
                refreshed_cts: v[6],
                level_before: level(v[7])?,
                level_after: level(v[8])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EncTrainResult {
    pub weights: Array1<f64>,
    pub trace: Vec<MetricsRow>,
    /// Decrypted `W` after every iteration.
    pub trajectory: Vec<Array1<f64>>,
    pub ledger: Vec<LedgerRow>,
    pub layout: BlockLayout,
    pub ct_z_blocks: usize,
    pub ct_bbar_blocks: usize,
    /// Bits that must be available for one iteration, measured on the first.
    pub needed_bits: Option<u32>,
    pub counters: OpCounters,
    /// Plaintext scalers the client encrypted.
    pub scalers: Vec<QuadScaler>,
}

impl EncTrainResult {
    /// Refresh events per iteration after the first.
    pub fn bootstraps_per_iteration(&self) -> f64 {
        let steady = &self.ledger[self.ledger.len().min(1)..];
        if steady.is_empty() {
            return 0.0;
        }
        steady.iter().map(|r| r.bootstraps).sum::<u64>() as f64 / steady.len() as f64
    }
}

/// Trains on encrypted data. The per-iteration metrics decrypt `W`, which
/// the server-side computation never does.
pub fn train_encrypted(
    ds: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    params: &HeParams,
) -> Result<EncTrainResult> {
    let poly = match &cfg.activation {
        Activation::Exact => return Err(EncTrainError::ExactSigmoid),
        Activation::Poly(p) => p.clone(),
    };
    cubic(&poly)?;
    cfg.schedule.validate()?;
    let batches = cfg.batches(ds.n_samples())?;
    let layout = plan_layout(ds.n_samples(), ds.n_features(), params, cfg.batch_size)?;
    let mut ev = Evaluator::new(*params, cfg.seed)?;
    let client = client_prepare(&mut ev, ds, &layout, cfg.mode, cfg.optimizer, cfg.epsilon)?;

    let z_plain = build_z(ds);
    let mut state = EncModelState::new(client.w0.clone());
    let mut needed_bits = None;
    let mut ledger = Vec::new();
    let mut trace = Vec::new();
    let mut trajectory = Vec::new();
    let mut w_plain = Array1::zeros(layout.cols());

    for (t, &b) in cfg.visit_order(batches.len()).iter().enumerate() {
        let start = ev.counters();
        let mut events = 0;
        let mut refreshed = 0;
        if let Some(need) = needed_bits {
            refreshed = bootstrap_policy(&mut ev, &mut state, need);
            events = u64::from(refreshed > 0);
        }
        let level_before = state.level_bits();

        let (row_blocks, rows, range) = match cfg.mode {
            BatchMode::MiniBatch => {
                let r = batches[b].clone();
                let zb = z_plain.view().slice_move(s![r.clone(), ..]);
                (
                    b..b + 1,
                    r.len(),
                    InputRange::measure(zb, w_plain.view(), &cfg.activation),
                )
            }
            BatchMode::FullBatch => (
                0..layout.row_blocks,
                ds.n_samples(),
                InputRange::measure(z_plain.view(), w_plain.view(), &cfg.activation),
            ),
        };

        let mut g: Option<Vec<SimCiphertext>> = None;
        for rb in row_blocks {
            let part = enc_gradient(&mut ev, &client.z[rb], &state.w, &poly, &layout)?;
            g = Some(match g {
                None => part,
                Some(acc) => acc
                    .iter()
                    .zip(&part)
                    .map(|(a, p)| ev.add(a, p))
                    .collect::<std::result::Result<_, _>>()?,
            });
        }
        let g = g.expect("at least one row block");
        let dir = match cfg.optimizer {
            Optimizer::EnhancedNag => {
                let k = if cfg.mode == BatchMode::MiniBatch { b } else { 0 };
                enc_quad_gradient(&mut ev, &g, &client.bbar[k])?
            }
            Optimizer::Nag => g,
        };
        let lr = cfg.rate_rule.multiplier(cfg.optimizer, cfg.schedule.f2(t), rows);
        state = enc_nag_update(&mut ev, &state, &dir, state.eta(), lr)?;
        let level_after = state.w.iter().map(SimCiphertext::level_bits).min().unwrap_or(0);

        if needed_bits.is_none() {
            needed_bits = Some(level_before - level_after + params.log_delta);
        }
        let d = ev.counters() - start;
        ledger.push(LedgerRow {
            iteration: t + 1,
            muls: d.mul,
            cmuls: d.cmul,
            rotations: d.rotate,
            adds: d.add,
            bootstraps: events,
            refreshed_cts: refreshed as u64,
            level_before,
            level_after,
        });

        w_plain = state.decrypt_weights(&mut ev, &layout)?;
        trace.push(optim::evaluate(
            t + 1,
            z_plain.view(),
            ds,
            val,
            w_plain.view(),
            lr,
            range,
        ));
        trajectory.push(w_plain.clone());
    }

    Ok(EncTrainResult {
        weights: w_plain,
        trace,
        trajectory,
        ledger,
        layout,
        ct_z_blocks: client.z.iter().map(Vec::len).sum(),
        ct_bbar_blocks: client.bbar.iter().map(Vec::len).sum(),
        needed_bits,
        counters: ev.counters(),
        scalers: client.scalers,
    })
}

/// Largest spread between rows of any decrypted weight block.
pub fn replication_error(ev: &mut Evaluator, cts: &[SimCiphertext], layout: &BlockLayout) -> f64 {
    let mut worst = 0.0_f64;
    for ct in cts {
        let slots = ev.decrypt(ct);
        for i in 1..layout.m {
            for j in 0..layout.g {
                worst = worst.max((slots[i * layout.g + j] - slots[j]).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_financial;
    use crate::optim::{gradient, train_with_scalers, LrSchedule};

    fn small_params() -> HeParams {
        HeParams {
            log_n: 5,
            ..Default::default()
        }
    }

    fn cfg(mode: BatchMode, optimizer: Optimizer, batch_size: usize, iterations: usize) -> TrainConfig {
        TrainConfig {
            mode,
            optimizer,
            batch_size,
            iterations,
            activation: Activation::g8(),
            ..Default::default()
        }
    }

    #[test]
    fn gradient_at_zero_is_half_column_sums() {
        let ds = synth_financial(8, 3, 1).unwrap();
        let p = small_params();
        let layout = plan_layout(8, 3, &p, 4).unwrap();
        let mut ev = Evaluator::new(p, 0).unwrap();
        let client = client_prepare(
            &mut ev,
            &ds,
            &layout,
            BatchMode::MiniBatch,
            Optimizer::EnhancedNag,
            1e-8,
        )
        .unwrap();
        let g = enc_gradient(&mut ev, &client.z[1], &client.w0, &PolyApprox::g8(), &layout).unwrap();
        let z = build_z(&ds);
        let want = z.view().slice_move(s![4..8, ..]).sum_axis(ndarray::Axis(0)) * 0.5;
        let got = ev.decrypt(&g[0]);
        for (j, w) in want.iter().enumerate() {
            assert!((got[j] - w).abs() < 1e-12);
        }
        assert!(replication_error(&mut ev, &g, &layout) <= 1e-12);
    }

    #[test]
    fn gradient_matches_plaintext_on_toy_block() {
        let ds = synth_financial(4, 3, 9).unwrap();
        let p = HeParams {
            log_n: 5,
            ..Default::default()
        };
        let layout = plan_layout(4, 3, &p, 4).unwrap();
        assert_eq!((layout.m, layout.g, layout.col_blocks), (4, 4, 1));
        let mut ev = Evaluator::new(p, 0).unwrap();
        let client = client_prepare(
            &mut ev,
            &ds,
            &layout,
            BatchMode::FullBatch,
            Optimizer::EnhancedNag,
            1e-8,
        )
        .unwrap();
        let w = ndarray::array![0.3, -1.0, 2.0, 0.5];
        let wct: Vec<_> = encoding::replicate_rows(w.view(), &layout)
            .unwrap()
            .iter()
            .map(|b| ev.encrypt(b).unwrap())
            .collect();
        let before = ev.counters();
        let g = enc_gradient(&mut ev, &client.z[0], &wct, &PolyApprox::g16(), &layout).unwrap();
        let plain = gradient(build_z(&ds).view(), w.view(), &Activation::g16());
        let got = ev.decrypt(&g[0]);
        for j in 0..4 {
            assert!((got[j] - plain[j]).abs() < 1e-12, "{j}: {} vs {}", got[j], plain[j]);
        }
        let d = ev.counters() - before;
        assert_eq!((d.mul, d.cmul), (4, 2));
        // Z*W, mask, u^2, c3, times u, times Z
        assert_eq!(g[0].level_bits(), 275 - 30 - 20 - 30 - 20 - 30 - 30);

        let q = enc_quad_gradient(&mut ev, &g, &client.bbar[0]).unwrap();
        let want = quadgrad::quad_gradient(&client.scalers[0], plain.view()).unwrap();
        let got = ev.decrypt(&q[0]);
        for j in 0..4 {
            assert!((got[j] - want[j]).abs() < 1e-9 * want[j].abs().max(1.0));
        }
    }

    #[test]
    fn quad_gradient_with_unit_scaler() {
        let p = small_params();
        let mut ev = Evaluator::new(p, 0).unwrap();
        let g = vec![ev.encrypt(&[1.0, -2.0, 3.0]).unwrap()];
        let ones = vec![ev.encrypt(&[1.0; 16]).unwrap()];
        let before = ev.counters();
        let out = enc_quad_gradient(&mut ev, &g, &ones).unwrap();
        assert_eq!(ev.decrypt(&out[0]), ev.decrypt(&g[0]));
        assert_eq!(out[0].level_bits(), 245);
        let d = ev.counters() - before;
        assert_eq!((d.mul, d.rotate), (1, 0));
    }

    #[test]
    fn update_with_zero_direction_mixes_iterates() {
        let p = small_params();
        let mut ev = Evaluator::new(p, 0).unwrap();
        let w = vec![ev.encrypt(&[1.0, 2.0]).unwrap()];
        let v = vec![ev.encrypt(&[3.0, -1.0]).unwrap()];
        let zero = vec![ev.encrypt(&[]).unwrap()];
        let state = EncModelState {
            w,
            v,
            ..EncModelState::new(zero.clone())
        };
        let eta = state.eta();
        let next = enc_nag_update(&mut ev, &state, &zero, eta, 1.5).unwrap();
        let out = ev.decrypt(&next.w[0]);
        assert!((out[0] - ((1.0 - eta) * 1.0 + eta * 3.0)).abs() < 1e-15);
        assert!((out[1] - ((1.0 - eta) * 2.0 - eta)).abs() < 1e-15);
        // two constant multiplications on the weight path
        assert_eq!(next.w[0].level_bits(), 275 - 40);
    }

    #[test]
    fn fresh_state_is_zero_and_not_refreshed() {
        let ds = synth_financial(20, 5, 3).unwrap();
        let p = small_params();
        let layout = plan_layout(20, 5, &p, 8).unwrap();
        let mut ev = Evaluator::new(p, 0).unwrap();
        let client = client_prepare(
            &mut ev,
            &ds,
            &layout,
            BatchMode::MiniBatch,
            Optimizer::EnhancedNag,
            1e-8,
        )
        .unwrap();
        assert_eq!(client.z.len() * client.z[0].len(), layout.blocks());
        assert_eq!(client.bbar.len(), layout.row_blocks);
        let mut state = EncModelState::new(client.w0);
        assert!(state
            .decrypt_weights(&mut ev, &layout)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(bootstrap_policy(&mut ev, &mut state, 260), 0);
    }

    fn assert_matches_plaintext(ds: &Dataset, cfg: &TrainConfig, p: &HeParams) -> EncTrainResult {
        let enc = train_encrypted(ds, None, cfg, p).unwrap();
        let plain = train_with_scalers(ds, None, cfg, &enc.scalers).unwrap();
        assert_eq!(enc.trajectory.len(), plain.trajectory.len());
        for (t, (a, b)) in enc.trajectory.iter().zip(&plain.trajectory).enumerate() {
            let worst = (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(worst <= 1e-9, "iteration {}: {worst}", t + 1);
        }
        enc
    }

    #[test]
    fn encrypted_matches_plaintext_in_every_mode() {
        let ds = synth_financial(70, 9, 5).unwrap();
        let p = HeParams {
            log_n: 7,
            ..Default::default()
        };
        for mode in [BatchMode::MiniBatch, BatchMode::FullBatch] {
            for optimizer in [Optimizer::EnhancedNag, Optimizer::Nag] {
                let c = TrainConfig {
                    schedule: LrSchedule::new(2.0, 1.0, 8, 2.5).unwrap(),
                    ..cfg(mode, optimizer, 16, 9)
                };
                let enc = assert_matches_plaintext(&ds, &c, &p);
                // 70 rows of 16 and 10 columns in blocks of 4
                assert_eq!((enc.layout.row_blocks, enc.layout.col_blocks), (5, 3));
            }
        }
    }

    #[test]
    fn shuffled_mini_batches_match_plaintext() {
        let ds = synth_financial(40, 4, 8).unwrap();
        let c = TrainConfig {
            shuffle: true,
            seed: 17,
            ..cfg(BatchMode::MiniBatch, Optimizer::EnhancedNag, 8, 11)
        };
        assert_matches_plaintext(&ds, &c, &small_params());
    }

    #[test]
    fn ledger_accounts_for_every_bit() {
        let ds = synth_financial(64, 6, 4).unwrap();
        for (log_q, per_iter) in [(275, 1.0), (550, 0.5)] {
            let p = HeParams {
                log_n: 6,
                log_q,
                ..Default::default()
            };
            let c = cfg(BatchMode::MiniBatch, Optimizer::EnhancedNag, 16, 9);
            let enc = train_encrypted(&ds, None, &c, &p).unwrap();
            assert_eq!(enc.needed_bits, Some(230 + 30));
            let mut level = log_q;
            for row in &enc.ledger {
                if row.bootstraps == 1 {
                    level = log_q;
                    assert_eq!(row.refreshed_cts, 2 * enc.layout.col_blocks as u64);
                }
                assert_eq!(row.level_before, level);
                assert_eq!(row.level_before - row.level_after, 230);
                level = row.level_after;
            }
            let b = enc.bootstraps_per_iteration();
            assert!((b - per_iter).abs() <= 0.5 / 8.0 + 1e-12, "logQ {log_q}: {b}");
            assert_eq!(enc.ledger[0].bootstraps, 0);
        }
    }

    #[test]
    fn ledger_csv_round_trip() {
        let rows = vec![LedgerRow {
            iteration: 1,
            muls: 3,
            cmuls: 4,
            rotations: 5,
            adds: 6,
            bootstraps: 1,
            refreshed_cts: 14,
            level_before: 275,
            level_after: 45,
        }];
        let mut buf = Vec::new();
        write_ledger(&rows, &mut buf).unwrap();
        assert_eq!(read_ledger(buf.as_slice()).unwrap(), rows);
        assert!(read_ledger("".as_bytes()).is_err());
        assert!(read_ledger("a,b\n".as_bytes()).is_err());
        let mut bad = String::from_utf8(buf).unwrap();
        bad.push_str("1,2,3\n");
        assert!(read_ledger(bad.as_bytes()).is_err());
    }

    #[test]
    fn rejects_exact_sigmoid_and_high_degree() {
        let ds = synth_financial(16, 2, 0).unwrap();
        let mut c = cfg(BatchMode::FullBatch, Optimizer::EnhancedNag, 16, 2);
        c.activation = Activation::Exact;
        assert_eq!(
            train_encrypted(&ds, None, &c, &small_params()).unwrap_err(),
            EncTrainError::ExactSigmoid
        );
        c.activation = Activation::Poly(PolyApprox::new(vec![0.5, 0.1, 0.0, 0.0, 0.0, 0.001], -4.0, 4.0).unwrap());
        assert_eq!(
            train_encrypted(&ds, None, &c, &small_params()).unwrap_err(),
            EncTrainError::Degree(5)
        );
        c.activation = Activation::g8();
        c.batch_size = 12;
        assert!(matches!(
            train_encrypted(&ds, None, &c, &small_params()),
            Err(EncTrainError::Encoding(EncodingError::NotPowerOfTwo(12)))
        ));
    }

    #[test]
    fn replication_invariant_holds_after_updates() {
        let ds = synth_financial(32, 5, 2).unwrap();
        let p = small_params();
        let c = cfg(BatchMode::FullBatch, Optimizer::EnhancedNag, 4, 1);
        let layout = plan_layout(32, 5, &p, c.batch_size).unwrap();
        let mut ev = Evaluator::new(p, 0).unwrap();
        let client = client_prepare(&mut ev, &ds, &layout, c.mode, c.optimizer, c.epsilon).unwrap();
        let mut state = EncModelState::new(client.w0.clone());
        for t in 0..4 {
            bootstrap_policy(&mut ev, &mut state, 260);
            let mut g: Option<Vec<SimCiphertext>> = None;
            for rb in 0..layout.row_blocks {
                let part = enc_gradient(&mut ev, &client.z[rb], &state.w, &PolyApprox::g8(), &layout).unwrap();
                g = Some(match g {
                    None => part,
                    Some(acc) => acc.iter().zip(&part).map(|(a, b)| ev.add(a, b).unwrap()).collect(),
                });
            }
            let dir = enc_quad_gradient(&mut ev, &g.unwrap(), &client.bbar[0]).unwrap();
            let eta = state.eta();
            state = enc_nag_update(&mut ev, &state, &dir, eta, c.schedule.f2(t)).unwrap();
            assert!(replication_error(&mut ev, &state.w, &layout) <= 1e-12);
            assert!(replication_error(&mut ev, &state.v, &layout) <= 1e-12);
        }
    }
}
