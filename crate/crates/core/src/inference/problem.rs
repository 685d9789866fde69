use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{FitConfig, FitDiagnostics, FitReport, Gaps, Objective, SignMode};
use crate::arrivals::{split_by_mark, MarkedArrivals};
use crate::drift::{Context, Drift, DriftSpec, ParamVector};
use crate::error::{Error, Result};
use crate::excursions::{proposal_height, sample_paths, sample_pinned_bridges, ExcursionBatch, SamplerConfig, SignPolicy};
use crate::likelihood::{
    build_joint_excursion, grid_batch, levy_log_density, levy_scale_mle, log_mean_exp, log_trapezoid_weights,
    penalty_tau_grid, weight, weight_grad, Times, WeightScratch,
};
use crate::rng::tags;

/// Data per parallel work item. Fixed, so the reduction order (and every
/// result bit) does not depend on the number of workers.
const CHUNK: usize = 16;

/// Path measure the per-datum expectations are taken under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Excursion,
    Bridge,
}

/// Which batches to use: every evaluation with the same round sees the
/// same paths, sampled at height `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchRound {
    pub index: u64,
    pub delta: f64,
}

/// Loss and its gradient at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Mean per-datum objective.
    pub objective: f64,
    pub penalty: f64,
    /// Recurrence mass; `None` for joint data, which have no penalty.
    pub mass: Option<f64>,
    /// `d loss / d params`.
    pub grad: Vec<f64>,
    /// `d loss / d delta`.
    pub grad_delta: f64,
    pub mean_acceptance: f64,
    pub min_acceptance: f64,
    pub failed_penalty_points: usize,
}

struct Sequence {
    history: Vec<f64>,
    exogenous: Vec<f64>,
}

struct Datum {
    tau: f64,
    start: f64,
    signs: SignPolicy,
    seq: usize,
}

struct JointDatum {
    seq: usize,
    origin: f64,
    chains: Vec<Vec<f64>>,
}

enum Data {
    Scalar(Vec<Datum>),
    Joint(Vec<JointDatum>),
}

/// A dataset bound to a drift spec and a configuration.
pub struct Problem<'a> {
    spec: &'a DriftSpec,
    cfg: &'a FitConfig,
    sampler: Sampler,
    seqs: Vec<Sequence>,
    data: Data,
    taus: Vec<f64>,
}

struct Partial {
    objective: f64,
    dlogpe: f64,
    grad: Vec<f64>,
    acc_sum: f64,
    acc_n: usize,
    acc_min: f64,
}

impl Partial {
    fn new(n: usize) -> Self {
        Self {
            objective: 0.0,
            dlogpe: 0.0,
            grad: vec![0.0; n],
            acc_sum: 0.0,
            acc_n: 0,
            acc_min: 1.0,
        }
    }

    fn accept(&mut self, rate: f64) {
        self.acc_sum += rate;
        self.acc_n += 1;
        self.acc_min = self.acc_min.min(rate);
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.objective += other.objective;
        self.dlogpe += other.dlogpe;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
        self.acc_sum += other.acc_sum;
        self.acc_n += other.acc_n;
        self.acc_min = self.acc_min.min(other.acc_min);
        self
    }
}

/// Objective term of one datum from its `k` paths, adding
/// `scale * d(term)/d(params)` into `grad`.
#[allow(clippy::too_many_arguments)]
fn path_term<'p>(
    drift: &Drift<'_>,
    k: usize,
    path: impl Fn(usize) -> &'p [f64],
    dim: usize,
    times: Times<'_>,
    ctx: &Context<'_>,
    objective: Objective,
    scale: f64,
    scratch: &mut WeightScratch,
    ms: &mut Vec<f64>,
    grad: &mut [f64],
) -> Result<f64> {
    match objective {
        Objective::Elbo => {
            let mut sum = 0.0;
            for j in 0..k {
                sum += weight_grad(drift, path(j), dim, times, ctx, scratch, scale / k as f64, grad)?;
            }
            Ok(sum / k as f64)
        }
        Objective::LogLikelihood => {
            ms.clear();
            for j in 0..k {
                ms.push(weight(drift, path(j), dim, times, ctx, scratch)?);
            }
            let (lme, _) = log_mean_exp(ms);
            for j in 0..k {
                let s = (ms[j] - lme).exp() / k as f64;
                weight_grad(drift, path(j), dim, times, ctx, scratch, scale * s, grad)?;
            }
            Ok(lme)
        }
    }
}

fn dlog_pe(tau: f64, delta: f64) -> f64 {
    1.0 / delta - 4.0 * delta / tau
}

impl<'a> Problem<'a> {
    /// Splits `data` into per-datum terms. Scalar specs score the gaps
    /// selected by the configured [`Gaps`]; specs of dimension `d > 1` score every
    /// sequence jointly with one coordinate per mark `0..d`.
    pub fn new(data: &[MarkedArrivals], spec: &'a DriftSpec, cfg: &'a FitConfig, sampler: Sampler) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("no arrival sequences to fit"));
        }
        let seqs: Vec<Sequence> = data
            .iter()
            .map(|a| Sequence {
                history: a.times().to_vec(),
                exogenous: Vec::new(),
            })
            .collect();
        let mut marks: Vec<_> = data.iter().flat_map(|a| a.distinct_marks()).collect();
        marks.sort_unstable();
        marks.dedup();
        let (data, taus) = if spec.dim() == 1 {
            let by_mark = match cfg.signs {
                SignMode::ByMark => true,
                SignMode::Random => false,
                SignMode::Auto => marks.len() == 2 && marks == [0, 1],
            };
            if by_mark && marks.iter().any(|&m| m > 1) {
                return Err(Error::invalid("sign-by-mark needs marks in {0, 1}"));
            }
            let mut out = Vec::new();
            for (s, seq) in data.iter().enumerate() {
                let gaps = match cfg.gaps {
                    Gaps::PerMark => seq.interarrivals_by_mark(cfg.first_gap),
                    Gaps::Sequential => seq.interarrivals(cfg.first_gap),
                };
                for ia in gaps {
                    out.push(Datum {
                        tau: ia.duration,
                        start: ia.start,
                        signs: if by_mark { SignPolicy::for_mark(ia.mark) } else { SignPolicy::Random },
                        seq: s,
                    });
                }
            }
            let taus = out.iter().map(|d| d.tau).collect();
            (Data::Scalar(out), taus)
        } else {
            if sampler == Sampler::Bridge {
                return Err(Error::invalid("the bridge baseline is scalar only"));
            }
            let d = spec.dim();
            if let Some(m) = marks.iter().find(|&&m| m as usize >= d) {
                return Err(Error::invalid(format!("mark {m} has no coordinate in a {d}-dimensional drift")));
            }
            let mut out = Vec::new();
            let mut taus = Vec::new();
            for (s, seq) in data.iter().enumerate() {
                let parts = split_by_mark(seq);
                let chains: Vec<Vec<f64>> = (0..d as u32)
                    .map(|c| {
                        parts.get(&c).map_or_else(Vec::new, |p| {
                            p.interarrivals(crate::arrivals::FirstGap::Include)
                                .iter()
                                .map(|ia| ia.duration)
                                .collect()
                        })
                    })
                    .collect();
                if chains.iter().all(|c| c.is_empty()) {
                    continue;
                }
                taus.extend(chains.iter().flatten());
                out.push(JointDatum {
                    seq: s,
                    origin: seq.origin(),
                    chains,
                });
            }
            (Data::Joint(out), taus)
        };
        if taus.is_empty() {
            return Err(Error::invalid("data contain no interarrivals"));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("interarrival {t} is not positive")));
        }
        Ok(Self {
            spec,
            cfg,
            sampler,
            seqs,
            data,
            taus,
        })
    }

    /// Attaches one exogenous event sequence per arrival sequence.
    pub fn with_exogenous(mut self, exogenous: &[Vec<f64>]) -> Result<Self> {
        if exogenous.len() != self.seqs.len() {
            return Err(Error::invalid(format!(
                "{} exogenous sequences for {} arrival sequences",
                exogenous.len(),
                self.seqs.len()
            )));
        }
        for (s, e) in self.seqs.iter_mut().zip(exogenous) {
            if e.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid("exogenous events must be sorted"));
            }
            s.exogenous = e.clone();
        }
        Ok(self)
    }

    /// Number of scored interarrivals.
    pub fn n_data(&self) -> usize {
        self.taus.len()
    }

    pub fn interarrivals(&self) -> &[f64] {
        &self.taus
    }

    /// Starting δ: the configured value, or the Lévy scale estimate.
    pub fn initial_delta(&self) -> Result<f64> {
        match self.cfg.delta_init {
            Some(d) => Ok(d),
            None => levy_scale_mle(&self.taus),
        }
    }

    fn max_tau(&self) -> f64 {
        self.taus.iter().copied().fold(0.0, f64::max)
    }

    fn scalar_batch(&self, d: &Datum, i: usize, round: BatchRound) -> Result<ExcursionBatch> {
        let seed = self.cfg.seed.derive(tags::EPOCH).derive(round.index).derive(i as u64);
        match self.sampler {
            Sampler::Excursion => {
                let law = self.cfg.path_law();
                let cfg = SamplerConfig {
                    k: self.cfg.k,
                    n_steps: self.cfg.n_steps,
                    max_rejects: self.cfg.max_rejects,
                    signs: d.signs,
                    law,
                };
                sample_paths(d.tau, proposal_height(law, d.tau, round.delta), &cfg, seed)
            }
            Sampler::Bridge => sample_pinned_bridges(d.tau, self.cfg.k, self.cfg.n_steps, seed),
        }
    }

    /// Loss at `(params, delta)` on the batches of `round`, with its exact
    /// gradient. The recurrence penalty is evaluated when `lambda_reg > 0`
    /// or `with_penalty` is set; it enters the loss only through
    /// `lambda_reg`.
    pub fn evaluate(&self, params: &[f64], delta: f64, round: BatchRound, with_penalty: bool) -> Result<Evaluation> {
        self.spec.check_params(params)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("delta must be positive, got {delta}")));
        }
        let drift = self.spec.bind(params);
        let np = params.len();
        let n = self.taus.len() as f64;
        let scale = -1.0 / n;
        let obj = self.cfg.objective;
        let total = match &self.data {
            Data::Scalar(data) => data
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut part = Partial::new(np);
                    let mut scratch = WeightScratch::default();
                    let mut ms = Vec::new();
                    for (j, d) in chunk.iter().enumerate() {
                        let batch = self.scalar_batch(d, c * CHUNK + j, round)?;
                        part.accept(batch.acceptance_rate());
                        let seq = &self.seqs[d.seq];
                        let ctx = Context {
                            history: &seq.history,
                            exogenous: &seq.exogenous,
                        };
                        let times = Times::Uniform {
                            start: d.start,
                            dt: batch.dt(),
                        };
                        let term = path_term(
                            &drift,
                            batch.len(),
                            |k| batch.path(k),
                            1,
                            times,
                            &ctx,
                            obj,
                            scale,
                            &mut scratch,
                            &mut ms,
                            &mut part.grad,
                        )?;
                        part.objective += levy_log_density(d.tau, delta)? + term;
                        part.dlogpe += dlog_pe(d.tau, delta);
                    }
                    Ok(part)
                })
                .collect::<Result<Vec<_>>>()?,
            Data::Joint(data) => data
                .par_iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut part = Partial::new(np);
                    let seed = self.cfg.seed.derive(tags::JOINT).derive(round.index).derive(i as u64);
                    let batch = build_joint_excursion(&d.chains, self.cfg.k, self.cfg.n_steps, round.delta, seed, None)?;
                    let abs: Vec<f64> = batch.times().iter().map(|t| d.origin + t).collect();
                    let seq = &self.seqs[d.seq];
                    let ctx = Context {
                        history: &seq.history,
                        exogenous: &seq.exogenous,
                    };
                    let mut scratch = WeightScratch::default();
                    let mut ms = Vec::new();
                    let term = path_term(
                        &drift,
                        batch.len(),
                        |k| batch.path(k),
                        batch.dim(),
                        Times::Explicit(&abs),
                        &ctx,
                        obj,
                        scale,
                        &mut scratch,
                        &mut ms,
                        &mut part.grad,
                    )?;
                    part.objective += term;
                    for &tau in d.chains.iter().flatten() {
                        part.objective += levy_log_density(tau, delta)?;
                        part.dlogpe += dlog_pe(tau, delta);
                    }
                    Ok(part)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let total = total.into_iter().fold(Partial::new(np), Partial::merge);
        let objective = total.objective / n;
        let mut grad = total.grad;
        let mut grad_delta = -total.dlogpe / n;
        let (mut penalty, mut mass, mut failed) = (0.0, None, 0);
        let scalar = matches!(self.data, Data::Scalar(_));
        if scalar && (self.cfg.lambda_reg > 0.0 || with_penalty) {
            let pen = self.penalty(&drift, delta, round, &mut grad)?;
            penalty = pen.penalty;
            mass = Some(pen.mass);
            failed = pen.failed;
            grad_delta += self.cfg.lambda_reg * pen.grad_delta;
        }
        let loss = -objective + self.cfg.lambda_reg * penalty;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index: i });
        }
        if !grad_delta.is_finite() && loss.is_finite() {
            return Err(Error::NonFiniteGradient { index: np });
        }
        let (mean_acceptance, min_acceptance) = if total.acc_n > 0 {
            (total.acc_sum / total.acc_n as f64, total.acc_min)
        } else {
            (1.0, 1.0)
        };
        Ok(Evaluation {
            loss,
            objective,
            penalty,
            mass,
            grad,
            grad_delta,
            mean_acceptance,
            min_acceptance,
            failed_penalty_points: failed,
        })
    }

    /// `max(0, 1 - R)^2` and its gradient. Adds `lambda_reg * dP/dparams`
    /// into `grad` and returns `dP/ddelta` unscaled.
    fn penalty(&self, drift: &Drift<'_>, delta: f64, round: BatchRound, grad: &mut [f64]) -> Result<PenaltyTerm> {
        let grid = penalty_tau_grid(round.delta, self.max_tau(), self.cfg.penalty_points)?;
        let weights = log_trapezoid_weights(&grid);
        let seed = self.cfg.seed.derive(tags::PENALTY).derive(round.index);
        let pcfg = SamplerConfig {
            k: self.cfg.penalty_k,
            n_steps: self.cfg.n_steps,
            max_rejects: self.cfg.max_rejects,
            signs: SignPolicy::Random,
            law: self.cfg.path_law(),
        };
        let np = grad.len();
        // Per chunk: (sum w p, sum w p dlogpe, sum w p dlog(E)/dparams, failures).
        let parts: Vec<(f64, f64, Vec<f64>, usize)> = grid
            .par_chunks(CHUNK)
            .zip(weights.par_chunks(CHUNK))
            .map(|(taus, ws)| {
                let mut r = 0.0;
                let mut dr = 0.0;
                let mut g = vec![0.0; np];
                let mut failed = 0;
                let mut scratch = WeightScratch::default();
                let mut ms = Vec::new();
                for (&tau, &w) in taus.iter().zip(ws) {
                    let batch = match self.sampler {
                        Sampler::Excursion => grid_batch(tau, proposal_height(pcfg.law, tau, round.delta), &pcfg, seed)?,
                        Sampler::Bridge => Some(sample_pinned_bridges(tau, pcfg.k, pcfg.n_steps, seed)?),
                    };
                    let Some(batch) = batch else {
                        failed += 1;
                        continue;
                    };
                    let times = Times::Uniform { start: 0.0, dt: batch.dt() };
                    ms.clear();
                    for k in 0..batch.len() {
                        ms.push(weight(drift, batch.path(k), 1, times, &Context::EMPTY, &mut scratch)?);
                    }
                    let (lme, _) = log_mean_exp(&ms);
                    let p = (levy_log_density(tau, delta)? + lme).exp();
                    r += w * p;
                    dr += w * p * dlog_pe(tau, delta);
                    if w * p > 0.0 {
                        for k in 0..batch.len() {
                            let s = w * p * (ms[k] - lme).exp() / batch.len() as f64;
                            weight_grad(drift, batch.path(k), 1, times, &Context::EMPTY, &mut scratch, s, &mut g)?;
                        }
                    }
                }
                Ok((r, dr, g, failed))
            })
            .collect::<Result<_>>()?;
        let mut mass = 0.0;
        let mut dmass_ddelta = 0.0;
        let mut dmass = vec![0.0; np];
        let mut failed = 0;
        for (r, dr, g, f) in parts {
            mass += r;
            dmass_ddelta += dr;
            for (a, b) in dmass.iter_mut().zip(&g) {
                *a += b;
            }
            failed += f;
        }
        let gap = (1.0 - mass).max(0.0);
        let dp_dmass = -2.0 * gap;
        let lambda = self.cfg.lambda_reg;
        for (g, d) in grad.iter_mut().zip(&dmass) {
            *g += lambda * dp_dmass * d;
        }
        Ok(PenaltyTerm {
            penalty: gap * gap,
            mass,
            grad_delta: dp_dmass * dmass_ddelta,
            failed,
        })
    }

    fn round_index(&self, epoch: usize) -> u64 {
        match self.cfg.resample_every {
            Some(r) => (epoch / r) as u64,
            None => 0,
        }
    }

    /// Runs the configured number of Adam epochs from the spec's initial
    /// parameters.
    pub fn fit(&self) -> Result<FitReport> {
        let cfg = self.cfg;
        let mut params = self.spec.init_params(cfg.seed).0;
        let delta0 = self.initial_delta()?;
        let mut log_delta = delta0.ln();
        let mut adam = Adam::new(cfg.optimizer, params.len());
        let mut adam_delta = Adam::new(cfg.optimizer, 1);
        let mut report = FitReport {
            loss_history: Vec::with_capacity(cfg.epochs),
            grad_norm_history: Vec::with_capacity(cfg.epochs),
            penalty_history: Vec::with_capacity(cfg.epochs),
            final_params: ParamVector(params.clone()),
            final_delta: delta0,
            diagnostics: FitDiagnostics::default(),
        };
        let mut round = BatchRound { index: 0, delta: delta0 };
        for epoch in 0..cfg.epochs {
            let index = self.round_index(epoch);
            if index != round.index {
                round = BatchRound {
                    index,
                    delta: log_delta.exp(),
                };
            }
            let ev = match self.evaluate(&params, log_delta.exp(), round, false) {
                Ok(ev) if ev.loss.is_finite() => ev,
                Ok(_) | Err(Error::NonFiniteDrift { .. }) | Err(Error::NonFiniteGradient { .. }) => {
                    log::warn!("objective became non-finite at epoch {epoch}; stopping");
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        last_good: Box::new(report),
                    });
                }
                Err(e) => return Err(e),
            };
            let mut norm2: f64 = ev.grad.iter().map(|g| g * g).sum();
            adam.step(&mut params, &ev.grad, cfg.lr_drift, true);
            if cfg.train_delta {
                let g = ev.grad_delta * log_delta.exp();
                norm2 += g * g;
                let mut ld = [log_delta];
                adam_delta.step(&mut ld, &[g], cfg.lr_delta, false);
                log_delta = ld[0];
            }
            report.loss_history.push(ev.loss);
            report.grad_norm_history.push(norm2.sqrt());
            report.penalty_history.push(ev.penalty);
            report.final_params = ParamVector(params.clone());
            report.final_delta = log_delta.exp();
            if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
                log::debug!(
                    "epoch {epoch}: loss {:.6} penalty {:.3e} delta {:.5} acceptance {:.3}",
                    ev.loss,
                    ev.penalty,
                    report.final_delta,
                    ev.mean_acceptance
                );
            }
        }
        let ev = self.evaluate(&params, report.final_delta, round, true)?;
        report.diagnostics = FitDiagnostics {
            final_loss: ev.loss,
            final_penalty: ev.penalty,
            recurrence_mass: ev.mass,
            mean_acceptance: ev.mean_acceptance,
            min_acceptance: ev.min_acceptance,
            failed_penalty_points: ev.failed_penalty_points,
        };
        Ok(report)
    }
}

struct PenaltyTerm {
    penalty: f64,
    mass: f64,
    grad_delta: f64,
    failed: usize,
}
