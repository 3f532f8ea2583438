//! Dual-network co-training and evaluation.
//!
//! Each iteration: sample a batch, apply a paired lossless augmentation
//! (90-degree rotations plus flips, identical for image, both labels and
//! the annotation cross), forward both networks, mix their predictions
//! into a hard pseudo-label with a per-image random blend, and descend
//! the total of the crossed asymmetric supervision, the inconsistency-
//! masked pseudo-label loss, and the projection prior. Everything is
//! driven by one seeded generator with a fixed draw order, so a (config,
//! seed) pair reproduces training bit for bit.

use crate::checkpoint;
use crate::geometry::{self, ShapeKind};
use crate::graph::{Graph, Precision};
use crate::losses::{
    self, inconsistency_mask, lambda1_rampup, ClassWeights, LossWeights,
};
use crate::mask::BinaryMask;
use crate::metrics::{self, MetricReport};
use crate::net::{self, NetConfig, ParamStore};
use crate::optim;
use crate::rng::{self, fnv1a};
use crate::synth::SampleRecord;
use crate::tensor::Tensor;
use rand::Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iter} (sup {sup}, idmps {idmps}, cap {cap})")]
    NonFiniteLoss {
        iter: usize,
        sup: f64,
        idmps: f64,
        cap: f64,
    },
    #[error(transparent)]
    Net(#[from] net::NetError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
}

/// Which prediction the evaluation reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Argmax of the mean of both softmax maps.
    Ensemble,
    Con,
    Rad,
}

impl EvalMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ensemble" => Some(Self::Ensemble),
            "con" => Some(Self::Con),
            "rad" => Some(Self::Rad),
            _ => None,
        }
    }
}

/// Single-model baseline: one network, plain cross-entropy on one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleTarget {
    /// Train on the conservative label only.
    Con,
    /// Train on the radical label only.
    Rad,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub shape_con: ShapeKind,
    pub shape_rad: ShapeKind,
    pub enable_idmps: bool,
    pub enable_crbs: bool,
    pub enable_cap: bool,
    /// Pair each model with its own label kind instead of the crossed
    /// default (conservative model on radical label and vice versa).
    pub swap_pairing: bool,
    pub single: Option<SingleTarget>,
    /// Fixed pseudo-label blend; `None` draws one per image per iteration.
    pub beta_fixed: Option<f64>,
    pub net: NetConfig,
    pub precision: Precision,
    /// Write checkpoints every this many iterations (0: only at exit).
    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 8,
            lr0: 0.01,
            lr_power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            weights: LossWeights::default(),
            seed: 1,
            shape_con: ShapeKind::Quadrilateral,
            shape_rad: ShapeKind::IrregularEllipse,
            enable_idmps: true,
            enable_crbs: true,
            enable_cap: true,
            swap_pairing: false,
            single: None,
            beta_fixed: None,
            net: NetConfig::default(),
            precision: Precision::F32,
            ckpt_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub l_sup: f64,
    pub l_idmps: f64,
    pub l_cap: f64,
    pub l_total: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params_rad: ParamStore,
    pub params_con: ParamStore,
    pub log: Vec<LogRow>,
}

/// Training view of one sample: image plus derived labels and cross.
struct PreparedSample {
    image: Vec<f64>,
    y_rad: BinaryMask,
    y_con: BinaryMask,
    cross: BinaryMask,
    size: usize,
}

fn prepare(cfg: &TrainConfig, records: &[SampleRecord]) -> Result<Vec<PreparedSample>, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if !cfg.shape_con.is_conservative() {
        return Err(TrainError::Config(format!(
            "shape_con must be a conservative kind, got {:?}",
            cfg.shape_con
        )));
    }
    if !cfg.shape_rad.is_radical() {
        return Err(TrainError::Config(format!(
            "shape_rad must be a radical kind, got {:?}",
            cfg.shape_rad
        )));
    }
    let div = cfg.net.spatial_divisor();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if rec.height != rec.width || rec.height % div != 0 {
            return Err(TrainError::Config(format!(
                "sample {} is {}x{}; training needs square images divisible by {div}",
                rec.id, rec.height, rec.width
            )));
        }
        let y_rad = geometry::generate_pseudo_label(&rec.ann, cfg.shape_rad, rec.height, rec.width);
        let y_con = geometry::generate_pseudo_label(&rec.ann, cfg.shape_con, rec.height, rec.width);
        out.push(PreparedSample {
            image: rec.image.clone(),
            y_rad: y_rad.mask,
            y_con: y_con.mask,
            cross: geometry::rasterize_cross(&rec.ann, rec.height, rec.width),
            size: rec.height,
        });
    }
    Ok(out)
}

/// One lossless spatial transform: rot90 k times, then optional flips.
#[derive(Debug, Clone, Copy)]
struct Aug {
    rot: u8,
    hflip: bool,
    vflip: bool,
}

fn aug_index(aug: Aug, size: usize, r: usize, c: usize) -> (usize, usize) {
    let (mut r, mut c) = (r, c);
    // Inverse mapping: output (r, c) pulls from input coordinates.
    for _ in 0..aug.rot {
        // 90-degree counter-clockwise output = input rotated clockwise.
        let (pr, pc) = (c, size - 1 - r);
        r = pr;
        c = pc;
    }
    if aug.hflip {
        c = size - 1 - c;
    }
    if aug.vflip {
        r = size - 1 - r;
    }
    (r, c)
}

fn aug_image(data: &[f64], size: usize, aug: Aug) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (sr, sc) = aug_index(aug, size, r, c);
            out[r * size + c] = data[sr * size + sc];
        }
    }
    out
}

fn aug_mask(mask: &BinaryMask, aug: Aug) -> BinaryMask {
    let size = mask.height();
    let mut out = BinaryMask::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            let (sr, sc) = aug_index(aug, size, r, c);
            if mask.get(sr, sc) {
                out.set(r, c, true);
            }
        }
    }
    out
}

fn init_seed(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a(tag)
}

/// Run the training loop. When `ckpt_dir` is set, `net_rad.ckpt` and
/// `net_con.ckpt` are written every `ckpt_every` iterations (if nonzero)
/// and at exit.
pub fn train(
    cfg: &TrainConfig,
    records: &[SampleRecord],
    ckpt_dir: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    let samples = prepare(cfg, records)?;
    let size = samples[0].size;
    let mut rng = rng::seeded(cfg.seed);

    let mut params_con = net::init_params(&cfg.net, init_seed(cfg.seed, "net_con"));
    let mut params_rad = net::init_params(&cfg.net, init_seed(cfg.seed, "net_rad"));
    let mut log = Vec::with_capacity(cfg.iters);

    let alpha = if cfg.enable_crbs { cfg.weights.alpha } else { 1.0 };

    for it in 0..cfg.iters {
        let lr = optim::poly_lr(it, cfg.iters, cfg.lr0, cfg.lr_power);
        let lambda1 = if cfg.enable_idmps && cfg.single.is_none() {
            lambda1_rampup(it, &cfg.weights)
        } else {
            0.0
        };
        let lambda2 = if cfg.enable_cap { cfg.weights.lambda2 } else { 0.0 };

        // Fixed draw order per iteration: indices, then per item
        // rotation, flips, blend weight.
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..samples.len())).collect();
        let mut augs = Vec::with_capacity(cfg.batch);
        let mut betas = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let rot = rng.gen_range(0..4u8);
            let hflip = rng.gen_bool(0.5);
            let vflip = rng.gen_bool(0.5);
            let beta = cfg.beta_fixed.unwrap_or_else(|| rng.gen::<f64>());
            augs.push(Aug { rot, hflip, vflip });
            betas.push(beta);
        }

        let mut image = Vec::with_capacity(cfg.batch * size * size);
        let mut y_rad = Vec::with_capacity(cfg.batch);
        let mut y_con = Vec::with_capacity(cfg.batch);
        let mut crosses = Vec::with_capacity(cfg.batch);
        for (slot, &i) in idx.iter().enumerate() {
            let aug = augs[slot];
            image.extend(aug_image(&samples[i].image, size, aug));
            y_rad.push(aug_mask(&samples[i].y_rad, aug));
            y_con.push(aug_mask(&samples[i].y_con, aug));
            crosses.push(aug_mask(&samples[i].cross, aug));
        }
        let batch = Tensor::from_vec(&[cfg.batch, 1, size, size], image);

        let row = match cfg.single {
            None => step_dual(
                cfg, &mut params_con, &mut params_rad, &batch, &y_rad, &y_con, &crosses, &betas,
                alpha, lambda1, lambda2, lr, it,
            )?,
            Some(target) => step_single(
                cfg, target, &mut params_con, &mut params_rad, &batch, &y_rad, &y_con, &crosses,
                lambda2, lr, it,
            )?,
        };
        log.push(row);

        if let Some(dir) = ckpt_dir {
            if cfg.ckpt_every != 0 && (it + 1) % cfg.ckpt_every == 0 && it + 1 != cfg.iters {
                save_both(dir, &params_rad, &params_con, &cfg.net, it + 1)?;
            }
        }
    }

    if let Some(dir) = ckpt_dir {
        save_both(dir, &params_rad, &params_con, &cfg.net, cfg.iters)?;
    }
    Ok(TrainOutput {
        params_rad,
        params_con,
        log,
    })
}

fn save_both(
    dir: &Path,
    params_rad: &ParamStore,
    params_con: &ParamStore,
    net_cfg: &NetConfig,
    iter: usize,
) -> Result<(), TrainError> {
    checkpoint::save(&dir.join("net_rad.ckpt"), params_rad, net_cfg, iter)?;
    checkpoint::save(&dir.join("net_con.ckpt"), params_con, net_cfg, iter)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_dual(
    cfg: &TrainConfig,
    params_con: &mut ParamStore,
    params_rad: &mut ParamStore,
    batch: &Tensor,
    y_rad: &[BinaryMask],
    y_con: &[BinaryMask],
    crosses: &[BinaryMask],
    betas: &[f64],
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    lr: f64,
    it: usize,
) -> Result<LogRow, TrainError> {
    let mut g = Graph::new(cfg.precision);
    let ids_con = net::param_leaves(&mut g, params_con, true);
    let ids_rad = net::param_leaves(&mut g, params_rad, true);
    let input = g.constant(batch.clone());
    let prob_con = net::build_forward(&mut g, &cfg.net, &ids_con, input);
    let prob_rad = net::build_forward(&mut g, &cfg.net, &ids_rad, input);

    // Crossed pairing by default: conservative model sees the radical
    // label (background-weighted) and vice versa.
    let (t_con, t_rad): (Vec<&BinaryMask>, Vec<&BinaryMask>) = if cfg.swap_pairing {
        (y_con.iter().collect(), y_rad.iter().collect())
    } else {
        (y_rad.iter().collect(), y_con.iter().collect())
    };
    let sup = losses::sup_loss_node(&mut g, prob_con, prob_rad, &t_con, &t_rad, alpha);
    let sup_val = g.value(sup).item();
    let mut total = sup;

    // Mixed hard pseudo-labels from the current predictions, supervised
    // only where the two label kinds disagree. Constants to the graph.
    let mut idmps_val = 0.0;
    if lambda1 > 0.0 {
        let n = y_rad.len();
        let hw = batch.shape()[2] * batch.shape()[3];
        let mut pls = Vec::with_capacity(n);
        let mut ms = Vec::with_capacity(n);
        for item in 0..n {
            let slice = |node: &Tensor| {
                Tensor::from_vec(
                    &[2, batch.shape()[2], batch.shape()[3]],
                    node.data()[item * 2 * hw..(item + 1) * 2 * hw].to_vec(),
                )
            };
            let pc = slice(g.value(prob_con));
            let pr = slice(g.value(prob_rad));
            let pl = losses::mix_pseudo_label(&pc, &pr, betas[item])
                .expect("predictions share shapes");
            pls.push(pl);
            ms.push(inconsistency_mask(&y_rad[item], &y_con[item]).expect("labels share shapes"));
        }
        let idm = losses::idmps_loss_node(&mut g, prob_con, prob_rad, &pls, &ms);
        idmps_val = g.value(idm).item();
        let weighted = g.scale(idm, lambda1);
        total = g.add(total, weighted);
    }

    let mut cap_val = 0.0;
    if lambda2 > 0.0 {
        let cross_refs: Vec<&BinaryMask> = crosses.iter().collect();
        let cap = losses::cap_total_node(&mut g, prob_con, prob_rad, &cross_refs);
        cap_val = g.value(cap).item();
        let weighted = g.scale(cap, lambda2);
        total = g.add(total, weighted);
    }

    let total_val = g.value(total).item();
    if !total_val.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            iter: it,
            sup: sup_val,
            idmps: idmps_val,
            cap: cap_val,
        });
    }

    let grads = g.backward(total);
    let collect = |ids: &[crate::graph::NodeId], params: &ParamStore| -> Vec<Tensor> {
        ids.iter()
            .zip(&params.entries)
            .map(|(&id, e)| grads.get_or_zeros(id, e.values.shape()))
            .collect()
    };
    let g_con = collect(&ids_con, params_con);
    let g_rad = collect(&ids_rad, params_rad);
    optim::sgd_step(params_con, &g_con, lr, cfg.momentum, cfg.weight_decay)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    optim::sgd_step(params_rad, &g_rad, lr, cfg.momentum, cfg.weight_decay)
        .map_err(|e| TrainError::Config(e.to_string()))?;

    Ok(LogRow {
        iter: it,
        lr,
        l_sup: sup_val,
        l_idmps: idmps_val,
        l_cap: cap_val,
        l_total: total_val,
    })
}

#[allow(clippy::too_many_arguments)]
fn step_single(
    cfg: &TrainConfig,
    target: SingleTarget,
    params_con: &mut ParamStore,
    params_rad: &mut ParamStore,
    batch: &Tensor,
    y_rad: &[BinaryMask],
    y_con: &[BinaryMask],
    crosses: &[BinaryMask],
    lambda2: f64,
    lr: f64,
    it: usize,
) -> Result<LogRow, TrainError> {
    let params = match target {
        SingleTarget::Con => &mut *params_con,
        SingleTarget::Rad => &mut *params_rad,
    };
    let labels = match target {
        SingleTarget::Con => y_con,
        SingleTarget::Rad => y_rad,
    };
    let mut g = Graph::new(cfg.precision);
    let ids = net::param_leaves(&mut g, params, true);
    let input = g.constant(batch.clone());
    let prob = net::build_forward(&mut g, &cfg.net, &ids, input);

    let refs: Vec<&BinaryMask> = labels.iter().collect();
    let shape = g.value(prob).shape().to_vec();
    let weights = losses::batched_ce_weights(&shape, &refs, ClassWeights { bg: 1.0, fg: 1.0 });
    let sup = g.ce_sum(prob, weights);
    let sup_val = g.value(sup).item();
    let mut total = sup;

    let mut cap_val = 0.0;
    if lambda2 > 0.0 {
        let cross_refs: Vec<&BinaryMask> = crosses.iter().collect();
        let cap = losses::cap_single_node(&mut g, prob, &cross_refs);
        cap_val = g.value(cap).item();
        let weighted = g.scale(cap, lambda2);
        total = g.add(total, weighted);
    }

    let total_val = g.value(total).item();
    if !total_val.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            iter: it,
            sup: sup_val,
            idmps: 0.0,
            cap: cap_val,
        });
    }
    let grads = g.backward(total);
    let gs: Vec<Tensor> = ids
        .iter()
        .zip(&params.entries)
        .map(|(&id, e)| grads.get_or_zeros(id, e.values.shape()))
        .collect();
    optim::sgd_step(params, &gs, lr, cfg.momentum, cfg.weight_decay)
        .map_err(|e| TrainError::Config(e.to_string()))?;

    Ok(LogRow {
        iter: it,
        lr,
        l_sup: sup_val,
        l_idmps: 0.0,
        l_cap: cap_val,
        l_total: total_val,
    })
}

/// Predicted foreground mask for one record.
fn predict(
    params_rad: &ParamStore,
    params_con: &ParamStore,
    net_cfg: &NetConfig,
    rec: &SampleRecord,
    mode: EvalMode,
    precision: Precision,
) -> Result<BinaryMask, TrainError> {
    let input = Tensor::from_vec(&[1, 1, rec.height, rec.width], rec.image.clone());
    let prob = match mode {
        EvalMode::Con => net::forward(params_con, net_cfg, &input, precision)?,
        EvalMode::Rad => net::forward(params_rad, net_cfg, &input, precision)?,
        EvalMode::Ensemble => {
            let a = net::forward(params_con, net_cfg, &input, precision)?;
            let b = net::forward(params_rad, net_cfg, &input, precision)?;
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| 0.5 * (x + y))
                .collect();
            Tensor::from_vec(a.shape(), data)
        }
    };
    let hw = rec.height * rec.width;
    let bits = (0..hw)
        .map(|z| (prob.data()[hw + z] > prob.data()[z]) as u8)
        .collect();
    Ok(BinaryMask::from_bits(rec.height, rec.width, bits))
}

/// Full-image evaluation of a trained pair on a record set. Returns one
/// metric row per record plus the per-metric mean. `threads` caps the
/// worker count; results are ordered by record regardless.
pub fn evaluate(
    params_rad: &ParamStore,
    params_con: &ParamStore,
    net_cfg: &NetConfig,
    records: &[SampleRecord],
    mode: EvalMode,
    precision: Precision,
    threads: usize,
) -> Result<(Vec<(String, MetricReport)>, MetricReport), TrainError> {
    if records.is_empty() {
        return Err(TrainError::Config("empty evaluation set".into()));
    }
    let threads = threads.max(1).min(records.len());
    let mut rows: Vec<Option<(String, MetricReport)>> = vec![None; records.len()];
    if threads == 1 {
        for (i, rec) in records.iter().enumerate() {
            let pred = predict(params_rad, params_con, net_cfg, rec, mode, precision)?;
            rows[i] = Some((rec.id.clone(), MetricReport::compute(&pred, &rec.gt)?));
        }
    } else {
        let chunk = records.len().div_ceil(threads);
        let results: Vec<Result<Vec<(usize, String, MetricReport)>, TrainError>> =
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for (t, chunk_recs) in records.chunks(chunk).enumerate() {
                    handles.push(scope.spawn(move || {
                        let mut out = Vec::with_capacity(chunk_recs.len());
                        for (j, rec) in chunk_recs.iter().enumerate() {
                            let pred =
                                predict(params_rad, params_con, net_cfg, rec, mode, precision)?;
                            let report = MetricReport::compute(&pred, &rec.gt)?;
                            out.push((t * chunk + j, rec.id.clone(), report));
                        }
                        Ok(out)
                    }));
                }
                handles.into_iter().map(|h| h.join().expect("worker")).collect()
            });
        for res in results {
            for (i, id, report) in res? {
                rows[i] = Some((id, report));
            }
        }
    }
    let rows: Vec<(String, MetricReport)> = rows.into_iter().map(|r| r.expect("filled")).collect();
    let mean = mean_report(&rows);
    Ok((rows, mean))
}

pub fn mean_report(rows: &[(String, MetricReport)]) -> MetricReport {
    let col = |f: fn(&MetricReport) -> f64| -> f64 {
        rows.iter().map(|(_, r)| f(r)).sum::<f64>() / rows.len() as f64
    };
    MetricReport {
        dsc: col(|r| r.dsc),
        jaccard: col(|r| r.jaccard),
        asd: col(|r| r.asd),
        hd95: col(|r| r.hd95),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
    }
}

/// Train/evaluate once per perturbation level: annotations are rigidly
/// rotated by the level (alternating direction per record) before label
/// generation, the reference masks stay untouched.
pub fn noise_sweep(
    cfg: &TrainConfig,
    train_records: &[SampleRecord],
    test_records: &[SampleRecord],
    degrees: &[f64],
    mode: EvalMode,
) -> Result<Vec<(f64, f64)>, TrainError> {
    let mut out = Vec::with_capacity(degrees.len());
    for &deg in degrees {
        let mut perturbed = train_records.to_vec();
        for (i, rec) in perturbed.iter_mut().enumerate() {
            let direction = if i % 2 == 0 { 1 } else { -1 };
            rec.ann = geometry::perturb_annotation(&rec.ann, deg, direction)
                .map_err(|e| TrainError::Config(format!("perturb {deg} deg failed: {e}")))?;
        }
        let trained = train(cfg, &perturbed, None)?;
        let (_, mean) = evaluate(
            &trained.params_rad,
            &trained.params_con,
            &cfg.net,
            test_records,
            mode,
            cfg.precision,
            1,
        )?;
        out.push((deg, mean.dsc));
    }
    Ok(out)
}

/// Write the training log CSV: `iter,lr,l_sup,l_idmps,l_cap,l_total`.
pub fn write_log(path: &Path, log: &[LogRow]) -> std::io::Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "iter,lr,l_sup,l_idmps,l_cap,l_total")?;
    for row in log {
        writeln!(
            file,
            "{},{:.8},{:.8},{:.8},{:.8},{:.8}",
            row.iter, row.lr, row.l_sup, row.l_idmps, row.l_cap, row.l_total
        )?;
    }
    file.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, SynthConfig};

    fn tiny_records(n: usize) -> Vec<SampleRecord> {
        let cfg = SynthConfig {
            n,
            size: 32,
            seed: 5,
            ..SynthConfig::default()
        };
        synth_dataset(&cfg).unwrap()
    }

    fn tiny_config(iters: usize) -> TrainConfig {
        TrainConfig {
            iters,
            batch: 2,
            net: NetConfig {
                depth: 1,
                base_channels: 4,
                in_channels: 1,
                out_channels: 2,
            },
            weights: LossWeights {
                rampup_len: iters,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let records = tiny_records(6);
        let cfg = tiny_config(8);
        let a = train(&cfg, &records, None).unwrap();
        let b = train(&cfg, &records, None).unwrap();
        assert_eq!(a.params_rad, b.params_rad);
        assert_eq!(a.params_con, b.params_con);
        assert_eq!(a.log, b.log);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 2;
        let c = train(&cfg2, &records, None).unwrap();
        assert_ne!(a.params_rad, c.params_rad);
    }

    #[test]
    fn losses_stay_finite_and_logged() {
        let records = tiny_records(6);
        let cfg = tiny_config(6);
        let out = train(&cfg, &records, None).unwrap();
        assert_eq!(out.log.len(), 6);
        for row in &out.log {
            assert!(row.l_total.is_finite());
            assert!(row.l_sup >= 0.0 && row.l_idmps >= 0.0 && row.l_cap >= 0.0);
            assert!(row.lr <= cfg.lr0);
        }
    }

    #[test]
    fn ablation_flags_zero_their_terms() {
        let records = tiny_records(4);
        let mut cfg = tiny_config(4);
        cfg.enable_idmps = false;
        cfg.enable_crbs = false;
        cfg.enable_cap = false;
        let out = train(&cfg, &records, None).unwrap();
        for row in &out.log {
            assert_eq!(row.l_idmps, 0.0);
            assert_eq!(row.l_cap, 0.0);
            assert_eq!(row.l_sup, row.l_total);
        }
    }

    #[test]
    fn degenerate_dual_equals_two_single_runs() {
        // With swapped pairing, no mixing, no prior, and alpha = 1 the
        // dual objective decouples into two plain cross-entropy models.
        let records = tiny_records(5);
        let mut dual = tiny_config(6);
        dual.enable_idmps = false;
        dual.enable_crbs = false;
        dual.enable_cap = false;
        dual.swap_pairing = true;
        let d = train(&dual, &records, None).unwrap();

        let mut single_con = dual.clone();
        single_con.single = Some(SingleTarget::Con);
        let sc = train(&single_con, &records, None).unwrap();
        let mut single_rad = dual.clone();
        single_rad.single = Some(SingleTarget::Rad);
        let sr = train(&single_rad, &records, None).unwrap();

        assert_eq!(d.params_con, sc.params_con);
        assert_eq!(d.params_rad, sr.params_rad);
        for ((dr, cr), rr) in d.log.iter().zip(sc.log.iter()).zip(sr.log.iter()) {
            assert!((dr.l_total - (cr.l_total + rr.l_total)).abs() < 1e-9);
        }
    }

    #[test]
    fn augmentation_preserves_areas_and_nesting() {
        let records = tiny_records(3);
        for rec in &records {
            let y_rad = geometry::generate_pseudo_label(
                &rec.ann,
                ShapeKind::IrregularEllipse,
                rec.height,
                rec.width,
            )
            .mask;
            let y_con = geometry::generate_pseudo_label(
                &rec.ann,
                ShapeKind::Quadrilateral,
                rec.height,
                rec.width,
            )
            .mask;
            assert!(y_con.is_subset_of(&y_rad));
            for rot in 0..4u8 {
                for (hflip, vflip) in [(false, false), (true, false), (false, true), (true, true)]
                {
                    let aug = Aug { rot, hflip, vflip };
                    let ar = aug_mask(&y_rad, aug);
                    let ac = aug_mask(&y_con, aug);
                    assert_eq!(ar.count(), y_rad.count());
                    assert_eq!(ac.count(), y_con.count());
                    assert!(ac.is_subset_of(&ar));
                }
            }
        }
    }

    #[test]
    fn networks_are_independent_without_mixing() {
        // With the mixing term off, one optimization step of the
        // conservative net must not depend on the radical net's weights
        // (the supervision and prior terms act per network).
        let records = tiny_records(2);
        let cfg = tiny_config(1);
        let size = records[0].height;
        let image: Vec<f64> = records
            .iter()
            .flat_map(|r| r.image.clone())
            .collect();
        let batch = Tensor::from_vec(&[2, 1, size, size], image);
        let masks = |kind| -> Vec<BinaryMask> {
            records
                .iter()
                .map(|r| geometry::generate_pseudo_label(&r.ann, kind, size, size).mask)
                .collect()
        };
        let y_rad = masks(ShapeKind::IrregularEllipse);
        let y_con = masks(ShapeKind::Quadrilateral);
        let crosses: Vec<BinaryMask> = records
            .iter()
            .map(|r| geometry::rasterize_cross(&r.ann, size, size))
            .collect();

        let step_con = |rad_seed: u64| -> ParamStore {
            let mut pc = net::init_params(&cfg.net, 100);
            let mut pr = net::init_params(&cfg.net, rad_seed);
            step_dual(
                &cfg, &mut pc, &mut pr, &batch, &y_rad, &y_con, &crosses, &[0.5, 0.5], 3.0,
                0.0, // lambda1 off
                0.3, 0.01, 0,
            )
            .unwrap();
            pc
        };
        assert_eq!(step_con(200), step_con(201));
    }

    #[test]
    fn evaluate_oracle_upper_bound_and_ensemble_degeneracy() {
        let records = tiny_records(4);
        let cfg = tiny_config(2);
        let out = train(&cfg, &records, None).unwrap();

        // Identical stores: ensemble equals the single model exactly.
        let (rows_e, _) = evaluate(
            &out.params_rad,
            &out.params_rad,
            &cfg.net,
            &records,
            EvalMode::Ensemble,
            cfg.precision,
            1,
        )
        .unwrap();
        let (rows_r, _) = evaluate(
            &out.params_rad,
            &out.params_con,
            &cfg.net,
            &records,
            EvalMode::Rad,
            cfg.precision,
            2,
        )
        .unwrap();
        for (a, b) in rows_e.iter().zip(rows_r.iter()) {
            assert_eq!(a.1, b.1);
        }

        // Evaluating reference masks as predictions is a perfect score.
        for rec in &records {
            let r = MetricReport::compute(&rec.gt, &rec.gt).unwrap();
            assert_eq!((r.dsc, r.jaccard, r.asd, r.hd95), (1.0, 1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn checkpoints_written_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let records = tiny_records(3);
        let mut cfg = tiny_config(4);
        cfg.ckpt_every = 2;
        let out = train(&cfg, &records, Some(dir.path())).unwrap();
        let (loaded, net_cfg, iter) = checkpoint::load(&dir.path().join("net_rad.ckpt")).unwrap();
        assert_eq!(iter, 4);
        assert_eq!(net_cfg, cfg.net);
        assert_eq!(loaded, out.params_rad);
        // Round trip preserves evaluation outputs bit-exactly.
        let (rows_a, _) = evaluate(
            &out.params_rad,
            &out.params_con,
            &cfg.net,
            &records,
            EvalMode::Rad,
            cfg.precision,
            1,
        )
        .unwrap();
        let (rows_b, _) = evaluate(
            &loaded,
            &out.params_con,
            &cfg.net,
            &records,
            EvalMode::Rad,
            cfg.precision,
            1,
        )
        .unwrap();
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn zero_degree_sweep_matches_plain_run() {
        let records = tiny_records(5);
        let cfg = tiny_config(4);
        let sweep = noise_sweep(&cfg, &records[..3], &records[3..], &[0.0], EvalMode::Ensemble)
            .unwrap();
        let out = train(&cfg, &records[..3], None).unwrap();
        let (_, mean) = evaluate(
            &out.params_rad,
            &out.params_con,
            &cfg.net,
            &records[3..],
            EvalMode::Ensemble,
            cfg.precision,
            1,
        )
        .unwrap();
        assert_eq!(sweep[0], (0.0, mean.dsc));
    }
}
